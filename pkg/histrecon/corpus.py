# Copyright (C) 2024- The histrecon Developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.
"""Corpus directories: per-user history and activity files plus a manifest naming
the users and their train/test split.

Layout::

    manifest.json
    productivity.csv        (optional)
    history/<user>.jsonl
    activity/<user>.jsonl
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Mapping, Optional, Union

from histrecon.activity import ActivityEvent, parse_activity, serialize_activity
from histrecon.exceptions import (
    MalformedRecord,
    MissingGroundTruth,
    MissingHistory,
    MissingManifest,
)
from histrecon.history import (
    HistoryVisit,
    ProductivityMap,
    filter_frame_navigations,
    load_productivity_map,
    parse_history,
    serialize_history,
)
from histrecon.simulator import Corpus
from histrecon.types import JsonObj, ProductivityLevel

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
PRODUCTIVITY = "productivity.csv"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


@dataclass
class Manifest:
    users: List[str]
    train: List[str]
    test: List[str]
    master_seed: Optional[int] = None
    version: int = FORMAT_VERSION
    extra: JsonObj = field(default_factory=dict)

    def split(self, name: str) -> List[str]:
        if name == "train":
            return list(self.train)
        if name == "test":
            return list(self.test)
        if name == "all":
            return list(self.users)
        raise ValueError("Unknown split %r" % name)

    def to_json(self) -> JsonObj:
        return {
            "format_version": self.version,
            "master_seed": self.master_seed,
            "users": self.users,
            "train": self.train,
            "test": self.test,
            **self.extra,
        }

    @classmethod
    def from_json(cls, json_obj: JsonObj) -> "Manifest":
        known = {"format_version", "master_seed", "users", "train", "test"}
        users = [str(u) for u in json_obj["users"]]
        train = [str(u) for u in json_obj.get("train", [])]
        test = [str(u) for u in json_obj.get("test", [])]
        unknown = (set(train) | set(test)) - set(users)
        if unknown:
            raise ValueError("split names unlisted users %s" % sorted(unknown))
        return cls(
            users,
            train,
            test,
            json_obj.get("master_seed"),
            int(json_obj.get("format_version", FORMAT_VERSION)),
            {k: v for k, v in json_obj.items() if k not in known},
        )


def history_path(directory: PathLike, user_id: str) -> Path:
    return Path(directory) / "history" / ("%s.jsonl" % user_id)


def activity_path(directory: PathLike, user_id: str) -> Path:
    return Path(directory) / "activity" / ("%s.jsonl" % user_id)


def read_manifest(directory: PathLike) -> Manifest:
    """Read the split manifest of a corpus.

    :raises MissingManifest: If the manifest is missing or unreadable
    """
    path = Path(directory) / MANIFEST
    try:
        json_obj = json.loads(path.read_text(encoding="utf-8"))
        return Manifest.from_json(json_obj)
    except FileNotFoundError:
        raise MissingManifest("No %s in %s" % (MANIFEST, directory)) from None
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise MissingManifest("Unreadable manifest %s: %s" % (path, e)) from e


def write_manifest(directory: PathLike, manifest: Manifest) -> None:
    path = Path(directory) / MANIFEST
    path.write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _reraise_with_path(error: MalformedRecord, path: Path) -> MalformedRecord:
    located = MalformedRecord("%s: %s" % (path, error))
    located.line_number = error.line_number
    return located


def load_history(directory: PathLike, user_id: str) -> List[HistoryVisit]:
    """A user's history with frame navigations removed.

    :raises MissingHistory: If the user has no history file
    :raises MalformedRecord: For unparsable records, naming file and line
    """
    path = history_path(directory, user_id)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise MissingHistory("No history for user %s (%s)" % (user_id, path)) from None
    try:
        return filter_frame_navigations(parse_history(data, user_id))
    except MalformedRecord as e:
        raise _reraise_with_path(e, path) from e


def load_activity(directory: PathLike, user_id: str) -> List[ActivityEvent]:
    """A user's activity log.

    :raises MissingGroundTruth: If the user has no activity file
    """
    path = activity_path(directory, user_id)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise MissingGroundTruth("No activity log for user %s (%s)" % (user_id, path)) from None
    try:
        return parse_activity(data, user_id)
    except MalformedRecord as e:
        raise _reraise_with_path(e, path) from e


def load_productivity(path: Optional[PathLike]) -> ProductivityMap:
    """Read a productivity CSV; no path gives the all-neutral map."""
    if path is None:
        return ProductivityMap()
    with open(path, "rb") as stream:
        return load_productivity_map(stream)


def write_productivity(path: PathLike, levels: Mapping[str, ProductivityLevel]) -> None:
    lines = ["domain,level"] + ["%s,%s" % (d, levels[d].value) for d in sorted(levels)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_corpus(corpus: Corpus, directory: PathLike) -> Manifest:
    """Write a simulated corpus: both logs of every user, the productivity levels of
    its domains and the manifest."""
    root = Path(directory)
    (root / "history").mkdir(parents=True, exist_ok=True)
    (root / "activity").mkdir(parents=True, exist_ok=True)
    for user in corpus.users:
        history_path(root, user.user_id).write_bytes(serialize_history(user.visits))
        activity_path(root, user.user_id).write_bytes(serialize_activity(user.events))
    if corpus.users:
        write_productivity(root / PRODUCTIVITY, corpus.users[0].profile.productivity())
    manifest = Manifest(
        [user.user_id for user in corpus.users],
        list(corpus.train),
        list(corpus.test),
        corpus.master_seed,
    )
    write_manifest(root, manifest)
    log.info("Wrote %d users to %s", len(corpus.users), root)
    return manifest
