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

import json

import pytest

from histrecon.activity import parse_activity
from histrecon.corpus import (
    MANIFEST,
    PRODUCTIVITY,
    Manifest,
    activity_path,
    history_path,
    load_activity,
    load_history,
    load_productivity,
    read_manifest,
    write_manifest,
    write_productivity,
)
from histrecon.exceptions import (
    MalformedRecord,
    MissingGroundTruth,
    MissingHistory,
    MissingManifest,
)
from histrecon.history import parse_history
from histrecon.types import ProductivityLevel


def test_written_corpus(corpus_dir):
    manifest = read_manifest(corpus_dir)
    assert manifest.users == ["user0000", "user0001", "user0002", "user0003"]
    assert manifest.train == ["user0000", "user0002"]
    assert manifest.test == ["user0001", "user0003"]
    assert manifest.master_seed == 11
    assert manifest.split("all") == manifest.users
    for user_id in manifest.users:
        assert history_path(corpus_dir, user_id).is_file()
        assert activity_path(corpus_dir, user_id).is_file()
    assert (corpus_dir / PRODUCTIVITY).is_file()


def test_load_history_drops_frames(corpus_dir):
    raw = parse_history(history_path(corpus_dir, "user0000").read_bytes())
    loaded = load_history(corpus_dir, "user0000")
    assert loaded == [v for v in raw if not v.is_frame_navigation]
    assert all(v.user_id == "user0000" for v in loaded)


def test_load_activity(corpus_dir):
    events = load_activity(corpus_dir, "user0001")
    assert events == parse_activity(activity_path(corpus_dir, "user0001").read_bytes())
    assert events


def test_missing_user_files(tmp_path):
    with pytest.raises(MissingHistory):
        load_history(tmp_path, "nobody")
    with pytest.raises(MissingGroundTruth):
        load_activity(tmp_path, "nobody")


def test_malformed_record_names_file(tmp_path):
    path = history_path(tmp_path, "u1")
    path.parent.mkdir()
    path.write_text(
        '{"visit_id": 1, "url": "https://a.com/", "visit_time_ms": 5, "transition": "link"}\n'
        "{oops\n"
    )
    with pytest.raises(MalformedRecord) as e:
        load_history(tmp_path, "u1")
    assert e.value.line_number == 2
    assert "u1.jsonl" in str(e.value)


def test_manifest_errors(tmp_path):
    with pytest.raises(MissingManifest):
        read_manifest(tmp_path)
    (tmp_path / MANIFEST).write_text("{not json")
    with pytest.raises(MissingManifest):
        read_manifest(tmp_path)
    (tmp_path / MANIFEST).write_text(json.dumps({"users": ["a"], "train": ["b"]}))
    with pytest.raises(MissingManifest):
        read_manifest(tmp_path)


def test_manifest_keeps_extra_keys(tmp_path):
    manifest = Manifest(["a", "b"], ["a"], ["b"], 3, extra={"note": "hand made"})
    write_manifest(tmp_path, manifest)
    assert read_manifest(tmp_path) == manifest
    with pytest.raises(ValueError):
        manifest.split("validation")


def test_productivity_file(tmp_path):
    levels = {"b.com": ProductivityLevel.distracting, "a.com": ProductivityLevel.productive}
    write_productivity(tmp_path / "p.csv", levels)
    assert (tmp_path / "p.csv").read_text().splitlines() == [
        "domain,level",
        "a.com,productive",
        "b.com,distracting",
    ]
    assert dict(load_productivity(tmp_path / "p.csv").entries) == levels
    assert len(load_productivity(None)) == 0
