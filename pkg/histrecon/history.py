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
"""Browser history exports: parsing, frame filtering, domains and the lookup tables
derived from training histories.

Classes: :class:`HistoryVisit`, :class:`DomainVocabulary`, :class:`ProductivityMap`
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple, Union
from urllib.parse import urlsplit

import numpy as np

from histrecon.exceptions import (
    DuplicateVisitId,
    MalformedRecord,
    UnknownProductivityLevel,
)
from histrecon.types import (
    FRAME_TRANSITIONS,
    PRODUCTIVITY_ORDER,
    JsonObj,
    ProductivityLevel,
    Transition,
)

log = logging.getLogger(__name__)

ByteSource = Union[bytes, IO[bytes], Iterable[bytes]]

INVALID_DOMAIN = "invalid:"
DEFAULT_VOCABULARY_SIZE = 20
PLACEHOLDER = "<unused-%02d>"

HISTORY_KEYS = (
    "user_id",
    "visit_id",
    "referring_visit_id",
    "url",
    "visit_time_ms",
    "transition",
)


def extract_domain(url: str) -> str:
    """Derive the domain a visit is attributed to.

    For http(s) URLs this is the lowercased hostname with one leading ``www.``
    removed. Any other scheme (``chrome://newtab``, ``file:///...``) is returned
    unchanged so those pages stay distinguishable. URLs that cannot be parsed map
    to :data:`INVALID_DOMAIN`.
    """
    if not url:
        return INVALID_DOMAIN
    try:
        parts = urlsplit(url)
        scheme = parts.scheme.lower()
        if scheme not in ("http", "https"):
            return url if scheme else INVALID_DOMAIN
        hostname = parts.hostname
    except ValueError:
        return INVALID_DOMAIN
    if not hostname:
        return INVALID_DOMAIN
    if hostname.startswith("www."):
        hostname = hostname[4:]
    return hostname or INVALID_DOMAIN


@dataclass(frozen=True)
class HistoryVisit:
    """One navigation event from a browser history export."""

    user_id: str
    visit_id: int
    referring_visit_id: Optional[int]
    url: str
    visit_time: int
    transition: Transition
    domain: str = field(init=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain", extract_domain(self.url))

    @property
    def visit_second(self) -> int:
        return self.visit_time // 1000

    @property
    def is_frame_navigation(self) -> bool:
        return self.transition in FRAME_TRANSITIONS

    @classmethod
    def parse(cls, json_obj: JsonObj, user_id: Optional[str] = None) -> "HistoryVisit":
        """Build a visit from one decoded History Export record.

        :param json_obj: The decoded record
        :param user_id: (Optional) The user the record must belong to. Records without
            a ``user_id`` take this one.
        :return: The parsed visit
        :raises ValueError: If a field is missing or has the wrong type
        """
        record_user = json_obj.get("user_id", user_id)
        if record_user is None:
            raise ValueError("missing user_id")
        if user_id is not None and str(record_user) != user_id:
            raise ValueError("record belongs to user %r, expected %r" % (record_user, user_id))

        visit_id = _require_int(json_obj, "visit_id")
        visit_time = _require_int(json_obj, "visit_time_ms")
        if visit_time < 0:
            raise ValueError("visit_time_ms is negative")
        referring = json_obj.get("referring_visit_id")
        if referring is not None and (isinstance(referring, bool) or not isinstance(referring, int)):
            raise ValueError("referring_visit_id must be an integer or null")
        url = json_obj.get("url")
        if not isinstance(url, str) or not url:
            raise ValueError("url must be a non-empty string")
        try:
            transition = Transition(json_obj.get("transition"))
        except ValueError:
            raise ValueError("unknown transition %r" % json_obj.get("transition")) from None

        return cls(
            user_id=str(record_user),
            visit_id=visit_id,
            referring_visit_id=referring,
            url=url,
            visit_time=visit_time,
            transition=transition,
        )

    def to_json(self) -> JsonObj:
        return {
            "user_id": self.user_id,
            "visit_id": self.visit_id,
            "referring_visit_id": self.referring_visit_id,
            "url": self.url,
            "visit_time_ms": self.visit_time,
            "transition": self.transition.value,
        }


def _require_int(json_obj: JsonObj, key: str) -> int:
    value = json_obj.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError("%s must be an integer" % key)
    return value


def iter_lines(stream: ByteSource) -> Iterable[Union[bytes, str]]:
    if isinstance(stream, (bytes, bytearray)):
        return stream.splitlines()
    return stream


def decode_line(raw: Union[bytes, str], line_number: int) -> str:
    if not isinstance(raw, (bytes, bytearray)):
        return raw
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedRecord("invalid UTF-8 at byte %d" % e.start, line_number) from e


def iter_records(stream: ByteSource) -> Iterator[Tuple[int, JsonObj]]:
    """Yield ``(line_number, record)`` for every non-blank JSON Lines record."""
    for line_number, raw in enumerate(iter_lines(stream), start=1):
        line = decode_line(raw, line_number).strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecord("invalid JSON (%s)" % e.msg, line_number) from e
        if not isinstance(record, dict):
            raise MalformedRecord("record is not an object", line_number)
        yield line_number, record


def parse_history(stream: ByteSource, user_id: Optional[str] = None) -> List[HistoryVisit]:
    """Parse a History Export stream.

    :param stream: Newline-delimited JSON records, as bytes
    :param user_id: (Optional) Only accept records of this user
    :return: The visits sorted by visit time
    :raises MalformedRecord: If a record cannot be parsed, naming its line
    :raises DuplicateVisitId: If a user has two records with the same visit id
    """
    visits: List[HistoryVisit] = []
    seen: Dict[Tuple[str, int], int] = {}
    for line_number, record in iter_records(stream):
        try:
            visit = HistoryVisit.parse(record, user_id)
        except ValueError as e:
            raise MalformedRecord(str(e), line_number) from e
        key = (visit.user_id, visit.visit_id)
        if key in seen:
            raise DuplicateVisitId(
                "visit_id %d of user %s already seen on line %d"
                % (visit.visit_id, visit.user_id, seen[key]),
                line_number,
            )
        seen[key] = line_number
        visits.append(visit)

    visits.sort(key=lambda v: (v.visit_time, v.user_id, v.visit_id))
    log.debug("Parsed %d history visits", len(visits))
    return visits


def serialize_history(visits: Iterable[HistoryVisit]) -> bytes:
    """Write visits in the History Export Format, one record per line."""
    lines = [json.dumps(visit.to_json(), sort_keys=True) for visit in visits]
    return "".join(line + "\n" for line in lines).encode("utf-8")


def group_by_user(visits: Iterable[HistoryVisit]) -> Dict[str, List[HistoryVisit]]:
    """Split a multi-user visit list, keeping each user's visits in order."""
    users: Dict[str, List[HistoryVisit]] = {}
    for visit in visits:
        users.setdefault(visit.user_id, []).append(visit)
    return users


def filter_frame_navigations(visits: Iterable[HistoryVisit]) -> List[HistoryVisit]:
    """Drop navigations inside frames, which never show up as browsing activity."""
    return [visit for visit in visits if not visit.is_frame_navigation]


@dataclass(frozen=True)
class DomainVocabulary:
    """The domains that get their own one-hot bit; everything else is OTHER."""

    domains: Tuple[str, ...]
    _positions: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.domains)) != len(self.domains):
            raise ValueError("Vocabulary domains must be unique")
        object.__setattr__(
            self, "_positions", {domain: i for i, domain in enumerate(self.domains)}
        )

    def __len__(self) -> int:
        return len(self.domains)

    def __contains__(self, domain: object) -> bool:
        return domain in self._positions

    def index(self, domain: Optional[str]) -> Optional[int]:
        """Position of `domain`, ``None`` for OTHER or a missing domain."""
        if domain is None:
            return None
        return self._positions.get(domain)

    def codes(self, domains: Iterable[Optional[str]]) -> np.ndarray:
        """Positions of many domains, with -1 standing in for OTHER/missing."""
        return np.fromiter(
            (self._positions.get(d, -1) if d is not None else -1 for d in domains),
            dtype=np.int64,
        )

    def one_hot(self, domain: Optional[str]) -> np.ndarray:
        vector = np.zeros(len(self.domains), dtype=np.float64)
        position = self.index(domain)
        if position is not None:
            vector[position] = 1.0
        return vector

    @property
    def version(self) -> str:
        """A short fingerprint of the ordered domain list."""
        digest = hashlib.sha1("\n".join(self.domains).encode("utf-8"))
        return digest.hexdigest()[:16]

    def to_json(self) -> JsonObj:
        return {"domains": list(self.domains), "version": self.version}

    @classmethod
    def from_json(cls, json_obj: JsonObj) -> "DomainVocabulary":
        vocabulary = cls(tuple(json_obj["domains"]))
        expected = json_obj.get("version")
        if expected is not None and expected != vocabulary.version:
            raise ValueError("Vocabulary fingerprint does not match its domains")
        return vocabulary


def compute_top_domains(
    visits: Iterable[HistoryVisit], k: int = DEFAULT_VOCABULARY_SIZE
) -> DomainVocabulary:
    """The `k` domains with the most visit records, most visited first.

    Ties go to the lexicographically smaller domain. Corpora with fewer than `k`
    distinct domains are padded with reserved placeholder names so the one-hot
    width never changes.

    :param visits: Visits of training users only
    :param k: Vocabulary size
    """
    if k < 1:
        raise ValueError("Vocabulary size must be positive")
    counts = Counter(visit.domain for visit in visits)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    domains = [domain for domain, _ in ranked[:k]]
    if len(domains) < k:
        log.warning(
            "Only %d distinct domains in the training data, padding vocabulary to %d",
            len(domains),
            k,
        )
        pad = (PLACEHOLDER % i for i in range(k * 2))
        taken = set(domains)
        while len(domains) < k:
            name = next(pad)
            if name not in taken:
                domains.append(name)
    return DomainVocabulary(tuple(domains))


def normalise_domain(name: str) -> str:
    """Bring a domain name (or a URL) into the form :func:`extract_domain` gives
    visits, so ``www.Example.com`` and ``example.com`` are the same key."""
    name = name.strip()
    if "://" in name:
        return extract_domain(name)
    name = name.lower()
    return name[4:] if name.startswith("www.") and len(name) > 4 else name


def _normalise_level(token: str) -> str:
    return token.strip().lower().replace("-", "_").replace(" ", "_")


_NUMERIC_LEVELS = {
    "2": ProductivityLevel.very_productive,
    "1": ProductivityLevel.productive,
    "0": ProductivityLevel.neutral,
    "-1": ProductivityLevel.distracting,
    "-2": ProductivityLevel.very_distracting,
}


def parse_level(token: str) -> ProductivityLevel:
    if token.strip() in _NUMERIC_LEVELS:
        return _NUMERIC_LEVELS[token.strip()]
    normalised = _normalise_level(token)
    try:
        return ProductivityLevel(normalised)
    except ValueError:
        raise UnknownProductivityLevel(token)


@dataclass(frozen=True)
class ProductivityMap:
    """Domain productivity levels. Lookups never fail: unknown domains are
    neutral."""

    entries: Mapping[str, ProductivityLevel] = field(default_factory=dict)
    default: ProductivityLevel = ProductivityLevel.neutral

    def lookup(self, domain: Optional[str]) -> ProductivityLevel:
        if domain is None:
            return self.default
        return self.entries.get(domain, self.default)

    def index(self, domain: Optional[str]) -> int:
        """Position of the domain's level in the productivity one-hot block."""
        return PRODUCTIVITY_ORDER.index(self.lookup(domain))

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> JsonObj:
        return {domain: level.value for domain, level in sorted(self.entries.items())}

    @classmethod
    def from_json(cls, json_obj: JsonObj) -> "ProductivityMap":
        return cls({domain: ProductivityLevel(level) for domain, level in json_obj.items()})


def load_productivity_map(stream: ByteSource) -> ProductivityMap:
    """Read a two-column ``domain,level`` CSV.

    :raises UnknownProductivityLevel: For a level token that is not one of the five
        levels (or their -2..2 numeric aliases)
    :raises MalformedRecord: For rows that do not have two columns or are not UTF-8
    """
    lines = [
        decode_line(raw, line_number)
        for line_number, raw in enumerate(iter_lines(stream), start=1)
    ]
    entries: Dict[str, ProductivityLevel] = {}
    for line_number, row in enumerate(csv.reader(lines), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 2:
            raise MalformedRecord("expected 2 columns, got %d" % len(row), line_number)
        domain, token = row[0].strip(), row[1].strip()
        if line_number == 1 and domain.lower() == "domain" and token.lower() == "level":
            continue
        domain = normalise_domain(domain)
        try:
            entries[domain] = parse_level(token)
        except UnknownProductivityLevel:
            raise UnknownProductivityLevel(token, line_number)
    log.debug("Loaded %d productivity levels", len(entries))
    return ProductivityMap(entries)
