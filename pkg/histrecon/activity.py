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
"""Ground-truth browsing activity: event logs, focus spans, the per-second active
grid and browsing sessions.

Classes: :class:`ActivityEvent`, :class:`ActivitySpan`, :class:`SecondGrid`,
:class:`Session`
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import IO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from histrecon.exceptions import MalformedRecord
from histrecon.history import ByteSource, extract_domain, iter_records
from histrecon.types import EventKind, JsonObj

log = logging.getLogger(__name__)

#: Input or navigation must have happened this recently for a second to be active.
ACTIVITY_WINDOW_MS = 60_000
#: Longest inactive stretch that still belongs to one browsing session.
SESSION_GAP_S = 1200

URL_REQUIRED = frozenset({EventKind.tab_focus, EventKind.navigation})
ACTIVITY_KINDS = frozenset({EventKind.input, EventKind.navigation})
# Span ends after which the same URL is picked up again once the user is back.
RESUMABLE_ENDS = frozenset(
    {EventKind.window_blur, EventKind.idle_start, EventKind.screen_lock}
)
# Of those, the ones an input event alone is enough to come back from.
INPUT_RESUMES = frozenset({EventKind.idle_start, EventKind.screen_lock})
CLOSING_ENDS = frozenset({EventKind.tab_close, EventKind.window_close})


@dataclass(frozen=True)
class ActivityEvent:
    user_id: str
    time_ms: int
    kind: EventKind
    url: Optional[str] = None

    def __post_init__(self) -> None:
        if self.time_ms < 0:
            raise ValueError("time_ms is negative")
        if self.kind in URL_REQUIRED and not self.url:
            raise ValueError("%s events need a url" % self.kind.value)

    @classmethod
    def parse(cls, json_obj: JsonObj, user_id: Optional[str] = None) -> "ActivityEvent":
        record_user = json_obj.get("user_id", user_id)
        if record_user is None:
            raise ValueError("missing user_id")
        if user_id is not None and str(record_user) != user_id:
            raise ValueError("record belongs to user %r, expected %r" % (record_user, user_id))
        time_ms = json_obj.get("time_ms")
        if isinstance(time_ms, bool) or not isinstance(time_ms, int):
            raise ValueError("time_ms must be an integer")
        try:
            kind = EventKind(json_obj.get("kind"))
        except ValueError:
            raise ValueError("unknown event kind %r" % json_obj.get("kind")) from None
        url = json_obj.get("url")
        if url is not None and not isinstance(url, str):
            raise ValueError("url must be a string or null")
        return cls(str(record_user), time_ms, kind, url or None)

    def to_json(self) -> JsonObj:
        return {
            "user_id": self.user_id,
            "time_ms": self.time_ms,
            "kind": self.kind.value,
            "url": self.url,
        }


def parse_activity(stream: ByteSource, user_id: Optional[str] = None) -> List[ActivityEvent]:
    """Parse an Activity Log stream into events sorted by time.

    Events with equal timestamps keep their file order.

    :raises MalformedRecord: If a record cannot be parsed, naming its line
    """
    events = []
    for line_number, record in iter_records(stream):
        try:
            events.append(ActivityEvent.parse(record, user_id))
        except ValueError as e:
            raise MalformedRecord(str(e), line_number) from e
    events.sort(key=lambda event: event.time_ms)
    return events


def serialize_activity(events: Iterable[ActivityEvent]) -> bytes:
    lines = [json.dumps(event.to_json(), sort_keys=True) for event in events]
    return "".join(line + "\n" for line in lines).encode("utf-8")


@dataclass(frozen=True)
class ActivitySpan:
    """A stretch of time the user had one URL focused."""

    user_id: str
    url: str
    start_ms: int
    end_ms: int
    domain: str = field(init=False)

    def __post_init__(self) -> None:
        if self.start_ms >= self.end_ms:
            raise ValueError("Span must end after it starts")
        object.__setattr__(self, "domain", extract_domain(self.url))

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


class _SpanBuilder:
    """Focus state of one user while walking through their event log."""

    def __init__(self, user_id: str):
        self.user_id = user_id
        self.spans: List[ActivitySpan] = []
        self.url: Optional[str] = None
        self.start = 0
        self.resume_url: Optional[str] = None
        self.resume_on_input = False
        self.last_time = 0

    def open(self, url: str, time_ms: int) -> None:
        if self.url == url:
            return
        self.close(time_ms)
        self.url = url
        self.start = time_ms
        self.resume_url = None

    def close(self, time_ms: int) -> None:
        if self.url is None:
            return
        if time_ms > self.start:
            self.spans.append(ActivitySpan(self.user_id, self.url, self.start, time_ms))
        else:
            log.debug("Dropping zero-length span on %s at %d", self.url, time_ms)
        self.url = None

    def feed(self, event: ActivityEvent) -> None:
        self.last_time = max(self.last_time, event.time_ms)
        kind = event.kind
        if kind in URL_REQUIRED:
            assert event.url is not None
            self.open(event.url, event.time_ms)
        elif kind == EventKind.window_focus:
            url = event.url or self.resume_url
            if url is not None:
                self.open(url, event.time_ms)
        elif kind == EventKind.input:
            if self.url is None and self.resume_on_input and self.resume_url is not None:
                self.open(self.resume_url, event.time_ms)
        elif kind in RESUMABLE_ENDS or kind in CLOSING_ENDS:
            if self.url is None:
                log.debug(
                    "Ignoring %s at %d for %s: no focused span",
                    kind.value,
                    event.time_ms,
                    self.user_id,
                )
                if kind in CLOSING_ENDS:
                    self.resume_url = None
                return
            url = self.url
            self.close(event.time_ms)
            self.resume_url = url if kind in RESUMABLE_ENDS else None
            self.resume_on_input = kind in INPUT_RESUMES

    def finish(self) -> List[ActivitySpan]:
        self.close(self.last_time)
        return self.spans


def build_spans(events: Iterable[ActivityEvent]) -> List[ActivitySpan]:
    """Turn time-ordered activity events into focus spans.

    A span starts when a URL is navigated to or gains tab focus and ends on
    navigation elsewhere, tab or window close, focus moving to another tab, window
    or application, idle, or screen lock. A span ended by blur, idle or lock is
    picked up again on the same URL when the window regains focus (or, after idle
    or lock, on the next input). An unclosed span ends at the user's last event.

    :param events: Events sorted by time, for any number of users
    :return: Spans ordered by user (first appearance) then start time
    """
    builders: Dict[str, _SpanBuilder] = {}
    for event in events:
        builder = builders.get(event.user_id)
        if builder is None:
            builder = builders[event.user_id] = _SpanBuilder(event.user_id)
        builder.feed(event)

    spans: List[ActivitySpan] = []
    for builder in builders.values():
        spans.extend(builder.finish())
    return spans


@dataclass(frozen=True)
class Session:
    """A browsing session; both ends are inclusive."""

    start_second: int
    end_second: int

    def __post_init__(self) -> None:
        if self.end_second < self.start_second:
            raise ValueError("Session must not end before it starts")

    def __len__(self) -> int:
        return self.end_second - self.start_second + 1

    def __contains__(self, second: object) -> bool:
        return isinstance(second, (int, np.integer)) and (
            self.start_second <= second <= self.end_second
        )

    def seconds(self) -> np.ndarray:
        return np.arange(self.start_second, self.end_second + 1, dtype=np.int64)


class SecondGrid:
    """Second-resolution timeline of one user: whether the browser is active and
    which domain is focused.

    Seconds outside ``[origin, end)`` read as inactive.
    """

    user_id: str
    origin: int
    active: np.ndarray
    codes: np.ndarray
    domains: Tuple[str, ...]

    def __init__(
        self,
        user_id: str,
        origin: int,
        active: np.ndarray,
        codes: np.ndarray,
        domains: Sequence[str],
    ):
        self.user_id = user_id
        self.origin = int(origin)
        self.active = np.asarray(active, dtype=bool)
        self.codes = np.asarray(codes, dtype=np.int32)
        self.domains = tuple(domains)
        if self.active.shape != self.codes.shape or self.active.ndim != 1:
            raise ValueError("active and codes must be aligned 1-d arrays")
        if np.any(self.active != (self.codes >= 0)):
            raise ValueError("A domain must be present exactly at the active seconds")
        if self.codes.size and int(self.codes.max(initial=-1)) >= len(self.domains):
            raise ValueError("Domain code out of range")

    @classmethod
    def empty(cls, user_id: str, origin: int = 0, length: int = 0) -> "SecondGrid":
        return cls(
            user_id,
            origin,
            np.zeros(length, dtype=bool),
            np.full(length, -1, dtype=np.int32),
            (),
        )

    @classmethod
    def from_seconds(
        cls,
        user_id: str,
        seconds: np.ndarray,
        domains: Sequence[str],
        origin: Optional[int] = None,
        end: Optional[int] = None,
    ) -> "SecondGrid":
        """Build a grid whose active seconds are `seconds`, focused on `domains`.

        :param seconds: Active seconds (any order, no duplicates)
        :param domains: The focused domain of each active second
        :param origin: (Optional) First second of the grid, defaults to the first
            active second
        :param end: (Optional) Exclusive end of the grid, defaults to one past the
            last active second
        """
        seconds = np.asarray(seconds, dtype=np.int64)
        if len(domains) != seconds.shape[0]:
            raise ValueError("One domain per active second is required")
        if seconds.size == 0:
            start = origin if origin is not None else 0
            stop = end if end is not None else start
            return cls.empty(user_id, start, stop - start)
        start = int(seconds.min()) if origin is None else origin
        stop = int(seconds.max()) + 1 if end is None else end
        if seconds.min() < start or seconds.max() >= stop:
            raise ValueError("Active seconds fall outside the grid")
        names = sorted(set(domains))
        lookup = {name: i for i, name in enumerate(names)}
        active = np.zeros(stop - start, dtype=bool)
        codes = np.full(stop - start, -1, dtype=np.int32)
        active[seconds - start] = True
        codes[seconds - start] = [lookup[d] for d in domains]
        return cls(user_id, start, active, codes, names)

    def __len__(self) -> int:
        return self.active.shape[0]

    def __repr__(self) -> str:
        return "SecondGrid(user_id=%r, origin=%d, length=%d, active=%d)" % (
            self.user_id,
            self.origin,
            len(self),
            self.active_count,
        )

    @property
    def end(self) -> int:
        return self.origin + len(self)

    @property
    def active_count(self) -> int:
        return int(self.active.sum())

    def seconds(self) -> np.ndarray:
        return np.arange(self.origin, self.end, dtype=np.int64)

    def active_seconds(self) -> np.ndarray:
        return np.nonzero(self.active)[0].astype(np.int64) + self.origin

    def is_active(self, second: int) -> bool:
        offset = second - self.origin
        return 0 <= offset < len(self) and bool(self.active[offset])

    def domain_at(self, second: int) -> Optional[str]:
        offset = second - self.origin
        if not 0 <= offset < len(self):
            return None
        code = int(self.codes[offset])
        return self.domains[code] if code >= 0 else None

    def active_at(self, seconds: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`is_active`."""
        offsets = np.asarray(seconds, dtype=np.int64) - self.origin
        inside = (offsets >= 0) & (offsets < len(self))
        result = np.zeros(offsets.shape, dtype=bool)
        result[inside] = self.active[offsets[inside]]
        return result

    def domains_at(self, seconds: np.ndarray) -> List[Optional[str]]:
        offsets = np.asarray(seconds, dtype=np.int64) - self.origin
        names: List[Optional[str]] = []
        for offset in offsets:
            code = int(self.codes[offset]) if 0 <= offset < len(self) else -1
            names.append(self.domains[code] if code >= 0 else None)
        return names

    def records(self) -> Iterator[Tuple[int, bool, Optional[str]]]:
        """Yield ``(second, active, domain)`` for every second of the grid."""
        for offset in range(len(self)):
            code = int(self.codes[offset])
            yield (
                self.origin + offset,
                bool(self.active[offset]),
                self.domains[code] if code >= 0 else None,
            )

    def runs(self) -> List[Tuple[int, int, str]]:
        """Maximal runs of active seconds on one domain as ``(start, end, domain)``,
        end exclusive."""
        if len(self) == 0:
            return []
        boundaries = np.nonzero(np.diff(self.codes))[0] + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [len(self)]))
        return [
            (self.origin + int(start), self.origin + int(end), self.domains[self.codes[start]])
            for start, end in zip(starts, ends)
            if self.codes[start] >= 0
        ]


def active_seconds(
    spans: Sequence[ActivitySpan],
    events: Sequence[ActivityEvent],
    user_id: Optional[str] = None,
    window_ms: int = ACTIVITY_WINDOW_MS,
) -> SecondGrid:
    """Derive the ground-truth active grid of one user.

    Second ``s`` is active when ``s * 1000`` lies inside a span and an input or
    navigation event happened in ``(s * 1000 - window_ms, s * 1000]``. The focused
    domain of an active second is its span's domain. The grid covers every second
    from the user's first to last logged event.

    :param spans: The user's spans, non-overlapping
    :param events: The user's events
    :param user_id: (Optional) The user, when it can't be read off spans or events
    """
    if user_id is None:
        if spans:
            user_id = spans[0].user_id
        elif events:
            user_id = events[0].user_id
        else:
            user_id = ""
    spans = sorted(spans, key=lambda span: span.start_ms)
    if not spans and not events:
        return SecondGrid.empty(user_id)

    firsts = [span.start_ms // 1000 for span in spans[:1]]
    lasts = [(span.end_ms - 1) // 1000 for span in spans[-1:]]
    if events:
        firsts.append(min(event.time_ms for event in events) // 1000)
        lasts.append(max(event.time_ms for event in events) // 1000)
    origin, end = min(firsts), max(lasts) + 1
    instants = np.arange(origin, end, dtype=np.int64) * 1000

    active = np.zeros(end - origin, dtype=bool)
    codes = np.full(end - origin, -1, dtype=np.int32)
    names = sorted({span.domain for span in spans})
    if spans:
        starts = np.array([span.start_ms for span in spans], dtype=np.int64)
        ends = np.array([span.end_ms for span in spans], dtype=np.int64)
        span_codes = np.array([names.index(span.domain) for span in spans], dtype=np.int32)
        which = np.searchsorted(starts, instants, side="right") - 1
        inside = (which >= 0) & (instants < ends[np.maximum(which, 0)])

        activity = np.array(
            sorted(e.time_ms for e in events if e.kind in ACTIVITY_KINDS), dtype=np.int64
        )
        recent = np.zeros(instants.shape, dtype=bool)
        if activity.size:
            last = np.searchsorted(activity, instants, side="right") - 1
            recent = (last >= 0) & (instants - activity[np.maximum(last, 0)] < window_ms)

        active = inside & recent
        codes[active] = span_codes[which[active]]

    return SecondGrid(user_id, origin, active, codes, names)


def sessions(grid: SecondGrid, gap: int = SESSION_GAP_S) -> List[Session]:
    """Group active seconds into browsing sessions.

    Each session runs from the first active second of a run to `gap` seconds after
    its last active second. Active seconds separated by at most `gap` inactive
    seconds share a session.
    """
    seconds = grid.active_seconds()
    if seconds.size == 0:
        return []
    breaks = np.nonzero(np.diff(seconds) - 1 > gap)[0]
    firsts = np.concatenate(([0], breaks + 1))
    lasts = np.concatenate((breaks, [seconds.size - 1]))
    return [
        Session(int(seconds[first]), int(seconds[last]) + gap)
        for first, last in zip(firsts, lasts)
    ]


def in_session_seconds(session_list: Sequence[Session]) -> np.ndarray:
    """Every second covered by the sessions, ascending."""
    if not session_list:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([session.seconds() for session in session_list])


def in_session_mask(seconds: np.ndarray, session_list: Sequence[Session]) -> np.ndarray:
    """Which of `seconds` fall inside any of the (ordered, disjoint) sessions."""
    seconds = np.asarray(seconds, dtype=np.int64)
    if not session_list:
        return np.zeros(seconds.shape, dtype=bool)
    starts = np.array([s.start_second for s in session_list], dtype=np.int64)
    ends = np.array([s.end_second for s in session_list], dtype=np.int64)
    which = np.searchsorted(starts, seconds, side="right") - 1
    return (which >= 0) & (seconds <= ends[np.maximum(which, 0)])


def write_spans_csv(spans: Iterable[ActivitySpan], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["user_id", "url", "domain", "start_ms", "end_ms"])
    for span in spans:
        writer.writerow([span.user_id, span.url, span.domain, span.start_ms, span.end_ms])


def write_grid_csv(grid: SecondGrid, stream: IO[str]) -> None:
    """Dump every second of the grid as ``user_id,second,active,domain``."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["user_id", "second", "active", "domain"])
    for second, is_active, domain in grid.records():
        writer.writerow([grid.user_id, second, int(is_active), domain or ""])


def write_runs_csv(grids: Iterable[SecondGrid], stream: IO[str]) -> None:
    """Dump the active seconds of many grids as run-length rows
    ``user_id,start_second,end_second,domain`` (end exclusive)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["user_id", "start_second", "end_second", "domain"])
    for grid in grids:
        for start, end, domain in grid.runs():
            writer.writerow([grid.user_id, start, end, domain])
