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
"""Synthetic browsing users.

A simulated user browses in one window with tabs. Every session is a run of page
dwells; between dwells the user follows links, types URLs, reloads, submits forms,
opens, closes and switches tabs. Dwells can be interrupted by idling or by leaving
the window. The simulator writes down the ground-truth activity events and the
history the browser would have recorded for them.
"""

from __future__ import annotations

import datetime
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import dateutil.parser
import numpy as np
from dateutil import tz
from isodate import ISO8601Error, parse_duration

from histrecon.activity import ActivityEvent
from histrecon.exceptions import ProfileError
from histrecon.history import HistoryVisit
from histrecon.types import EventKind, ProductivityLevel, Transition
from histrecon.workers import map_ordered

log = logging.getLogger(__name__)

DEFAULT_PROFILE = Path(__file__).parent / "profiles" / "default.profile"
NEW_TAB_URL = "chrome://newtab/"
#: The browser reports idle after this long without input.
IDLE_DETECTION_MS = 60_000
USER_ID_FORMAT = "user%04d"


def parse_seconds(value: str) -> float:
    """Read a duration given as an ISO-8601 duration (``PT20M``) or as seconds."""
    value = value.strip()
    if value[:1].upper() == "P":
        try:
            return parse_duration(value).total_seconds()
        except (ISO8601Error, ValueError) as e:
            raise ValueError("invalid duration %r" % value) from e
    return float(value)


def parse_settings(text: str) -> List[Tuple[int, str, str]]:
    """Split ``key = value`` lines into ``(line_number, key, value)``.

    ``#`` starts a comment; blank lines are skipped.
    """
    settings = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError("line %d: expected 'key = value'" % line_number)
        settings.append((line_number, key.strip().lower(), value.strip()))
    return settings


@dataclass(frozen=True)
class DomainProfile:
    """How a user behaves on one domain.

    :param name: The domain
    :param weight: Relative chance of picking it when going somewhere new
    :param dwell_s: Median seconds spent per page
    :param dwell_sigma: Log-normal spread of the dwell time
    :param input_interval_s: Mean seconds between inputs while on a page
    :param pages: Distinct pages on the domain
    :param stay_prob: Chance a link leads to another page of the same domain
    :param sticky: Whether tabs on it tend to stay open in the background
    :param level: Productivity level
    """

    name: str
    weight: float = 1.0
    dwell_s: float = 60.0
    dwell_sigma: float = 0.8
    input_interval_s: float = 10.0
    pages: int = 20
    stay_prob: float = 0.5
    sticky: bool = False
    level: ProductivityLevel = ProductivityLevel.neutral

    def url(self, page: int) -> str:
        host = "www." + self.name if self.name.count(".") == 1 else self.name
        return "https://%s/page/%d" % (host, page)


@dataclass(frozen=True)
class UserProfile:
    """Parameters of one simulated user.

    Durations are in seconds; ``*_length_s`` and ``dwell_s`` are medians of
    log-normal draws.
    """

    seed: int = 0
    days: int = 14
    start: datetime.datetime = datetime.datetime(2024, 3, 4, tzinfo=tz.UTC)
    day_start_s: float = 8 * 3600
    day_end_s: float = 23 * 3600
    sessions_per_day: float = 3.0
    session_length_s: float = 1200.0
    session_length_sigma: float = 0.6
    background_tab_prob: float = 0.15
    new_tab_prob: float = 0.08
    close_tab_prob: float = 0.05
    nonhistory_prob: float = 0.3
    idle_prob: float = 0.05
    idle_length_s: float = 240.0
    blur_prob: float = 0.05
    blur_length_s: float = 120.0
    close_window_prob: float = 0.2
    reload_prob: float = 0.03
    form_submit_prob: float = 0.03
    typed_prob: float = 0.15
    subframe_prob: float = 0.1
    jitter: float = 0.0
    domains: Tuple[DomainProfile, ...] = ()

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name.endswith("_prob") and not 0.0 <= value <= 1.0:
                raise ProfileError("%s must lie in [0, 1], got %r" % (f.name, value))
        positive = (
            "sessions_per_day",
            "session_length_s",
            "idle_length_s",
            "blur_length_s",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ProfileError("%s must be positive" % name)
        if self.days < 1:
            raise ProfileError("days must be at least 1")
        if not 0 <= self.day_start_s < self.day_end_s <= 86400:
            raise ProfileError("day_start and day_end must lie within a day, in order")
        if self.session_length_sigma < 0 or self.jitter < 0:
            raise ProfileError("Spreads must not be negative")
        if len(self.domains) < 2:
            raise ProfileError("A profile needs at least two domains")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ProfileError("Domains are listed more than once")
        for domain in self.domains:
            if domain.weight <= 0 or domain.dwell_s <= 0 or domain.input_interval_s <= 0:
                raise ProfileError("Domain %s needs positive weight, dwell and input interval" % domain.name)
            if domain.pages < 1 or not 0.0 <= domain.stay_prob <= 1.0 or domain.dwell_sigma < 0:
                raise ProfileError("Domain %s has invalid pages, stay_prob or dwell_sigma" % domain.name)

    @property
    def start_ms(self) -> int:
        return int(self.start.timestamp() * 1000)

    @property
    def mean_session_length_s(self) -> float:
        """Mean of the log-normal session length."""
        return self.session_length_s * math.exp(self.session_length_sigma**2 / 2)

    def productivity(self) -> Dict[str, ProductivityLevel]:
        return {d.name: d.level for d in self.domains if d.level != ProductivityLevel.neutral}


_DURATION_KEYS = {
    "day_start": "day_start_s",
    "day_end": "day_end_s",
    "session_length": "session_length_s",
    "idle_length": "idle_length_s",
    "blur_length": "blur_length_s",
}
_DOMAIN_KEYS = {
    "weight": ("weight", float),
    "dwell": ("dwell_s", parse_seconds),
    "dwell_sigma": ("dwell_sigma", float),
    "input_interval": ("input_interval_s", parse_seconds),
    "pages": ("pages", int),
    "stay_prob": ("stay_prob", float),
    "sticky": ("sticky", lambda v: v.lower() in ("1", "yes", "true")),
    "level": ("level", lambda v: ProductivityLevel(v.lower())),
}


def _parse_domain(value: str) -> DomainProfile:
    name, *options = value.split()
    kwargs: Dict[str, Any] = {}
    for option in options:
        key, sep, raw = option.partition("=")
        if not sep or key not in _DOMAIN_KEYS:
            raise ValueError("unknown domain option %r" % option)
        attribute, convert = _DOMAIN_KEYS[key]
        kwargs[attribute] = convert(raw)
    return DomainProfile(name.lower(), **kwargs)


def parse_profile(text: str) -> UserProfile:
    """Read a profile in the ``key = value`` format.

    Durations take ISO-8601 (``PT25M``) or plain seconds, ``start_date`` takes an
    ISO-8601 date or time (UTC unless an offset is given), and every
    ``domain = <name> key=value ...`` line adds a domain.

    :raises ProfileError: For unknown keys or invalid values, naming the line
    """
    kwargs: Dict[str, Any] = {}
    domains: List[DomainProfile] = []
    known = {f.name for f in fields(UserProfile)} - {"domains", "start"}
    try:
        settings = parse_settings(text)
    except ValueError as e:
        raise ProfileError(str(e)) from e
    for line_number, key, value in settings:
        try:
            if key == "domain":
                domains.append(_parse_domain(value))
            elif key == "start_date":
                start = dateutil.parser.isoparse(value)
                kwargs["start"] = start if start.tzinfo else start.replace(tzinfo=tz.UTC)
            elif key in _DURATION_KEYS:
                kwargs[_DURATION_KEYS[key]] = parse_seconds(value)
            elif key in ("seed", "days"):
                kwargs[key] = int(value)
            elif key in known:
                kwargs[key] = float(value)
            else:
                raise ValueError("unknown key %r" % key)
        except ValueError as e:
            raise ProfileError("line %d: %s" % (line_number, e)) from e
    return UserProfile(domains=tuple(domains), **kwargs)


def load_profile(path: Union[str, Path, None] = None) -> UserProfile:
    """Read a profile file, by default the bundled one."""
    path = Path(path) if path is not None else DEFAULT_PROFILE
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ProfileError("Cannot read profile %s: %s" % (path, e)) from e
    return parse_profile(text)


def jitter_profile(profile: UserProfile, rng: np.random.Generator) -> UserProfile:
    """A per-user variation of `profile`: rates, lengths and domain weights are
    scaled by log-normal factors of spread ``profile.jitter``."""
    if profile.jitter == 0:
        return profile

    def scale(value: float) -> float:
        return float(value * math.exp(rng.normal(0.0, profile.jitter)))

    def chance(value: float) -> float:
        return min(1.0, scale(value))

    domains = tuple(
        replace(d, weight=scale(d.weight), dwell_s=scale(d.dwell_s)) for d in profile.domains
    )
    return replace(
        profile,
        sessions_per_day=scale(profile.sessions_per_day),
        session_length_s=scale(profile.session_length_s),
        background_tab_prob=chance(profile.background_tab_prob),
        idle_prob=chance(profile.idle_prob),
        blur_prob=chance(profile.blur_prob),
        domains=domains,
    )


@dataclass
class _Tab:
    url: str
    domain: Optional[DomainProfile]
    visit_id: Optional[int] = None


@dataclass
class GeneratedUser:
    """The logs of one simulated user."""

    user_id: str
    profile: UserProfile
    events: List[ActivityEvent] = field(default_factory=list)
    visits: List[HistoryVisit] = field(default_factory=list)
    #: ``(start_second, planned_length_s)`` of every simulated session
    planned_sessions: List[Tuple[int, float]] = field(default_factory=list)


class _Browser:
    """One user's browser window while a simulation runs."""

    def __init__(self, user_id: str, profile: UserProfile, rng: np.random.Generator):
        self.user_id = user_id
        self.profile = profile
        self.rng = rng
        self.events: List[ActivityEvent] = []
        self.visits: List[HistoryVisit] = []
        self.tabs: List[_Tab] = []
        self.current = -1
        self.next_visit_id = 1
        weights = np.array([d.weight for d in profile.domains], dtype=np.float64)
        self.weights = weights / weights.sum()
        self.switching = profile.background_tab_prob > 0

    @property
    def tab(self) -> Optional[_Tab]:
        return self.tabs[self.current] if 0 <= self.current < len(self.tabs) else None

    def emit(self, time_ms: int, kind: EventKind, url: Optional[str] = None) -> None:
        self.events.append(ActivityEvent(self.user_id, time_ms, kind, url))

    def record(
        self, time_ms: int, url: str, transition: Transition, referrer: Optional[int]
    ) -> int:
        visit_id = self.next_visit_id
        self.next_visit_id += 1
        self.visits.append(HistoryVisit(self.user_id, visit_id, referrer, url, time_ms, transition))
        return visit_id

    def lognormal(self, median: float, sigma: float) -> float:
        return float(median * math.exp(self.rng.normal(0.0, sigma)))

    def pick_domain(self, exclude: Optional[DomainProfile] = None) -> DomainProfile:
        weights = self.weights.copy()
        if exclude is not None:
            weights[self.profile.domains.index(exclude)] = 0.0
            weights /= weights.sum()
        return self.profile.domains[int(self.rng.choice(len(weights), p=weights))]

    def page(self, domain: DomainProfile) -> str:
        return domain.url(int(self.rng.integers(domain.pages)))

    def navigate(
        self, time_ms: int, domain: DomainProfile, url: str, transition: Transition, referrer: Optional[int]
    ) -> None:
        """Load `url` in the current tab."""
        self.emit(time_ms, EventKind.navigation, url)
        visit_id = self.record(time_ms, url, transition, referrer)
        if self.rng.random() < self.profile.subframe_prob:
            frame = (Transition.auto_subframe, Transition.manual_subframe)[int(self.rng.integers(2))]
            self.record(time_ms + int(self.rng.integers(1, 1000)), url, frame, None)
        tab = self.tab
        if tab is None:
            self.tabs.append(_Tab(url, domain, visit_id))
            self.current = len(self.tabs) - 1
        else:
            tab.url, tab.domain, tab.visit_id = url, domain, visit_id

    def follow(self, time_ms: int) -> None:
        """Navigate within the current tab."""
        tab = self.tab
        p = self.profile
        r = self.rng.random()
        if tab is None or tab.domain is None or tab.visit_id is None or r < p.typed_prob:
            domain = self.pick_domain(tab.domain if tab else None)
            self.navigate(time_ms, domain, self.page(domain), Transition.typed, None)
        elif r < p.typed_prob + p.reload_prob:
            self.navigate(time_ms, tab.domain, tab.url, Transition.reload, None)
        elif r < p.typed_prob + p.reload_prob + p.form_submit_prob:
            self.navigate(time_ms, tab.domain, self.page(tab.domain), Transition.form_submit, tab.visit_id)
        else:
            if self.rng.random() < tab.domain.stay_prob:
                domain = tab.domain
            else:
                domain = self.pick_domain(tab.domain)
            self.navigate(time_ms, domain, self.page(domain), Transition.link, tab.visit_id)

    def open_tab(self, time_ms: int) -> int:
        """Open and focus a new tab; returns the time its first dwell starts."""
        opener = self.tab
        if self.rng.random() < self.profile.nonhistory_prob:
            self.tabs.append(_Tab(NEW_TAB_URL, None))
            self.current = len(self.tabs) - 1
            self.emit(time_ms, EventKind.tab_focus, NEW_TAB_URL)
            pause = int(self.rng.integers(2, 9)) * 1000
            self.emit(time_ms + int(self.rng.integers(1, pause)), EventKind.input)
            time_ms += pause
            domain = self.pick_sticky() or self.pick_domain()
            self.navigate(time_ms, domain, self.page(domain), Transition.typed, None)
            return time_ms

        domain = self.pick_sticky() or self.pick_domain()
        url = self.page(domain)
        referrer = opener.visit_id if opener is not None else None
        self.tabs.append(_Tab(url, domain))
        self.current = len(self.tabs) - 1
        self.emit(time_ms, EventKind.tab_focus, url)
        transition = Transition.link if referrer is not None else Transition.typed
        self.navigate(time_ms, domain, url, transition, referrer)
        return time_ms

    def pick_sticky(self) -> Optional[DomainProfile]:
        sticky = [d for d in self.profile.domains if d.sticky]
        if sticky and self.rng.random() < 0.5:
            return sticky[int(self.rng.integers(len(sticky)))]
        return None

    def switch_tab(self, time_ms: int) -> None:
        """Focus another open tab, preferring tabs on sticky domains."""
        others = [i for i in range(len(self.tabs)) if i != self.current]
        weights = np.array(
            [3.0 if self.tabs[i].domain is not None and self.tabs[i].domain.sticky else 1.0 for i in others]
        )
        self.current = others[int(self.rng.choice(len(others), p=weights / weights.sum()))]
        self.emit(time_ms, EventKind.tab_focus, self.tabs[self.current].url)

    def close_tab(self, time_ms: int) -> None:
        tab = self.tab
        assert tab is not None
        self.emit(time_ms, EventKind.tab_close, tab.url)
        del self.tabs[self.current]
        self.current = len(self.tabs) - 1
        self.emit(time_ms, EventKind.tab_focus, self.tabs[self.current].url)

    def act(self, time_ms: int) -> int:
        """Whatever the user does at the end of a dwell. Returns when the next dwell
        starts."""
        p = self.profile
        if self.switching and self.tab is not None:
            r = self.rng.random()
            if r < p.background_tab_prob:
                if len(self.tabs) > 1:
                    self.switch_tab(time_ms)
                    return time_ms
                return self.open_tab(time_ms)
            r -= p.background_tab_prob
            if r < p.new_tab_prob:
                return self.open_tab(time_ms)
            r -= p.new_tab_prob
            if r < p.close_tab_prob and len(self.tabs) > 1:
                self.close_tab(time_ms)
                return time_ms
        self.follow(time_ms)
        return time_ms

    def inputs(self, start_ms: int, end_ms: int, interval_s: float) -> int:
        """Input events strictly inside ``(start_ms, end_ms)``; returns the time of the
        last input, or `start_ms` without any."""
        last = start_ms
        mean = interval_s * 1000
        while True:
            nxt = last + max(1, int(self.rng.exponential(mean)))
            if nxt >= end_ms:
                return last
            self.emit(nxt, EventKind.input)
            last = nxt

    def dwell(self, time_ms: int) -> int:
        """Stay on the focused page; returns when the dwell ends (a whole second)."""
        tab = self.tab
        domain = tab.domain if tab is not None else None
        if domain is None:
            return time_ms + 1000
        seconds = max(2, int(round(self.lognormal(domain.dwell_s, domain.dwell_sigma))))
        end = time_ms + seconds * 1000
        p = self.profile
        r = self.rng.random()
        if r < p.idle_prob + p.blur_prob:
            away_at = time_ms + int(self.rng.integers(1, seconds)) * 1000
            last = self.inputs(time_ms, away_at, domain.input_interval_s)
            if r < p.idle_prob:
                away = max(61, int(round(self.lognormal(p.idle_length_s, 0.5))))
                kind = EventKind.screen_lock if self.rng.random() < 0.3 else EventKind.idle_start
                self.emit(last + IDLE_DETECTION_MS, kind)
                back = away_at + away * 1000
                self.emit(back, EventKind.input)
            else:
                away = max(1, int(round(self.lognormal(p.blur_length_s, 0.5))))
                self.emit(away_at, EventKind.window_blur)
                back = away_at + away * 1000
                self.emit(back, EventKind.window_focus)
            end += away * 1000
            self.inputs(back, end, domain.input_interval_s)
        else:
            self.inputs(time_ms, end, domain.input_interval_s)
        return end

    def session(self, start_ms: int, length_s: float) -> int:
        """Browse from `start_ms` for about `length_s`; returns the end time."""
        planned_end = start_ms + int(length_s * 1000)
        t = start_ms
        if self.tab is not None:
            self.emit(t, EventKind.window_focus)
            if self.rng.random() < 0.5:
                self.follow(t)
        else:
            self.follow(t)
        while True:
            t = self.dwell(t)
            if t >= planned_end:
                break
            t = self.act(t)
        if self.rng.random() < self.profile.close_window_prob:
            self.emit(t, EventKind.window_close)
            self.tabs.clear()
            self.current = -1
        else:
            self.emit(t, EventKind.window_blur)
        return t


def generate_user(profile: UserProfile, user_id: str = USER_ID_FORMAT % 0) -> GeneratedUser:
    """Simulate one user for ``profile.days`` days.

    The activity log and history are consistent: every navigation event has a
    history visit at the same time, every visit falls inside a focused span on its
    URL, and link visits refer to the visit of the page they were clicked on. The
    new-tab page is never recorded. Navigations and focus changes happen on whole
    seconds.

    :param profile: The user's profile; its seed fixes the result
    :param user_id: The user id to write into the logs
    """
    rng = np.random.default_rng(profile.seed)
    browser = _Browser(user_id, profile, rng)
    user = GeneratedUser(user_id, profile)
    day_ms = 86_400_000
    busy_until = profile.start_ms
    for day in range(profile.days):
        count = int(rng.poisson(profile.sessions_per_day))
        offsets = np.sort(rng.uniform(profile.day_start_s, profile.day_end_s, size=count))
        for offset in offsets:
            length = browser.lognormal(profile.session_length_s, profile.session_length_sigma)
            start = profile.start_ms + day * day_ms + int(offset) * 1000
            start = max(start, busy_until + 60_000)
            user.planned_sessions.append((start // 1000, length))
            busy_until = browser.session(start, length)

    # equal timestamps keep the order they happened in
    user.events = sorted(browser.events, key=lambda e: e.time_ms)
    user.visits = sorted(browser.visits, key=lambda v: (v.visit_time, v.visit_id))
    log.debug(
        "Simulated %s: %d sessions, %d events, %d visits",
        user_id,
        len(user.planned_sessions),
        len(user.events),
        len(user.visits),
    )
    return user


def user_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


@dataclass
class Corpus:
    master_seed: int
    users: List[GeneratedUser]
    train: List[str]
    test: List[str]


def generate_corpus(
    n_users: int,
    master_seed: int,
    profile: Optional[UserProfile] = None,
    processes: int = 1,
) -> Corpus:
    """Simulate `n_users` users drawn from a profile distribution.

    User ``i`` is called ``user%04d`` and is simulated from `profile` jittered and
    seeded by ``(master_seed, i)``. Even-indexed users form the training split,
    odd-indexed users the test split.

    :param profile: (Optional) The profile, by default the bundled one
    """
    if n_users < 1:
        raise ValueError("At least one user is required")
    base = profile if profile is not None else load_profile()

    def simulate(index: int) -> GeneratedUser:
        seed = user_seed(master_seed, index)
        user_profile = jitter_profile(base, np.random.default_rng([seed, 1]))
        return generate_user(replace(user_profile, seed=seed), USER_ID_FORMAT % index)

    users = map_ordered(simulate, range(n_users), processes)
    ids = [user.user_id for user in users]
    log.info("Simulated %d users", n_users)
    return Corpus(master_seed, users, ids[0::2], ids[1::2])


