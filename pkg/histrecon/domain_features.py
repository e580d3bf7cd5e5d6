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
"""Candidate domains and feature rows for the focused-domain classifier.

At a second ``s`` the focused domain is assumed to be one of four candidates taken
from the history: C, the domain of the most recent visit; N, the domain of the
next visit; P1, the most recent earlier domain other than C; and P2, the most
recent earlier domain other than C and P1.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from histrecon.active_features import Dataset, sample_seconds
from histrecon.activity import SecondGrid
from histrecon.encoding import MISSING_LOG, log_duration, log_durations, one_hot_block
from histrecon.exceptions import MissingGroundTruth, MissingHistory, NoPrecedingVisit
from histrecon.history import DomainVocabulary, HistoryVisit
from histrecon.types import DOMAIN_CLASS_ORDER, DomainClass
from histrecon.workers import map_ordered

log = logging.getLogger(__name__)

#: Trailing window of the background-tab counts, both ends included.
BACKGROUND_WINDOW_S = 1200

NUMERIC_COLUMNS = (
    "log_gap_c_n",
    "log_since_c",
    "log_until_n",
    "log_since_p1",
    "log_since_p2",
    "visits_since_p1",
    "visits_since_p2",
)
SWITCH_COLUMNS = ("switches_to_n", "switches_to_c", "switches_to_p1", "switches_to_p2")
REFERRER_COLUMNS = ("n_referred_by_c", "n_referred_by_p1", "n_referred_by_p2")
OVERLAP_COLUMNS = ("n_is_c", "n_is_p1", "n_is_p2")

#: Candidate order of the background counts.
SWITCH_ORDER = (DomainClass.N, DomainClass.C, DomainClass.P1, DomainClass.P2)

PredictCodes = Callable[[np.ndarray], np.ndarray]


def domain_columns(k: int = 20) -> Tuple[str, ...]:
    onehots = tuple(
        "%s_domain_%02d" % (cls.value.lower(), i) for cls in DOMAIN_CLASS_ORDER for i in range(k)
    )
    return NUMERIC_COLUMNS + SWITCH_COLUMNS + REFERRER_COLUMNS + onehots + OVERLAP_COLUMNS


DOMAIN_COLUMNS = domain_columns()


def domain_width(k: int = 20) -> int:
    return (
        len(NUMERIC_COLUMNS)
        + len(SWITCH_COLUMNS)
        + len(REFERRER_COLUMNS)
        + len(DOMAIN_CLASS_ORDER) * k
        + len(OVERLAP_COLUMNS)
    )


@dataclass(frozen=True)
class Candidate:
    domain: str
    visit_second: int
    visit_id: int


@dataclass(frozen=True)
class CandidateSet:
    c: Candidate
    n: Optional[Candidate] = None
    p1: Optional[Candidate] = None
    p2: Optional[Candidate] = None
    visits_since_p1: int = 0
    visits_since_p2: int = 0
    ref_n_eq_c: bool = False
    ref_n_eq_p1: bool = False
    ref_n_eq_p2: bool = False

    def get(self, cls: DomainClass) -> Optional[Candidate]:
        return {
            DomainClass.C: self.c,
            DomainClass.N: self.n,
            DomainClass.P1: self.p1,
            DomainClass.P2: self.p2,
        }[cls]

    def domain(self, cls: DomainClass) -> Optional[str]:
        candidate = self.get(cls)
        return candidate.domain if candidate else None


def _candidate(visit: HistoryVisit) -> Candidate:
    return Candidate(visit.domain, visit.visit_second, visit.visit_id)


def candidates(second: int, history: Sequence[HistoryVisit]) -> CandidateSet:
    """The C/N/P1/P2 candidates of one second.

    ``visits_since_p1`` and ``visits_since_p2`` count the visits after the P1
    (resp. P2) visit up to and including the C visit. The referrer flags are set
    when N was reached by a link from the most recent visit on C, P1 or P2.

    :param second: The second to describe
    :param history: The user's visits sorted by time, frame navigations removed
    :raises NoPrecedingVisit: If no visit happens at or before `second`
    """
    visit_seconds = [visit.visit_second for visit in history]
    position = bisect.bisect_right(visit_seconds, second)
    if position == 0:
        raise NoPrecedingVisit("No history visit at or before second %d" % second)

    c_index = position - 1
    c_visit = history[c_index]
    n_visit = history[position] if position < len(history) else None

    p1_index = p2_index = None
    for j in range(c_index - 1, -1, -1):
        domain = history[j].domain
        if p1_index is None:
            if domain != c_visit.domain:
                p1_index = j
        elif domain != c_visit.domain and domain != history[p1_index].domain:
            p2_index = j
            break

    def referred_by(index: Optional[int]) -> bool:
        return (
            n_visit is not None
            and index is not None
            and n_visit.referring_visit_id is not None
            and n_visit.referring_visit_id == history[index].visit_id
        )

    return CandidateSet(
        c=_candidate(c_visit),
        n=_candidate(n_visit) if n_visit else None,
        p1=_candidate(history[p1_index]) if p1_index is not None else None,
        p2=_candidate(history[p2_index]) if p2_index is not None else None,
        visits_since_p1=c_index - p1_index if p1_index is not None else 0,
        visits_since_p2=c_index - p2_index if p2_index is not None else 0,
        ref_n_eq_c=referred_by(c_index),
        ref_n_eq_p1=referred_by(p1_index),
        ref_n_eq_p2=referred_by(p2_index),
    )


def label_domain(true_domain: Optional[str], candidate_set: CandidateSet) -> Optional[DomainClass]:
    """The first class, in C, N, P1, P2 order, whose candidate is the true domain.

    :return: The class, or ``None`` when no candidate matches
    """
    if true_domain is None:
        return None
    for cls in DOMAIN_CLASS_ORDER:
        if candidate_set.domain(cls) == true_domain:
            return cls
    return None


@dataclass(frozen=True)
class DomainFeatureRow:
    second: int
    numerics: Tuple[float, ...]
    switch_counts: Tuple[int, int, int, int]
    referrers: Tuple[bool, bool, bool]
    onehots: np.ndarray
    overlaps: Tuple[bool, bool, bool]
    label: Optional[DomainClass] = field(default=None)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            (
                np.asarray(self.numerics, dtype=np.float64),
                np.asarray(self.switch_counts, dtype=np.float64),
                np.asarray(self.referrers, dtype=np.float64),
                self.onehots,
                np.asarray(self.overlaps, dtype=np.float64),
            )
        )


def switch_count(second: int, domain: Optional[str], history: Sequence[HistoryVisit]) -> int:
    """How often, within ``[second - 1200, second]``, a visit on `domain` directly
    follows a visit on another domain."""
    if domain is None:
        return 0
    window = [
        visit
        for visit in history
        if second - BACKGROUND_WINDOW_S <= visit.visit_second <= second
    ]
    return sum(
        1
        for before, after in zip(window, window[1:])
        if after.domain == domain and before.domain != domain
    )


def featurize_domain(
    second: int,
    history: Sequence[HistoryVisit],
    candidate_set: CandidateSet,
    vocabulary: DomainVocabulary,
) -> DomainFeatureRow:
    """Describe one second for the focused-domain classifier.

    Durations use the same log rule and one-day sentinel as the active features.
    Absent candidates give zero counts, false flags and all-zero one-hots.
    """
    cs = candidate_set

    def since(candidate: Optional[Candidate]) -> float:
        return log_duration(second - candidate.visit_second) if candidate else MISSING_LOG

    numerics = (
        log_duration(cs.n.visit_second - cs.c.visit_second) if cs.n else MISSING_LOG,
        since(cs.c),
        log_duration(cs.n.visit_second - second) if cs.n else MISSING_LOG,
        since(cs.p1),
        since(cs.p2),
        float(cs.visits_since_p1),
        float(cs.visits_since_p2),
    )
    switches = tuple(switch_count(second, cs.domain(cls), history) for cls in SWITCH_ORDER)
    n_domain = cs.domain(DomainClass.N)
    overlaps = tuple(
        n_domain is not None and n_domain == cs.domain(cls)
        for cls in (DomainClass.C, DomainClass.P1, DomainClass.P2)
    )
    onehots = np.concatenate([vocabulary.one_hot(cs.domain(cls)) for cls in DOMAIN_CLASS_ORDER])
    return DomainFeatureRow(
        second=second,
        numerics=numerics,
        switch_counts=switches,  # type: ignore[arg-type]
        referrers=(cs.ref_n_eq_c, cs.ref_n_eq_p1, cs.ref_n_eq_p2),
        onehots=onehots,
        overlaps=overlaps,  # type: ignore[arg-type]
    )


class CandidateIndex:
    """Candidate lookups over one user's history, for describing many seconds at
    once.

    For every visit taken as C the positions of its P1 and P2 visits are
    precomputed, as are the positions where the history switches domain.
    """

    def __init__(self, history: Sequence[HistoryVisit]):
        self.history = list(history)
        n = len(self.history)
        self.visit_seconds = np.fromiter(
            (v.visit_second for v in self.history), dtype=np.int64, count=n
        )
        self.visit_ids = np.fromiter((v.visit_id for v in self.history), dtype=np.int64, count=n)
        self.has_referrer = np.fromiter(
            (v.referring_visit_id is not None for v in self.history), dtype=bool, count=n
        )
        self.referrers = np.fromiter(
            (v.referring_visit_id or 0 for v in self.history), dtype=np.int64, count=n
        )
        self.names: List[str] = sorted({v.domain for v in self.history})
        self._lookup = {name: i for i, name in enumerate(self.names)}
        self.codes = np.fromiter(
            (self._lookup[v.domain] for v in self.history), dtype=np.int64, count=n
        )

        self.p1 = np.full(n, -1, dtype=np.int64)
        self.p2 = np.full(n, -1, dtype=np.int64)
        for i in range(1, n):
            if self.codes[i] == self.codes[i - 1]:
                self.p1[i] = self.p1[i - 1]
                self.p2[i] = self.p2[i - 1]
                continue
            self.p1[i] = i - 1
            # Everything after the previous run's P1 is on the previous run's domain.
            before = self.p1[i - 1]
            if before < 0:
                self.p2[i] = -1
            elif self.codes[before] != self.codes[i]:
                self.p2[i] = before
            else:
                self.p2[i] = self.p2[i - 1]

        switched = np.zeros(n, dtype=bool)
        switched[1:] = self.codes[1:] != self.codes[:-1]
        self._switches = {
            code: np.nonzero(switched & (self.codes == code))[0] for code in range(len(self.names))
        }

    def __len__(self) -> int:
        return len(self.history)

    def domain_code(self, domain: Optional[str]) -> int:
        """User-local code of a domain, -1 when the user never visited it."""
        return self._lookup.get(domain, -1) if domain is not None else -1

    def locate(self, seconds: np.ndarray) -> "BatchCandidates":
        """Candidate visit positions for every second.

        :raises NoPrecedingVisit: If any second comes before the first visit
        """
        seconds = np.asarray(seconds, dtype=np.int64)
        position = np.searchsorted(self.visit_seconds, seconds, side="right")
        if np.any(position == 0):
            first = int(seconds[np.argmax(position == 0)])
            raise NoPrecedingVisit("No history visit at or before second %d" % first)
        c = position - 1
        n = np.where(position < len(self), position, -1)
        return BatchCandidates(seconds, c, n, self.p1[c], self.p2[c])

    def switch_counts(self, seconds: np.ndarray, last: np.ndarray, domains: np.ndarray) -> np.ndarray:
        """Vectorised :func:`switch_count`, with `last` the position of the last
        visit at or before each second and `domains` user-local codes (-1 absent)."""
        counts = np.zeros(seconds.shape[0], dtype=np.int64)
        first = np.searchsorted(self.visit_seconds, seconds - BACKGROUND_WINDOW_S, side="left")
        for code in np.unique(domains[domains >= 0]):
            rows = domains == code
            positions = self._switches[int(code)]
            upto = np.searchsorted(positions, last[rows], side="right")
            after = np.searchsorted(positions, first[rows] + 1, side="left")
            counts[rows] = np.maximum(upto - after, 0)
        return counts

    def featurize(self, found: "BatchCandidates", vocabulary: DomainVocabulary) -> np.ndarray:
        """Vectorised :func:`featurize_domain`, one matrix row per located second."""
        seconds = found.seconds
        m = seconds.shape[0]
        k = len(vocabulary)
        rows = np.zeros((m, domain_width(k)), dtype=np.float64)
        if m == 0:
            return rows
        vs = self.visit_seconds
        c, n, p1, p2 = found.c, found.n, found.p1, found.p2
        has_n, has_p1, has_p2 = n >= 0, p1 >= 0, p2 >= 0
        n_at, p1_at, p2_at = np.maximum(n, 0), np.maximum(p1, 0), np.maximum(p2, 0)

        rows[:, 0:5] = MISSING_LOG
        rows[has_n, 0] = log_durations(vs[n[has_n]] - vs[c[has_n]])
        rows[:, 1] = log_durations(seconds - vs[c])
        rows[has_n, 2] = log_durations(vs[n[has_n]] - seconds[has_n])
        rows[has_p1, 3] = log_durations(seconds[has_p1] - vs[p1[has_p1]])
        rows[has_p2, 4] = log_durations(seconds[has_p2] - vs[p2[has_p2]])
        rows[:, 5] = np.where(has_p1, c - p1, 0)
        rows[:, 6] = np.where(has_p2, c - p2, 0)

        local = {
            DomainClass.C: self.codes[c],
            DomainClass.N: np.where(has_n, self.codes[n_at], -1),
            DomainClass.P1: np.where(has_p1, self.codes[p1_at], -1),
            DomainClass.P2: np.where(has_p2, self.codes[p2_at], -1),
        }
        column = len(NUMERIC_COLUMNS)
        for cls in SWITCH_ORDER:
            rows[:, column] = self.switch_counts(seconds, c, local[cls])
            column += 1

        referred = has_n & self.has_referrer[n_at]
        target = self.referrers[n_at]
        rows[:, column] = referred & (target == self.visit_ids[c])
        rows[:, column + 1] = referred & has_p1 & (target == self.visit_ids[p1_at])
        rows[:, column + 2] = referred & has_p2 & (target == self.visit_ids[p2_at])
        column += len(REFERRER_COLUMNS)

        vocab_codes = vocabulary.codes(self.domains())
        for cls, index in zip(DOMAIN_CLASS_ORDER, (c, n, p1, p2)):
            codes = np.where(index >= 0, vocab_codes[np.maximum(index, 0)], -1)
            rows[:, column : column + k] = one_hot_block(codes, k)
            column += k

        for j, cls in enumerate((DomainClass.C, DomainClass.P1, DomainClass.P2)):
            rows[:, column + j] = has_n & (local[cls] >= 0) & (local[DomainClass.N] == local[cls])
        return rows

    def domains(self) -> List[str]:
        return [v.domain for v in self.history]

    def label(self, found: "BatchCandidates", true_domains: Sequence[Optional[str]]) -> np.ndarray:
        """Vectorised :func:`label_domain`: class positions in C, N, P1, P2 order,
        -1 where no candidate matches."""
        truth = np.fromiter(
            (self.domain_code(d) for d in true_domains), dtype=np.int64, count=len(true_domains)
        )
        labels = np.full(truth.shape[0], -1, dtype=np.int64)
        for position, index in reversed(list(enumerate(found.positions()))):
            codes = np.where(index >= 0, self.codes[np.maximum(index, 0)], -2)
            labels[(truth >= 0) & (codes == truth)] = position
        return labels


@dataclass
class BatchCandidates:
    """Candidate visit positions for a batch of seconds, -1 where absent."""

    seconds: np.ndarray
    c: np.ndarray
    n: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    def positions(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Visit positions in C, N, P1, P2 order."""
        return self.c, self.n, self.p1, self.p2

    def chosen(self, classes: np.ndarray) -> np.ndarray:
        """Visit position of the predicted class of every second, falling back to C
        where that candidate is absent."""
        stacked = np.stack(self.positions())
        picked = stacked[np.asarray(classes, dtype=np.int64), np.arange(self.seconds.shape[0])]
        return np.where(picked >= 0, picked, self.c)


def featurize_domain_batch(
    seconds: np.ndarray, history: Sequence[HistoryVisit], vocabulary: DomainVocabulary
) -> np.ndarray:
    """Domain feature rows for many seconds of one user.

    :raises NoPrecedingVisit: If any second comes before the first visit
    """
    index = CandidateIndex(history)
    return index.featurize(index.locate(seconds), vocabulary)


@dataclass
class Coverage:
    """How the truth-active seconds split over the candidate classes.

    ``none`` counts seconds whose true domain is none of the four candidates,
    ``no_history`` those before the user's first visit.
    """

    counts: Dict[str, int] = field(
        default_factory=lambda: {cls.value: 0 for cls in DOMAIN_CLASS_ORDER}
    )
    none: int = 0
    no_history: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts.values()) + self.none + self.no_history

    def add(self, other: "Coverage") -> None:
        for key, value in other.counts.items():
            self.counts[key] = self.counts.get(key, 0) + value
        self.none += other.none
        self.no_history += other.no_history

    def fractions(self) -> Dict[str, float]:
        total = self.total
        shares = dict(self.counts)
        shares["NONE"] = self.none + self.no_history
        return {key: (value / total if total else 0.0) for key, value in shares.items()}


def _user_domain_rows(
    user_id: str,
    grid: SecondGrid,
    history: Sequence[HistoryVisit],
    vocabulary: DomainVocabulary,
    max_rows: Optional[int] = None,
    seed: int = 0,
) -> Tuple[Dataset, Coverage]:
    coverage = Coverage()
    truth_seconds = grid.active_seconds()
    columns = domain_columns(len(vocabulary))
    if not history:
        coverage.no_history = int(truth_seconds.shape[0])
        return Dataset.concatenate(columns, []), coverage

    index = CandidateIndex(history)
    covered = truth_seconds >= index.visit_seconds[0]
    coverage.no_history = int((~covered).sum())
    seconds = truth_seconds[covered]
    found = index.locate(seconds)
    labels = index.label(found, grid.domains_at(seconds))
    for position, cls in enumerate(DOMAIN_CLASS_ORDER):
        coverage.counts[cls.value] = int((labels == position).sum())
    coverage.none = int((labels < 0).sum())

    labelled = np.nonzero(labels >= 0)[0]
    keep = sample_seconds(labelled, max_rows, seed, user_id)
    kept = BatchCandidates(
        found.seconds[keep], found.c[keep], found.n[keep], found.p1[keep], found.p2[keep]
    )
    rows = index.featurize(kept, vocabulary)
    log.debug(
        "%s: %d labelled domain rows, %d unmatched seconds",
        user_id,
        rows.shape[0],
        coverage.none,
    )
    dataset = Dataset(
        columns,
        rows,
        labels[keep],
        np.full(rows.shape[0], user_id, dtype=object),
        kept.seconds,
    )
    return dataset, coverage


def build_domain_dataset(
    users: Sequence[str],
    grids: Mapping[str, SecondGrid],
    histories: Mapping[str, Sequence[HistoryVisit]],
    vocabulary: DomainVocabulary,
    processes: int = 1,
    max_rows_per_user: Optional[int] = None,
    seed: int = 0,
) -> Tuple[Dataset, Coverage]:
    """One labelled row per truth-active second that has a preceding visit and whose
    true domain is one of the candidates.

    Labels are positions in :data:`~histrecon.types.DOMAIN_CLASS_ORDER`. Rows are
    ordered by user id, then by second.

    With `max_rows_per_user` a seeded sample of each user's labelled seconds is
    kept; the coverage always counts every truth-active second.

    :return: The dataset and the class coverage of all truth-active seconds
    """
    ordered = sorted(users)
    for user_id in ordered:
        if user_id not in histories:
            raise MissingHistory("No history for user %s" % user_id)
        if user_id not in grids:
            raise MissingGroundTruth("No activity log for user %s" % user_id)

    results = map_ordered(
        lambda user_id: _user_domain_rows(
            user_id, grids[user_id], histories[user_id], vocabulary, max_rows_per_user, seed
        ),
        ordered,
        processes,
    )
    coverage = Coverage()
    for _, user_coverage in results:
        coverage.add(user_coverage)
    dataset = Dataset.concatenate(domain_columns(len(vocabulary)), [part for part, _ in results])
    log.info(
        "Built domain dataset: %d rows, %.1f%% of active seconds unmatched",
        len(dataset),
        100.0 * coverage.fractions()["NONE"],
    )
    return dataset, coverage


def reconstruct_domain_grid(
    user_id: str,
    active_seconds: np.ndarray,
    history: Sequence[HistoryVisit],
    vocabulary: DomainVocabulary,
    predict_codes: Optional[PredictCodes] = None,
    origin: Optional[int] = None,
    end: Optional[int] = None,
) -> SecondGrid:
    """Attach a focused domain to every predicted-active second.

    Each second gets the domain of its predicted candidate class, or of C when that
    candidate does not exist. Without a classifier every second gets C, which is
    the most-recent-domain heuristic. Seconds before the first visit have no
    candidates and are left inactive.

    :param active_seconds: Seconds predicted active, ascending
    :param predict_codes: (Optional) Maps a feature matrix to class positions in C,
        N, P1, P2 order
    :param origin: (Optional) First second of the returned grid
    :param end: (Optional) Exclusive end of the returned grid
    """
    seconds = np.asarray(active_seconds, dtype=np.int64)
    if not history or seconds.size == 0:
        return SecondGrid.from_seconds(user_id, seconds[:0], [], origin, end)

    index = CandidateIndex(history)
    covered = seconds >= index.visit_seconds[0]
    if not np.all(covered):
        log.debug(
            "%s: %d predicted-active seconds before the first visit left inactive",
            user_id,
            int((~covered).sum()),
        )
    seconds = seconds[covered]
    found = index.locate(seconds)
    if predict_codes is None or seconds.size == 0:
        chosen = found.c
    else:
        chosen = found.chosen(predict_codes(index.featurize(found, vocabulary)))
    domains = [index.history[i].domain for i in chosen]
    return SecondGrid.from_seconds(user_id, seconds, domains, origin, end)
