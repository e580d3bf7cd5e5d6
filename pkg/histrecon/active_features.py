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
"""Feature rows for the browser-active classifier.

Every second is described by the history visits around it: how long since the
previous visit, until the next one, the gap between the two, the domains of both
and the productivity level of the previous domain. With a vocabulary of 20 domains
a row is 3 + 20 + 20 + 5 = 48 wide.
"""

from __future__ import annotations

import bisect
import csv
import logging
from dataclasses import dataclass
from typing import IO, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from histrecon.activity import SESSION_GAP_S, SecondGrid, in_session_seconds, sessions
from histrecon.encoding import MISSING_LOG, log_duration, log_durations, one_hot, one_hot_block
from histrecon.exceptions import EmptyDataset, MissingGroundTruth, MissingHistory
from histrecon.history import DomainVocabulary, HistoryVisit, ProductivityMap
from histrecon.types import PRODUCTIVITY_ORDER, ProductivityLevel
from histrecon.workers import map_ordered

log = logging.getLogger(__name__)

NUMERIC_COLUMNS = ("log_gap_prev_next", "log_since_prev", "log_until_next")


def active_columns(k: int = 20) -> Tuple[str, ...]:
    """Column names of an active feature row for a vocabulary of `k` domains."""
    return (
        NUMERIC_COLUMNS
        + tuple("prev_domain_%02d" % i for i in range(k))
        + tuple("next_domain_%02d" % i for i in range(k))
        + tuple("productivity_%s" % level.value for level in PRODUCTIVITY_ORDER)
    )


ACTIVE_COLUMNS = active_columns()


def active_width(k: int = 20) -> int:
    return len(NUMERIC_COLUMNS) + 2 * k + len(PRODUCTIVITY_ORDER)


@dataclass(frozen=True)
class ActiveFeatureRow:
    second: int
    log_gap_prev_next: float
    log_since_prev: float
    log_until_next: float
    prev_domain_onehot: np.ndarray
    next_domain_onehot: np.ndarray
    productivity_onehot: np.ndarray
    label: Optional[bool] = None

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            (
                [self.log_gap_prev_next, self.log_since_prev, self.log_until_next],
                self.prev_domain_onehot,
                self.next_domain_onehot,
                self.productivity_onehot,
            )
        )


def featurize_active(
    second: int,
    history: Sequence[HistoryVisit],
    vocabulary: DomainVocabulary,
    productivity: ProductivityMap,
) -> ActiveFeatureRow:
    """Describe one second by the history visits around it.

    The previous visit is the last one whose second is at or before `second`; the
    next visit is the first one strictly after it. A side with no visit uses the
    one-day sentinel for its durations, an all-zero domain one-hot and, for the
    previous side, the neutral productivity level.

    :param second: The second to describe
    :param history: The user's visits sorted by time, frame navigations removed
    :param vocabulary: Domains with their own one-hot bit
    :param productivity: Productivity levels by domain
    """
    visit_seconds = [visit.visit_second for visit in history]
    position = bisect.bisect_right(visit_seconds, second)
    prev = history[position - 1] if position > 0 else None
    nxt = history[position] if position < len(history) else None

    since = log_duration(second - prev.visit_second) if prev else MISSING_LOG
    until = log_duration(nxt.visit_second - second) if nxt else MISSING_LOG
    if prev and nxt:
        gap = log_duration(nxt.visit_second - prev.visit_second)
    else:
        gap = MISSING_LOG
    level = productivity.lookup(prev.domain) if prev else ProductivityLevel.neutral

    return ActiveFeatureRow(
        second=second,
        log_gap_prev_next=gap,
        log_since_prev=since,
        log_until_next=until,
        prev_domain_onehot=vocabulary.one_hot(prev.domain if prev else None),
        next_domain_onehot=vocabulary.one_hot(nxt.domain if nxt else None),
        productivity_onehot=one_hot(PRODUCTIVITY_ORDER.index(level), len(PRODUCTIVITY_ORDER)),
    )


def featurize_active_batch(
    seconds: np.ndarray,
    history: Sequence[HistoryVisit],
    vocabulary: DomainVocabulary,
    productivity: ProductivityMap,
) -> np.ndarray:
    """Vectorised :func:`featurize_active`, one matrix row per second."""
    seconds = np.asarray(seconds, dtype=np.int64)
    k = len(vocabulary)
    rows = np.empty((seconds.shape[0], active_width(k)), dtype=np.float64)
    if seconds.size == 0:
        return rows

    visit_seconds = np.fromiter((v.visit_second for v in history), dtype=np.int64)
    domain_codes = vocabulary.codes(v.domain for v in history)
    levels = np.fromiter((productivity.index(v.domain) for v in history), dtype=np.int64)

    position = np.searchsorted(visit_seconds, seconds, side="right")
    has_prev = position > 0
    has_next = position < visit_seconds.shape[0]
    prev = np.where(has_prev, position - 1, 0)
    nxt = np.where(has_next, position, 0)

    rows[:, 0] = MISSING_LOG
    rows[:, 1] = MISSING_LOG
    rows[:, 2] = MISSING_LOG
    if visit_seconds.size:
        both = has_prev & has_next
        rows[both, 0] = log_durations(visit_seconds[nxt[both]] - visit_seconds[prev[both]])
        rows[has_prev, 1] = log_durations(seconds[has_prev] - visit_seconds[prev[has_prev]])
        rows[has_next, 2] = log_durations(visit_seconds[nxt[has_next]] - seconds[has_next])
        prev_codes = np.where(has_prev, domain_codes[prev], -1)
        next_codes = np.where(has_next, domain_codes[nxt], -1)
        level_codes = np.where(has_prev, levels[prev], PRODUCTIVITY_ORDER.index(ProductivityLevel.neutral))
    else:
        prev_codes = next_codes = np.full(seconds.shape[0], -1, dtype=np.int64)
        level_codes = np.full(
            seconds.shape[0], PRODUCTIVITY_ORDER.index(ProductivityLevel.neutral), dtype=np.int64
        )

    rows[:, 3 : 3 + k] = one_hot_block(prev_codes, k)
    rows[:, 3 + k : 3 + 2 * k] = one_hot_block(next_codes, k)
    rows[:, 3 + 2 * k :] = one_hot_block(level_codes, len(PRODUCTIVITY_ORDER))
    return rows


def label_active(second: int, grid: SecondGrid) -> bool:
    """Ground-truth active flag; seconds the grid does not cover are inactive."""
    return grid.is_active(second)


@dataclass
class Dataset:
    """Feature matrix with one label and (user, second) key per row."""

    columns: Tuple[str, ...]
    rows: np.ndarray
    labels: np.ndarray
    user_ids: np.ndarray
    seconds: np.ndarray

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def width(self) -> int:
        return len(self.columns)

    @classmethod
    def concatenate(cls, columns: Tuple[str, ...], parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            return cls(
                columns,
                np.zeros((0, len(columns)), dtype=np.float64),
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=object),
                np.zeros(0, dtype=np.int64),
            )
        return cls(
            columns,
            np.concatenate([part.rows for part in parts]),
            np.concatenate([part.labels for part in parts]),
            np.concatenate([part.user_ids for part in parts]),
            np.concatenate([part.seconds for part in parts]),
        )

    def subsample(self, max_rows: Optional[int], seed: int) -> "Dataset":
        """A seeded subset of at most `max_rows` rows, in the original row order."""
        if max_rows is None or len(self) <= max_rows:
            return self
        if max_rows < 1:
            raise EmptyDataset("Cannot subsample to %d rows" % max_rows)
        rng = np.random.default_rng(np.random.SeedSequence([seed, len(self)]))
        keep = np.sort(rng.choice(len(self), size=max_rows, replace=False))
        log.debug("Subsampled %d of %d rows", max_rows, len(self))
        return Dataset(
            self.columns,
            self.rows[keep],
            self.labels[keep],
            self.user_ids[keep],
            self.seconds[keep],
        )


def write_dataset_csv(dataset: Dataset, stream: IO[str]) -> None:
    """Dump a dataset as CSV: ``user_id,second``, the feature columns, ``label``."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("user_id", "second") + dataset.columns + ("label",))
    for i in range(len(dataset)):
        writer.writerow(
            [dataset.user_ids[i], int(dataset.seconds[i])]
            + [repr(float(x)) for x in dataset.rows[i]]
            + [int(dataset.labels[i])]
        )


def user_rng(seed: int, user_id: str) -> np.random.Generator:
    """A generator that only depends on the seed and the user id."""
    return np.random.default_rng(np.random.SeedSequence([seed, *user_id.encode("utf-8")]))


def sample_seconds(
    seconds: np.ndarray, limit: Optional[int], seed: int, user_id: str
) -> np.ndarray:
    """At most `limit` of `seconds`, drawn without replacement, in ascending order."""
    if limit is None or seconds.shape[0] <= limit:
        return seconds
    picked = user_rng(seed, user_id).choice(seconds.shape[0], size=limit, replace=False)
    return seconds[np.sort(picked)]


def _user_active_rows(
    user_id: str,
    grid: SecondGrid,
    history: Sequence[HistoryVisit],
    vocabulary: DomainVocabulary,
    productivity: ProductivityMap,
    gap: int,
    max_rows: Optional[int],
    seed: int,
) -> Dataset:
    seconds = in_session_seconds(sessions(grid, gap))
    seconds = sample_seconds(seconds, max_rows, seed, user_id)
    rows = featurize_active_batch(seconds, history, vocabulary, productivity)
    labels = grid.active_at(seconds).astype(np.int64)
    log.debug("%s: %d in-session seconds", user_id, seconds.shape[0])
    return Dataset(
        active_columns(len(vocabulary)),
        rows,
        labels,
        np.full(seconds.shape[0], user_id, dtype=object),
        seconds,
    )


def build_active_dataset(
    users: Sequence[str],
    grids: Mapping[str, SecondGrid],
    histories: Mapping[str, Sequence[HistoryVisit]],
    vocabulary: DomainVocabulary,
    productivity: ProductivityMap,
    gap: int = SESSION_GAP_S,
    processes: int = 1,
    max_rows_per_user: Optional[int] = None,
    seed: int = 0,
) -> Dataset:
    """One labelled row per in-session second of every user.

    Rows are ordered by user id, then by second. Labels are 1 for active and 0
    for inactive seconds, matching :data:`~histrecon.types.ACTIVE_CLASS_ORDER`.
    With `max_rows_per_user` a seeded sample of each user's seconds is taken.

    :param users: The users to include
    :param grids: Ground-truth grids by user id
    :param histories: Frame-filtered histories by user id
    :raises MissingHistory: If a user has no history entry
    :raises MissingGroundTruth: If a user has no grid
    """
    ordered = sorted(users)
    for user_id in ordered:
        if user_id not in histories:
            raise MissingHistory("No history for user %s" % user_id)
        if user_id not in grids:
            raise MissingGroundTruth("No activity log for user %s" % user_id)

    parts: List[Dataset] = map_ordered(
        lambda user_id: _user_active_rows(
            user_id,
            grids[user_id],
            histories[user_id],
            vocabulary,
            productivity,
            gap,
            max_rows_per_user,
            seed,
        ),
        ordered,
        processes,
    )
    dataset = Dataset.concatenate(active_columns(len(vocabulary)), parts)
    log.info("Built active dataset: %d rows from %d users", len(dataset), len(ordered))
    return dataset
