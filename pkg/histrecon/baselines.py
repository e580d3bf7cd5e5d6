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
"""The heuristic comparators: a per-user constant activity guess, a fixed
threshold after every history visit, the most recently visited domain and the
user's favourite domain."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from histrecon.activity import SESSION_GAP_S, SecondGrid, in_session_seconds, sessions
from histrecon.domain_features import candidates
from histrecon.history import HistoryVisit
from histrecon.metrics import BinaryMetrics, binary_metrics

log = logging.getLogger(__name__)

THRESHOLD_MINUTES = range(1, 11)
DEFAULT_THRESHOLD_MINUTES = 5


def _check_minutes(minutes: int) -> None:
    if minutes not in THRESHOLD_MINUTES:
        raise ValueError("Threshold must be 1 to 10 minutes, got %r" % minutes)


def majority_activity_baseline(truth: Sequence[bool]) -> bool:
    """The constant guess (``True`` for all-active) that is right more often on the
    given in-session ground truth. Ties go to active."""
    flags = np.asarray(truth, dtype=bool)
    return 2 * int(flags.sum()) >= flags.shape[0]


def threshold_active_baseline(
    history: Sequence[HistoryVisit], minutes: int, seconds: np.ndarray
) -> np.ndarray:
    """Predict second ``s`` active when a visit happened within the last `minutes`,
    that is at a time in ``(s * 1000 - minutes * 60000, s * 1000]`` milliseconds.

    :param history: The user's visits sorted by time
    :param minutes: The threshold, 1 to 10
    :param seconds: The seconds to predict
    :return: Active flags aligned with `seconds`
    """
    _check_minutes(minutes)
    instants = np.asarray(seconds, dtype=np.int64) * 1000
    times = np.fromiter((v.visit_time for v in history), dtype=np.int64, count=len(history))
    if times.size == 0:
        return np.zeros(instants.shape, dtype=bool)
    last = np.searchsorted(times, instants, side="right") - 1
    return (last >= 0) & (instants - times[np.maximum(last, 0)] < minutes * 60_000)


def threshold_active_seconds(history: Sequence[HistoryVisit], minutes: int) -> np.ndarray:
    """Every second :func:`threshold_active_baseline` predicts active, ascending."""
    _check_minutes(minutes)
    if not history:
        return np.zeros(0, dtype=np.int64)
    times = np.fromiter((v.visit_time for v in history), dtype=np.int64, count=len(history))
    # seconds s with t <= s * 1000 < t + window
    firsts = -(-times // 1000)
    lasts = -(-(times + minutes * 60_000) // 1000) - 1
    spans: List[Tuple[int, int]] = []
    for first, last in zip(firsts.tolist(), lasts.tolist()):
        if spans and first <= spans[-1][1] + 1:
            spans[-1] = (spans[-1][0], max(spans[-1][1], last))
        else:
            spans.append((first, last))
    return np.concatenate([np.arange(a, b + 1, dtype=np.int64) for a, b in spans])


@dataclass(frozen=True)
class SweepResult:
    best_minutes: int
    metrics: Tuple[Tuple[int, BinaryMetrics], ...]

    def to_json(self) -> dict:
        return {
            "best_minutes": self.best_minutes,
            "sweep": {str(m): metrics.to_json() for m, metrics in self.metrics},
        }

    @classmethod
    def from_json(cls, json_obj: dict) -> "SweepResult":
        metrics = sorted(
            (int(m), BinaryMetrics.from_json(counts)) for m, counts in json_obj["sweep"].items()
        )
        return cls(int(json_obj["best_minutes"]), tuple(metrics))


def sweep_threshold(
    users: Sequence[Tuple[SecondGrid, Sequence[HistoryVisit]]], gap: int = SESSION_GAP_S
) -> SweepResult:
    """Pick the threshold with the best F1 over all in-session seconds of the given
    users, trying every whole minute from 1 to 10. Ties go to the smaller
    threshold.

    :param users: Ground-truth grid and history of every training user
    """
    prepared = []
    for grid, history in users:
        seconds = in_session_seconds(sessions(grid, gap))
        prepared.append((seconds, grid.active_at(seconds), history))

    results = []
    best, best_f1 = THRESHOLD_MINUTES[0], -1.0
    for minutes in THRESHOLD_MINUTES:
        pooled = BinaryMetrics()
        for seconds, truth, history in prepared:
            predicted = threshold_active_baseline(history, minutes, seconds)
            pooled = pooled + binary_metrics(predicted, truth)
        results.append((minutes, pooled))
        log.debug("Threshold %d min: F1 %.4f", minutes, pooled.f1)
        if pooled.f1 > best_f1:
            best, best_f1 = minutes, pooled.f1
    log.info("Best activity threshold: %d minutes (F1 %.4f)", best, best_f1)
    return SweepResult(best, tuple(results))


def most_recent_domain_baseline(second: int, history: Sequence[HistoryVisit]) -> str:
    """The domain of the latest visit at or before `second`.

    :raises NoPrecedingVisit: If there is none
    """
    return candidates(second, history).c.domain


def top_domain_baseline(grid: SecondGrid, seconds: Optional[np.ndarray] = None) -> Optional[str]:
    """The domain the user spent the most active seconds on, ties going to the
    lexicographically smallest one.

    :param grid: The user's ground truth
    :param seconds: (Optional) Only count these seconds
    :return: The domain, or ``None`` without any active second
    """
    if seconds is None:
        codes = grid.codes[grid.active]
    else:
        offsets = np.asarray(seconds, dtype=np.int64) - grid.origin
        offsets = offsets[(offsets >= 0) & (offsets < len(grid))]
        codes = grid.codes[offsets]
        codes = codes[codes >= 0]
    if codes.size == 0:
        return None
    totals = np.bincount(codes, minlength=len(grid.domains))
    return min(grid.domains[i] for i in np.nonzero(totals == totals.max())[0])


def calibration_halves(seconds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split seconds into an earlier half that calibrates the constant baselines
    and a later half they are scored on."""
    middle = seconds.shape[0] // 2
    return seconds[:middle], seconds[middle:]
