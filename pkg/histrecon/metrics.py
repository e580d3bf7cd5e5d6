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
"""Evaluation statistics: binary active-second metrics, the candidate-class
confusion matrix, domain accuracy and the time estimates with their R² and
normalised errors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from histrecon.activity import SecondGrid
from histrecon.types import DOMAIN_CLASS_ORDER, ErrorMode, JsonObj, MetricScope

log = logging.getLogger(__name__)


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else 0.0


@dataclass(frozen=True)
class BinaryMetrics:
    """Confusion counts of the active-second task; "positive" means active."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "BinaryMetrics") -> "BinaryMetrics":
        return BinaryMetrics(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return _ratio(2 * self.precision * self.recall, self.precision + self.recall)

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    def to_json(self) -> JsonObj:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
        }

    @classmethod
    def from_json(cls, json_obj: JsonObj) -> "BinaryMetrics":
        """Rebuild from the counts of :meth:`to_json`; the rates are derived."""
        return cls(*(int(json_obj[key]) for key in ("tp", "fp", "tn", "fn")))


def binary_metrics(
    predictions: Sequence[bool],
    truth: Sequence[bool],
    scope: MetricScope = MetricScope.all_seconds,
    in_session: Optional[Sequence[bool]] = None,
) -> BinaryMetrics:
    """Count true/false positives/negatives of aligned active flags.

    :param predictions: Predicted active flags
    :param truth: True active flags, aligned with `predictions`
    :param scope: :attr:`MetricScope.in_session` only counts the seconds flagged in
        `in_session`; :attr:`MetricScope.all_seconds` counts every second
    :param in_session: Session membership of every second, required for the
        in-session scope
    """
    predicted = np.asarray(predictions, dtype=bool)
    actual = np.asarray(truth, dtype=bool)
    if predicted.shape != actual.shape:
        raise ValueError("Predictions and truth are not aligned")
    if scope == MetricScope.in_session:
        if in_session is None:
            raise ValueError("The in-session scope needs session membership")
        mask = np.asarray(in_session, dtype=bool)
        if mask.shape != actual.shape:
            raise ValueError("Session membership is not aligned")
        predicted, actual = predicted[mask], actual[mask]
    return BinaryMetrics(
        tp=int(np.count_nonzero(predicted & actual)),
        fp=int(np.count_nonzero(predicted & ~actual)),
        tn=int(np.count_nonzero(~predicted & ~actual)),
        fn=int(np.count_nonzero(~predicted & actual)),
    )


#: Rows of :class:`ConfusionMatrix4`: the four classes, then seconds whose true
#: domain is none of the candidates.
CONFUSION_ROWS = tuple(cls.value for cls in DOMAIN_CLASS_ORDER) + ("NONE",)
CONFUSION_COLUMNS = tuple(cls.value for cls in DOMAIN_CLASS_ORDER)


@dataclass
class ConfusionMatrix4:
    """Predicted candidate class against true class, over truth-active seconds."""

    counts: np.ndarray = field(
        default_factory=lambda: np.zeros((len(CONFUSION_ROWS), len(CONFUSION_COLUMNS)), dtype=np.int64)
    )

    def add(self, truth: np.ndarray, predicted: np.ndarray) -> None:
        """Count pairs of class positions; a negative true class is NONE."""
        rows = np.where(np.asarray(truth) < 0, len(CONFUSION_ROWS) - 1, truth)
        np.add.at(self.counts, (rows, np.asarray(predicted, dtype=np.int64)), 1)

    def __add__(self, other: "ConfusionMatrix4") -> "ConfusionMatrix4":
        return ConfusionMatrix4(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts[: len(CONFUSION_COLUMNS)]))

    def truth_counts(self) -> Dict[str, int]:
        return {name: int(row.sum()) for name, row in zip(CONFUSION_ROWS, self.counts)}

    @property
    def covered_accuracy(self) -> float:
        """Accuracy over seconds whose true domain is one of the candidates."""
        return _ratio(self.correct, int(self.counts[: len(CONFUSION_COLUMNS)].sum()))

    @property
    def accuracy(self) -> float:
        """Accuracy counting NONE seconds as misses."""
        return _ratio(self.correct, self.total)

    def normalised(self) -> np.ndarray:
        """Each truth row divided by its total (zero rows stay zero)."""
        sums = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, sums, out=np.zeros(self.counts.shape), where=sums > 0)

    def to_json(self) -> JsonObj:
        return {
            "rows": list(CONFUSION_ROWS),
            "columns": list(CONFUSION_COLUMNS),
            "counts": self.counts.tolist(),
            "accuracy": self.accuracy,
            "covered_accuracy": self.covered_accuracy,
        }


def domain_hits(predicted: SecondGrid, truth: SecondGrid) -> Tuple[int, int]:
    """``(matching, total)`` truth-active seconds where the predicted domain is the
    true domain."""
    seconds = truth.active_seconds()
    true_domains = truth.domains_at(seconds)
    guessed = predicted.domains_at(seconds)
    hits = sum(1 for a, b in zip(true_domains, guessed) if a == b)
    return hits, len(true_domains)


def domain_accuracy(predicted: SecondGrid, truth: SecondGrid) -> float:
    """Fraction of truth-active seconds on which the predicted domain is right."""
    hits, total = domain_hits(predicted, truth)
    return _ratio(hits, total)


def _pairs(
    actual: Sequence[float], predicted: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError("Actual and predicted values must be aligned sequences")
    if a.shape[0] < 2:
        raise ValueError("R² needs at least two pairs")
    if np.all(a == a[0]):
        raise ValueError("R² needs actual values that vary")
    return a, p


def r_squared(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Squared Pearson correlation of actual against predicted values.

    :raises ValueError: With fewer than two pairs or constant actual values
    """
    a, p = _pairs(actual, predicted)
    da, dp = a - a.mean(), p - p.mean()
    denominator = float((da * da).sum() * (dp * dp).sum())
    if denominator == 0.0:
        return 0.0
    covariance = float((da * dp).sum())
    return covariance * covariance / denominator


def identity_r_squared(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """``1 - SS_res / SS_tot`` of the predictions about the line predicted = actual.

    Unlike :func:`r_squared` this punishes predictions that are off by a constant
    factor, and can be negative.
    """
    a, p = _pairs(actual, predicted)
    residual = float(((a - p) ** 2).sum())
    total = float(((a - a.mean()) ** 2).sum())
    return 1.0 - residual / total


@dataclass(frozen=True)
class UserTime:
    """Seconds one user spent online and on each domain."""

    user_id: str
    online_s: int
    domains: Mapping[str, int] = field(default_factory=dict)


def aggregate_time(grid: SecondGrid) -> UserTime:
    """Count the active seconds of a grid, in total and per domain."""
    codes = grid.codes[grid.active]
    per_code = np.bincount(codes, minlength=len(grid.domains)) if codes.size else []
    domains = {grid.domains[i]: int(n) for i, n in enumerate(per_code) if n}
    return UserTime(grid.user_id, int(codes.shape[0]), domains)


@dataclass(frozen=True)
class ErrorSummary:
    per_user: Mapping[str, float]
    mean: float
    std: float

    def to_json(self) -> JsonObj:
        return {"mean": self.mean, "std": self.std, "users": len(self.per_user)}


def _user_error(actual: UserTime, predicted: UserTime, mode: ErrorMode) -> float:
    if mode == ErrorMode.online:
        return abs(actual.online_s - predicted.online_s) / actual.online_s
    domains = set(actual.domains) | set(predicted.domains)
    missed = sum(
        abs(actual.domains.get(d, 0) - predicted.domains.get(d, 0)) for d in domains
    )
    return missed / sum(actual.domains.values())


def normalized_abs_error(
    actual: Mapping[str, UserTime],
    predicted: Mapping[str, UserTime],
    mode: ErrorMode = ErrorMode.online,
) -> ErrorSummary:
    """Absolute time error of every user divided by their true online time.

    In :attr:`ErrorMode.online` mode the error is on total online time; in
    :attr:`ErrorMode.per_domain` mode it is summed over domains. Users without any
    true online time are left out. The standard deviation is the population one.
    """
    errors: Dict[str, float] = {}
    for user_id in sorted(actual):
        if actual[user_id].online_s == 0:
            log.warning("Skipping %s in %s error: no online time", user_id, mode.value)
            continue
        empty = UserTime(user_id, 0)
        errors[user_id] = _user_error(actual[user_id], predicted.get(user_id, empty), mode)
    values = np.fromiter(errors.values(), dtype=np.float64, count=len(errors))
    if values.size == 0:
        return ErrorSummary(errors, 0.0, 0.0)
    return ErrorSummary(errors, float(values.mean()), float(values.std()))


@dataclass
class TimeReport:
    """Actual against predicted time, per user and per (user, domain)."""

    actual: Dict[str, UserTime] = field(default_factory=dict)
    predicted: Dict[str, UserTime] = field(default_factory=dict)

    def add(self, actual: UserTime, predicted: UserTime) -> None:
        self.actual[actual.user_id] = actual
        self.predicted[predicted.user_id] = predicted

    def online_rows(self) -> List[Tuple[str, int, int]]:
        return [
            (user_id, self.actual[user_id].online_s, self.predicted[user_id].online_s)
            for user_id in sorted(self.actual)
        ]

    def domain_rows(self) -> List[Tuple[str, str, int, int]]:
        """Every (user, domain) with actual or predicted time."""
        rows = []
        for user_id in sorted(self.actual):
            actual = self.actual[user_id].domains
            predicted = self.predicted[user_id].domains
            for domain in sorted(set(actual) | set(predicted)):
                rows.append((user_id, domain, actual.get(domain, 0), predicted.get(domain, 0)))
        return rows

    def online_r_squared(self) -> Dict[str, Optional[float]]:
        rows = self.online_rows()
        actual = [row[1] for row in rows]
        predicted = [row[2] for row in rows]
        try:
            return {
                "pearson": r_squared(actual, predicted),
                "identity": identity_r_squared(actual, predicted),
            }
        except ValueError as e:
            log.warning("Online time R² undefined: %s", e)
            return {"pearson": None, "identity": None}

    def domain_r_squared(self) -> Dict[str, Union[float, int, None]]:
        """Per-user R² over the user's domains, averaged over users."""
        pearson: List[float] = []
        identity: List[float] = []
        rows = self.domain_rows()
        for user_id in sorted(self.actual):
            user_rows = [row for row in rows if row[0] == user_id]
            actual = [row[2] for row in user_rows]
            predicted = [row[3] for row in user_rows]
            try:
                pearson.append(r_squared(actual, predicted))
                identity.append(identity_r_squared(actual, predicted))
            except ValueError as e:
                log.warning("Per-domain R² undefined for %s: %s", user_id, e)
        if not pearson:
            return {"pearson": None, "identity": None, "users": 0}
        return {
            "pearson": float(np.mean(pearson)),
            "identity": float(np.mean(identity)),
            "users": len(pearson),
        }

    def errors(self) -> Dict[str, ErrorSummary]:
        return {
            mode.value: normalized_abs_error(self.actual, self.predicted, mode)
            for mode in ErrorMode
        }

