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
"""Scoring reconstructions against ground truth and writing the report files."""

from __future__ import annotations

import csv
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from histrecon.activity import SecondGrid, Session, in_session_mask, in_session_seconds
from histrecon.baselines import (
    THRESHOLD_MINUTES,
    calibration_halves,
    majority_activity_baseline,
    threshold_active_baseline,
    threshold_active_seconds,
    top_domain_baseline,
)
from histrecon.domain_features import CandidateIndex, Coverage, PredictCodes
from histrecon.history import DomainVocabulary, HistoryVisit
from histrecon.metrics import (
    CONFUSION_COLUMNS,
    CONFUSION_ROWS,
    BinaryMetrics,
    ConfusionMatrix4,
    TimeReport,
    UserTime,
    aggregate_time,
    binary_metrics,
    domain_hits,
)
from histrecon.types import DOMAIN_CLASS_ORDER, JsonObj, Method, MetricScope

log = logging.getLogger(__name__)

REPORT = "report.json"
ACTIVE_METRICS = "active_metrics.csv"
ONLINE_TIME = "online_time.csv"
DOMAIN_TIME = "domain_time.csv"
CONFUSION = "confusion.csv"
TOP_DOMAINS = "top_domains.csv"
GRIDS = "grids"

CALIBRATION_NOTE = (
    "per-user majority and top-domain baselines are calibrated on the first half of "
    "each user's in-session (resp. truth-active) seconds and scored on the second half"
)

Runs = List[Tuple[int, int, str]]


@dataclass
class UserEvaluation:
    """Every count the report needs from one user."""

    user_id: str
    #: Active-second metrics of the forest and the threshold baseline, by scope
    forest: Dict[str, BinaryMetrics]
    threshold: Dict[str, BinaryMetrics]
    majority: BinaryMetrics
    majority_active: bool
    sweep: Dict[int, BinaryMetrics]
    #: ``(hits, total)`` over truth-active seconds, by domain predictor
    domain: Dict[str, Tuple[int, int]]
    domain_second_half: Dict[str, Tuple[int, int]]
    top_domain: Optional[str]
    confusion: ConfusionMatrix4
    coverage: Coverage
    actual_time: UserTime
    forest_time: UserTime
    heuristic_time: UserTime
    runs: Dict[str, Runs] = field(default_factory=dict)


def _member(seconds: np.ndarray, chosen: np.ndarray) -> np.ndarray:
    return np.isin(seconds, chosen, assume_unique=True)


def _matches(predicted: SecondGrid, truth: SecondGrid, seconds: np.ndarray) -> int:
    return sum(
        1
        for a, b in zip(predicted.domains_at(seconds), truth.domains_at(seconds))
        if a is not None and a == b
    )


def _bounds(*arrays: np.ndarray) -> Tuple[int, int]:
    firsts = [int(a[0]) for a in arrays if a.size]
    lasts = [int(a[-1]) for a in arrays if a.size]
    if not firsts:
        return 0, 0
    return min(firsts), max(lasts) + 1


def score_active(
    truth: SecondGrid,
    session_list: Sequence[Session],
    history: Sequence[HistoryVisit],
    forest_active: np.ndarray,
    threshold_minutes: int,
) -> Tuple[Dict[str, BinaryMetrics], Dict[str, BinaryMetrics], BinaryMetrics, bool, Dict[int, BinaryMetrics]]:
    """Active-second metrics of one user.

    The all-seconds scope covers every second from the earliest to the latest
    second that is in the ground truth, in a session or predicted active.

    :param forest_active: Seconds the forest predicts active, ascending
    :param threshold_minutes: The threshold baseline to score
    :return: Forest and threshold metrics by scope, the majority baseline's
        metrics and choice, and the in-session metrics of every threshold
    """
    in_session = in_session_seconds(session_list)
    threshold_active = threshold_active_seconds(history, threshold_minutes)
    low, high = _bounds(truth.seconds(), in_session, forest_active, threshold_active)
    everything = np.arange(low, high, dtype=np.int64)
    truth_flags = truth.active_at(everything)
    session_flags = in_session_mask(everything, session_list)

    first, second = calibration_halves(in_session)
    truth_second = truth.active_at(second)

    def scopes(predicted_seconds: np.ndarray) -> Dict[str, BinaryMetrics]:
        predicted = _member(everything, predicted_seconds)
        return {
            MetricScope.in_session.value: binary_metrics(
                predicted, truth_flags, MetricScope.in_session, session_flags
            ),
            MetricScope.all_seconds.value: binary_metrics(predicted, truth_flags),
            "second_half": binary_metrics(_member(second, predicted_seconds), truth_second),
        }

    majority_active = majority_activity_baseline(truth.active_at(first))
    majority = binary_metrics(np.full(second.shape, majority_active), truth_second)

    truth_in_session = truth.active_at(in_session)
    sweep = {
        minutes: binary_metrics(
            threshold_active_baseline(history, minutes, in_session), truth_in_session
        )
        for minutes in THRESHOLD_MINUTES
    }
    return scopes(forest_active), scopes(threshold_active), majority, majority_active, sweep


def score_domains(
    truth: SecondGrid,
    history: Sequence[HistoryVisit],
    vocabulary: DomainVocabulary,
    predict_codes: PredictCodes,
) -> Tuple[Dict[str, Tuple[int, int]], Dict[str, Tuple[int, int]], Optional[str], ConfusionMatrix4, Coverage]:
    """Focused-domain metrics of one user over their truth-active seconds.

    Seconds before the first visit cannot be predicted and count as misses; they
    are left out of the confusion matrix.

    :return: Hits by predictor, second-half hits by predictor, the calibrated top
        domain, the confusion matrix and the class coverage
    """
    truth_active = truth.active_seconds()
    true_domains = truth.domains_at(truth_active)
    coverage = Coverage()
    confusion = ConfusionMatrix4()
    user_id = truth.user_id

    if history:
        index = CandidateIndex(history)
        covered = truth_active >= index.visit_seconds[0]
    else:
        covered = np.zeros(truth_active.shape, dtype=bool)
    coverage.no_history = int((~covered).sum())
    seconds = truth_active[covered]

    if seconds.size:
        found = index.locate(seconds)
        labels = index.label(found, [d for d, keep in zip(true_domains, covered) if keep])
        codes = predict_codes(index.featurize(found, vocabulary))
        confusion.add(labels, codes)
        per_class = np.bincount(labels[labels >= 0], minlength=len(DOMAIN_CLASS_ORDER))
        for cls, count in zip(DOMAIN_CLASS_ORDER, per_class):
            coverage.counts[cls.value] = int(count)
        coverage.none = int((labels < 0).sum())
        forest_domains = [index.history[i].domain for i in found.chosen(codes)]
        recent_domains = [index.history[i].domain for i in found.c]
    else:
        forest_domains = recent_domains = []

    predicted = {
        "forest": SecondGrid.from_seconds(user_id, seconds, forest_domains, truth.origin, truth.end),
        "most_recent": SecondGrid.from_seconds(
            user_id, seconds, recent_domains, truth.origin, truth.end
        ),
    }
    hits = {name: domain_hits(grid, truth) for name, grid in predicted.items()}

    first, second = calibration_halves(truth_active)
    top = top_domain_baseline(truth, first)
    halves = {name: (_matches(grid, truth, second), len(second)) for name, grid in predicted.items()}
    halves["top_domain"] = (
        sum(1 for d in truth.domains_at(second) if top is not None and d == top),
        len(second),
    )
    return hits, halves, top, confusion, coverage


def score_user(
    truth: SecondGrid,
    session_list: Sequence[Session],
    history: Sequence[HistoryVisit],
    vocabulary: DomainVocabulary,
    forest_active: np.ndarray,
    forest_grid: SecondGrid,
    heuristic_grid: SecondGrid,
    threshold_minutes: int,
    predict_codes: PredictCodes,
) -> UserEvaluation:
    """Score one user's reconstructions.

    :param truth: The ground-truth grid
    :param session_list: Sessions of the ground truth
    :param history: The user's frame-filtered history
    :param forest_active: Seconds the active forest predicts active
    :param forest_grid: Reconstruction by both forests
    :param heuristic_grid: Reconstruction by the threshold and most-recent-domain
        heuristics
    :param threshold_minutes: The trained threshold baseline
    :param predict_codes: The domain forest's class predictor
    """
    forest, threshold, majority, majority_active, sweep = score_active(
        truth, session_list, history, forest_active, threshold_minutes
    )
    hits, halves, top, confusion, coverage = score_domains(truth, history, vocabulary, predict_codes)
    evaluation = UserEvaluation(
        user_id=truth.user_id,
        forest=forest,
        threshold=threshold,
        majority=majority,
        majority_active=majority_active,
        sweep=sweep,
        domain=hits,
        domain_second_half=halves,
        top_domain=top,
        confusion=confusion,
        coverage=coverage,
        actual_time=aggregate_time(truth),
        forest_time=aggregate_time(forest_grid),
        heuristic_time=aggregate_time(heuristic_grid),
        runs={
            "truth": truth.runs(),
            Method.forest.value: forest_grid.runs(),
            Method.heuristic.value: heuristic_grid.runs(),
        },
    )
    log.debug(
        "%s: forest F1 %.3f, domain hits %d/%d",
        truth.user_id,
        forest[MetricScope.in_session.value].f1,
        *hits["forest"],
    )
    return evaluation


def _pooled(parts: Sequence[BinaryMetrics]) -> BinaryMetrics:
    total = BinaryMetrics()
    for part in parts:
        total = total + part
    return total


def _ratio(pair: Tuple[int, int]) -> float:
    hits, total = pair
    return hits / total if total else 0.0


def _summed(pairs: Sequence[Tuple[int, int]]) -> Tuple[int, int]:
    return sum(p[0] for p in pairs), sum(p[1] for p in pairs)


class Evaluation:
    """Pooled results over the evaluated users.

    Binary metrics and domain accuracies pool the seconds of every user; R² and
    normalised errors are computed from the per-user times.

    :param split: The corpus split that was evaluated
    :param method: Whose reconstruction the time CSVs and grid dumps show
    :param users: Per-user results, in user id order
    :param vocabulary_version: Fingerprint of the model's vocabulary
    :param threshold_minutes: The trained threshold baseline
    """

    def __init__(
        self,
        split: str,
        method: Method,
        users: Sequence[UserEvaluation],
        vocabulary_version: str,
        threshold_minutes: int,
    ):
        self.split = split
        self.method = method
        self.users = list(users)
        self.vocabulary_version = vocabulary_version
        self.threshold_minutes = threshold_minutes

    def __repr__(self) -> str:
        return "Evaluation(split=%r, method=%r, users=%d)" % (
            self.split,
            self.method.value,
            len(self.users),
        )

    def active(self, system: str, scope: str) -> BinaryMetrics:
        """Pooled metrics of ``forest`` or ``threshold`` in a scope."""
        return _pooled([getattr(user, system)[scope] for user in self.users])

    @property
    def majority(self) -> BinaryMetrics:
        return _pooled([user.majority for user in self.users])

    def sweep(self) -> Dict[int, BinaryMetrics]:
        return {
            minutes: _pooled([user.sweep[minutes] for user in self.users])
            for minutes in THRESHOLD_MINUTES
        }

    def domain_accuracy(self, predictor: str, second_half: bool = False) -> float:
        return _ratio(
            _summed(
                [
                    (user.domain_second_half if second_half else user.domain)[predictor]
                    for user in self.users
                ]
            )
        )

    @property
    def confusion(self) -> ConfusionMatrix4:
        total = ConfusionMatrix4()
        for user in self.users:
            total = total + user.confusion
        return total

    @property
    def coverage(self) -> Coverage:
        total = Coverage()
        for user in self.users:
            total.add(user.coverage)
        return total

    def time_report(self, method: Union[Method, str]) -> TimeReport:
        method = Method(method)
        report = TimeReport()
        for user in self.users:
            predicted = user.forest_time if method == Method.forest else user.heuristic_time
            report.add(user.actual_time, predicted)
        return report

    def top_domains(self) -> List[Tuple[str, int, int]]:
        """``(domain, actual, predicted)`` seconds over all users, most actual time
        first."""
        actual: Dict[str, int] = {}
        predicted: Dict[str, int] = {}
        for user in self.users:
            guess = user.forest_time if self.method == Method.forest else user.heuristic_time
            for domain, seconds in user.actual_time.domains.items():
                actual[domain] = actual.get(domain, 0) + seconds
            for domain, seconds in guess.domains.items():
                predicted[domain] = predicted.get(domain, 0) + seconds
        domains = set(actual) | set(predicted)
        return sorted(
            ((d, actual.get(d, 0), predicted.get(d, 0)) for d in domains),
            key=lambda row: (-row[1], -row[2], row[0]),
        )

    def to_json(self) -> JsonObj:
        in_session = MetricScope.in_session.value
        all_seconds = MetricScope.all_seconds.value
        coverage = self.coverage

        def times(method: Method) -> JsonObj:
            report = self.time_report(method)
            return {
                "online_r_squared": report.online_r_squared(),
                "domain_r_squared": report.domain_r_squared(),
                "normalized_abs_error": {
                    mode: summary.to_json() for mode, summary in report.errors().items()
                },
            }

        return {
            "split": self.split,
            "method": self.method.value,
            "users": [user.user_id for user in self.users],
            "model": {
                "vocabulary_version": self.vocabulary_version,
                "threshold_minutes": self.threshold_minutes,
            },
            "active": {
                in_session: {
                    "forest": self.active("forest", in_session).to_json(),
                    "threshold": self.active("threshold", in_session).to_json(),
                },
                all_seconds: {
                    "forest": self.active("forest", all_seconds).to_json(),
                    "threshold": self.active("threshold", all_seconds).to_json(),
                },
                "second_half": {
                    "forest": self.active("forest", "second_half").to_json(),
                    "threshold": self.active("threshold", "second_half").to_json(),
                    "majority": self.majority.to_json(),
                },
                "threshold_sweep": {
                    str(minutes): metrics.to_json() for minutes, metrics in self.sweep().items()
                },
            },
            "domain": {
                "accuracy": {
                    "forest": self.domain_accuracy("forest"),
                    "most_recent": self.domain_accuracy("most_recent"),
                },
                "second_half": {
                    name: self.domain_accuracy(name, second_half=True)
                    for name in ("forest", "most_recent", "top_domain")
                },
                "confusion": self.confusion.to_json(),
                "coverage": {
                    "fractions": coverage.fractions(),
                    "counts": dict(coverage.counts),
                    "none": coverage.none,
                    "no_history": coverage.no_history,
                },
            },
            "time": {
                Method.forest.value: times(Method.forest),
                Method.heuristic.value: times(Method.heuristic),
            },
            "baselines": {
                "calibration": CALIBRATION_NOTE,
                "majority_active": {u.user_id: u.majority_active for u in self.users},
                "top_domain": {u.user_id: u.top_domain for u in self.users},
            },
            "per_user": {
                user.user_id: {
                    "active_in_session": user.forest[in_session].to_json(),
                    "domain_hits": list(user.domain["forest"]),
                    "actual_online_s": user.actual_time.online_s,
                    "forest_online_s": user.forest_time.online_s,
                    "heuristic_online_s": user.heuristic_time.online_s,
                }
                for user in self.users
            },
        }

    def write(self, directory: Union[str, Path]) -> None:
        """Write ``report.json``, the CSV files and one grid dump per user."""
        root = Path(directory)
        (root / GRIDS).mkdir(parents=True, exist_ok=True)
        (root / REPORT).write_text(
            json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        with _csv_writer(root / ACTIVE_METRICS) as writer:
            writer.writerow(
                ["system", "scope", "tp", "fp", "tn", "fn", "precision", "recall", "f1", "accuracy"]
            )
            for system, scope, metrics in self._active_rows():
                writer.writerow(
                    [system, scope, metrics.tp, metrics.fp, metrics.tn, metrics.fn]
                    + [metrics.precision, metrics.recall, metrics.f1, metrics.accuracy]
                )
        report = self.time_report(self.method)
        with _csv_writer(root / ONLINE_TIME) as writer:
            writer.writerow(["user_id", "actual_s", "predicted_s"])
            writer.writerows(report.online_rows())
        with _csv_writer(root / DOMAIN_TIME) as writer:
            writer.writerow(["user_id", "domain", "actual_s", "predicted_s"])
            writer.writerows(report.domain_rows())
        with _csv_writer(root / CONFUSION) as writer:
            writer.writerow(["truth"] + list(CONFUSION_COLUMNS))
            for name, row in zip(CONFUSION_ROWS, self.confusion.counts.tolist()):
                writer.writerow([name] + row)
        with _csv_writer(root / TOP_DOMAINS) as writer:
            writer.writerow(["domain", "actual_s", "predicted_s"])
            writer.writerows(self.top_domains())
        for user in self.users:
            with _csv_writer(root / GRIDS / ("%s.csv" % user.user_id)) as writer:
                writer.writerow(["grid", "user_id", "start_second", "end_second", "domain"])
                for name in ("truth", self.method.value):
                    for start, end, domain in user.runs.get(name, []):
                        writer.writerow([name, user.user_id, start, end, domain])
        log.info("Wrote evaluation of %d users to %s", len(self.users), root)

    def _active_rows(self) -> List[Tuple[str, str, BinaryMetrics]]:
        rows = []
        for scope in (MetricScope.in_session.value, MetricScope.all_seconds.value, "second_half"):
            rows.append(("forest", scope, self.active("forest", scope)))
            rows.append(("threshold_%dm" % self.threshold_minutes, scope, self.active("threshold", scope)))
        rows.append(("majority", "second_half", self.majority))
        for minutes, metrics in self.sweep().items():
            rows.append(("threshold_%dm" % minutes, "sweep_in_session", metrics))
        return rows


@contextmanager
def _csv_writer(path: Path) -> Iterator[Any]:
    with path.open("w", encoding="utf-8", newline="") as stream:
        yield csv.writer(stream, lineterminator="\n")
