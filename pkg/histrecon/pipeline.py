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
"""Training, reconstruction and evaluation runs.

A :class:`Pipeline` is configured by a :class:`Config` and ties the other modules
together; the command line interface is a thin layer over it.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from histrecon.active_features import build_active_dataset, featurize_active_batch
from histrecon.activity import (
    ActivityEvent,
    SecondGrid,
    Session,
    active_seconds,
    build_spans,
    in_session_seconds,
    sessions,
    write_runs_csv,
)
from histrecon.baselines import (
    DEFAULT_THRESHOLD_MINUTES,
    THRESHOLD_MINUTES,
    SweepResult,
    sweep_threshold,
    threshold_active_seconds,
)
from histrecon.corpus import (
    PRODUCTIVITY,
    PathLike,
    load_activity,
    load_history,
    load_productivity,
    read_manifest,
)
from histrecon.domain_features import build_domain_dataset, reconstruct_domain_grid
from histrecon.evaluation import (
    DOMAIN_TIME,
    ONLINE_TIME,
    Evaluation,
    UserEvaluation,
    score_user,
)
from histrecon.exceptions import (
    ConfigError,
    EmptyDataset,
    ModelFormatError,
    VocabularyMismatch,
)
from histrecon.forest import Forest, ForestParams, fit
from histrecon.history import (
    DomainVocabulary,
    HistoryVisit,
    ProductivityMap,
    compute_top_domains,
)
from histrecon.metrics import aggregate_time
from histrecon.simulator import parse_seconds, parse_settings
from histrecon.types import ACTIVE_CLASS_ORDER, DOMAIN_CLASS_ORDER, JsonObj, Method
from histrecon.workers import map_ordered

log = logging.getLogger(__name__)

VOCABULARY_FILE = "vocabulary.json"
ACTIVE_FOREST_FILE = "active_forest.json"
DOMAIN_FOREST_FILE = "domain_forest.json"
THRESHOLD_FILE = "threshold.json"
SUMMARY_FILE = "summary.json"
ACTIVITY_RUNS = "activity_runs.csv"
MODEL_FILES = (VOCABULARY_FILE, ACTIVE_FOREST_FILE, DOMAIN_FOREST_FILE, THRESHOLD_FILE, SUMMARY_FILE)

ACTIVE = ACTIVE_CLASS_ORDER.index("active")


class Config:
    """Settings of a pipeline run.

    Durations are seconds; ``session_gap``, ``activity_window`` and
    ``prediction_horizon`` also take ISO-8601 durations such as ``PT20M``. Values
    out of range are clamped with a warning.
    """

    seed: int
    vocabulary_size: int
    session_gap: int
    activity_window: int
    #: Pin the threshold baseline instead of sweeping 1 to 10 minutes
    threshold_minutes: Optional[int]
    heuristic_threshold_minutes: int
    n_trees: int
    max_depth: int
    min_rows_per_leaf: int
    row_sample_rate: float
    features_per_split: Optional[int]
    #: Rows each forest is trained on at most, sampled with the seed
    max_training_rows: Optional[int]
    #: Seconds farther than this from every visit are predicted inactive
    prediction_horizon: Optional[int]
    processes: int

    def __init__(
        self,
        seed: int = 0,
        vocabulary_size: int = 20,
        session_gap: Union[int, float, str] = 1200,
        activity_window: Union[int, float, str] = 60,
        threshold_minutes: Optional[int] = None,
        heuristic_threshold_minutes: int = DEFAULT_THRESHOLD_MINUTES,
        n_trees: int = 50,
        max_depth: int = 20,
        min_rows_per_leaf: int = 1,
        row_sample_rate: float = 0.632,
        features_per_split: Optional[int] = None,
        max_training_rows: Optional[int] = 40000,
        prediction_horizon: Union[int, float, str, None] = 1800,
        processes: int = 2,
    ):
        if vocabulary_size < 1:
            raise ValueError("vocabulary_size must be at least 1")
        if n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        self.seed = int(seed)
        self.vocabulary_size = int(vocabulary_size)
        self.session_gap = self._at_least("session_gap", _seconds(session_gap), 0)
        self.activity_window = self._at_least("activity_window", _seconds(activity_window), 1)
        self.threshold_minutes = (
            None if threshold_minutes is None else self._minutes("threshold_minutes", threshold_minutes)
        )
        self.heuristic_threshold_minutes = self._minutes(
            "heuristic_threshold_minutes", heuristic_threshold_minutes
        )
        self.n_trees = int(n_trees)
        self.max_depth = self._at_least("max_depth", max_depth, 1)
        self.min_rows_per_leaf = self._at_least("min_rows_per_leaf", min_rows_per_leaf, 1)
        if not 0.0 < row_sample_rate <= 1.0:
            log.warning("row_sample_rate %r is outside (0, 1], using 1.0", row_sample_rate)
            row_sample_rate = 1.0
        self.row_sample_rate = float(row_sample_rate)
        self.features_per_split = (
            None
            if features_per_split is None
            else self._at_least("features_per_split", features_per_split, 1)
        )
        self.max_training_rows = (
            None
            if max_training_rows is None
            else self._at_least("max_training_rows", max_training_rows, 1)
        )
        self.prediction_horizon = (
            None
            if prediction_horizon is None
            else self._at_least("prediction_horizon", _seconds(prediction_horizon), 1)
        )
        self.processes = self._at_least("processes", processes, 1)

    @staticmethod
    def _at_least(name: str, value: int, lowest: int) -> int:
        if value < lowest:
            log.warning("%s was set to %s, setting to %d", name, value, lowest)
            return lowest
        return int(value)

    @staticmethod
    def _minutes(name: str, value: int) -> int:
        clamped = min(max(int(value), THRESHOLD_MINUTES[0]), THRESHOLD_MINUTES[-1])
        if clamped != value:
            log.warning("%s must be 1 to 10 minutes, setting to %d", name, clamped)
        return clamped

    def forest_params(self, offset: int = 0) -> ForestParams:
        return ForestParams(
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            min_rows_per_leaf=self.min_rows_per_leaf,
            features_per_split=self.features_per_split,
            row_sample_rate=self.row_sample_rate,
            seed=self.seed + offset,
        )

    def to_json(self) -> JsonObj:
        return {name: getattr(self, name) for name in _CONFIG_KEYS}

    @classmethod
    def from_json(cls, json_obj: Mapping[str, Any]) -> "Config":
        unknown = set(json_obj) - set(_CONFIG_KEYS)
        if unknown:
            raise ConfigError("Unknown configuration keys: %s" % ", ".join(sorted(unknown)))
        return cls(**json_obj)

    @classmethod
    def from_file(
        cls, path: PathLike, base: Optional[Mapping[str, Any]] = None, **overrides: Any
    ) -> "Config":
        """Read ``key = value`` settings; `overrides` win over the file.

        :param base: (Optional) Settings the file is applied on top of, such as the
            configuration a model was trained with
        :raises ConfigError: For unknown keys or unreadable values
        """
        try:
            settings = parse_settings(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigError("Cannot read configuration %s: %s" % (path, e)) from e
        values: Dict[str, Any] = dict(base or {})
        for line_number, key, raw in settings:
            if key not in _CONFIG_KEYS:
                raise ConfigError("line %d: unknown key %r" % (line_number, key))
            try:
                values[key] = _CONFIG_PARSERS.get(key, int)(raw)
            except ValueError as e:
                raise ConfigError("line %d: %s: %s" % (line_number, key, e)) from e
        values.update(overrides)
        try:
            return cls(**values)
        except ValueError as e:
            raise ConfigError(str(e)) from e


def _seconds(value: Union[int, float, str]) -> int:
    if isinstance(value, str):
        return int(round(parse_seconds(value)))
    return int(value)


def _optional(parse: Any) -> Any:
    return lambda raw: None if raw.lower() in ("", "none") else parse(raw)


_CONFIG_KEYS = (
    "seed",
    "vocabulary_size",
    "session_gap",
    "activity_window",
    "threshold_minutes",
    "heuristic_threshold_minutes",
    "n_trees",
    "max_depth",
    "min_rows_per_leaf",
    "row_sample_rate",
    "features_per_split",
    "max_training_rows",
    "prediction_horizon",
    "processes",
)
_CONFIG_PARSERS = {
    "session_gap": str,
    "activity_window": str,
    "prediction_horizon": _optional(str),
    "row_sample_rate": float,
    "threshold_minutes": _optional(int),
    "features_per_split": _optional(int),
    "max_training_rows": _optional(int),
}


@dataclass
class Model:
    """Everything training produces."""

    vocabulary: DomainVocabulary
    productivity: ProductivityMap
    active_forest: Forest
    domain_forest: Forest
    threshold_minutes: int
    sweep: Optional[SweepResult] = None
    summary: Optional[JsonObj] = None

    @property
    def config(self) -> Optional[Config]:
        """The configuration the model was trained with, if its summary records one."""
        settings = (self.summary or {}).get("config")
        return None if settings is None else Config.from_json(settings)

    def save(self, directory: PathLike) -> None:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        vocabulary = self.vocabulary.to_json()
        vocabulary["productivity"] = self.productivity.to_json()
        _write_json(root / VOCABULARY_FILE, vocabulary)
        self.active_forest.save(root / ACTIVE_FOREST_FILE)
        self.domain_forest.save(root / DOMAIN_FOREST_FILE)
        threshold: JsonObj = {"minutes": self.threshold_minutes}
        if self.sweep is not None:
            threshold.update(self.sweep.to_json())
        _write_json(root / THRESHOLD_FILE, threshold)
        _write_json(root / SUMMARY_FILE, self.summary or {})
        log.info("Saved model to %s", root)

    @classmethod
    def load(cls, directory: PathLike) -> "Model":
        """Read a saved model.

        :raises ModelFormatError: If a file is missing or broken
        :raises VocabularyMismatch: If a forest was trained against another vocabulary
        """
        root = Path(directory)
        missing = [name for name in MODEL_FILES if not (root / name).is_file()]
        if missing:
            raise ModelFormatError("Model directory %s lacks %s" % (root, ", ".join(missing)))
        try:
            vocabulary_json = _read_json(root / VOCABULARY_FILE)
            vocabulary = DomainVocabulary.from_json(vocabulary_json)
            productivity = ProductivityMap.from_json(vocabulary_json.get("productivity", {}))
            threshold_json = _read_json(root / THRESHOLD_FILE)
            threshold = int(threshold_json["minutes"])
            sweep = SweepResult.from_json(threshold_json) if "sweep" in threshold_json else None
            summary = _read_json(root / SUMMARY_FILE)
            if "config" in summary:
                Config.from_json(summary["config"])
        except (KeyError, TypeError, ValueError, ConfigError) as e:
            raise ModelFormatError("Invalid model in %s: %s" % (root, e)) from e
        active_forest = Forest.load(root / ACTIVE_FOREST_FILE, vocabulary.version)
        domain_forest = Forest.load(root / DOMAIN_FOREST_FILE, vocabulary.version)
        for name, forest in ((ACTIVE_FOREST_FILE, active_forest), (DOMAIN_FOREST_FILE, domain_forest)):
            if forest.vocabulary_version is None:
                raise VocabularyMismatch("%s does not record its vocabulary" % name)
        return cls(vocabulary, productivity, active_forest, domain_forest, threshold, sweep, summary)


def _write_json(path: Path, json_obj: Any) -> None:
    path.write_text(json.dumps(json_obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


@dataclass
class UserData:
    """One user's history together with the ground truth derived from their
    activity log."""

    user_id: str
    history: List[HistoryVisit]
    grid: SecondGrid
    sessions: List[Session]

    def in_session(self) -> np.ndarray:
        return in_session_seconds(self.sessions)


class Pipeline:
    """Runs training, reconstruction and evaluation with one configuration."""

    def __init__(self, config: Optional[Config] = None):
        self.config = config if config is not None else Config()

    def user_data(
        self, user_id: str, history: List[HistoryVisit], events: Sequence[ActivityEvent]
    ) -> UserData:
        spans = build_spans(events)
        grid = active_seconds(spans, events, user_id, self.config.activity_window * 1000)
        return UserData(user_id, history, grid, sessions(grid, self.config.session_gap))

    def load_user(self, data_dir: PathLike, user_id: str) -> UserData:
        return self.user_data(user_id, load_history(data_dir, user_id), load_activity(data_dir, user_id))

    def load_users(self, data_dir: PathLike, users: Sequence[str]) -> List[UserData]:
        return map_ordered(lambda u: self.load_user(data_dir, u), sorted(users), self.config.processes)

    def train(self, data_dir: PathLike, productivity_path: Optional[PathLike] = None) -> Model:
        """Train the vocabulary, both forests and the threshold baseline on the
        training split of a corpus.

        :param data_dir: The corpus directory
        :param productivity_path: (Optional) Productivity CSV; defaults to the
            corpus' own ``productivity.csv`` if it has one
        :raises MissingManifest: If the corpus has no manifest
        :raises EmptyDataset: If the training split yields no rows
        """
        config = self.config
        manifest = read_manifest(data_dir)
        if not manifest.train:
            raise EmptyDataset("The corpus has no training users")
        if len(manifest.train) == 1:
            log.warning("Training on a single user")
        if productivity_path is None and (Path(data_dir) / PRODUCTIVITY).is_file():
            productivity_path = Path(data_dir) / PRODUCTIVITY
        productivity = load_productivity(productivity_path)

        users = self.load_users(data_dir, manifest.train)
        grids = {u.user_id: u.grid for u in users}
        histories = {u.user_id: u.history for u in users}
        vocabulary = compute_top_domains(
            (visit for u in users for visit in u.history), config.vocabulary_size
        )
        per_user = (
            None
            if config.max_training_rows is None
            else int(math.ceil(config.max_training_rows / len(users)))
        )

        active_data = build_active_dataset(
            list(grids),
            grids,
            histories,
            vocabulary,
            productivity,
            config.session_gap,
            config.processes,
            per_user,
            config.seed,
        ).subsample(config.max_training_rows, config.seed)
        if len(active_data) == 0:
            raise EmptyDataset("No in-session seconds in the training users")
        active_forest = fit(
            active_data.rows,
            active_data.labels,
            config.forest_params(0),
            ACTIVE_CLASS_ORDER,
            config.processes,
            vocabulary.version,
        )

        domain_data, coverage = build_domain_dataset(
            list(grids), grids, histories, vocabulary, config.processes, per_user, config.seed
        )
        domain_data = domain_data.subsample(config.max_training_rows, config.seed)
        if len(domain_data) == 0:
            raise EmptyDataset("No labelled active seconds in the training users")
        domain_forest = fit(
            domain_data.rows,
            domain_data.labels,
            config.forest_params(1),
            [cls.value for cls in DOMAIN_CLASS_ORDER],
            config.processes,
            vocabulary.version,
        )

        sweep: Optional[SweepResult] = None
        if config.threshold_minutes is None:
            sweep = sweep_threshold([(u.grid, u.history) for u in users], config.session_gap)
            threshold = sweep.best_minutes
        else:
            threshold = config.threshold_minutes

        summary = {
            "config": config.to_json(),
            "train_users": [u.user_id for u in users],
            "vocabulary": list(vocabulary.domains),
            "vocabulary_version": vocabulary.version,
            "active_rows": len(active_data),
            "active_labels": np.bincount(active_data.labels, minlength=2).tolist(),
            "domain_rows": len(domain_data),
            "domain_labels": np.bincount(domain_data.labels, minlength=4).tolist(),
            "coverage": coverage.fractions(),
            "threshold_minutes": threshold,
        }
        return Model(vocabulary, productivity, active_forest, domain_forest, threshold, sweep, summary)

    def candidate_seconds(self, history: Sequence[HistoryVisit]) -> np.ndarray:
        """Seconds worth asking the active classifier about: those within the
        prediction horizon of some visit, from the first visit on."""
        if not history:
            return np.zeros(0, dtype=np.int64)
        visit_seconds = np.unique([v.visit_second for v in history])
        horizon = self.config.prediction_horizon
        first = int(visit_seconds[0])
        if horizon is None:
            return np.arange(first, int(visit_seconds[-1]) + 1, dtype=np.int64)
        starts = np.maximum(visit_seconds - horizon, first)
        ends = visit_seconds + horizon + 1
        # merge the overlapping windows
        merged_ends = np.maximum.accumulate(ends)
        breaks = np.nonzero(starts[1:] >= merged_ends[:-1])[0] + 1
        lows = starts[np.concatenate(([0], breaks))]
        highs = merged_ends[np.concatenate((breaks - 1, [len(ends) - 1]))]
        return np.concatenate([np.arange(a, b, dtype=np.int64) for a, b in zip(lows, highs)])

    def predict_active(self, model: Model, history: Sequence[HistoryVisit]) -> np.ndarray:
        """Seconds the active classifier predicts active."""
        seconds = self.candidate_seconds(history)
        if seconds.size == 0:
            return seconds
        rows = featurize_active_batch(seconds, history, model.vocabulary, model.productivity)
        return seconds[model.active_forest.predict_codes(rows) == ACTIVE]

    def reconstruct_user(
        self,
        model: Model,
        user_id: str,
        history: Sequence[HistoryVisit],
        method: Method = Method.forest,
    ) -> SecondGrid:
        """Reconstruct one user's activity from their history alone."""
        if method == Method.heuristic:
            seconds = threshold_active_seconds(history, self.config.heuristic_threshold_minutes)
            return reconstruct_domain_grid(user_id, seconds, history, model.vocabulary)
        seconds = self.predict_active(model, history)
        return reconstruct_domain_grid(
            user_id, seconds, history, model.vocabulary, model.domain_forest.predict_codes
        )

    def reconstruct(
        self,
        model: Model,
        histories: Mapping[str, Sequence[HistoryVisit]],
        method: Method = Method.forest,
    ) -> Dict[str, SecondGrid]:
        """Reconstruct every user of a history export, keyed by user id."""
        users = sorted(histories)
        grids = map_ordered(
            lambda u: self.reconstruct_user(model, u, histories[u], method),
            users,
            self.config.processes,
        )
        log.info("Reconstructed %d users with the %s method", len(users), method.value)
        return dict(zip(users, grids))

    def evaluate_user(self, model: Model, user: UserData) -> UserEvaluation:
        """Reconstruct one user with both methods and score them."""
        truth = user.grid
        forest_active = self.predict_active(model, user.history)
        forest_grid = reconstruct_domain_grid(
            user.user_id,
            forest_active,
            user.history,
            model.vocabulary,
            model.domain_forest.predict_codes,
        )
        heuristic_grid = self.reconstruct_user(model, user.user_id, user.history, Method.heuristic)
        return score_user(
            truth,
            user.sessions,
            user.history,
            model.vocabulary,
            forest_active,
            forest_grid,
            heuristic_grid,
            model.threshold_minutes,
            model.domain_forest.predict_codes,
        )

    def evaluate(
        self,
        model: Model,
        data_dir: PathLike,
        split: str = "test",
        method: Method = Method.forest,
    ) -> Evaluation:
        """Score the model and every baseline on one split of a corpus.

        :param split: ``test``, ``train`` or ``all``
        :param method: Whose reconstruction the time files and grid dumps show
        :raises MissingGroundTruth: If a user of the split has no activity log
        :raises EmptyDataset: If the split has no users
        """
        users = read_manifest(data_dir).split(split)
        if not users:
            raise EmptyDataset("The %s split has no users" % split)
        results = map_ordered(
            lambda user_id: self.evaluate_user(model, self.load_user(data_dir, user_id)),
            sorted(users),
            self.config.processes,
        )
        log.info("Evaluated %d %s users", len(results), split)
        return Evaluation(split, method, results, model.vocabulary.version, model.threshold_minutes)


def write_reconstruction(grids: Mapping[str, SecondGrid], directory: PathLike) -> None:
    """Write ``activity_runs.csv``, ``online_time.csv`` and ``domain_time.csv``
    for reconstructed grids."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    ordered = [grids[user_id] for user_id in sorted(grids)]
    with (root / ACTIVITY_RUNS).open("w", encoding="utf-8", newline="") as stream:
        write_runs_csv(ordered, stream)
    times = [aggregate_time(grid) for grid in ordered]
    with (root / ONLINE_TIME).open("w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["user_id", "online_s"])
        writer.writerows((t.user_id, t.online_s) for t in times)
    with (root / DOMAIN_TIME).open("w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["user_id", "domain", "seconds"])
        for t in times:
            writer.writerows((t.user_id, domain, t.domains[domain]) for domain in sorted(t.domains))
    log.info("Wrote reconstruction of %d users to %s", len(ordered), root)
