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
"""A small random forest classifier for both reconstruction tasks.

Trees are stored as flat arrays and split on ``x <= threshold`` with thresholds at
midpoints between consecutive distinct values. Every tree draws its row sample and
its per-node feature samples from its own seeded generator, so a forest only
depends on the training rows and :attr:`ForestParams.seed`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from histrecon.exceptions import EmptyDataset, ModelFormatError, VocabularyMismatch, WidthMismatch
from histrecon.types import JsonObj
from histrecon.workers import map_ordered

log = logging.getLogger(__name__)

FORMAT_NAME = "histrecon-forest"
FORMAT_VERSION = 1
LEAF = -1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 50
    max_depth: int = 20
    min_rows_per_leaf: int = 1
    features_per_split: Optional[int] = None
    row_sample_rate: float = 0.632
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must not be negative")
        if self.min_rows_per_leaf < 1:
            raise ValueError("min_rows_per_leaf must be at least 1")
        if not 0.0 < self.row_sample_rate <= 1.0:
            raise ValueError("row_sample_rate must lie in (0, 1]")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be at least 1")

    def split_features(self, width: int) -> int:
        """Features sampled per node: ``floor(sqrt(width))`` unless set."""
        if self.features_per_split is not None:
            return min(self.features_per_split, width)
        return max(1, int(math.isqrt(width)))

    def to_json(self) -> JsonObj:
        return asdict(self)

    @classmethod
    def from_json(cls, json_obj: JsonObj) -> "ForestParams":
        return cls(**json_obj)


@dataclass
class Tree:
    """One decision tree. Node 0 is the root; leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        return max(self.leaf_depths(), default=0)

    def leaf_depths(self) -> List[int]:
        depths = []
        stack = [(0, 0)]
        while stack:
            node, depth = stack.pop()
            if self.feature[node] == LEAF:
                depths.append(depth)
            else:
                stack.append((int(self.left[node]), depth + 1))
                stack.append((int(self.right[node]), depth + 1))
        return depths

    def apply(self, rows: np.ndarray) -> np.ndarray:
        """The leaf every row ends up in."""
        nodes = np.zeros(rows.shape[0], dtype=np.int64)
        pending = np.nonzero(self.feature[nodes] != LEAF)[0]
        while pending.size:
            at = nodes[pending]
            go_left = rows[pending, self.feature[at]] <= self.threshold[at]
            nodes[pending] = np.where(go_left, self.left[at], self.right[at])
            pending = pending[self.feature[nodes[pending]] != LEAF]
        return nodes

    def to_json(self) -> JsonObj:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(x) for x in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_json(cls, json_obj: JsonObj) -> "Tree":
        tree = cls(
            np.asarray(json_obj["feature"], dtype=np.int64),
            np.asarray(json_obj["threshold"], dtype=np.float64),
            np.asarray(json_obj["left"], dtype=np.int64),
            np.asarray(json_obj["right"], dtype=np.int64),
            np.asarray(json_obj["counts"], dtype=np.int64),
        )
        n = len(tree)
        if n == 0 or any(a.shape[0] != n for a in (tree.threshold, tree.left, tree.right, tree.counts)):
            raise ValueError("tree arrays are not aligned")
        return tree


def _best_split(
    rows: np.ndarray, labels: np.ndarray, feature: int, n_classes: int, min_leaf: int
) -> Optional[Tuple[float, float]]:
    """Best Gini split of one feature as ``(score, threshold)``; higher scores mean
    lower weighted impurity. ``None`` if the feature cannot be split."""
    values = rows[:, feature]
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    n = ordered.shape[0]
    distinct = ordered[1:] > ordered[:-1]
    if not distinct.any():
        return None

    left = np.cumsum(np.eye(n_classes, dtype=np.int64)[labels[order]], axis=0)[:-1]
    right = left[-1] + np.eye(n_classes, dtype=np.int64)[labels[order[-1]]] - left
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    valid = distinct & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    # n times the weighted impurity is n - score
    score = (left**2).sum(axis=1) / n_left + (right**2).sum(axis=1) / n_right
    score = np.where(valid, score, -np.inf)
    at = int(np.argmax(score))
    threshold = (ordered[at] + ordered[at + 1]) / 2.0
    if not ordered[at] <= threshold < ordered[at + 1]:
        threshold = float(ordered[at])
    return float(score[at]), float(threshold)


def grow_tree(
    rows: np.ndarray, labels: np.ndarray, n_classes: int, params: ForestParams, rng: np.random.Generator
) -> Tree:
    """Grow one tree on all of `rows`.

    At each node ``params.split_features(width)`` features are tried in a random
    order; when none of them can split the node the remaining features are tried in
    the same order until one can.
    """
    width = rows.shape[1]
    per_split = params.split_features(width)
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    counts: List[np.ndarray] = []

    def new_node(indices: np.ndarray) -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        counts.append(np.bincount(labels[indices], minlength=n_classes))
        return len(feature) - 1

    stack = [(new_node(np.arange(rows.shape[0])), np.arange(rows.shape[0]), 0)]
    while stack:
        node, indices, depth = stack.pop()
        if (
            depth >= params.max_depth
            or indices.shape[0] < 2 * params.min_rows_per_leaf
            or np.count_nonzero(counts[node]) <= 1
        ):
            continue
        node_rows, node_labels = rows[indices], labels[indices]
        best: Optional[Tuple[float, int, float]] = None
        for tried, candidate in enumerate(rng.permutation(width)):
            if tried >= per_split and best is not None:
                break
            split = _best_split(
                node_rows, node_labels, int(candidate), n_classes, params.min_rows_per_leaf
            )
            if split is not None and (best is None or split[0] > best[0]):
                best = (split[0], int(candidate), split[1])
        if best is None:
            continue

        _, feature[node], threshold[node] = best
        goes_left = node_rows[:, feature[node]] <= threshold[node]
        left_indices, right_indices = indices[goes_left], indices[~goes_left]
        left[node] = new_node(left_indices)
        right[node] = new_node(right_indices)
        stack.append((right[node], right_indices, depth + 1))
        stack.append((left[node], left_indices, depth + 1))

    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(counts, dtype=np.int64).reshape(len(feature), n_classes),
    )


class Forest:
    """A trained forest.

    :param trees: The trees
    :param classes: Class labels; training labels are positions in this tuple
    :param class_counts: Training rows per class, used to break vote ties
    :param params: The parameters it was trained with
    :param width: Feature row width
    :param vocabulary_version: (Optional) Fingerprint of the domain vocabulary the
        feature rows were encoded with
    """

    def __init__(
        self,
        trees: Sequence[Tree],
        classes: Sequence[str],
        class_counts: Sequence[int],
        params: ForestParams,
        width: int,
        vocabulary_version: Optional[str] = None,
    ):
        self.trees = list(trees)
        self.classes = tuple(classes)
        self.class_counts = np.asarray(class_counts, dtype=np.int64)
        self.params = params
        self.width = width
        self.vocabulary_version = vocabulary_version
        n_classes = len(self.classes)
        # Ties go to the class seen more in training, then to the earlier class.
        priority = sorted(range(n_classes), key=lambda i: (-self.class_counts[i], i))
        self._bonus = np.zeros(n_classes, dtype=np.int64)
        for rank, i in enumerate(priority):
            self._bonus[i] = n_classes - rank
        self._leaf_classes = [self._decide(tree.counts) for tree in self.trees]

    def __repr__(self) -> str:
        return "Forest(classes=%r, trees=%d, width=%d)" % (self.classes, len(self.trees), self.width)

    def _decide(self, tallies: np.ndarray) -> np.ndarray:
        scores = tallies * (len(self.classes) + 1) + self._bonus
        return np.argmax(scores, axis=-1)

    def _check(self, rows: np.ndarray) -> np.ndarray:
        try:
            matrix = np.asarray(rows, dtype=np.float64)
        except ValueError as e:
            raise WidthMismatch("Feature rows do not have a common width") from e
        if matrix.ndim == 1:
            matrix = matrix.reshape(1, -1)
        if matrix.ndim != 2 or matrix.shape[1] != self.width:
            raise WidthMismatch(
                "Expected rows of width %d, got shape %s" % (self.width, matrix.shape)
            )
        return matrix

    def votes(self, rows: np.ndarray) -> np.ndarray:
        """Number of trees voting for each class, one row per input row."""
        matrix = self._check(rows)
        tallies = np.zeros((matrix.shape[0], len(self.classes)), dtype=np.int64)
        every_row = np.arange(matrix.shape[0])
        for tree, leaf_classes in zip(self.trees, self._leaf_classes):
            tallies[every_row, leaf_classes[tree.apply(matrix)]] += 1
        return tallies

    def predict_codes(self, rows: np.ndarray) -> np.ndarray:
        """Winning class positions of a batch of rows."""
        if len(rows) == 0:
            return np.zeros(0, dtype=np.int64)
        return self._decide(self.votes(rows))

    def predict_batch(self, rows: np.ndarray) -> List[str]:
        return [self.classes[i] for i in self.predict_codes(rows)]

    def predict(self, row: Sequence[float]) -> str:
        """The majority vote for one row.

        :raises WidthMismatch: If the row is not as wide as the training rows
        """
        matrix = np.asarray(row, dtype=np.float64)
        if matrix.ndim != 1:
            raise WidthMismatch("predict takes a single row")
        return self.predict_batch(matrix.reshape(1, -1))[0]

    def to_json(self) -> JsonObj:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "classes": list(self.classes),
            "class_counts": self.class_counts.tolist(),
            "params": self.params.to_json(),
            "width": self.width,
            "vocabulary_version": self.vocabulary_version,
            "trees": [tree.to_json() for tree in self.trees],
        }

    def dumps(self) -> str:
        """Canonical JSON; equal forests give equal strings."""
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, json_obj: JsonObj) -> "Forest":
        if json_obj.get("format") != FORMAT_NAME:
            raise ModelFormatError("Not a forest file")
        if json_obj.get("version") != FORMAT_VERSION:
            raise ModelFormatError("Unsupported forest format version %r" % json_obj.get("version"))
        try:
            return cls(
                [Tree.from_json(tree) for tree in json_obj["trees"]],
                json_obj["classes"],
                json_obj["class_counts"],
                ForestParams.from_json(json_obj["params"]),
                int(json_obj["width"]),
                json_obj.get("vocabulary_version"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError("Invalid forest file: %s" % e) from e

    @classmethod
    def loads(cls, text: str) -> "Forest":
        try:
            json_obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ModelFormatError("Forest file is not JSON: %s" % e.msg) from e
        if not isinstance(json_obj, dict):
            raise ModelFormatError("Not a forest file")
        return cls.from_json(json_obj)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path], vocabulary_version: Optional[str] = None) -> "Forest":
        """Read a saved forest.

        :param vocabulary_version: (Optional) The fingerprint the forest must have
            been trained against
        :raises VocabularyMismatch: If the fingerprints differ
        """
        forest = cls.loads(Path(path).read_text(encoding="utf-8"))
        if (
            vocabulary_version is not None
            and forest.vocabulary_version is not None
            and forest.vocabulary_version != vocabulary_version
        ):
            raise VocabularyMismatch(
                "%s was trained against vocabulary %s, not %s"
                % (path, forest.vocabulary_version, vocabulary_version)
            )
        return forest


def _fit_tree(args: Tuple[np.ndarray, np.ndarray, int, ForestParams, int]) -> Tree:
    rows, labels, n_classes, params, tree_index = args
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, tree_index]))
    n = rows.shape[0]
    size = max(1, int(round(params.row_sample_rate * n)))
    sample = np.sort(rng.choice(n, size=size, replace=False)) if size < n else np.arange(n)
    return grow_tree(rows[sample], labels[sample], n_classes, params, rng)


def fit(
    rows: np.ndarray,
    labels: np.ndarray,
    params: ForestParams,
    classes: Sequence[str],
    processes: int = 1,
    vocabulary_version: Optional[str] = None,
) -> Forest:
    """Train a forest.

    :param rows: Feature matrix, one row per example
    :param labels: Class positions in `classes`
    :param params: Forest parameters
    :param classes: Class labels
    :param processes: Worker threads growing trees
    :param vocabulary_version: (Optional) Vocabulary fingerprint to record
    :raises EmptyDataset: If there are no rows
    :raises WidthMismatch: If the rows are ragged
    """
    try:
        matrix = np.asarray(rows, dtype=np.float64)
    except ValueError as e:
        raise WidthMismatch("Feature rows do not have a common width") from e
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        if matrix.size == 0:
            raise EmptyDataset("Cannot train a forest without rows")
        raise WidthMismatch("Feature rows must form a matrix")
    targets = np.asarray(labels, dtype=np.int64)
    if targets.shape != (matrix.shape[0],):
        raise ValueError("One label per row is required")
    if targets.min() < 0 or targets.max() >= len(classes):
        raise ValueError("Labels must be positions in classes")

    n_classes = len(classes)
    class_counts = np.bincount(targets, minlength=n_classes)
    log.info(
        "Training %d trees on %d rows of width %d (classes %s)",
        params.n_trees,
        matrix.shape[0],
        matrix.shape[1],
        dict(zip(classes, class_counts.tolist())),
    )
    trees = map_ordered(
        _fit_tree,
        [(matrix, targets, n_classes, params, i) for i in range(params.n_trees)],
        processes,
    )
    return Forest(trees, classes, class_counts, params, matrix.shape[1], vocabulary_version)
