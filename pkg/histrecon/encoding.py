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
"""Numeric encodings shared by both feature sets.

Durations are whole seconds, floored at one second and passed through the natural
logarithm. Missing durations (no previous or next visit) use one day.
"""

import math
from typing import Optional, Sequence

import numpy as np

#: Durations below this many seconds are treated as this many.
LOG_FLOOR_S = 1
#: Duration standing in for "no such event".
MISSING_DURATION_S = 86400
MISSING_LOG = math.log(MISSING_DURATION_S)


def log_duration(seconds: int) -> float:
    return math.log(max(int(seconds), LOG_FLOOR_S))


def log_durations(seconds: np.ndarray) -> np.ndarray:
    """Vectorised :func:`log_duration`.

    Values go through :func:`math.log` once per distinct duration, so every element
    is bit-identical to what :func:`log_duration` returns for it.
    """
    seconds = np.maximum(np.asarray(seconds, dtype=np.int64), LOG_FLOOR_S)
    if seconds.size == 0:
        return np.zeros(seconds.shape, dtype=np.float64)
    unique, inverse = np.unique(seconds, return_inverse=True)
    logs = np.fromiter((math.log(int(x)) for x in unique), dtype=np.float64)
    return logs[inverse].reshape(seconds.shape)


def one_hot(index: Optional[int], width: int) -> np.ndarray:
    """A length-`width` binary vector with `index` set, all zeros for ``None``."""
    vector = np.zeros(width, dtype=np.float64)
    if index is not None:
        vector[index] = 1.0
    return vector


def one_hot_block(indices: Sequence[int], width: int) -> np.ndarray:
    """Row-wise one-hot encoding; negative indices encode as all zeros."""
    indices = np.asarray(indices, dtype=np.int64)
    block = np.zeros((indices.shape[0], width), dtype=np.float64)
    present = indices >= 0
    block[np.nonzero(present)[0], indices[present]] = 1.0
    return block
