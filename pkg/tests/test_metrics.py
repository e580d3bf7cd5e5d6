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

import numpy as np
import pytest

from histrecon.activity import SecondGrid
from histrecon.metrics import (
    CONFUSION_ROWS,
    BinaryMetrics,
    ConfusionMatrix4,
    TimeReport,
    UserTime,
    aggregate_time,
    binary_metrics,
    domain_accuracy,
    domain_hits,
    identity_r_squared,
    normalized_abs_error,
    r_squared,
)
from histrecon.types import ErrorMode, MetricScope


def grid_of(domains, origin=0, user_id="u1"):
    """A grid from one entry per second, ``None`` meaning inactive."""
    seconds = [origin + i for i, d in enumerate(domains) if d is not None]
    names = [d for d in domains if d is not None]
    return SecondGrid.from_seconds(
        user_id, np.array(seconds, dtype=np.int64), names, origin, origin + len(domains)
    )


def test_binary_example():
    metrics = binary_metrics([True, True, True, False], [True, True, False, True])
    assert (metrics.tp, metrics.fp, metrics.tn, metrics.fn) == (2, 1, 0, 1)
    assert metrics.precision == pytest.approx(2 / 3, abs=1e-12)
    assert metrics.recall == pytest.approx(2 / 3, abs=1e-12)
    assert metrics.f1 == pytest.approx(2 / 3, abs=1e-12)
    assert metrics.accuracy == pytest.approx(0.5, abs=1e-12)


def test_binary_perfect():
    truth = [True, False, True, True, False]
    metrics = binary_metrics(truth, truth)
    assert metrics.f1 == 1.0
    assert metrics.accuracy == 1.0


def test_binary_all_inactive():
    metrics = binary_metrics([False] * 4, [True, False, True, False])
    assert metrics.precision == 0.0
    assert metrics.recall == 0.0
    assert metrics.f1 == 0.0
    assert metrics.accuracy == 0.5
    assert BinaryMetrics().f1 == 0.0


def test_binary_scopes():
    truth = [False, True, True, False, False, False]
    predicted = [False, True, False, True, False, False]
    in_session = [True, True, True, True, False, False]
    everything = binary_metrics(predicted, truth)
    session = binary_metrics(predicted, truth, MetricScope.in_session, in_session)
    assert (session.tp, session.fp, session.fn) == (everything.tp, everything.fp, everything.fn)
    assert session.tn == 1
    assert everything.tn == 3
    assert everything.accuracy > session.accuracy


def test_binary_validation():
    with pytest.raises(ValueError):
        binary_metrics([True], [True, False])
    with pytest.raises(ValueError):
        binary_metrics([True], [True], MetricScope.in_session)
    with pytest.raises(ValueError):
        binary_metrics([True], [True], MetricScope.in_session, [True, False])


def test_binary_sum():
    total = BinaryMetrics(1, 2, 3, 4) + BinaryMetrics(4, 3, 2, 1)
    assert total == BinaryMetrics(5, 5, 5, 5)
    assert total.to_json()["accuracy"] == 0.5


def test_confusion():
    matrix = ConfusionMatrix4()
    matrix.add(np.array([0, 0, 1, 2, -1, 3]), np.array([0, 1, 1, 0, 0, 3]))
    assert matrix.total == 6
    assert matrix.correct == 3
    assert matrix.truth_counts() == {"C": 2, "N": 1, "P1": 1, "P2": 1, "NONE": 1}
    assert matrix.accuracy == pytest.approx(0.5)
    assert matrix.covered_accuracy == pytest.approx(0.6)
    normalised = matrix.normalised()
    assert normalised[0].tolist() == [0.5, 0.5, 0.0, 0.0]
    assert normalised.sum(axis=1).tolist() == [1.0, 1.0, 1.0, 1.0, 1.0]
    assert (matrix + matrix).total == 12
    assert matrix.to_json()["rows"] == list(CONFUSION_ROWS)


def test_domain_accuracy():
    truth = grid_of(["a", "a", None, "b", "b"])
    assert domain_accuracy(truth, truth) == 1.0
    assert domain_accuracy(grid_of(["c", "c", "c", "c", "c"]), truth) == 0.0
    half = grid_of(["a", "b", "b", None, "b"])
    assert domain_hits(half, truth) == (2, 4)
    assert domain_accuracy(half, truth) == 0.5
    assert domain_accuracy(truth, SecondGrid.empty("u1")) == 0.0


def test_r_squared():
    assert r_squared([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0, abs=1e-12)
    assert r_squared([1, 2, 3, 4], [2, 4, 6, 8]) == pytest.approx(1.0, abs=1e-12)
    assert r_squared([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.36, abs=1e-12)
    assert r_squared([1, 2, 3], [5, 5, 5]) == 0.0
    assert identity_r_squared([1, 2, 3], [1, 2, 3]) == 1.0
    assert identity_r_squared([1, 2, 3], [2, 4, 6]) == pytest.approx(-6.0, abs=1e-12)


@pytest.mark.parametrize("actual", [[1], [3, 3, 3], []])
def test_r_squared_undefined(actual):
    with pytest.raises(ValueError):
        r_squared(actual, actual)


def test_normalized_error_online():
    actual = {"a": UserTime("a", 100), "b": UserTime("b", 50)}
    assert normalized_abs_error(actual, actual).mean == 0.0
    nothing = normalized_abs_error(actual, {})
    assert nothing.per_user == {"a": 1.0, "b": 1.0}
    assert nothing.mean == 1.0
    assert nothing.std == 0.0
    off = normalized_abs_error(actual, {"a": UserTime("a", 80), "b": UserTime("b", 100)})
    assert off.per_user == {"a": pytest.approx(0.2), "b": pytest.approx(1.0)}
    assert off.mean == pytest.approx(0.6)
    assert off.std == pytest.approx(0.4)


def test_normalized_error_per_domain():
    actual = {"u": UserTime("u", 100, {"a": 60, "b": 40})}
    predicted = {"u": UserTime("u", 80, {"a": 50, "c": 30})}
    summary = normalized_abs_error(actual, predicted, ErrorMode.per_domain)
    assert summary.per_user["u"] == pytest.approx(0.8, abs=1e-12)
    assert normalized_abs_error(actual, predicted).per_user["u"] == pytest.approx(0.2)


def test_normalized_error_skips_offline_users():
    summary = normalized_abs_error({"u": UserTime("u", 0)}, {"u": UserTime("u", 5)})
    assert summary.per_user == {}
    assert summary.mean == 0.0


def test_aggregate_time():
    hundred = grid_of(["x.com"] * 100)
    assert aggregate_time(hundred) == UserTime("u1", 100, {"x.com": 100})
    assert aggregate_time(SecondGrid.empty("u1")) == UserTime("u1", 0, {})
    mixed = aggregate_time(grid_of(["a", None, "b", "a"]))
    assert mixed.online_s == 3
    assert dict(mixed.domains) == {"a": 2, "b": 1}
    assert sum(mixed.domains.values()) == mixed.online_s


def test_time_report():
    report = TimeReport()
    report.add(UserTime("a", 10, {"x": 6, "w": 4}), UserTime("a", 8, {"x": 5, "y": 3}))
    report.add(UserTime("b", 20, {"x": 5, "z": 15}), UserTime("b", 20, {"x": 5, "z": 15}))
    assert report.online_rows() == [("a", 10, 8), ("b", 20, 20)]
    assert report.domain_rows() == [
        ("a", "w", 4, 0),
        ("a", "x", 6, 5),
        ("a", "y", 0, 3),
        ("b", "x", 5, 5),
        ("b", "z", 15, 15),
    ]
    assert report.online_r_squared()["pearson"] == pytest.approx(1.0)
    domain = report.domain_r_squared()
    assert domain["users"] == 2
    assert domain["pearson"] == pytest.approx((25 / 532 + 1.0) / 2)
    errors = report.errors()
    assert errors["online"].per_user == {"a": pytest.approx(0.2), "b": 0.0}
    assert errors["per_domain"].per_user == {"a": pytest.approx(0.8), "b": 0.0}


def test_time_report_single_user_r_squared():
    report = TimeReport()
    report.add(UserTime("a", 10, {"x": 10}), UserTime("a", 10, {"x": 10}))
    assert report.online_r_squared() == {"pearson": None, "identity": None}
    assert report.domain_r_squared()["users"] == 0
