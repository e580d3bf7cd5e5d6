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

import random

import numpy as np
import pytest

from histrecon.activity import SecondGrid, in_session_seconds, sessions
from histrecon.baselines import (
    calibration_halves,
    majority_activity_baseline,
    most_recent_domain_baseline,
    sweep_threshold,
    threshold_active_baseline,
    threshold_active_seconds,
    top_domain_baseline,
)
from histrecon.domain_features import candidates
from histrecon.history import HistoryVisit
from histrecon.metrics import binary_metrics
from histrecon.types import Transition


def truth_grid(active, domain="a.com", user_id="u1"):
    seconds = np.array(sorted(active), dtype=np.int64)
    return SecondGrid.from_seconds(user_id, seconds, [domain] * len(seconds))


@pytest.mark.parametrize(
    "truth, expected",
    [
        ([True] * 7 + [False] * 3, True),
        ([True] * 3 + [False] * 7, False),
        ([True, False] * 5, True),
        ([], True),
    ],
)
def test_majority(truth, expected):
    assert majority_activity_baseline(truth) is expected


def test_threshold_single_visit(visits):
    history = visits((0, "https://a.com/"))
    predicted = threshold_active_baseline(history, 5, np.arange(-10, 400))
    assert np.arange(-10, 400)[predicted].tolist() == list(range(0, 300))
    assert threshold_active_seconds(history, 5).tolist() == list(range(0, 300))


def test_threshold_union(visits):
    history = visits((0, "https://a.com/"), (200, "https://b.com/"))
    assert threshold_active_seconds(history, 5).tolist() == list(range(0, 500))


def test_threshold_no_visits():
    assert not threshold_active_baseline([], 3, np.arange(10)).any()
    assert threshold_active_seconds([], 3).size == 0


def test_threshold_sub_second_visit():
    history = [HistoryVisit("u1", 1, None, "https://a.com/", 1500, Transition.typed)]
    assert threshold_active_seconds(history, 1).tolist() == list(range(2, 62))
    flags = threshold_active_baseline(history, 1, np.array([1, 2, 61, 62]))
    assert flags.tolist() == [False, True, True, False]


@pytest.mark.parametrize("minutes", [0, 11])
def test_threshold_range(visits, minutes):
    with pytest.raises(ValueError):
        threshold_active_seconds(visits((0, "https://a.com/")), minutes)


def test_threshold_monotone_and_consistent():
    rng = random.Random(2)
    for _ in range(50):
        times = sorted(rng.randrange(0, 4_000_000) for _ in range(rng.randint(1, 8)))
        history = [
            HistoryVisit("u1", i + 1, None, "https://a.com/", t, Transition.link)
            for i, t in enumerate(times)
        ]
        seconds = np.arange(-100, 5000)
        previous = np.zeros(seconds.shape, dtype=bool)
        for minutes in range(1, 11):
            flags = threshold_active_baseline(history, minutes, seconds)
            assert (flags | previous == flags).all()
            assert threshold_active_seconds(history, minutes).tolist() == seconds[flags].tolist()
            previous = flags


def spaced_user(active_for, user_id="u1"):
    starts = [0, 10_000, 20_000, 30_000]
    history = [
        HistoryVisit(user_id, i + 1, None, "https://a.com/", start * 1000, Transition.typed)
        for i, start in enumerate(starts)
    ]
    grid = truth_grid([s + k for s in starts for k in range(active_for)], user_id=user_id)
    return grid, history


@pytest.mark.parametrize("active_for, expected", [(60, 1), (300, 5), (540, 9)])
def test_sweep_finds_engineered_threshold(active_for, expected):
    result = sweep_threshold([spaced_user(active_for)])
    assert result.best_minutes == expected
    assert dict(result.metrics)[expected].f1 == 1.0


def test_sweep_all_inactive(visits):
    grid = SecondGrid.empty("u1", 0, 100)
    result = sweep_threshold([(grid, visits((0, "https://a.com/")))])
    assert result.best_minutes == 1
    assert all(metrics.f1 == 0.0 for _, metrics in result.metrics)
    assert sorted(result.to_json()["sweep"]) == sorted(str(m) for m in range(1, 11))


def oracle_f1(users, minutes):
    tp = fp = fn = 0
    for grid, history in users:
        for second in in_session_seconds(sessions(grid)).tolist():
            now = second * 1000
            predicted = any(now - minutes * 60_000 < v.visit_time <= now for v in history)
            actual = grid.is_active(second)
            tp += predicted and actual
            fp += predicted and not actual
            fn += actual and not predicted
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


def test_sweep_matches_exhaustive_oracle():
    rng = random.Random(8)
    for _ in range(5):
        users = []
        for user in range(2):
            times = sorted(rng.randrange(0, 3_000_000) for _ in range(6))
            history = [
                HistoryVisit("u%d" % user, i + 1, None, "https://a.com/", t, Transition.link)
                for i, t in enumerate(times)
            ]
            active = {t // 1000 + k for t in times for k in range(rng.randrange(30, 700))}
            users.append((truth_grid(active, user_id="u%d" % user), history))
        scores = [oracle_f1(users, minutes) for minutes in range(1, 11)]
        best = max(scores)
        result = sweep_threshold(users)
        assert result.best_minutes == scores.index(best) + 1
        assert dict(result.metrics)[result.best_minutes].f1 == pytest.approx(best, abs=1e-12)


def test_sweep_metrics_are_pooled():
    users = [spaced_user(60, "a"), spaced_user(300, "b")]
    result = sweep_threshold(users)
    pooled = dict(result.metrics)[1]
    expected = binary_metrics([], [])
    for grid, history in users:
        seconds = in_session_seconds(sessions(grid))
        expected = expected + binary_metrics(
            threshold_active_baseline(history, 1, seconds), grid.active_at(seconds)
        )
    assert pooled == expected


def test_most_recent_domain(visits):
    history = visits(
        (0, "https://a.com/"),
        (10, "https://b.com/"),
        (20, "https://a.com/"),
        (30, "https://c.com/"),
        (40, "https://d.com/"),
    )
    assert most_recent_domain_baseline(35, history) == "c.com"
    assert most_recent_domain_baseline(40, history) == "d.com"
    for second in range(0, 60):
        assert most_recent_domain_baseline(second, history) == candidates(second, history).c.domain


def test_top_domain():
    seconds = np.arange(10)
    grid = SecondGrid.from_seconds("u1", seconds, ["b.com"] * 6 + ["a.com"] * 4)
    assert top_domain_baseline(grid) == "b.com"
    assert top_domain_baseline(grid, np.arange(6, 10)) == "a.com"
    assert top_domain_baseline(grid, np.arange(3, 9)) == "a.com"
    assert top_domain_baseline(grid, np.array([100, 200])) is None
    assert top_domain_baseline(SecondGrid.empty("u1")) is None
    assert top_domain_baseline(truth_grid(range(5), "only.com")) == "only.com"


def test_calibration_halves():
    first, second = calibration_halves(np.arange(5))
    assert first.tolist() == [0, 1]
    assert second.tolist() == [2, 3, 4]
