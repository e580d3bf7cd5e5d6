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

import io
import math
import random

import numpy as np
import pytest

from histrecon.active_features import (
    ACTIVE_COLUMNS,
    Dataset,
    active_width,
    build_active_dataset,
    featurize_active,
    featurize_active_batch,
    label_active,
    write_dataset_csv,
)
from histrecon.activity import SecondGrid, sessions
from histrecon.corpus import read_manifest
from histrecon.exceptions import MissingGroundTruth, MissingHistory
from histrecon.history import DomainVocabulary, HistoryVisit, ProductivityMap
from histrecon.pipeline import Pipeline
from histrecon.types import PRODUCTIVITY_ORDER, ProductivityLevel, Transition

VOCABULARY = DomainVocabulary(tuple("d%d.com" % i for i in range(20)))
PRODUCTIVITY = ProductivityMap(
    {
        "d0.com": ProductivityLevel.very_productive,
        "d3.com": ProductivityLevel.distracting,
        "d25.com": ProductivityLevel.very_distracting,
    }
)
NEUTRAL = PRODUCTIVITY_ORDER.index(ProductivityLevel.neutral)


def oracle_row(second, history):
    """Independent full rescan of the history for one second."""
    prev = None
    nxt = None
    for visit in history:
        if visit.visit_time // 1000 <= second:
            prev = visit
    for visit in reversed(history):
        if visit.visit_time // 1000 > second:
            nxt = visit

    def ln(seconds):
        return math.log(max(seconds, 1))

    missing = math.log(86400)
    since = ln(second - prev.visit_time // 1000) if prev else missing
    until = ln(nxt.visit_time // 1000 - second) if nxt else missing
    gap = ln(nxt.visit_time // 1000 - prev.visit_time // 1000) if prev and nxt else missing
    prev_bits = [0.0] * 20
    next_bits = [0.0] * 20
    if prev and prev.domain in VOCABULARY.domains:
        prev_bits[VOCABULARY.domains.index(prev.domain)] = 1.0
    if nxt and nxt.domain in VOCABULARY.domains:
        next_bits[VOCABULARY.domains.index(nxt.domain)] = 1.0
    level_bits = [0.0] * 5
    level = ProductivityLevel.neutral
    if prev:
        level = PRODUCTIVITY.entries.get(prev.domain, ProductivityLevel.neutral)
    level_bits[PRODUCTIVITY_ORDER.index(level)] = 1.0
    return [gap, since, until] + prev_bits + next_bits + level_bits


def random_history(rng, size):
    times = sorted(rng.randrange(0, 3_000_000) for _ in range(size))
    return [
        HistoryVisit("u1", i + 1, None, "https://d%d.com/p" % rng.randrange(30), t, Transition.link)
        for i, t in enumerate(times)
    ]


def query_seconds(rng, history):
    seconds = [rng.randrange(-100, 3100) for _ in range(6)]
    for visit in rng.sample(history, min(3, len(history))):
        seconds.append(visit.visit_time // 1000)
        seconds.append(visit.visit_time // 1000 - 1)
    return sorted(set(seconds))


def test_width():
    assert active_width() == 48
    assert len(ACTIVE_COLUMNS) == 48


def test_example_between_two_visits(visits):
    history = visits((100, "https://facebook.com/"), (400, "https://www.youtube.com/"))
    vocabulary = DomainVocabulary(("youtube.com", "facebook.com"))
    productivity = ProductivityMap({"facebook.com": ProductivityLevel.very_distracting})
    row = featurize_active(250, history, vocabulary, productivity)
    assert row.log_since_prev == math.log(150)
    assert row.log_until_next == math.log(150)
    assert row.log_gap_prev_next == math.log(300)
    assert row.prev_domain_onehot.tolist() == [0.0, 1.0]
    assert row.next_domain_onehot.tolist() == [1.0, 0.0]
    assert row.productivity_onehot.tolist() == [0.0, 0.0, 0.0, 0.0, 1.0]


def test_second_on_a_visit(visits):
    history = visits((100, "https://a.com/"), (400, "https://b.com/"))
    row = featurize_active(100, history, VOCABULARY, PRODUCTIVITY)
    assert row.log_since_prev == 0.0
    assert row.log_until_next == math.log(300)


def test_missing_sides(visits):
    history = visits((100, "https://d0.com/"))
    before = featurize_active(50, history, VOCABULARY, PRODUCTIVITY)
    assert before.log_since_prev == math.log(86400)
    assert before.log_gap_prev_next == math.log(86400)
    assert before.log_until_next == math.log(50)
    assert not before.prev_domain_onehot.any()
    assert before.productivity_onehot[NEUTRAL] == 1.0
    after = featurize_active(150, history, VOCABULARY, PRODUCTIVITY)
    assert after.log_until_next == math.log(86400)
    assert not after.next_domain_onehot.any()
    assert after.productivity_onehot[0] == 1.0


def test_empty_history():
    rows = featurize_active_batch(np.array([0, 10]), [], VOCABULARY, PRODUCTIVITY)
    assert rows.shape == (2, 48)
    assert (rows[:, :3] == math.log(86400)).all()
    assert rows[:, 3:43].sum() == 0
    assert (rows[:, 43 + NEUTRAL] == 1.0).all()


def test_matches_rescan_oracle():
    rng = random.Random(1)
    for _ in range(1000):
        history = random_history(rng, rng.randint(1, 50))
        seconds = query_seconds(rng, history)
        batch = featurize_active_batch(np.array(seconds), history, VOCABULARY, PRODUCTIVITY)
        for second, row in zip(seconds, batch):
            expected = oracle_row(second, history)
            assert row.tolist() == expected
            single = featurize_active(second, history, VOCABULARY, PRODUCTIVITY)
            assert single.to_vector().tolist() == expected


def grid(user_id, active, domain="d1.com"):
    seconds = np.array(active, dtype=np.int64)
    return SecondGrid.from_seconds(user_id, seconds, [domain] * len(active))


def build(users, grids, histories, **kwargs):
    return build_active_dataset(users, grids, histories, VOCABULARY, PRODUCTIVITY, **kwargs)


def test_label_active():
    truth = grid("u1", list(range(10, 20)))
    assert label_active(15, truth)
    assert not label_active(20, truth)
    assert not label_active(5000, truth)
    tail = sessions(truth)[0].end_second
    assert not label_active(tail, truth)


def test_dataset_one_session(visits):
    history = visits((10, "https://d1.com/"))
    data = build(["u1"], {"u1": grid("u1", list(range(10, 20)))}, {"u1": history}, gap=0)
    assert len(data) == 10
    assert data.seconds.tolist() == list(range(10, 20))
    assert data.labels.tolist() == [1] * 10
    assert data.rows.shape == (10, 48)


def test_dataset_user_order(visits):
    grids = {"b": grid("b", [5, 6]), "a": grid("a", [1, 2, 3])}
    histories = {
        "b": visits((5, "https://d1.com/"), user_id="b"),
        "a": visits((1, "https://d2.com/"), user_id="a"),
    }
    data = build(["b", "a"], grids, histories, gap=2)
    assert data.user_ids.tolist() == ["a"] * 5 + ["b"] * 4
    assert data.seconds.tolist() == [1, 2, 3, 4, 5, 5, 6, 7, 8]
    assert data.labels.tolist() == [1, 1, 1, 0, 0, 1, 1, 0, 0]


def test_dataset_rows_independent_of_other_users(visits):
    grids = {"a": grid("a", list(range(0, 300))), "b": grid("b", list(range(50, 90)))}
    histories = {
        "a": visits((0, "https://d1.com/"), user_id="a"),
        "b": visits((50, "https://d3.com/"), user_id="b"),
    }
    both = build(["a", "b"], grids, histories, max_rows_per_user=100, seed=4)
    alone = build(["a"], grids, histories, max_rows_per_user=100, seed=4)
    mine = both.user_ids == "a"
    assert np.array_equal(both.rows[mine], alone.rows)
    assert np.array_equal(both.seconds[mine], alone.seconds)
    assert len(alone) == 100
    assert (np.diff(alone.seconds) > 0).all()


def test_dataset_missing_inputs(visits):
    grids = {"a": grid("a", [1])}
    with pytest.raises(MissingHistory):
        build_active_dataset(["a"], grids, {}, VOCABULARY, PRODUCTIVITY)
    with pytest.raises(MissingGroundTruth):
        build_active_dataset(["a", "b"], grids, {"a": [], "b": []}, VOCABULARY, PRODUCTIVITY)


def test_subsample_is_seeded():
    data = Dataset(
        ("x",),
        np.arange(50, dtype=np.float64).reshape(-1, 1),
        np.zeros(50, dtype=np.int64),
        np.full(50, "u", dtype=object),
        np.arange(50),
    )
    first = data.subsample(20, 3)
    assert len(first) == 20
    assert np.array_equal(first.seconds, data.subsample(20, 3).seconds)
    assert (np.diff(first.seconds) > 0).all()
    assert data.subsample(None, 3) is data
    assert data.subsample(80, 3) is data


def test_write_dataset_csv(visits):
    history = visits((10, "https://d1.com/"))
    data = build(["u1"], {"u1": grid("u1", [10, 11])}, {"u1": history}, gap=0)
    stream = io.StringIO()
    write_dataset_csv(data, stream)
    header, first, second = stream.getvalue().splitlines()
    assert header.split(",")[:3] == ["user_id", "second", "log_gap_prev_next"]
    assert header.split(",")[-1] == "label"
    assert first.split(",")[:2] == ["u1", "10"]
    assert first.split(",")[-1] == "1"


def test_simulated_row_count(corpus_dir, small_config):
    pipeline = Pipeline(small_config)
    manifest = read_manifest(corpus_dir)
    grids, histories, expected = {}, {}, 0
    for user_id in manifest.users:
        user = pipeline.load_user(corpus_dir, user_id)
        grids[user_id] = user.grid
        histories[user_id] = user.history
        expected += sum(s.end_second - s.start_second + 1 for s in user.sessions)
    data = build_active_dataset(manifest.users, grids, histories, VOCABULARY, PRODUCTIVITY)
    assert len(data) == expected
