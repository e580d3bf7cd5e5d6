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

import math
import random

import numpy as np
import pytest

from histrecon.activity import SecondGrid
from histrecon.baselines import most_recent_domain_baseline
from histrecon.domain_features import (
    DOMAIN_COLUMNS,
    CandidateIndex,
    build_domain_dataset,
    candidates,
    domain_width,
    featurize_domain,
    featurize_domain_batch,
    label_domain,
    reconstruct_domain_grid,
    switch_count,
)
from histrecon.exceptions import NoPrecedingVisit
from histrecon.history import DomainVocabulary, HistoryVisit
from histrecon.types import DOMAIN_CLASS_ORDER, DomainClass, Transition

VOCABULARY = DomainVocabulary(tuple("d%d.com" % i for i in range(20)))
MISSING = math.log(86400)


def ln(seconds):
    return math.log(max(seconds, 1))


def oracle_candidates(second, history):
    before = [v for v in history if v.visit_time // 1000 <= second]
    after = [v for v in history if v.visit_time // 1000 > second]
    c = before[-1]
    n = after[0] if after else None
    p1 = p2 = None
    p1_at = p2_at = None
    for at in range(len(before) - 2, -1, -1):
        domain = before[at].domain
        if p1 is None and domain != c.domain:
            p1, p1_at = before[at], at
        elif p1 is not None and domain not in (c.domain, p1.domain):
            p2, p2_at = before[at], at
            break
    since_p1 = len(before) - 1 - p1_at if p1 else 0
    since_p2 = len(before) - 1 - p2_at if p2 else 0
    return {"C": c, "N": n, "P1": p1, "P2": p2}, since_p1, since_p2


def oracle_switches(second, domain, history):
    if domain is None:
        return 0
    window = [v for v in history if second - 1200 <= v.visit_time // 1000 <= second]
    count = 0
    for i in range(1, len(window)):
        if window[i].domain == domain and window[i - 1].domain != domain:
            count += 1
    return count


def oracle_row(second, history):
    found, since_p1, since_p2 = oracle_candidates(second, history)
    c, n, p1, p2 = found["C"], found["N"], found["P1"], found["P2"]

    def at(visit):
        return visit.visit_time // 1000

    row = [
        ln(at(n) - at(c)) if n else MISSING,
        ln(second - at(c)),
        ln(at(n) - second) if n else MISSING,
        ln(second - at(p1)) if p1 else MISSING,
        ln(second - at(p2)) if p2 else MISSING,
        float(since_p1),
        float(since_p2),
    ]
    for visit in (n, c, p1, p2):
        row.append(float(oracle_switches(second, visit.domain if visit else None, history)))
    for visit in (c, p1, p2):
        referred = n is not None and visit is not None and n.referring_visit_id == visit.visit_id
        row.append(1.0 if referred else 0.0)
    for visit in (c, n, p1, p2):
        bits = [0.0] * 20
        if visit is not None and visit.domain in VOCABULARY.domains:
            bits[VOCABULARY.domains.index(visit.domain)] = 1.0
        row.extend(bits)
    for visit in (c, p1, p2):
        same = n is not None and visit is not None and n.domain == visit.domain
        row.append(1.0 if same else 0.0)
    return row


def oracle_label(truth, second, history):
    found, _, _ = oracle_candidates(second, history)
    for name in ("C", "N", "P1", "P2"):
        if found[name] is not None and found[name].domain == truth:
            return name
    return None


def random_history(rng, size):
    names = ["d%d.com" % i for i in range(6)] + ["x%d.org" % i for i in range(3)]
    history = []
    time_ms = 0
    for visit_id in range(1, size + 1):
        time_ms += rng.choice([0, 400, 1500, rng.randrange(2000, 900_000)])
        referrer = rng.randrange(1, visit_id) if visit_id > 1 and rng.random() < 0.5 else None
        url = "https://%s/page" % rng.choice(names)
        history.append(HistoryVisit("u1", visit_id, referrer, url, time_ms, Transition.link))
    return history


def test_width():
    assert domain_width() == 97
    assert len(DOMAIN_COLUMNS) == 97


def test_candidates_example(visits):
    history = visits(
        (0, "https://a.com/"),
        (10, "https://b.com/"),
        (20, "https://a.com/x", 2),
        (30, "https://c.com/", 3),
    )
    found = candidates(25, history)
    assert found.c.domain == "a.com"
    assert found.c.visit_id == 3
    assert found.n.domain == "c.com"
    assert found.p1.domain == "b.com"
    assert found.p2 is None
    assert found.visits_since_p1 == 1
    assert found.visits_since_p2 == 0
    assert found.ref_n_eq_c
    assert not found.ref_n_eq_p1


def test_candidates_skip_repeated_domains(visits):
    history = visits(
        (0, "https://c.com/"),
        (5, "https://b.com/"),
        (6, "https://b.com/2"),
        (10, "https://a.com/"),
        (12, "https://a.com/2"),
    )
    found = candidates(12, history)
    assert found.c.visit_second == 12
    assert found.n is None
    assert (found.p1.domain, found.p1.visit_second) == ("b.com", 6)
    assert (found.p2.domain, found.p2.visit_second) == ("c.com", 0)
    assert found.visits_since_p1 == 2
    assert found.visits_since_p2 == 4


def test_no_preceding_visit(visits):
    history = visits((100, "https://a.com/"))
    with pytest.raises(NoPrecedingVisit):
        candidates(99, history)
    with pytest.raises(NoPrecedingVisit):
        CandidateIndex(history).locate(np.array([100, 99]))
    with pytest.raises(NoPrecedingVisit):
        most_recent_domain_baseline(50, history)


@pytest.mark.parametrize(
    "truth, expected",
    [
        ("a.com", DomainClass.C),
        ("b.com", DomainClass.P1),
        ("c.com", DomainClass.N),
        ("z.com", None),
        (None, None),
    ],
)
def test_label_domain(visits, truth, expected):
    history = visits((0, "https://b.com/"), (10, "https://a.com/"), (20, "https://c.com/"))
    assert label_domain(truth, candidates(15, history)) == expected


def test_label_overlap_prefers_c(visits):
    history = visits((0, "https://b.com/"), (10, "https://a.com/"), (20, "https://a.com/2"))
    found = candidates(15, history)
    assert found.n.domain == found.c.domain
    assert label_domain("a.com", found) == DomainClass.C


def test_switch_count_example(visits):
    history = visits((0, "https://a.com/"), (60, "https://b.com/"), (120, "https://a.com/"))
    assert switch_count(130, "a.com", history) == 1
    assert switch_count(130, "b.com", history) == 1
    assert switch_count(130, None, history) == 0
    # the a -> b switch drops out once the visit at 0 leaves the window
    assert switch_count(1201, "b.com", history) == 0
    assert switch_count(1200, "b.com", history) == 1


def test_featurize_example(visits):
    history = visits((0, "https://d1.com/"), (60, "https://d2.com/"), (120, "https://d1.com/", 2))
    row = featurize_domain(90, history, candidates(90, history), VOCABULARY).to_vector()
    assert row.shape == (97,)
    assert row[0] == math.log(60)
    assert row[1] == math.log(30)
    assert row[2] == math.log(30)
    assert row[3] == math.log(90)
    assert row[4] == MISSING
    assert row[5:7].tolist() == [1.0, 0.0]
    assert row[7:11].tolist() == [0.0, 1.0, 0.0, 0.0]
    assert row[11:14].tolist() == [1.0, 0.0, 0.0]
    assert row[94:97].tolist() == [0.0, 1.0, 0.0]


def test_matches_rescan_oracle():
    rng = random.Random(5)
    for _ in range(1000):
        history = random_history(rng, rng.randint(1, 40))
        first = history[0].visit_time // 1000
        last = history[-1].visit_time // 1000
        seconds = {rng.randrange(first, last + 2000) for _ in range(5)}
        seconds.update(v.visit_time // 1000 for v in rng.sample(history, min(3, len(history))))
        seconds = sorted(seconds)

        batch = featurize_domain_batch(np.array(seconds), history, VOCABULARY)
        for second, row in zip(seconds, batch):
            expected = oracle_row(second, history)
            assert row.tolist() == expected
            scalar = featurize_domain(second, history, candidates(second, history), VOCABULARY)
            assert scalar.to_vector().tolist() == expected

        names = sorted({v.domain for v in history}) + ["nowhere.net", None]
        truths = [rng.choice(names) for _ in seconds]
        index = CandidateIndex(history)
        labels = index.label(index.locate(np.array(seconds)), truths)
        for second, truth, label in zip(seconds, truths, labels):
            expected = oracle_label(truth, second, history)
            assert (DOMAIN_CLASS_ORDER[label].value if label >= 0 else None) == expected


def grid(user_id, active, domains):
    return SecondGrid.from_seconds(user_id, np.array(active, dtype=np.int64), domains)


def test_build_domain_dataset(visits):
    history = visits((10, "https://d1.com/"), (20, "https://d2.com/"), (30, "https://d1.com/"))
    truth = grid(
        "u1",
        [5, 6, 12, 13, 22, 25, 31],
        ["d1.com", "d1.com", "d1.com", "d3.com", "d1.com", "d2.com", "d2.com"],
    )
    data, coverage = build_domain_dataset(["u1"], {"u1": truth}, {"u1": history}, VOCABULARY)
    assert coverage.no_history == 2
    assert coverage.none == 1
    assert coverage.counts == {"C": 2, "N": 1, "P1": 1, "P2": 0}
    assert coverage.total == 7
    assert data.seconds.tolist() == [12, 22, 25, 31]
    assert data.labels.tolist() == [0, 1, 0, 2]
    assert data.rows.shape == (4, 97)
    assert coverage.fractions()["NONE"] == pytest.approx(3 / 7)


def test_build_domain_dataset_without_history():
    truth = grid("u1", [1, 2], ["d1.com", "d1.com"])
    data, coverage = build_domain_dataset(["u1"], {"u1": truth}, {"u1": []}, VOCABULARY)
    assert len(data) == 0
    assert coverage.no_history == 2


def test_reconstruct_is_most_recent_domain(visits):
    history = visits(
        (10, "https://d1.com/"),
        (20, "https://d2.com/"),
        (20, "https://d3.com/"),
        (45, "https://other.org/"),
    )
    active = np.arange(0, 60)
    reconstructed = reconstruct_domain_grid("u1", active, history, VOCABULARY)
    assert reconstructed.active_seconds().tolist() == list(range(10, 60))
    for second in range(10, 60):
        assert reconstructed.domain_at(second) == most_recent_domain_baseline(second, history)
    assert reconstructed.domain_at(20) == "d3.com"


def test_reconstruct_falls_back_to_c(visits):
    history = visits((10, "https://d1.com/"), (20, "https://d2.com/"))

    def always_next(rows):
        return np.full(rows.shape[0], DOMAIN_CLASS_ORDER.index(DomainClass.N))

    reconstructed = reconstruct_domain_grid(
        "u1", np.arange(10, 30), history, VOCABULARY, predict_codes=always_next
    )
    assert {reconstructed.domain_at(s) for s in range(10, 20)} == {"d2.com"}
    assert {reconstructed.domain_at(s) for s in range(20, 30)} == {"d2.com"}


def test_reconstruct_empty(visits):
    empty = reconstruct_domain_grid("u1", np.arange(0, 5), [], VOCABULARY, origin=0, end=5)
    assert empty.active_count == 0
    assert len(empty) == 5
    history = visits((10, "https://d1.com/"))
    assert reconstruct_domain_grid("u1", np.zeros(0), history, VOCABULARY).active_count == 0
