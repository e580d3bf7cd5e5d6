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

import logging
from dataclasses import replace
from typing import List, Optional, Tuple, Union

import pytest

from histrecon.corpus import write_corpus
from histrecon.history import HistoryVisit
from histrecon.pipeline import Config, Pipeline
from histrecon.simulator import generate_corpus, load_profile
from histrecon.types import Transition

Entry = Union[Tuple[int, str], Tuple[int, str, Optional[int]]]


@pytest.fixture
def visits():
    """Build a history from ``(second, url)`` or ``(second, url, referrer)`` tuples.

    Visit ids count from 1 in the given order.
    """

    def make(*entries: Entry, user_id: str = "u1") -> List[HistoryVisit]:
        history = []
        for visit_id, entry in enumerate(entries, start=1):
            second, url = entry[0], entry[1]
            referrer = entry[2] if len(entry) > 2 else None
            transition = Transition.link if referrer is not None else Transition.typed
            history.append(HistoryVisit(user_id, visit_id, referrer, url, second * 1000, transition))
        return history

    return make


@pytest.fixture(scope="session")
def small_profile():
    return replace(load_profile(), days=2)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, small_profile):
    logging.basicConfig(level=logging.DEBUG)
    directory = tmp_path_factory.mktemp("corpus")
    write_corpus(generate_corpus(4, 11, small_profile), directory)
    return directory


@pytest.fixture(scope="session")
def small_config():
    return Config(n_trees=5, max_depth=10, max_training_rows=4000, processes=1)


@pytest.fixture(scope="session")
def model(corpus_dir, small_config):
    return Pipeline(small_config).train(corpus_dir)


def pytest_collection_modifyitems(config, items):
    if config.getoption("--slow"):
        return
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(pytest.mark.skip(reason="Skipping slow tests, use --slow"))


def pytest_addoption(parser):
    parser.addoption(
        "--slow",
        action="store_true",
        default=False,
        help="Run acceptance tests on large simulated corpora",
    )
