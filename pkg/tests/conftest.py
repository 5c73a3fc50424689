import os

import numpy as np
import pytest

from utils.game import TabularGame, load_tabular

FIXTURE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.realpath(__file__))), 'fixtures')


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run experiment-scale tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def one_state_game(payoffs, discount=0.9, horizon=50, name='one_state'):
    """Repeated 2x2 stage game; payoffs is (2, 2, 2) indexed [agent, a0, a1]."""
    payoffs = np.asarray(payoffs, dtype=np.float64)
    rewards = payoffs.reshape(2, 1, 4)
    return TabularGame([2, 2], np.ones((1, 4, 1)), rewards, [1.0], discount=discount, horizon=horizon, name=name)


@pytest.fixture
def fixture_dir():
    return FIXTURE_DIR


@pytest.fixture
def matching_pennies():
    return load_tabular(os.path.join(FIXTURE_DIR, 'matching_pennies.json'))


@pytest.fixture
def coordination():
    return load_tabular(os.path.join(FIXTURE_DIR, 'coordination.json'))


@pytest.fixture
def chain():
    return load_tabular(os.path.join(FIXTURE_DIR, 'two_state_chain.json'))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
