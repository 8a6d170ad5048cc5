import pathlib

import numpy as np
import pytest

from ..config import Constants
from ..context import PipelineContext
from ..geometry import PointSet, normalize
from ..harness import generate_planted


TEST_ROOT = pathlib.Path(__file__).parent


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run the slow acceptance-grid tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: slow acceptance-grid test')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow', default=False):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def random_points(n, d=2, seed=0, spread=100.0):
    'Normalized uniform random points'
    rng = np.random.default_rng(seed)
    return normalize(PointSet(rng.uniform(0, spread, (n, d))))


@pytest.fixture(params=[0, 1, 2])
def seed(request):
    return request.param


@pytest.fixture
def uniform_points():
    return random_points(300, seed=7)


@pytest.fixture
def planted():
    return generate_planted(k=4, n=200, d=2, r_star=1.0, separation=100.0,
                            seed=3)


@pytest.fixture
def make_context():
    'Factory for pipeline contexts with the default constants'
    def make(points, *, seed=0, simulate=True, **kwargs):
        return PipelineContext.create(points, seed=seed, simulate=simulate,
                                      constants=Constants(), **kwargs)
    return make
