# tests/conftest.py
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models.lattice import SiteSet  # noqa: E402
from utils.lattice_utils import make_configuration  # noqa: E402
from utils.potential_utils import build_scene_tables  # noqa: E402

MINI_XHAT = (9, 0, 0)


@pytest.fixture(scope="session")
def origin() -> SiteSet:
    return SiteSet.from_points([(0, 0, 0)])


@pytest.fixture(scope="session")
def mini_cfg(origin):
    """K1 = {0}, K2 = {(9, 0, 0)}: two sites, R = 4."""
    return make_configuration(origin, MINI_XHAT, 1.0)


@pytest.fixture(scope="session")
def mini_tables(mini_cfg):
    return build_scene_tables(mini_cfg)


@pytest.fixture(scope="session")
def pair_cfg():
    """K1 = {0, e1}: an interior-free two-site set, for non-trivial harmonic measures."""
    K1 = SiteSet.from_points([(0, 0, 0), (1, 0, 0)])
    return make_configuration(K1, (13, 0, 0), 2.0)


@pytest.fixture(scope="session")
def pair_tables(pair_cfg):
    return build_scene_tables(pair_cfg)
