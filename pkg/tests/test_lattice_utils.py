# tests/test_lattice_utils.py
import math
from pathlib import Path

import numpy as np
import pytest

from config import XHAT_SEARCH_WIDTH
from models.lattice import SiteSet
from models.run_config import RunConfig
from utils import lattice_utils
from utils.lattice_utils import (
    SceneValidationError,
    ball,
    external_boundary,
    internal_boundary,
    make_configuration,
    parse_k1_spec,
    scene_ball,
    scene_ball_mask,
    set_diameter,
    set_distance,
    xhat_for_distance,
)


DEFAULT_RUN = RunConfig.from_file(str(Path(__file__).resolve().parents[1] / "scenes" / "default.ini"))


def sites(*points) -> SiteSet:
    return SiteSet.from_points(points)


def test_set_distance():
    assert set_distance(sites((0, 0, 0)), sites((5, 0, 0))) == 5.0
    assert set_distance(sites((0, 0, 0)), sites((0, 0, 0))) == 0.0
    assert set_distance(sites((0, 0, 0), (1, 0, 0)), sites((4, 3, 0))) == pytest.approx(math.sqrt(18))


def test_set_distance_empty():
    with pytest.raises(SceneValidationError, match="empty set"):
        set_distance(SiteSet(dim=3, coords=[]), sites((0, 0, 0)))


def test_set_diameter():
    assert set_diameter(sites((0, 0, 0))) == 0.0
    assert set_diameter(sites((0, 0, 0), (1, 0, 0), (0, 1, 0))) == pytest.approx(math.sqrt(2))
    assert set_diameter(sites((0, 0, 0), (3, 4, 0))) == 5.0


@pytest.mark.parametrize("radius,expected", [(1, 1), (1.5, 19), (2, 27)])
def test_ball_sizes(radius, expected):
    assert len(ball((0, 0, 0), radius)) == expected


def test_ball_rejects_nonpositive_radius():
    with pytest.raises(SceneValidationError):
        ball((0, 0, 0), 0)


def test_internal_boundary():
    assert internal_boundary(sites((0, 0, 0))) == sites((0, 0, 0))
    cube = SiteSet.from_points([(x, y, z) for x in range(3) for y in range(3) for z in range(3)])
    boundary = internal_boundary(cube)
    assert len(boundary) == 26
    assert (1, 1, 1) not in boundary
    assert len(internal_boundary(SiteSet(dim=3, coords=[]))) == 0


def test_external_boundary():
    assert len(external_boundary(sites((0, 0, 0)))) == 6
    assert len(external_boundary(sites((0, 0, 0), (1, 0, 0)))) == 10
    assert len(external_boundary(SiteSet(dim=3, coords=[]))) == 0


def test_enumeration_is_fixed():
    a = sites((1, 0, 0), (0, 0, 0), (0, 1, 0))
    b = sites((0, 1, 0), (1, 0, 0), (0, 0, 0))
    assert a.sites == b.sites
    assert a.index[(0, 0, 0)] == 0
    assert list(a.ordinals_of(np.array([[0, 1, 0], [5, 5, 5]]))) == [1, -1]


def test_make_configuration_singleton():
    cfg = make_configuration(sites((0, 0, 0)), (9, 0, 0), 1.0)
    assert cfg.R == 4.0
    assert cfg.K2 == sites((9, 0, 0))
    assert cfg.delta == pytest.approx(0.25)
    assert len(cfg.K) == 2
    # beVR sits outside both balls and touches them
    assert not np.any(scene_ball_mask((cfg.beVR.coords ** 2).sum(axis=1), cfg.xhat_norm_sq))
    assert cfg.VR is not None and len(cfg.VR) == 2 * len(scene_ball(cfg.xhat_norm_sq, 3))


def test_make_configuration_pair():
    cfg = make_configuration(sites((0, 0, 0), (1, 0, 0)), (11, 0, 0), 0.5)
    assert cfg.R == 5.0
    assert cfg.delta == pytest.approx(0.2)
    assert cfg.dist == 10.0


@pytest.mark.parametrize(
    "K1,xhat,u,message",
    [
        (((0, 0, 0),), (2, 0, 0), 1.0, "4 diam"),
        (((1, 0, 0),), (9, 0, 0), 1.0, "0 in K1"),
        (((0, 0, 0),), (9, 0, 0), -1.0, "u >= 0"),
        (((0, 0, 0),), (9, 0), 1.0, "dimension"),
    ],
)
def test_make_configuration_names_the_invariant(K1, xhat, u, message):
    with pytest.raises(SceneValidationError, match=message):
        make_configuration(sites(*K1), xhat, u)


def test_make_configuration_rejects_low_dimension():
    with pytest.raises(SceneValidationError, match="d >= 3"):
        make_configuration(sites((0, 0)), (9, 0), 1.0)


def test_parse_k1_spec():
    assert parse_k1_spec("singleton") == sites((0, 0, 0))
    assert len(parse_k1_spec("ball:1.5")) == 19
    assert parse_k1_spec("sites:0,0,0;1,0,0") == sites((0, 0, 0), (1, 0, 0))
    with pytest.raises(SceneValidationError):
        parse_k1_spec("cube:3")


def test_xhat_for_distance():
    K1 = sites((0, 0, 0), (1, 0, 0))
    cfg = make_configuration(K1, xhat_for_distance(K1, 16), 1.0)
    assert cfg.dist == 16.0


def test_even_axis_norm_shares_a_boundary_site():
    with pytest.raises(SceneValidationError, match="external boundaries"):
        make_configuration(sites((0, 0, 0)), (16, 0, 0), 1.0)


@pytest.mark.parametrize("dist", DEFAULT_RUN.experiment.distances)
def test_xhat_for_distance_covers_the_default_ladder(dist):
    origin = sites((0, 0, 0))
    xhat = xhat_for_distance(origin, dist)
    cfg = make_configuration(origin, xhat, 1.0, materialize_ball=False)
    assert dist <= cfg.dist < dist + XHAT_SEARCH_WIDTH
    assert cfg.dist <= 3 * cfg.R


@pytest.mark.parametrize("r", DEFAULT_RUN.experiment.radii)
def test_xhat_for_distance_covers_the_capacity_ladder(r):
    K1 = ball((0, 0, 0), r)
    dist = DEFAULT_RUN.experiment.distances[0] * r / DEFAULT_RUN.experiment.radii[0]
    cfg = make_configuration(K1, xhat_for_distance(K1, dist), 1.0, materialize_ball=False)
    assert cfg.dist >= dist


def test_xhat_for_distance_keeps_balls_apart_for_short_distances():
    K1 = ball((0, 0, 0), 1)
    cfg = make_configuration(K1, xhat_for_distance(K1, 4.0), 1.0)
    assert math.sqrt(cfg.xhat_norm_sq) >= 4 * cfg.diam_K1 + 3


def test_make_configuration_requires_dist_within_three_radii(monkeypatch):
    monkeypatch.setattr(lattice_utils, "set_distance", lambda A, B: 100.0)
    with pytest.raises(SceneValidationError, match="dist\\(K1, K2\\) <= 3R"):
        make_configuration(sites((0, 0, 0)), (9, 0, 0), 1.0)
