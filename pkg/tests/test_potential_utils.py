# tests/test_potential_utils.py
import math

import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.special import ive

from models.lattice import SiteSet
from utils.lattice_utils import make_configuration
from utils.potential_utils import (
    BallExitSolver,
    PotentialError,
    _bessel_green,
    _bessel_tail,
    build_scene_tables,
    capacity,
    equilibrium_measure,
    escape_probability,
    exit_distribution,
    green,
    green_closed_form_constant,
    green_table,
    harmonic_measure_margin,
    hitting_distribution,
    mean_trajectory_excursions,
    monte_carlo_exit_counts,
    sup_density_deviation,
    transition_density,
)
from utils.lattice_utils import scene_shell

G000 = 1.516386059151978  # Watson's integral for the simple cubic lattice


def test_green_at_origin():
    assert green(3, (0, 0, 0)) == pytest.approx(G000, rel=1e-8)


def test_green_symmetries():
    assert green(3, (2, -1, 0)) == pytest.approx(green(3, (0, 1, 2)), rel=1e-12)


def test_green_harmonic_off_origin():
    x = (3, 1, 0)
    nbrs = [(4, 1, 0), (2, 1, 0), (3, 2, 0), (3, 0, 0), (3, 1, 1), (3, 1, -1)]
    assert np.mean([green(3, y) for y in nbrs]) == pytest.approx(green(3, x), rel=1e-8)


def test_green_tail_matches_closed_form():
    table = green_table(3)
    assert green_closed_form_constant(3) == pytest.approx(3 / (2 * math.pi))
    assert table.tail_coef[0] == pytest.approx(table.a_d_closed_form, rel=1e-2)
    inside, outside = green(3, (30, 0, 0)), green(3, (31, 0, 0))
    assert outside == pytest.approx(inside * 30 / 31, rel=2e-3)


def test_green_requires_transience():
    with pytest.raises(PotentialError, match="transient"):
        green(2, (0, 0))


def test_bessel_green_is_finite_near_origin():
    vals = _bessel_green(np.array([[0, 0, 0], [0, 0, 1]]), 3, 400)
    assert np.isfinite(vals).all()
    assert vals[0] == pytest.approx(G000, rel=1e-8)
    assert vals[1] == pytest.approx(G000 - 1, rel=1e-8)


def test_bessel_tail_matches_quadrature_on_a_window():
    orders = np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 12.0]])
    window, _ = quad_vec(lambda t: np.prod(ive(orders, t / 3), axis=1), 1e6, 1e7, epsrel=1e-10)
    closed = _bessel_tail(orders, 3, 1e6) - _bessel_tail(orders, 3, 1e7)
    np.testing.assert_allclose(closed, window, rtol=1e-6)


def test_capacity_of_a_point():
    assert capacity(SiteSet.from_points([(0, 0, 0)])) == pytest.approx(1 / G000, rel=1e-8)


def test_equilibrium_two_points_at_distance_ten():
    eq = equilibrium_measure(SiteSet.from_points([(0, 0, 0), (10, 0, 0)]))
    assert eq.residual <= 1e-8
    assert eq.e[0] == pytest.approx(eq.e[1])
    assert eq.hbar.sum() == pytest.approx(1.0)
    assert eq.cap == pytest.approx(2 / (G000 + green(3, (10, 0, 0))), rel=1e-10)


def test_equilibrium_vanishes_inside():
    cube = SiteSet.from_points([(x, y, z) for x in range(3) for y in range(3) for z in range(3)])
    eq = equilibrium_measure(cube)
    assert eq.e[cube.index[(1, 1, 1)]] == 0.0
    assert np.all(eq.e >= 0)


def test_escape_probability():
    K = SiteSet.from_points([(0, 0, 0)])
    assert escape_probability((1, 0, 0), K) == pytest.approx(1 - green(3, (1, 0, 0)) / G000, rel=1e-10)
    with pytest.raises(PotentialError, match="interior start point"):
        escape_probability((0, 0, 0), K)


def test_escape_table(mini_tables):
    esc = mini_tables.escape
    assert 0.5 <= esc.q <= 1.0
    assert esc.q == pytest.approx(esc.p.min())
    assert esc.regime_ok


def test_hitting_distribution_rows(mini_cfg, mini_tables):
    y = mini_cfg.beVR.sites[0]
    row = hitting_distribution(y, mini_cfg)
    assert row.sum() == pytest.approx(1.0)
    assert np.allclose(mini_tables.kernels.hit.sum(axis=1), 1.0)
    with pytest.raises(PotentialError, match="interior start point"):
        hitting_distribution((0, 0, 0), mini_cfg)


def test_transition_density_normalisation(pair_tables):
    g, hbar = pair_tables.kernels.g, pair_tables.hbar_support
    assert np.allclose(g @ hbar, 1.0, atol=1e-10)
    y, x = pair_tables.cfg.beVR.sites[3], pair_tables.cfg.K.sites[0]
    assert transition_density(y, x, pair_tables) > 0


def test_transition_density_null_harmonic_mass():
    cube = SiteSet.from_points([(x, y, z) for x in range(-1, 2) for y in range(-1, 2) for z in range(-1, 2)])
    tables = build_scene_tables(make_configuration(cube, (17, 0, 0), 1.0), with_exit=False)
    y = tables.cfg.beVR.sites[0]
    with pytest.raises(PotentialError, match="null harmonic mass"):
        transition_density(y, (0, 0, 0), tables)


def test_exit_kernel_rows(mini_tables):
    assert mini_tables.kernels.exit_method == "exact"
    assert np.allclose(mini_tables.kernels.exit.sum(axis=1), 1.0)


def test_exit_distribution_by_symmetry(mini_cfg):
    law = exit_distribution((0, 0, 0), mini_cfg)
    assert law.sum() == pytest.approx(1.0)
    shell = scene_shell(mini_cfg.xhat_norm_sq, 3)
    first = mini_cfg.beVR.ordinals_of(shell.coords)
    mirrored = mini_cfg.beVR.ordinals_of(shell.coords * np.array([-1, 1, 1]))
    assert np.allclose(law[first], law[mirrored])


def test_exit_outside_ball(mini_cfg):
    with pytest.raises(PotentialError):
        exit_distribution((40, 0, 0), mini_cfg)


def test_monte_carlo_exit_agrees_with_exact(mini_cfg):
    solver = BallExitSolver(mini_cfg.xhat_norm_sq, 3)
    exact = solver.exit_rows(np.zeros((1, 3), dtype=np.int64))[0]
    n = 20_000
    counts = monte_carlo_exit_counts(np.zeros(3, dtype=np.int64), n, mini_cfg.xhat_norm_sq, solver.shell,
                                     np.random.default_rng(4))
    se = np.sqrt(exact * (1 - exact) / n)
    assert np.all(np.abs(counts / n - exact) <= 5 * se + 1e-12)


def test_excursion_mean_identity(mini_tables):
    q = mini_tables.escape.q
    assert (1 - q) * mini_tables.mean_T1 + q == pytest.approx(mean_trajectory_excursions(mini_tables), rel=1e-10)
    assert mini_tables.mean_total == pytest.approx(
        mini_tables.mean_theta + q * mini_tables.theta, rel=1e-12
    )


def test_forced_escape_means(mini_cfg):
    tables = build_scene_tables(mini_cfg, force_escape=True)
    assert tables.escape.q == 1.0
    assert tables.mean_T1 == 1.0


def test_with_level_rescales(mini_tables):
    doubled = mini_tables.with_level(2.0)
    assert doubled.mean_total == pytest.approx(2 * mini_tables.mean_total)
    assert doubled.theta == pytest.approx(2 * mini_tables.theta)


def test_lemma_diagnostics(mini_tables):
    assert np.all(harmonic_measure_margin(mini_tables.eq, mini_tables.eq_K1) >= -1e-8)
    assert 0 < sup_density_deviation(mini_tables.kernels) < 1
