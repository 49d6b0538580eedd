# tests/test_analysis_utils.py
import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import poisson

from models.reports import TraceHistogram
from models.samples import CouplingSummary
from utils.analysis_utils import (
    ExperimentError,
    _rung,
    _scaling_report,
    covariance_experiment,
    covariance_tv_consistency,
    decoupling_shapes,
    fit_loglog,
    inverse_cube_gamma_moment,
    inverse_sqrt_moment,
    lemma_ladder,
    lemma_rung,
    lemma_suite,
    scaling_experiment,
    trace_tv_experiment,
    tv_empirical,
)
from utils.rng_utils import RngStream


def _hist(counts):
    counts = np.asarray(counts, dtype=np.int64)
    return TraceHistogram(n_sites=int(math.log2(counts.shape[0])), counts=counts, total=int(counts.sum()))


def _summary(failures, replicas):
    return CouplingSummary(
        replicas=replicas, failures=failures, phat=failures / replicas, ci_low=0.0, ci_high=1.0,
        buckets={"success": replicas - failures}, D_failures=0, H_frequency=0.0,
        psi_sup_dev_median=0.0, mean_N1p=0.0, mean_Theta=0.0,
    )


def test_tv_examples():
    rng = RngStream(0, 0, "bootstrap")
    assert tv_empirical(_hist([5, 5]), _hist([50, 50]), rng).tv == pytest.approx(0.0)
    assert tv_empirical(_hist([10, 0]), _hist([0, 7]), rng).tv == pytest.approx(1.0)
    est = tv_empirical(_hist([90, 10]), _hist([80, 20]), rng)
    assert est.tv == pytest.approx(0.1)
    assert est.ci_low <= est.ci_high
    assert est.se > 0


def test_tv_symmetry_and_triangle_inequality():
    a, b, c = _hist([3, 1, 4, 1]), _hist([5, 9, 2, 6]), _hist([5, 3, 5, 8])
    tv = lambda x, y: tv_empirical(x, y, RngStream(0, 0, "bootstrap"), resamples=10).tv  # noqa: E731
    assert tv(a, b) == pytest.approx(tv(b, a))
    assert tv(a, c) <= tv(a, b) + tv(b, c) + 1e-12


def test_tv_input_errors():
    with pytest.raises(ExperimentError, match="sites"):
        tv_empirical(_hist([1, 1]), _hist([1, 1, 1, 1]))
    with pytest.raises(ExperimentError, match="empty histogram"):
        tv_empirical(TraceHistogram.from_masks([], 1), _hist([1, 1]))


def test_histogram_validation():
    with pytest.raises(ValueError):
        TraceHistogram(n_sites=2, counts=np.array([1, 2]), total=3)
    h = TraceHistogram.from_masks([0, 3, 3, 1], 2)
    assert h.counts.tolist() == [1, 1, 0, 2]


def test_constant_function_has_zero_covariance(mini_tables):
    report = covariance_experiment(mini_tables, [1.0, 1.0], [0.0, 1.0], replicas=150, seed=4)
    assert report.cov == pytest.approx(0.0, abs=1e-15)
    assert report.ci_low <= report.cov <= report.ci_high
    shape_new, shape_old = decoupling_shapes(mini_tables)
    assert report.shape_new == shape_new and report.shape_old == shape_old


def test_truth_table_errors(mini_tables):
    with pytest.raises(ExperimentError, match="needs 2 entries"):
        covariance_experiment(mini_tables, [0.0, 1.0, 0.0], [0.0, 1.0], replicas=10, seed=0)
    with pytest.raises(ExperimentError, match=r"values in \[0, 1\]"):
        covariance_experiment(mini_tables, [0.0, 2.0], [0.0, 1.0], replicas=10, seed=0)


def test_consistency_needs_small_k1():
    fake = SimpleNamespace(cfg=SimpleNamespace(K1=range(4)))
    with pytest.raises(ExperimentError, match="extremal truth tables"):
        covariance_tv_consistency(fake, replicas=10, seed=0)


def test_consistency_on_two_sites(mini_tables):
    report = covariance_tv_consistency(mini_tables, replicas=300, seed=5)
    assert report.pairs == 16
    assert report.max_abs_cov <= 0.25
    assert report.holds == (not report.violations)


def test_inverse_moments_match_direct_sums():
    lam = 6.5
    direct_sqrt = sum(poisson.pmf(n, lam) / math.sqrt(n) for n in range(1, 80))
    direct_cube = sum(poisson.pmf(n, lam) / ((n - 1) * (n - 2) * (n - 3)) for n in range(4, 80))
    assert inverse_sqrt_moment(lam) == pytest.approx(direct_sqrt, rel=1e-10)
    assert inverse_cube_gamma_moment(lam) == pytest.approx(direct_cube, rel=1e-10)
    assert inverse_sqrt_moment(0.0) == 0.0


def test_lemma_rung_bounds(mini_tables):
    rung = lemma_rung(mini_tables)
    assert rung.one_minus_q == pytest.approx(1 - rung.q)
    assert rung.harmonic_margin >= 0
    assert rung.p_n1_no_n22 <= rung.p_n1_no_n22_bound
    assert rung.inv_sqrt_moment <= rung.inv_sqrt_shape
    assert 0 < rung.sup_g_dev < 1


def test_fit_loglog_recovers_power_law():
    x = np.array([2.0, 4.0, 8.0, 16.0])
    fit = fit_loglog(x, 3.0 * x ** -1.5)
    assert fit.slope == pytest.approx(-1.5)
    assert fit.intercept == pytest.approx(math.log(3.0))
    assert fit.slope_ci[0] == pytest.approx(-1.5) and fit.slope_ci[1] == pytest.approx(-1.5)
    assert fit.points == 4
    assert fit_loglog([1.0], [1.0]) is None


def test_censored_rung_gets_one_sided_interval():
    rung = _rung(10.0, _summary(2, 1000))
    assert rung.censored
    assert rung.ci_low == 0.0 and rung.ci_high > rung.phat


def test_scaling_report_fits_uncensored_rungs():
    points = [(x, _summary(int(64000 / x ** 2), 1000)) for x in (8.0, 16.0, 32.0)]
    points.append((128.0, _summary(1, 1000)))
    report = _scaling_report("distance", points)
    assert [r.x for r in report.ladder] == [8.0, 16.0, 32.0, 128.0]
    assert report.ladder[-1].censored
    assert report.fit.points == 3
    assert report.fitted_slope == pytest.approx(-2.0, abs=0.05)


@pytest.mark.slow
def test_lemma_suite_on_a_radius_ladder(origin):
    report = lemma_suite(lemma_ladder(origin, [4, 8, 16], 1.0))
    assert [r.R for r in report.rungs] == [4.0, 8.0, 16.0]
    assert report.margins_nonnegative
    assert report.density_decreasing
    assert -1.5 < report.escape_fit.slope < -0.5


def test_trace_tv_report(mini_tables):
    report = trace_tv_experiment(mini_tables, replicas=300, seed=6)
    assert report.replicas == report.coupling.replicas == 300
    assert 0.0 <= report.tv.tv <= 1.0
    assert report.margin > 0
    assert report.consistent == (report.tv.tv <= report.coupling.phat + report.margin)


def test_scaling_experiment_ladders(origin):
    reports = scaling_experiment(origin, 1.0, [8.0, 12.0], replicas=40, seed=7, levels=[0.5, 1.0])
    assert set(reports) == {"distance", "level"}
    xs = [r.x for r in reports["distance"].ladder]
    assert xs[0] >= 8.0 and xs[1] >= 12.0 and xs[0] < xs[1]
    assert [r.x for r in reports["level"].ladder] == [0.5, 1.0]
    assert all(r.replicas == 40 for r in reports["distance"].ladder)
    with pytest.raises(ExperimentError, match="ladder is empty"):
        scaling_experiment(origin, 1.0, [], replicas=1, seed=0)
