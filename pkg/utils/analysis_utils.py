# utils/analysis_utils.py
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress, norm, poisson
from scipy.stats import t as student_t

from config import BOOTSTRAP_RESAMPLES, CENSOR_MIN_FAILURES, EQUILIBRIUM_RESIDUAL_TOL, EXACT_HISTOGRAM_MAX_SITES
from models.lattice import SiteSet
from models.potential import SceneTables
from models.reports import (
    ConsistencyReport,
    CovarianceReport,
    FitResult,
    LemmaReport,
    LemmaRung,
    RungResult,
    ScalingReport,
    TraceHistogram,
    TraceTvReport,
    TvEstimate,
)
from models.samples import CouplingSummary
from utils.coupling_utils import estimate_coupling_failure, poisson_upper_bound, wilson_interval
from utils.lattice_utils import axis_xhat, ball, make_configuration, xhat_for_distance
from utils.potential_utils import build_scene_tables, harmonic_measure_margin, sup_density_deviation
from utils.process_utils import build_ns, build_ri
from utils.replica_utils import run_replicas
from utils.rng_utils import ReplicaStreams, RngStream, seed_derive

logger = logging.getLogger(__name__)

MAX_CONSISTENCY_SITES = 3


class ExperimentError(ValueError):
    """Raised for malformed experiment inputs: truth tables, empty histograms, oversized K."""


# --- Replica tasks (module level so the process pool can pickle them) ---

def ri_trace_task(tables: SceneTables, seed: int, replica: int) -> int:
    return build_ri(tables, ReplicaStreams(seed, replica), lean=True).trace.occupied


def ns_trace_task(tables: SceneTables, seed: int, replica: int) -> int:
    return build_ns(tables, ReplicaStreams(seed, replica), lean=True).trace.occupied


def _require_exact_histograms(tables: SceneTables) -> None:
    if len(tables.cfg.K) > EXACT_HISTOGRAM_MAX_SITES:
        raise ExperimentError(
            f"|K| = {len(tables.cfg.K)} exceeds {EXACT_HISTOGRAM_MAX_SITES} sites for exact histograms"
        )


# --- Total variation ---

def _tv(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(f1 - f2).sum(axis=-1)


def tv_empirical(
    h1: TraceHistogram,
    h2: TraceHistogram,
    rng: Optional[RngStream] = None,
    resamples: int = BOOTSTRAP_RESAMPLES,
) -> TvEstimate:
    """Half-L1 distance of the normalized histograms with a percentile bootstrap interval."""
    if h1.n_sites != h2.n_sites:
        raise ExperimentError(f"histograms over {h1.n_sites} and {h2.n_sites} sites")
    if h1.total == 0 or h2.total == 0:
        raise ExperimentError("empty histogram")
    f1, f2 = h1.frequencies(), h2.frequencies()
    tv = float(_tv(f1, f2))
    rng = rng or seed_derive(0, 0, "bootstrap")
    b1 = rng.generator.multinomial(h1.total, f1, size=resamples) / h1.total
    b2 = rng.generator.multinomial(h2.total, f2, size=resamples) / h2.total
    boot = _tv(b1, b2)
    low, high = np.percentile(boot, [2.5, 97.5])
    return TvEstimate(tv=tv, ci_low=float(low), ci_high=float(high), se=float(boot.std(ddof=1)))


def trace_histograms(
    tables: SceneTables, replicas: int, seed: int, threads: int = 1
) -> Tuple[TraceHistogram, TraceHistogram, List[int], List[int]]:
    """Trace laws of standalone interlacement and noodle-soup replicas, on disjoint replica ids."""
    n = len(tables.cfg.K)
    ri = run_replicas(ri_trace_task, tables, seed, replicas, threads=threads)
    ns = run_replicas(ns_trace_task, tables, seed, replicas, threads=threads, offset=replicas)
    return TraceHistogram.from_masks(ri, n), TraceHistogram.from_masks(ns, n), ri, ns


def trace_tv_experiment(tables: SceneTables, replicas: int, seed: int, threads: int = 1) -> TraceTvReport:
    """Empirical TV between the two trace laws, checked against the coupled failure frequency."""
    _require_exact_histograms(tables)
    h_ri, h_ns, _, _ = trace_histograms(tables, replicas, seed, threads)
    tv = tv_empirical(h_ri, h_ns, seed_derive(seed, 0, "bootstrap"))
    summary, _ = estimate_coupling_failure(tables, replicas, seed, threads=threads, offset=2 * replicas)
    phat_se = math.sqrt(summary.phat * (1.0 - summary.phat) / summary.replicas)
    margin = 3.0 * math.hypot(tv.se, phat_se)
    consistent = tv.tv <= summary.phat + margin
    if not consistent:
        logger.warning(f"Trace TV {tv.tv:.4g} exceeds coupling failure {summary.phat:.4g} + {margin:.3g}")
    return TraceTvReport(
        dist=tables.cfg.dist, replicas=replicas, tv=tv, coupling=summary, margin=margin, consistent=consistent
    )


# --- Covariances ---

def _check_truth_table(table: Sequence[float], n_sites: int, name: str) -> np.ndarray:
    values = np.asarray(table, dtype=np.float64)
    if values.shape != (1 << n_sites,):
        raise ExperimentError(f"{name} needs {1 << n_sites} entries, got {values.shape[0]}")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ExperimentError(f"{name} must take values in [0, 1]")
    return values


def _patterns(masks: Sequence[int], ordinals: np.ndarray) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.int64)
    out = np.zeros(masks.shape[0], dtype=np.int64)
    for bit, o in enumerate(ordinals):
        out |= ((masks >> int(o)) & 1) << bit
    return out


def _covariance(a: np.ndarray, b: np.ndarray) -> Tuple[float, float, float]:
    """Sample covariance with a normal 95% interval from the variance of the centred products."""
    n = a.shape[0]
    prod = (a - a.mean()) * (b - b.mean())
    cov = float(prod.sum() / max(n - 1, 1))
    half = float(norm.ppf(0.975) * prod.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return cov, cov - half, cov + half


def decoupling_shapes(tables: SceneTables) -> Tuple[float, float]:
    """(sqrt(u) cap(K1)^(3/2), u cap(K1)^2), both over dist^(d-2)."""
    cfg = tables.cfg
    cap1 = tables.eq_K1.cap
    scale = cfg.dist ** (cfg.d - 2)
    return math.sqrt(cfg.u) * cap1 ** 1.5 / scale, cfg.u * cap1 ** 2 / scale


def covariance_experiment(
    tables: SceneTables,
    f1: Sequence[float],
    f2: Sequence[float],
    replicas: int,
    seed: int,
    threads: int = 1,
) -> CovarianceReport:
    """Cov(f1(trace on K1), f2(trace on K2)) under the interlacement and the noodle soup."""
    cfg = tables.cfg
    n1 = len(cfg.K1)
    t1 = _check_truth_table(f1, n1, "f1")
    t2 = _check_truth_table(f2, n1, "f2")
    _, _, ri, ns = trace_histograms(tables, replicas, seed, threads)
    cov, low, high = _covariance(t1[_patterns(ri, cfg.k1_ordinals)], t2[_patterns(ri, cfg.k2_ordinals)])
    ns_cov, ns_low, ns_high = _covariance(t1[_patterns(ns, cfg.k1_ordinals)], t2[_patterns(ns, cfg.k2_ordinals)])
    shape_new, shape_old = decoupling_shapes(tables)
    logger.info(f"dist={cfg.dist:.1f}: cov={cov:.3e} [{low:.3e}, {high:.3e}] noodle-soup cov={ns_cov:.3e}")
    return CovarianceReport(
        dist=cfg.dist,
        replicas=replicas,
        cov=cov,
        ci_low=low,
        ci_high=high,
        ns_cov=ns_cov,
        ns_ci_low=ns_low,
        ns_ci_high=ns_high,
        shape_new=shape_new,
        shape_old=shape_old,
    )


def covariance_tv_consistency(tables: SceneTables, replicas: int, seed: int, threads: int = 1) -> ConsistencyReport:
    """
    Checks |cov| <= 3 (tv + margin) for every pair of 0/1 truth tables on K1 and K2.
    Table t maps pattern s to bit s of t.
    """
    cfg = tables.cfg
    n1 = len(cfg.K1)
    if n1 > MAX_CONSISTENCY_SITES:
        raise ExperimentError(f"extremal truth tables need |K1| <= {MAX_CONSISTENCY_SITES}, got {n1}")
    _require_exact_histograms(tables)
    h_ri, h_ns, ri, _ = trace_histograms(tables, replicas, seed, threads)
    tv = tv_empirical(h_ri, h_ns, seed_derive(seed, 0, "bootstrap"))
    margin = 3.0 * tv.se

    n_tables = 1 << (1 << n1)
    tables_idx = np.arange(n_tables, dtype=np.int64)
    F1 = ((tables_idx[None, :] >> _patterns(ri, cfg.k1_ordinals)[:, None]) & 1).astype(np.float64)
    F2 = ((tables_idx[None, :] >> _patterns(ri, cfg.k2_ordinals)[:, None]) & 1).astype(np.float64)
    n = F1.shape[0]
    cov = (F1 - F1.mean(axis=0)).T @ (F2 - F2.mean(axis=0)) / max(n - 1, 1)
    bound = 3.0 * (tv.tv + margin)
    bad = np.argwhere(np.abs(cov) > bound)
    if bad.size:
        logger.warning(f"{bad.shape[0]} truth-table pairs exceed 3 (tv + margin) = {bound:.4g}")
    return ConsistencyReport(
        dist=cfg.dist,
        replicas=replicas,
        tv=tv,
        margin=margin,
        pairs=n_tables * n_tables,
        max_abs_cov=float(np.abs(cov).max()),
        violations=[(int(i), int(j)) for i, j in bad],
    )


# --- Exact lemma checks ---

def _poisson_series(lam: float, weight, start: int) -> float:
    """sum over n >= start of P[Poisson(lam) = n] * weight(n)."""
    if lam <= 0:
        return 0.0
    top = poisson_upper_bound(lam) + start + 10
    n = np.arange(start, top + 1)
    return float(np.dot(poisson.pmf(n, lam), weight(n.astype(np.float64))))


def inverse_sqrt_moment(lam: float) -> float:
    """E[N^(-1/2); N >= 1] for N ~ Poisson(lam)."""
    return _poisson_series(lam, lambda n: n ** -0.5, 1)


def inverse_cube_gamma_moment(lam: float) -> float:
    """
    E[Xi^(-3); N >= 4] where Xi | N = l is a sum of l unit exponentials,
    using E[Xi^(-3) | N = l] = 1 / ((l-1)(l-2)(l-3)).
    """
    return _poisson_series(lam, lambda n: 1.0 / ((n - 1) * (n - 2) * (n - 3)), 4)


def lemma_rung(tables: SceneTables) -> LemmaRung:
    cfg = tables.cfg
    q = tables.escape.q
    theta = tables.theta
    u_cap1 = cfg.u * tables.eq_K1.cap
    margin = harmonic_measure_margin(tables.eq, tables.eq_K1)
    shape_new, _ = decoupling_shapes(tables)
    return LemmaRung(
        R=cfg.R,
        dist=cfg.dist,
        q=q,
        one_minus_q=1.0 - q,
        escape_ratio=(1.0 - q) * cfg.R ** (cfg.d - 2) / tables.eq_K1.cap,
        regime_ok=tables.escape.regime_ok,
        sup_g_dev=sup_density_deviation(tables.kernels),
        harmonic_margin=float(margin.min()),
        inv_sqrt_moment=inverse_sqrt_moment(q * theta / 2.0),
        inv_sqrt_shape=4.0 * math.sqrt(3.0) / math.sqrt(u_cap1) if u_cap1 > 0 else float("inf"),
        inv_cube_moment=inverse_cube_gamma_moment(q * theta / 2.0),
        p_n1_no_n22=-math.expm1(-(1.0 - q) * theta) * math.exp(-q * theta / 2.0),
        p_n1_no_n22_bound=math.sqrt(2.0) * (1.0 - q) * math.sqrt(theta) / math.sqrt(q),
        decoupling_shape=shape_new,
    )


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> Optional[FitResult]:
    """Least-squares line through (log x, log y) with a 95% t-interval on the slope."""
    lx, ly = np.log(np.asarray(x, dtype=np.float64)), np.log(np.asarray(y, dtype=np.float64))
    if lx.shape[0] < 2:
        return None
    res = linregress(lx, ly)
    dof = lx.shape[0] - 2
    half = float(student_t.ppf(0.975, dof) * res.stderr) if dof > 0 else 0.0
    residuals = ly - (res.intercept + res.slope * lx)
    return FitResult(
        slope=float(res.slope),
        intercept=float(res.intercept),
        slope_ci=(float(res.slope) - half, float(res.slope) + half),
        residuals=[float(r) for r in residuals],
        points=int(lx.shape[0]),
    )


def lemma_ladder(K1: SiteSet, radii: Sequence[int], u: float) -> List[SceneTables]:
    """Scenes with |xhat| = 2R + 1 along the first axis; exit laws are not needed here."""
    ladder = []
    for R in radii:
        cfg = make_configuration(K1, axis_xhat(2 * int(R) + 1, K1.dim), u, materialize_ball=False)
        ladder.append(build_scene_tables(cfg, with_exit=False))
        logger.info(f"Lemma rung R={R} ready")
    return ladder


def lemma_suite(ladder: Sequence[SceneTables]) -> LemmaReport:
    rungs = sorted((lemma_rung(t) for t in ladder), key=lambda r: r.R)
    R = [r.R for r in rungs]
    devs = [r.sup_g_dev for r in rungs]
    decreasing = all(b < a for a, b in zip(devs, devs[1:]))
    margins_ok = all(r.harmonic_margin >= -EQUILIBRIUM_RESIDUAL_TOL for r in rungs)
    if not margins_ok:
        logger.warning("Harmonic measure of K fell below a quarter of that of K1 on some rung")
    report = LemmaReport(
        rungs=rungs,
        escape_fit=fit_loglog(R, [r.one_minus_q for r in rungs]),
        density_fit=fit_loglog(R, devs) if all(d > 0 for d in devs) else None,
        density_decreasing=decreasing,
        margins_nonnegative=margins_ok,
    )
    if report.escape_fit:
        logger.info(f"log(1 - q) against log R: slope {report.escape_fit.slope:.3f}")
    return report


# --- Scaling ---

def _rung(x: float, summary: CouplingSummary) -> RungResult:
    censored = summary.failures < CENSOR_MIN_FAILURES
    if censored:
        low, high = wilson_interval(summary.failures, summary.replicas, one_sided=True)
        logger.warning(f"Rung x={x:.4g} censored: {summary.failures} failures in {summary.replicas} replicas")
    else:
        low, high = summary.ci_low, summary.ci_high
    return RungResult(
        x=x,
        phat=summary.phat,
        ci_low=low,
        ci_high=high,
        failures=summary.failures,
        replicas=summary.replicas,
        censored=censored,
    )


def _scaling_report(kind: str, points: List[Tuple[float, CouplingSummary]]) -> ScalingReport:
    points = sorted(points, key=lambda p: p[0])
    ladder = [_rung(x, s) for x, s in points]
    kept = [r for r in ladder if not r.censored]
    fit = fit_loglog([r.x for r in kept], [r.phat for r in kept])
    if fit:
        logger.info(f"{kind} ladder slope {fit.slope:.3f} [{fit.slope_ci[0]:.3f}, {fit.slope_ci[1]:.3f}]")
    return ScalingReport(
        kind=kind, ladder=ladder, fit=fit, buckets={f"{x:g}": s.buckets for x, s in points}
    )


def scene_tables_for(K1: SiteSet, dist: float, u: float, seed: int) -> SceneTables:
    cfg = make_configuration(K1, xhat_for_distance(K1, dist), u)
    return build_scene_tables(cfg, rng=seed_derive(seed, 0, "tables").generator)


def scaling_experiment(
    K1: SiteSet,
    u: float,
    distances: Sequence[float],
    replicas: int,
    seed: int,
    threads: int = 1,
    levels: Sequence[float] = (),
    radii: Sequence[int] = (),
) -> Dict[str, ScalingReport]:
    """
    Coupling failure along a distance ladder and optionally along a level ladder
    (at the first distance) and a capacity ladder of balls at proportionally scaled distance.
    """
    if not distances:
        raise ExperimentError("the distance ladder is empty")
    reports: Dict[str, ScalingReport] = {}

    points = []
    base: Optional[SceneTables] = None
    for dist in distances:
        tables = scene_tables_for(K1, dist, u, seed)
        base = base or tables
        summary, _ = estimate_coupling_failure(tables, replicas, seed, threads=threads)
        points.append((tables.cfg.dist, summary))
    reports["distance"] = _scaling_report("distance", points)

    if levels:
        points = []
        for level in levels:
            summary, _ = estimate_coupling_failure(base.with_level(level), replicas, seed, threads=threads)
            points.append((float(level), summary))
        reports["level"] = _scaling_report("level", points)

    if radii:
        points = []
        origin = (0,) * K1.dim
        for r in radii:
            K1r = ball(origin, r)
            dist = distances[0] * r / radii[0]
            tables = scene_tables_for(K1r, dist, u, seed)
            summary, _ = estimate_coupling_failure(tables, replicas, seed, threads=threads)
            points.append((tables.eq_K1.cap, summary))
        reports["capacity"] = _scaling_report("capacity", points)
    return reports


# --- Rows for persistence ---

def rung_rows(report: ScalingReport) -> List[dict]:
    return [r.model_dump() for r in report.ladder]


def lemma_rows(report: LemmaReport) -> List[dict]:
    return [r.model_dump() for r in report.rungs]


def covariance_rows(reports: Sequence[CovarianceReport]) -> List[dict]:
    return [r.model_dump(exclude={"replicas"}) for r in reports]


def tv_rows(reports: Sequence[TraceTvReport]) -> List[dict]:
    return [
        {
            "dist": r.dist,
            "tv": r.tv.tv,
            "tv_ci_low": r.tv.ci_low,
            "tv_ci_high": r.tv.ci_high,
            "phat": r.coupling.phat,
            "ci_low": r.coupling.ci_low,
            "ci_high": r.coupling.ci_high,
            "consistent": int(r.consistent),
        }
        for r in reports
    ]
