# utils/coupling_utils.py
import logging
import math
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union, get_args

import numpy as np
from scipy.stats import binomtest, poisson

from config import POISSON_SERIES_TAIL, SHIFT_TAIL_QUANTILE
from models.excursion import Excursion
from models.potential import SceneTables
from models.samples import (
    CouplingOutcome,
    CouplingRecord,
    CouplingSummary,
    FailureBucket,
    NsSample,
    PoissonShiftCoupler,
    excursion_multiset,
)
from models.slt import Mark
from utils.excursion_utils import sample_excursion, trace
from utils.process_utils import excursion_attacher, ri_sample_from_state, run_trajectories
from utils.replica_utils import run_replicas
from utils.rng_utils import ReplicaStreams, RngStream
from utils.slt_utils import run_unit_steps, slt_from_marks, slt_init, slt_resample_overwrite

logger = logging.getLogger(__name__)


class CouplingError(ValueError):
    """Raised when a coupled replica breaks an identity that holds by construction."""


# --- Poisson shifts ---

def poisson_upper_bound(lam: float, tail: float = POISSON_SERIES_TAIL) -> int:
    """Smallest n with P[Poisson(lam) > n] <= tail, or a 12-sigma bound when scipy cannot invert the tail."""
    if lam <= 0:
        return 0
    q = float(poisson.isf(tail, lam))
    if not math.isfinite(q):
        q = lam + 12 * math.sqrt(lam) + 40
    return int(q)


def poisson_shift_tv(theta: float, k: int) -> float:
    """Exact d_TV(Poisson(theta), k + Poisson(theta)) as the sum of positive parts of the pmf difference."""
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    k = int(k)
    if k == 0:
        return 0.0
    top = poisson_upper_bound(theta) + abs(k) + 20
    values = np.arange(min(0, k), top + 1)
    diff = poisson.pmf(values, theta) - poisson.pmf(values - k, theta)
    tv = float(np.clip(diff, 0.0, None).sum())
    if tv > abs(k) / math.sqrt(theta) + 1e-12:
        logger.warning(f"Poisson shift TV {tv:.6g} exceeds |k|/sqrt(theta) at theta={theta}, k={k}")
    return tv


@lru_cache(maxsize=32)
def poisson_shift_coupler(lam: float) -> PoissonShiftCoupler:
    """Truncated Poisson(lam) pmf; shifts wider than the truncation have no overlap worth tabulating."""
    nmax = poisson_upper_bound(lam, SHIFT_TAIL_QUANTILE) + 1 if lam > 0 else 0
    pmf = poisson.pmf(np.arange(nmax + 1), lam) if lam > 0 else np.ones(1)
    return PoissonShiftCoupler(lam=lam, kmax=nmax, nmax=nmax, pmf=pmf / pmf.sum())


def maximal_coupling_discrete(p: np.ndarray, q: np.ndarray, rng: RngStream) -> Tuple[int, int]:
    """
    Indices (i, j) with i ~ p and j ~ q and P[i = j] = sum min(p, q).
    Both vectors must be normalized over the same alphabet.
    """
    overlap = np.minimum(p, q)
    omega = float(overlap.sum())
    if omega > 0 and rng.random() < omega:
        i = rng.choice_cdf(np.cumsum(overlap))
        return i, i
    res_p = np.clip(p - overlap, 0.0, None)
    res_q = np.clip(q - overlap, 0.0, None)
    if res_p.sum() <= 0 or res_q.sum() <= 0:
        i = rng.choice_cdf(np.cumsum(overlap))
        return i, i
    return rng.choice_cdf(np.cumsum(res_p)), rng.choice_cdf(np.cumsum(res_q))


def sample_shift_coupled(
    coupler: Union[PoissonShiftCoupler, float], k: int, rng: RngStream
) -> Tuple[int, int]:
    """
    (Xt, Yt), both Poisson(lam), maximally coupled so that Yt = k + Xt as often as possible.
    Shifts outside the coupler's window are sampled independently.
    """
    if not isinstance(coupler, PoissonShiftCoupler):
        coupler = poisson_shift_coupler(float(coupler))
    if coupler.lam <= 0:
        return 0, 0
    k = int(k)
    if abs(k) > coupler.kmax:
        return rng.poisson(coupler.lam), rng.poisson(coupler.lam)
    values, pmf_y, pmf_shift, _ = coupler.tables(k)
    i, j = maximal_coupling_discrete(pmf_y, pmf_shift, rng)
    return int(values[j]) - k, int(values[i])


# --- Resampling densities ---

def psi_density(GI: np.ndarray, Gp: float, hbar: np.ndarray) -> np.ndarray:
    """
    Psi(x) = (Gp - GI(x))_+ / sum_z hbar(z) (Gp - GI(z))_+ over the support,
    or the constant 1 when the positive part vanishes.
    """
    pos = np.clip(Gp - np.asarray(GI, dtype=np.float64), 0.0, None)
    mass = float(np.dot(hbar, pos))
    if mass <= 0:
        return np.ones_like(pos)
    return pos / mass


def _normalized(weights: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    total = weights.sum()
    return weights / total if total > 0 else fallback


def _excursion_from(slot: int, tables: SceneTables, rng: RngStream, lean: bool) -> Excursion:
    site = int(tables.kernels.support[slot])
    return sample_excursion(tables.cfg.K.sites[site], tables.cfg, rng, lean)


# --- The coupled pair ---

def _bucket(upsilon: bool, D: bool, N1: int, N22: int) -> str:
    if upsilon:
        return "success"
    if not D:
        return "Dc"
    if N1 == 0:
        return "D_N1_zero"
    if N22 == 0:
        return "D_N1_no_N22"
    return "remainder"


def build_coupled_pair(
    tables: SceneTables,
    streams: ReplicaStreams,
    replica: int = 0,
    seed: int = 0,
    lean: bool = True,
    coupler: Optional[PoissonShiftCoupler] = None,
) -> CouplingRecord:
    """
    Builds the interlacement soup and the noodle soup from one replica's randomness.

    The interlacement side runs N1 trajectories and then N21 + N22 unit steps. The last
    N22 marks are resampled at harmonic starts, and their partners, drawn from the
    Psi-law, are planted between the interlacement curve and G'. The noodle soup then
    runs N1' + N21' + N22 unit steps on the rebuilt mark process.
    """
    q = tables.escape.q
    theta = tables.theta
    hbar = tables.hbar_support.astype(np.float64)
    lam = q * theta / 2.0
    coupler = coupler or poisson_shift_coupler(lam)
    if not math.isclose(coupler.lam, lam, rel_tol=1e-12, abs_tol=1e-15):
        raise CouplingError(f"coupler built for lambda={coupler.lam}, scene needs {lam}")

    coupling, resample = streams["coupling"], streams["resample"]
    N1 = streams["counts"].poisson((1.0 - q) * theta)
    N1p = coupling.poisson(tables.mean_theta)
    N22 = coupling.poisson(lam)

    state = slt_init(tables, streams["clocks"])
    attach = excursion_attacher(tables, streams["paths"], lean)
    T, used = run_trajectories(state, tables, N1, streams, attach)
    Theta = sum(T)
    G_theta = state.G.astype(np.float64)
    spread = float(G_theta.max() - G_theta.min()) if G_theta.size else 0.0

    N21, N21p = sample_shift_coupled(coupler, Theta - N1p, coupling)
    D = Theta + N21 == N1p + N21p
    run_unit_steps(state, N21 + N22, streams["clocks"], attach)

    base = Theta + N21
    GI = state.history[base].astype(np.float64)
    Xi22 = float(sum(state.xis[base:base + N22]))
    Gp = float(GI.min()) + Xi22 if GI.size else 0.0
    psi = psi_density(GI, Gp, hbar)
    psi_sup_dev = float(np.abs(psi - 1.0).max()) if psi.size else 0.0

    law_psi = _normalized(psi * hbar, hbar)
    law_top = _normalized(hbar * (Gp > GI), hbar)
    resampled: List[Mark] = []
    planted: List[Mark] = []
    for j in range(N22):
        law = law_top if j == N22 - 1 else law_psi
        y, yp = maximal_coupling_discrete(hbar, law, resample)
        exc = _excursion_from(y, tables, resample, lean)
        resampled.append(Mark(
            site=int(state.support[y]), level=float(state.history[base + j + 1][y]), excursion=exc
        ))
        exc_p = exc if yp == y else _excursion_from(yp, tables, resample, lean)
        if j == N22 - 1:
            level = Gp
        else:
            level = GI[yp] + resample.random() * (Gp - GI[yp])
        planted.append(Mark(site=int(state.support[yp]), level=float(level), excursion=exc_p))
    slt_resample_overwrite(state, base, resampled)

    ri = ri_sample_from_state(state, tables, N1, T, N21 + N22, used, keep_transcript=False)

    floors = np.maximum(GI, Gp)
    ns_state = slt_from_marks(tables, list(state.marks[:base]) + planted, floors, streams["glue"])
    Nprime = N1p + N21p + N22
    ns_marks = run_unit_steps(ns_state, Nprime, streams["glue"], attach)
    ns_excursions = [m.excursion for m in ns_marks]
    ns = NsSample(
        Nprime=Nprime, excursions=ns_excursions, trace=trace(ns_excursions, tables.cfg.K), method="coupled"
    )

    upsilon = excursion_multiset(ri.excursions) == excursion_multiset(ns.excursions)
    bucket = _bucket(upsilon, D, N1, N22)
    if bucket == "D_N1_zero":
        raise CouplingError(f"replica {replica}: both soups must agree when N1 = 0 and the counts match")
    logger.debug(
        f"Replica {replica}: N1={N1} Theta={Theta} N1'={N1p} N21={N21} N21'={N21p} N22={N22} "
        f"D={D} Upsilon={upsilon}"
    )
    return CouplingRecord(
        replica=replica,
        seed=seed,
        N1=N1,
        N1p=N1p,
        N21=N21,
        N21p=N21p,
        N22=N22,
        Theta=Theta,
        Xi22=Xi22,
        D=D,
        Upsilon=upsilon,
        ri=ri,
        ns=ns,
        psi_sup_dev=psi_sup_dev,
        spread=spread,
        H=spread <= Xi22 / 2.0,
        bucket=bucket,
    )


def coupling_task(tables: SceneTables, seed: int, replica: int) -> CouplingRecord:
    return build_coupled_pair(tables, ReplicaStreams(seed, replica), replica=replica, seed=seed)


def coupling_outcome_task(tables: SceneTables, seed: int, replica: int) -> CouplingOutcome:
    return coupling_task(tables, seed, replica).outcome()


# --- Aggregation ---

Outcome = Union[CouplingRecord, CouplingOutcome]


def wilson_interval(successes: int, trials: int, one_sided: bool = False) -> Tuple[float, float]:
    """Wilson 95% interval; the one-sided form is (0, upper bound)."""
    if trials <= 0:
        return 0.0, 1.0
    test = binomtest(successes, trials, alternative="less" if one_sided else "two-sided")
    ci = test.proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def summarize_coupling(outcomes: Sequence[Outcome]) -> CouplingSummary:
    n = len(outcomes)
    if n == 0:
        raise ValueError("no coupled replicas to summarize")
    failures = sum(not r.Upsilon for r in outcomes)
    low, high = wilson_interval(failures, n)
    buckets = {name: 0 for name in get_args(FailureBucket)}
    for r in outcomes:
        buckets[r.bucket] += 1
    return CouplingSummary(
        replicas=n,
        failures=failures,
        phat=failures / n,
        ci_low=low,
        ci_high=high,
        buckets=buckets,
        D_failures=buckets["Dc"],
        H_frequency=sum(r.H for r in outcomes) / n,
        psi_sup_dev_median=float(np.median([r.psi_sup_dev for r in outcomes])),
        mean_N1p=float(np.mean([r.N1p for r in outcomes])),
        mean_Theta=float(np.mean([r.Theta for r in outcomes])),
    )


def estimate_coupling_failure(
    tables: SceneTables,
    replicas: int,
    seed: int,
    threads: int = 1,
    offset: int = 0,
    keep_records: bool = False,
) -> Tuple[CouplingSummary, List[Outcome]]:
    """
    Frequency of Upsilon^c over `replicas` coupled replicas with its Wilson 95% interval
    and the decomposition into Dc, D_N1_zero, D_N1_no_N22 and remainder.
    Full records (with both soups) are kept only on request.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    task = coupling_task if keep_records else coupling_outcome_task
    outcomes = run_replicas(task, tables, seed, replicas, threads=threads, offset=offset)
    summary = summarize_coupling(outcomes)
    logger.info(
        f"Coupling failure {summary.phat:.4g} [{summary.ci_low:.4g}, {summary.ci_high:.4g}] "
        f"over {summary.replicas} replicas (D^c: {summary.D_failures})"
    )
    return summary, outcomes


def coupling_rows(outcomes: Sequence[Outcome]) -> List[dict]:
    rows = []
    for r in outcomes:
        o = r.outcome() if isinstance(r, CouplingRecord) else r
        rows.append({
            "replica": o.replica,
            "seed": o.seed,
            "N1": o.N1,
            "N1p": o.N1p,
            "N21": o.N21,
            "N21p": o.N21p,
            "N22": o.N22,
            "Theta": o.Theta,
            "D": int(o.D),
            "Upsilon": int(o.Upsilon),
            "psi_sup_dev": repr(o.psi_sup_dev),
            "spread": repr(o.spread),
            "H": int(o.H),
            "ri_trace": o.ri_trace,
            "ns_trace": o.ns_trace,
        })
    return rows
