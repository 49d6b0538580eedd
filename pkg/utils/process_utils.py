# utils/process_utils.py
import logging
from typing import List, Literal, Tuple

import numpy as np

from models.excursion import Excursion
from models.potential import SceneTables
from models.samples import NsSample, RiSample
from models.slt import SltState
from utils.excursion_utils import direct_trajectory, harmonic_draw, sample_excursion, trace
from utils.rng_utils import ReplicaStreams, RngStream
from utils.slt_utils import Attach, UNIT_DENSITY, run_unit_steps, slt_init, slt_next

logger = logging.getLogger(__name__)


def sample_counts(tables: SceneTables, rng: RngStream) -> Tuple[int, int]:
    """(N1, N2): independent Poisson((1 - q) u cap(K)) and Poisson(q u cap(K))."""
    q = tables.escape.q
    theta = tables.theta
    return rng.poisson((1.0 - q) * theta), rng.poisson(q * theta)


def mean_total_excursions(tables: SceneTables) -> float:
    """E[N] = (1 - q) u cap(K) E[T_1] + q u cap(K)."""
    q = tables.escape.q
    return (1.0 - q) * tables.theta * tables.mean_T1 + q * tables.theta


def excursion_attacher(tables: SceneTables, rng: RngStream, lean: bool) -> Attach:
    cfg = tables.cfg

    def attach(site: int) -> Excursion:
        return sample_excursion(cfg.K.sites[site], cfg, rng, lean)

    return attach


def run_trajectories(
    state: SltState, tables: SceneTables, n1: int, streams: ReplicaStreams, attach: Attach
) -> Tuple[List[int], int]:
    """
    Drives `n1` possibly-returning trajectories through the engine. After an excursion
    ending at y the trajectory stops when zeta <= kappa, with kappa = (p_y - q)/(1 - q)
    after its first excursion and p_y afterwards; otherwise the next density is g(y, .).
    Returns (T, uniforms used).
    """
    q = tables.escape.q
    p = tables.escape.p
    g = tables.kernels.g
    ones = state.densities[UNIT_DENSITY]
    clocks, zeta = streams["clocks"], streams["zeta"]
    T: List[int] = []
    used = 0
    for _ in range(n1):
        density, density_id = ones, UNIT_DENSITY
        count = 0
        while True:
            _, mark = slt_next(state, density, clocks, attach, density_id)
            count += 1
            y = mark.excursion.end_ord
            if count == 1:
                kappa = (p[y] - q) / (1.0 - q) if q < 1.0 else 1.0
            else:
                kappa = p[y]
            used += 1
            if zeta.random() <= kappa:
                break
            density, density_id = g[y], f"g:{y}"
        T.append(count)
    return T, used


def ri_sample_from_state(
    state: SltState, tables: SceneTables, N1: int, T: List[int], N2: int, zeta_used: int, keep_transcript: bool
) -> RiSample:
    excursions = [m.excursion for m in state.marks]
    Theta = sum(T)
    return RiSample(
        N1=N1,
        T=T,
        Theta=Theta,
        N2=N2,
        Ntot=Theta + N2,
        excursions=excursions,
        zeta_used=zeta_used,
        Gfinal=state.G.astype(np.float64),
        trace=trace(excursions, tables.cfg.K),
        transcript=list(state.transcript) if keep_transcript else None,
    )


def build_ri(
    tables: SceneTables, streams: ReplicaStreams, lean: bool = False, keep_transcript: bool = False
) -> RiSample:
    """The interlacement excursion soup on K through soft local times."""
    if not tables.escape.regime_ok:
        logger.debug(f"Building interlacements with q={tables.escape.q:.4f} < 1/2")
    N1, N2 = sample_counts(tables, streams["counts"])
    state = slt_init(tables, streams["clocks"])
    attach = excursion_attacher(tables, streams["paths"], lean)
    T, used = run_trajectories(state, tables, N1, streams, attach)
    run_unit_steps(state, N2, streams["clocks"], attach)
    return ri_sample_from_state(state, tables, N1, T, N2, used, keep_transcript)


def build_ns(
    tables: SceneTables,
    streams: ReplicaStreams,
    method: Literal["slt", "direct"] = "slt",
    lean: bool = False,
) -> NsSample:
    """
    Noodle soup: N' ~ Poisson(E[N]) independent excursions with harmonic starts, either
    as N' unit-density steps of the engine or as i.i.d. draws.
    """
    Nprime = streams["counts"].poisson(tables.mean_total)
    attach = excursion_attacher(tables, streams["paths"], lean)
    if method == "slt":
        state = slt_init(tables, streams["clocks"])
        excursions = [m.excursion for m in run_unit_steps(state, Nprime, streams["clocks"], attach)]
    elif method == "direct":
        excursions = [attach(harmonic_draw(tables, streams["direct"])) for _ in range(Nprime)]
    else:
        raise ValueError(f"unknown noodle-soup method: {method!r}")
    return NsSample(Nprime=Nprime, excursions=excursions, trace=trace(excursions, tables.cfg.K), method=method)


def direct_ri_excursions(tables: SceneTables, streams: ReplicaStreams, lean: bool = False) -> List[Excursion]:
    """
    Brute-force interlacement soup: Poisson(u cap(K)) unconditioned trajectories from the
    harmonic measure, each followed through all of its excursions.
    """
    n = streams["counts"].poisson(tables.theta)
    excursions: List[Excursion] = []
    for _ in range(n):
        excursions.extend(direct_trajectory(tables, streams, lean))
    return excursions
