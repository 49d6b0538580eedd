# utils/potential_utils.py
import logging
import math
from itertools import combinations_with_replacement
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.integrate import quad_vec
from scipy.sparse.linalg import splu
from scipy.special import gamma, ive

from config import (
    CLAMP_TOL,
    EQUILIBRIUM_RESIDUAL_TOL,
    GREEN_CALIBRATION_WIDTH,
    GREEN_CUTOFF,
    GREEN_EPSABS,
    GREEN_EPSREL,
    GREEN_TAIL_START,
    KERNEL_ROW_TOL,
    MATRIX_CHUNK_ROWS,
    MAX_CONDITION_NUMBER,
    MAX_EXACT_BALL_SITES,
    MC_EXIT_MIN_PER_SITE,
    MC_EXIT_SAMPLES,
    QUADRATURE_LIMIT,
)
from models.lattice import Configuration, Point, SiteSet
from models.potential import EquilibriumData, EscapeTable, GreenTable, KernelTable, SceneTables
from utils.lattice_utils import (
    internal_boundary,
    scene_ball,
    scene_ball_mask,
    scene_ball_size,
    scene_shell,
    unit_moves,
)

logger = logging.getLogger(__name__)


class PotentialError(ValueError):
    """Raised on singular systems, negative probabilities or invalid start points."""


# One table per dimension, extended lazily; worker processes receive finished SceneTables instead.
_GREEN_TABLES: Dict[int, GreenTable] = {}


# --- Green's function ---

def green_closed_form_constant(d: int) -> float:
    """a_d in G(0, x) ~ a_d |x|^(2-d); equals 3/(2 pi) for d = 3."""
    return d * gamma(d / 2 - 1) / (2 * math.pi ** (d / 2))


def _bessel_green(keys: np.ndarray, d: int, limit: int) -> np.ndarray:
    """
    G(0, x) = int_0^inf prod_i e^{-t/d} I_{|x_i|}(t/d) dt for every row of `keys`.

    The integrand is the transition kernel of the rate-1 continuous-time walk, whose
    occupation time at x has the same mean as the discrete visit count.
    """
    orders = keys.astype(np.float64)

    def integrand(t):
        return np.prod(ive(orders, t / d), axis=1)

    split = 4.0 * float((orders ** 2).sum(axis=1).max()) + 100.0
    head, _ = quad_vec(integrand, 0.0, split, epsabs=GREEN_EPSABS, epsrel=GREEN_EPSREL, limit=limit)
    body, _ = quad_vec(integrand, split, GREEN_TAIL_START, epsabs=GREEN_EPSABS, epsrel=GREEN_EPSREL, limit=limit)
    return np.asarray(head + body + _bessel_tail(orders, d, GREEN_TAIL_START), dtype=np.float64)


def _bessel_tail(orders: np.ndarray, d: int, start: float) -> np.ndarray:
    """
    int_start^inf of the integrand from the expansion e^{-z} I_n(z) ~ (1 - (4n^2-1)/(8z)) / sqrt(2 pi z).
    ive returns NaN for arguments past roughly 1e9.
    """
    h = d / 2
    spread = d * (4 * orders ** 2 - 1).sum(axis=1) / 8
    lead = start ** (1 - h) / (h - 1)
    correction = spread * start ** (-h) / h
    return (d / (2 * math.pi)) ** h * (lead - correction)


def _ensure_values(table: GreenTable, keys: np.ndarray) -> None:
    missing = [tuple(int(c) for c in row) for row in keys]
    missing = [k for k in missing if k not in table.values]
    if not missing:
        return
    vals = _bessel_green(np.array(missing, dtype=np.int64), table.d, table.quadrature_limit)
    table.values.update(zip(missing, (float(v) for v in vals)))
    logger.debug(f"Green table d={table.d}: +{len(missing)} values ({len(table.values)} total)")


def _anisotropy(canon: np.ndarray, r2: np.ndarray) -> np.ndarray:
    c = canon.astype(np.float64)
    return (c ** 4).sum(axis=1) / (r2 * r2)


def _tail(table: GreenTable, canon: np.ndarray, r2: np.ndarray) -> np.ndarray:
    a, b0, b1 = table.tail_coef
    r2 = r2.astype(np.float64)
    return (a + (b0 + b1 * _anisotropy(canon, r2)) / r2) * r2 ** ((2 - table.d) / 2)


def _calibrate_tail(table: GreenTable) -> None:
    d, cutoff = table.d, table.cutoff
    lo2, hi2 = (cutoff - GREEN_CALIBRATION_WIDTH) ** 2, cutoff ** 2
    shell = [
        k for k in combinations_with_replacement(range(int(cutoff) + 1), d)
        if lo2 < sum(c * c for c in k) <= hi2
    ]
    keys = np.array(shell, dtype=np.int64)
    _ensure_values(table, keys)
    r2 = (keys ** 2).sum(axis=1).astype(np.float64)
    vals = np.array([table.values[k] for k in shell])
    design = np.column_stack([np.ones_like(r2), 1.0 / r2, _anisotropy(keys, r2) / r2])
    coef, *_ = linalg.lstsq(design, vals * r2 ** ((d - 2) / 2))
    table.tail_coef = tuple(float(c) for c in coef)
    fitted = _tail(table, keys, r2)
    table.tail_fit_residual = float(np.abs(fitted / vals - 1).max())
    rel = abs(coef[0] / table.a_d_closed_form - 1)
    logger.info(
        f"Green tail d={d}: a_d={coef[0]:.8f} (closed form {table.a_d_closed_form:.8f}, rel {rel:.2e}), "
        f"shell fit residual {table.tail_fit_residual:.2e} over {len(shell)} points"
    )
    if rel > 1e-3:
        logger.warning(f"Calibrated a_d deviates from the closed form by {rel:.2e}")


def green_table(d: int) -> GreenTable:
    if d < 3:
        raise PotentialError("transient dimension required")
    table = _GREEN_TABLES.get(d)
    if table is None:
        table = GreenTable(
            d=d,
            cutoff=GREEN_CUTOFF,
            quadrature_limit=QUADRATURE_LIMIT,
            a_d_closed_form=green_closed_form_constant(d),
        )
        _calibrate_tail(table)
        _GREEN_TABLES[d] = table
    return table


def green_values(table: GreenTable, displacements: np.ndarray) -> np.ndarray:
    """G(0, x) for every row x of `displacements`."""
    disp = np.asarray(displacements, dtype=np.int64).reshape(-1, table.d)
    canon = np.sort(np.abs(disp), axis=1)
    r2 = (canon * canon).sum(axis=1)
    out = np.empty(disp.shape[0], dtype=np.float64)
    near = r2 <= table.cutoff ** 2
    if near.any():
        uniq, inv = np.unique(canon[near], axis=0, return_inverse=True)
        _ensure_values(table, uniq)
        vals = np.array([table.values[tuple(int(c) for c in row)] for row in uniq])
        out[near] = vals[inv.reshape(-1)]
    if (~near).any():
        out[~near] = _tail(table, canon[~near], r2[~near])
    return out


def green(d: int, x: Point) -> float:
    if d < 3:
        raise PotentialError("transient dimension required")
    return float(green_values(green_table(d), np.asarray([x]))[0])


def green_matrix(table: GreenTable, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """G(a, b) for rows a of A and b of B, computed in row chunks."""
    A = np.asarray(A, dtype=np.int64)
    B = np.asarray(B, dtype=np.int64)
    out = np.empty((A.shape[0], B.shape[0]), dtype=np.float64)
    step = max(1, MATRIX_CHUNK_ROWS // max(1, B.shape[0]))
    for start in range(0, A.shape[0], step):
        block = A[start:start + step]
        disp = block[:, None, :] - B[None, :, :]
        out[start:start + step] = green_values(table, disp).reshape(block.shape[0], B.shape[0])
    return out


# --- Equilibrium measure, capacity, escape ---

def clamp_probabilities(values: np.ndarray, what: str) -> np.ndarray:
    """Round-off negatives (>= -CLAMP_TOL) become 0; anything more negative is an error."""
    values = np.array(values, dtype=np.float64)
    worst = float(values.min()) if values.size else 0.0
    if worst < -CLAMP_TOL:
        raise PotentialError(f"negative {what}: {worst:.3e}")
    np.maximum(values, 0.0, out=values)
    return values


def _green_factor(K: SiteSet, table: GreenTable):
    GKK = green_matrix(table, K.coords, K.coords)
    condition = float(np.linalg.cond(GKK))
    if not np.isfinite(condition) or condition > MAX_CONDITION_NUMBER:
        raise PotentialError(f"ill-conditioned Green matrix of K: condition {condition:.3e}")
    try:
        factor = linalg.cho_factor(GKK)
    except linalg.LinAlgError as exc:
        raise PotentialError(f"Green matrix of K is not positive definite (condition {condition:.3e})") from exc
    return GKK, factor, condition


def equilibrium_measure(K: SiteSet, table: Optional[GreenTable] = None) -> EquilibriumData:
    if not len(K):
        raise PotentialError("empty set")
    table = table or green_table(K.dim)
    GKK, factor, condition = _green_factor(K, table)
    e = linalg.cho_solve(factor, np.ones(len(K)))
    residual = float(np.abs(GKK @ e - 1.0).max())
    if residual > EQUILIBRIUM_RESIDUAL_TOL:
        raise PotentialError(f"equilibrium residual {residual:.3e} exceeds {EQUILIBRIUM_RESIDUAL_TOL:.0e}")
    # e_K vanishes off the internal boundary
    interior = ~internal_boundary(K).contains_array(K.coords)
    if interior.any():
        stray = float(np.abs(e[interior]).max())
        if stray > CLAMP_TOL:
            logger.warning(f"Equilibrium measure has mass {stray:.3e} on interior sites; zeroed")
        e[interior] = 0.0
    e = clamp_probabilities(e, "equilibrium measure")
    cap = float(e.sum())
    return EquilibriumData(K=K, e=e, cap=cap, hbar=e / cap, residual=residual, condition=condition)


def capacity(K: SiteSet, table: Optional[GreenTable] = None) -> float:
    return equilibrium_measure(K, table).cap


def _clip_escape(p: np.ndarray) -> np.ndarray:
    excess = float(max(0.0, -p.min(), p.max() - 1.0)) if p.size else 0.0
    if excess > CLAMP_TOL:
        logger.warning(f"Escape probabilities clipped to [0, 1] (excess {excess:.3e})")
    return np.clip(p, 0.0, 1.0)


def _return_probabilities(points: np.ndarray, eq: EquilibriumData, table: GreenTable) -> np.ndarray:
    """P_y[tau_K < inf] = sum_z G(y, z) e_K(z), by last-exit decomposition."""
    return green_matrix(table, points, eq.K.coords) @ eq.e


def escape_probability(
    y: Point, K: SiteSet, eq: Optional[EquilibriumData] = None, table: Optional[GreenTable] = None
) -> float:
    if y in K:
        raise PotentialError("interior start point")
    table = table or green_table(K.dim)
    eq = eq or equilibrium_measure(K, table)
    p = 1.0 - _return_probabilities(np.asarray([y]), eq, table)
    return float(_clip_escape(p)[0])


def escape_table(
    cfg: Configuration,
    eq: Optional[EquilibriumData] = None,
    table: Optional[GreenTable] = None,
    force_escape: bool = False,
) -> EscapeTable:
    """
    p_y for every y on the external boundary of V_R and q = min p.

    `force_escape` is the diagnostic mode in which every walk escapes (p = 1, q = 1).
    """
    table = table or green_table(cfg.d)
    eq = eq or equilibrium_measure(cfg.K, table)
    if force_escape:
        p = np.ones(len(cfg.beVR))
    else:
        p = _clip_escape(1.0 - _return_probabilities(cfg.beVR.coords, eq, table))
    q = float(p.min())
    regime_ok = q >= 0.5
    if not regime_ok:
        logger.warning(f"q = {q:.4f} < 1/2: scene is outside the regime of the decoupling bounds")
    logger.info(f"Escape table: |beVR|={len(p)} q={q:.6f} 1-q={1 - q:.3e}")
    return EscapeTable(K=cfg.K, boundary=cfg.beVR, p=p, q=q, regime_ok=regime_ok, forced=force_escape)


# --- Hitting kernel and transition density ---

def _unconditional_hits(points: np.ndarray, K: SiteSet, factor, table: GreenTable) -> np.ndarray:
    """
    Rows P_y[X_{tau_K} = x, tau_K < inf], from the first-entry decomposition
    G(y, x') = sum_x P_y[X_{tau_K} = x, tau_K < inf] G(x, x') for x' in K.
    """
    out = np.empty((points.shape[0], len(K)), dtype=np.float64)
    step = max(1, MATRIX_CHUNK_ROWS // max(1, len(K)))
    for start in range(0, points.shape[0], step):
        block = points[start:start + step]
        GKy = green_matrix(table, K.coords, block)
        out[start:start + step] = linalg.cho_solve(factor, GKy).T
    return out


def _condition_hits(hits: np.ndarray, support: np.ndarray) -> np.ndarray:
    hits = clamp_probabilities(hits[:, support], "hitting probability")
    mass = hits.sum(axis=1, keepdims=True)
    if np.any(mass <= 0):
        raise PotentialError("zero return probability: conditional entry law undefined")
    return hits / mass


def hitting_distribution(
    y: Point, cfg: Configuration, eq: Optional[EquilibriumData] = None, table: Optional[GreenTable] = None
) -> np.ndarray:
    """Conditional entry law P_y[X_{tau_K} = . | tau_K < inf] over the support of hbar."""
    if y in cfg.K:
        raise PotentialError("interior start point")
    table = table or green_table(cfg.d)
    eq = eq or equilibrium_measure(cfg.K, table)
    _, factor, _ = _green_factor(cfg.K, table)
    support = np.flatnonzero(eq.hbar > 0)
    hits = _unconditional_hits(np.asarray([y], dtype=np.int64), cfg.K, factor, table)
    return _condition_hits(hits, support)[0]


def transition_density(y: Point, x: Point, tables: SceneTables) -> float:
    """g(y, x) = hit(y, x) / hbar(x) for y on the external boundary of V_R and x in K."""
    cfg = tables.cfg
    k = cfg.K.index.get(tuple(int(c) for c in x))
    if k is None:
        raise PotentialError(f"{x} is not a site of K")
    col = np.flatnonzero(tables.kernels.support == k)
    if not col.size:
        raise PotentialError("null harmonic mass")
    row = cfg.beVR.index.get(tuple(int(c) for c in y))
    if row is None:
        raise PotentialError(f"{y} is not on the external boundary of V_R")
    return float(tables.kernels.g[row, col[0]])


# --- Exit distribution on the ball ---

class BallExitSolver:
    """
    Exit law of simple random walk from B_R(0) onto its external boundary, by a sparse
    LU of I - P on the ball. The walk is symmetric, so the solution column for a start
    x is the ball Green's function G_B(x, .).
    """

    def __init__(self, xhat_norm_sq: int, d: int):
        self.d = d
        self.ball = scene_ball(xhat_norm_sq, d)
        self.shell = scene_shell(xhat_norm_sq, d)
        moves = unit_moves(d)
        n = len(self.ball)
        nbrs = self.ball.ordinals_of(
            (self.ball.coords[:, None, :] + moves[None, :, :]).reshape(-1, d)
        ).reshape(n, -1)
        rows, cols = np.nonzero(nbrs >= 0)
        step = sparse.coo_matrix(
            (np.full(rows.shape[0], 1.0 / (2 * d)), (rows, nbrs[rows, cols])), shape=(n, n)
        )
        self.lu = splu((sparse.identity(n, format="csc") - step.tocsc()).tocsc())
        shell_nbrs = self.ball.ordinals_of(
            (self.shell.coords[:, None, :] + moves[None, :, :]).reshape(-1, d)
        ).reshape(len(self.shell), -1)
        srows, scols = np.nonzero(shell_nbrs >= 0)
        self.into_shell = sparse.csr_matrix(
            (np.full(srows.shape[0], 1.0 / (2 * d)), (srows, shell_nbrs[srows, scols])),
            shape=(len(self.shell), n),
        )
        logger.info(f"Ball exit solver: |B|={n} |shell|={len(self.shell)}")

    def exit_rows(self, starts: np.ndarray) -> np.ndarray:
        """(len(starts), |shell|) exit probabilities for starts given relative to the ball centre."""
        ords = self.ball.ordinals_of(starts)
        if np.any(ords < 0):
            raise PotentialError("start point outside V_R")
        rhs = np.zeros((len(self.ball), ords.shape[0]))
        rhs[ords, np.arange(ords.shape[0])] = 1.0
        return np.asarray(self.into_shell @ self.lu.solve(rhs)).T


def monte_carlo_exit_counts(
    start: np.ndarray, n_walks: int, xhat_norm_sq: int, shell: SiteSet, rng: np.random.Generator
) -> np.ndarray:
    """Exit-site counts of `n_walks` walks from `start` (relative to the ball centre)."""
    d = shell.dim
    moves = unit_moves(d)
    pos = np.tile(np.asarray(start, dtype=np.int64), (n_walks, 1))
    counts = np.zeros(len(shell), dtype=np.int64)
    while pos.shape[0]:
        pos = pos + moves[rng.integers(0, 2 * d, size=pos.shape[0])]
        inside = scene_ball_mask((pos * pos).sum(axis=1), xhat_norm_sq)
        if not inside.all():
            np.add.at(counts, shell.ordinals_of(pos[~inside]), 1)
            pos = pos[inside]
    return counts


def _ball_of(point: np.ndarray, cfg: Configuration) -> int:
    """0 for B_R^1, 1 for B_R^2; PotentialError outside V_R."""
    shifted = np.vstack([point, point - np.asarray(cfg.xhat)])
    inside = scene_ball_mask((shifted * shifted).sum(axis=1), cfg.xhat_norm_sq)
    if inside[0]:
        return 0
    if inside[1]:
        return 1
    raise PotentialError("start point outside V_R")


def exit_distribution(
    x: Point,
    cfg: Configuration,
    solver: Optional[BallExitSolver] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Exit law onto the external boundary of V_R, in beVR's enumeration, of the walk from x in V_R.

    Exact while the ball fits MAX_EXACT_BALL_SITES, otherwise a Monte Carlo estimate
    from MC_EXIT_SAMPLES walks (which then requires `rng`).
    """
    point = np.asarray(x, dtype=np.int64)
    which = _ball_of(point, cfg)
    rel = point - which * np.asarray(cfg.xhat)
    shell_cols = cfg.beVR.ordinals_of(
        scene_shell(cfg.xhat_norm_sq, cfg.d).coords + which * np.asarray(cfg.xhat)
    )
    out = np.zeros(len(cfg.beVR))
    if solver is None and scene_ball_size(cfg.xhat_norm_sq, cfg.d) <= MAX_EXACT_BALL_SITES:
        solver = BallExitSolver(cfg.xhat_norm_sq, cfg.d)
    if solver is not None:
        out[shell_cols] = solver.exit_rows(rel[None, :])[0]
    else:
        if rng is None:
            raise PotentialError("Monte Carlo exit law needs a random stream")
        shell = scene_shell(cfg.xhat_norm_sq, cfg.d)
        out[shell_cols] = monte_carlo_exit_counts(rel, MC_EXIT_SAMPLES, cfg.xhat_norm_sq, shell, rng) / MC_EXIT_SAMPLES
    return out


def _exit_kernel(
    cfg: Configuration, support: np.ndarray, rng: Optional[np.random.Generator]
) -> Tuple[np.ndarray, Optional[np.ndarray], str]:
    """Exit rows for the support sites. K2 rows are translates of K1 rows."""
    shell1 = scene_shell(cfg.xhat_norm_sq, cfg.d)
    cols = [cfg.beVR.ordinals_of(shell1.coords), cfg.beVR.ordinals_of(shell1.coords + np.asarray(cfg.xhat))]
    starts = cfg.K.coords[support]
    which = np.array([_ball_of(s, cfg) for s in starts], dtype=np.int64)
    rel = starts - which[:, None] * np.asarray(cfg.xhat)[None, :]
    uniq, inv = np.unique(rel, axis=0, return_inverse=True)
    inv = inv.reshape(-1)

    exact = scene_ball_size(cfg.xhat_norm_sq, cfg.d) <= MAX_EXACT_BALL_SITES
    se = None
    if exact:
        rows = BallExitSolver(cfg.xhat_norm_sq, cfg.d).exit_rows(uniq)
        method = "exact"
    else:
        if rng is None:
            raise PotentialError("Monte Carlo exit kernel needs a random stream")
        per_site = max(MC_EXIT_MIN_PER_SITE, MC_EXIT_SAMPLES // uniq.shape[0])
        logger.warning(
            f"Ball too large for exact solves; estimating exit kernel by Monte Carlo "
            f"({per_site} walks from each of {uniq.shape[0]} start sites)"
        )
        rows = np.vstack([
            monte_carlo_exit_counts(s, per_site, cfg.xhat_norm_sq, shell1, rng) / per_site for s in uniq
        ])
        se_rows = np.sqrt(rows * (1 - rows) / per_site)
        method = "monte_carlo"

    exit_k = np.zeros((support.shape[0], len(cfg.beVR)))
    if method == "monte_carlo":
        se = np.zeros_like(exit_k)
    for i, (u_idx, b) in enumerate(zip(inv, which)):
        exit_k[i, cols[b]] = rows[u_idx]
        if se is not None:
            se[i, cols[b]] = se_rows[u_idx]
    worst = float(np.abs(exit_k.sum(axis=1) - 1).max())
    if worst > KERNEL_ROW_TOL:
        raise PotentialError(f"exit kernel rows do not sum to 1 (deviation {worst:.3e})")
    return exit_k, se, method


# --- Exact expected excursion counts ---

def excursion_means(escape: EscapeTable, kernels: KernelTable, hbar_support: np.ndarray) -> Tuple[float, float]:
    """
    (E[T_1], E[T_direct]) from the absorbing chain over start sites.

    With M[x, x'] = sum_y exit(x, y) (1 - p_y) hit(y, x') and W = (I - M)^-1 1,
    an unconditioned trajectory makes hbar . W excursions and a possibly-returning
    one 1 + hbar . M W / (1 - q).
    """
    ret = 1.0 - escape.p
    M = kernels.exit @ (ret[:, None] * kernels.hit)
    W = linalg.solve(np.eye(M.shape[0]) - M, np.ones(M.shape[0]))
    mean_direct = float(hbar_support @ W)
    if escape.q >= 1.0:
        return 1.0, mean_direct
    return 1.0 + float(hbar_support @ (M @ W)) / (1.0 - escape.q), mean_direct


def mean_trajectory_excursions(tables: SceneTables) -> float:
    return tables.mean_T_direct


def build_scene_tables(
    cfg: Configuration,
    rng: Optional[np.random.Generator] = None,
    force_escape: bool = False,
    with_exit: bool = True,
) -> SceneTables:
    """
    Builds every table a replica needs for the scene, once, single-threaded.

    `with_exit=False` skips the exit kernel and the excursion means; the lemma checks
    only need the escape and hitting tables.
    """
    table = green_table(cfg.d)
    eq = equilibrium_measure(cfg.K, table)
    eq_K1 = equilibrium_measure(cfg.K1, table)
    logger.info(f"cap(K)={eq.cap:.6f} cap(K1)={eq_K1.cap:.6f} residual={eq.residual:.2e}")
    escape = escape_table(cfg, eq, table, force_escape=force_escape)

    support = np.flatnonzero(eq.hbar > 0)
    _, factor, _ = _green_factor(cfg.K, table)
    raw_hits = _unconditional_hits(cfg.beVR.coords, cfg.K, factor, table)
    if not force_escape:
        drift = float(np.abs(raw_hits.sum(axis=1) - (1.0 - escape.p)).max())
        if drift > KERNEL_ROW_TOL:
            logger.warning(f"Return mass and 1 - p disagree by {drift:.3e}")
    hit = _condition_hits(raw_hits, support)
    g = hit / eq.hbar[support][None, :]

    if with_exit:
        exit_k, exit_se, method = _exit_kernel(cfg, support, rng)
    else:
        exit_k, exit_se, method = None, None, "skipped"
    kernels = KernelTable(support=support, exit=exit_k, exit_se=exit_se, exit_method=method, hit=hit, g=g)
    if with_exit:
        mean_T1, mean_T_direct = excursion_means(escape, kernels, eq.hbar[support])
    else:
        mean_T1 = mean_T_direct = float("nan")
    theta = cfg.u * eq.cap
    mean_theta = (1.0 - escape.q) * theta * mean_T1
    tables = SceneTables(
        cfg=cfg,
        eq=eq,
        eq_K1=eq_K1,
        escape=escape,
        kernels=kernels,
        mean_T1=mean_T1,
        mean_T_direct=mean_T_direct,
        mean_theta=mean_theta,
        mean_total=mean_theta + escape.q * theta,
        green_a_d=table.tail_coef[0],
        green_a_d_closed_form=table.a_d_closed_form,
    )
    logger.info(
        f"Scene tables: |support|={len(support)} exit={method} E[T1]={mean_T1:.6f} "
        f"E[T_direct]={mean_T_direct:.6f} E[N]={tables.mean_total:.6f}"
    )
    return tables


# --- Diagnostics used by the lemma checks ---

def sup_density_deviation(kernels: KernelTable) -> float:
    """sup over (y, x) of |g(y, x) - 1|."""
    return float(np.abs(kernels.g - 1.0).max())


def harmonic_measure_margin(eq: EquilibriumData, eq_K1: EquilibriumData) -> np.ndarray:
    """hbar_K(y) - hbar_K1(y)/4 at every y on the internal boundary of K1."""
    bK1 = internal_boundary(eq_K1.K)
    k1_idx = eq_K1.K.ordinals_of(bK1.coords)
    k_idx = eq.K.ordinals_of(bK1.coords)
    return eq.hbar[k_idx] - eq_K1.hbar[k1_idx] / 4.0


def potential_rows(tables: SceneTables) -> List[dict]:
    """Rows (kind, site, value) for the potential CSV export."""
    cfg = tables.cfg

    def site(coords) -> str:
        return " ".join(str(int(c)) for c in coords)

    rows = [{"kind": "e", "site": site(x), "value": float(v)} for x, v in zip(cfg.K.coords, tables.eq.e)]
    rows += [{"kind": "hbar", "site": site(x), "value": float(v)} for x, v in zip(cfg.K.coords, tables.eq.hbar)]
    rows += [{"kind": "p", "site": site(y), "value": float(v)} for y, v in zip(cfg.beVR.coords, tables.escape.p)]
    rows += [
        {"kind": "g_sup_dev", "site": site(y), "value": float(v)}
        for y, v in zip(cfg.beVR.coords, np.abs(tables.kernels.g - 1.0).max(axis=1))
    ]
    rows += [
        {"kind": "cap", "site": "", "value": tables.eq.cap},
        {"kind": "q", "site": "", "value": tables.escape.q},
        {"kind": "E_T1", "site": "", "value": tables.mean_T1},
        {"kind": "E_N", "site": "", "value": tables.mean_total},
        {"kind": "a_d", "site": "", "value": tables.green_a_d},
    ]
    return rows
