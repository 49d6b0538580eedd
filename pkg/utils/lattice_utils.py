# utils/lattice_utils.py
import logging
import math
from fractions import Fraction
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from config import DEFAULT_DIMENSION, MAX_EXACT_BALL_SITES, XHAT_SEARCH_WIDTH
from models.lattice import Configuration, Point, SiteSet

logger = logging.getLogger(__name__)


class SceneValidationError(ValueError):
    """Raised when a site set or scene violates one of its invariants."""


def unit_moves(d: int) -> np.ndarray:
    """The 2d nearest-neighbour moves: +e_1, -e_1, +e_2, -e_2, ..."""
    moves = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        moves[2 * i, i] = 1
        moves[2 * i + 1, i] = -1
    return moves


def set_distance(A: SiteSet, B: SiteSet) -> float:
    if not len(A) or not len(B):
        raise SceneValidationError("empty set")
    return float(cdist(A.coords, B.coords).min())


def set_diameter(A: SiteSet) -> float:
    if not len(A):
        raise SceneValidationError("empty set")
    if len(A) == 1:
        return 0.0
    return float(pdist(A.coords).max())


def _neighbour_ordinals(A: SiteSet, points: np.ndarray) -> np.ndarray:
    """(n, 2d) membership of the neighbours of every point in A."""
    moves = unit_moves(A.dim)
    nbrs = points[:, None, :] + moves[None, :, :]
    return A.contains_array(nbrs.reshape(-1, A.dim)).reshape(points.shape[0], -1)


def internal_boundary(A: SiteSet) -> SiteSet:
    if not len(A):
        return A
    inside = _neighbour_ordinals(A, A.coords)
    return SiteSet(dim=A.dim, coords=A.coords[~inside.all(axis=1)])


def external_boundary(A: SiteSet) -> SiteSet:
    if not len(A):
        return A
    moves = unit_moves(A.dim)
    candidates = (A.coords[:, None, :] + moves[None, :, :]).reshape(-1, A.dim)
    candidates = candidates[~A.contains_array(candidates)]
    return SiteSet(dim=A.dim, coords=candidates)


def _grid(bound: int, dims: int) -> np.ndarray:
    """All integer vectors of length `dims` with entries in [-bound, bound], as (n, dims)."""
    axis = np.arange(-bound, bound + 1, dtype=np.int64)
    mesh = np.meshgrid(*([axis] * dims), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def ball(center: Point, radius: Union[int, float, Fraction]) -> SiteSet:
    """Open discrete ball {x : |x - center| < radius}, decided exactly on squared norms."""
    if radius <= 0:
        raise SceneValidationError(f"ball radius must be positive, got {radius}")
    r2 = Fraction(radius) ** 2
    d = len(center)
    bound = math.ceil(radius)
    pts = _grid(bound, d)
    sq = (pts * pts).sum(axis=1)
    # sq < r2 with r2 = p/q exactly  <=>  sq * q < p
    keep = sq * r2.denominator < r2.numerator
    return SiteSet(dim=d, coords=pts[keep] + np.asarray(center, dtype=np.int64))


def scene_ball_mask(sqnorms: np.ndarray, xhat_norm_sq: int) -> np.ndarray:
    """
    Exact test |x| < R for R = (sqrt(n) - 1)/2 given m = |x|^2 and n = |xhat|^2.

    |x| < R  <=>  4*sqrt(m) < n - 4m - 1  <=>  n - 4m - 1 > 0 and 16m < (n - 4m - 1)^2.
    """
    m = np.asarray(sqnorms, dtype=np.int64)
    gap = xhat_norm_sq - 4 * m - 1
    return (gap > 0) & (16 * m < gap * gap)


def _slice_masks(first: int, bound: int, d: int, xhat_norm_sq: int) -> np.ndarray:
    rest = _grid(bound, d - 1)
    sq = first * first + (rest * rest).sum(axis=1)
    return scene_ball_mask(sq, xhat_norm_sq).reshape((2 * bound + 1,) * (d - 1))


def scene_ball(xhat_norm_sq: int, d: int) -> SiteSet:
    """B_R(0) for the scene radius, enumerated one first-coordinate slice at a time."""
    bound = math.ceil((math.sqrt(xhat_norm_sq) - 1) / 2)
    rest = _grid(bound, d - 1)
    chunks = []
    for a in range(-bound, bound + 1):
        mask = _slice_masks(a, bound, d, xhat_norm_sq).ravel()
        if mask.any():
            sl = rest[mask]
            chunks.append(np.hstack([np.full((sl.shape[0], 1), a, dtype=np.int64), sl]))
    return SiteSet(dim=d, coords=np.vstack(chunks))


def _has_inside_neighbour(mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(mask)
    for ax in range(mask.ndim):
        lead = [slice(None)] * mask.ndim
        trail = [slice(None)] * mask.ndim
        lead[ax] = slice(1, None)
        trail[ax] = slice(None, -1)
        out[tuple(trail)] |= mask[tuple(lead)]
        out[tuple(lead)] |= mask[tuple(trail)]
    return out


def scene_shell(xhat_norm_sq: int, d: int) -> SiteSet:
    """External boundary of B_R(0) without materialising the ball."""
    bound = math.ceil((math.sqrt(xhat_norm_sq) - 1) / 2) + 1
    rest = _grid(bound, d - 1)
    masks = {a: _slice_masks(a, bound, d, xhat_norm_sq) for a in range(-bound - 1, bound + 2)}
    chunks = []
    for a in range(-bound, bound + 1):
        cur = masks[a]
        near = masks[a - 1] | masks[a + 1] | _has_inside_neighbour(cur)
        shell = (near & ~cur).ravel()
        if shell.any():
            sl = rest[shell]
            chunks.append(np.hstack([np.full((sl.shape[0], 1), a, dtype=np.int64), sl]))
    return SiteSet(dim=d, coords=np.vstack(chunks))


def scene_ball_size(xhat_norm_sq: int, d: int) -> int:
    bound = math.ceil((math.sqrt(xhat_norm_sq) - 1) / 2)
    return int(sum(_slice_masks(a, bound, d, xhat_norm_sq).sum() for a in range(-bound, bound + 1)))


def _shells_disjoint(shell1: SiteSet, shell2: SiteSet) -> bool:
    return not np.any(shell2.contains_array(shell1.coords))


def make_configuration(
    K1: SiteSet,
    xhat: Point,
    u: float,
    materialize_ball: Optional[bool] = None,
) -> Configuration:
    """
    Builds the scene and checks every invariant, naming the first one that fails.

    Args:
        K1: finite site set containing the origin.
        xhat: translation vector, K2 = K1 + xhat.
        u: interlacement level (u = 0 is accepted and yields empty processes).
        materialize_ball: force (True) or skip (False) building V_R; by default it is
            built when the ball is small enough for exact solves.
    """
    d = K1.dim
    if d < DEFAULT_DIMENSION:
        raise SceneValidationError(f"dimension d >= 3 required, got d={d}")
    if len(xhat) != d:
        raise SceneValidationError(f"xhat has dimension {len(xhat)}, K1 has dimension {d}")
    if not len(K1):
        raise SceneValidationError("empty set")
    if (0,) * d not in K1:
        raise SceneValidationError("0 in K1 required")
    if u < 0:
        raise SceneValidationError(f"u >= 0 required, got u={u}")

    xhat = tuple(int(c) for c in xhat)
    n = sum(c * c for c in xhat)
    diam = set_diameter(K1)
    norm = math.sqrt(n)
    if norm < 4 * diam + 3:
        raise SceneValidationError(
            f"|xhat| >= 4 diam(K1) + 3 required: |xhat|={norm:.4f} < {4 * diam + 3:.4f}"
        )

    K2 = K1.translate(xhat)
    K = K1.union(K2)
    if len(K) != 2 * len(K1):
        raise SceneValidationError("K1 and K2 must be disjoint")

    R = (norm - 1) / 2
    inside = scene_ball_mask((K1.coords * K1.coords).sum(axis=1), n)
    if not inside.all():
        raise SceneValidationError("K1 subset of B_R^1 required")

    shell1 = scene_shell(n, d)
    shell2 = shell1.translate(xhat)
    if not _shells_disjoint(shell1, shell2):
        raise SceneValidationError("external boundaries of the two balls must be disjoint")
    beVR = shell1.union(shell2)

    dist = set_distance(K1, K2)
    if dist > 3 * R:
        raise SceneValidationError(f"dist(K1, K2) <= 3R required: dist={dist:.4f} > {3 * R:.4f}")

    if materialize_ball is None:
        materialize_ball = scene_ball_size(n, d) <= MAX_EXACT_BALL_SITES
    VR = None
    if materialize_ball:
        b1 = scene_ball(n, d)
        VR = b1.union(b1.translate(xhat))

    cfg = Configuration(
        d=d,
        K1=K1,
        xhat=xhat,
        K2=K2,
        K=K,
        xhat_norm_sq=n,
        R=R,
        delta=max(diam, 1.0) / R,
        u=float(u),
        diam_K1=diam,
        dist=dist,
        bK=internal_boundary(K),
        beVR=beVR,
        VR=VR,
    )
    logger.info(
        f"Scene d={d} |K1|={len(K1)} xhat={xhat} R={R:.3f} delta={cfg.delta:.4f} "
        f"|bK|={len(cfg.bK)} |beVR|={len(beVR)} VR={'yes' if VR is not None else 'lazy'}"
    )
    return cfg


def parse_k1_spec(spec: str, d: int = DEFAULT_DIMENSION) -> SiteSet:
    """
    Parses a K1 description: `singleton`, `ball:<r>` or `sites:x,y,z;x,y,z;...`.
    """
    spec = spec.strip()
    if spec == "singleton":
        return SiteSet.from_points([(0,) * d])
    if spec.startswith("ball:"):
        return ball((0,) * d, Fraction(spec.split(":", 1)[1]))
    if spec.startswith("sites:"):
        body = spec.split(":", 1)[1]
        points = [tuple(int(c) for c in chunk.split(",")) for chunk in body.split(";") if chunk.strip()]
        return SiteSet.from_points(points)
    raise SceneValidationError(f"unknown K1 specification: {spec!r}")


def axis_xhat(norm: int, d: int = DEFAULT_DIMENSION) -> Point:
    return (int(norm),) + (0,) * (d - 1)


def xhat_for_distance(K1: SiteSet, dist: float) -> Point:
    """
    Smallest axis translation with K1-K2 distance at least `dist`, |xhat| >= 4 diam(K1) + 3
    and disjoint external boundaries of the two balls. Even axis norms put the midpoint on both boundaries.
    """
    extent = int(K1.coords[:, 0].max() - K1.coords[:, 0].min())
    start = max(int(math.ceil(dist)) + extent, int(math.ceil(4 * set_diameter(K1) + 3)))
    for norm in range(start, start + XHAT_SEARCH_WIDTH):
        xhat = axis_xhat(norm, K1.dim)
        shell = scene_shell(norm * norm, K1.dim)
        if _shells_disjoint(shell, shell.translate(xhat)):
            if norm != start:
                logger.debug(f"xhat for dist={dist:g}: axis norm {start} -> {norm}")
            return xhat
    raise SceneValidationError(f"no axis translation near {start} keeps the external boundaries disjoint")
