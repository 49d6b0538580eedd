# utils/excursion_utils.py
import hashlib
import logging
import os
import struct
from typing import Iterable, List, Optional

import numpy as np

from config import STEP_CHUNK_MIN, VALIDATE_FRACTION
from models.excursion import Excursion, Trace
from models.lattice import Configuration, Point, SiteSet
from models.potential import SceneTables
from utils.lattice_utils import scene_ball_mask, unit_moves
from utils.rng_utils import ReplicaStreams, RngStream

logger = logging.getLogger(__name__)


class ExcursionError(ValueError):
    """Raised for invalid start points and for paths that break the excursion invariants."""


def _validate_all() -> bool:
    return os.getenv("NOODLESOUP_VALIDATE_ALL", "").lower() in ("1", "true", "yes")


def _walk(start: np.ndarray, center: np.ndarray, xhat_norm_sq: int, rng: RngStream) -> np.ndarray:
    """Walk from `start` until the first site outside the ball around `center`; returns the path."""
    d = start.shape[0]
    moves = unit_moves(d)
    chunk = max(STEP_CHUNK_MIN, xhat_norm_sq // 4)
    pieces = [start[None, :]]
    pos = start
    while True:
        seg = pos + np.cumsum(moves[rng.integers(0, 2 * d, size=chunk)], axis=0)
        rel = seg - center
        outside = np.flatnonzero(~scene_ball_mask((rel * rel).sum(axis=1), xhat_norm_sq))
        if outside.size:
            pieces.append(seg[: outside[0] + 1])
            return np.vstack(pieces)
        pieces.append(seg)
        pos = seg[-1]
        chunk *= 2


def path_digest(path: np.ndarray) -> int:
    raw = np.ascontiguousarray(path, dtype=np.int64).tobytes()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def visit_mask(path: np.ndarray, K: SiteSet) -> int:
    ords = K.ordinals_of(path)
    mask = 0
    for o in np.unique(ords[ords >= 0]):
        mask |= 1 << int(o)
    return mask


def validate_excursion(path: np.ndarray, cfg: Configuration) -> None:
    if path.shape[0] < 2:
        raise ExcursionError("excursion has no steps")
    if np.any(np.abs(np.diff(path, axis=0)).sum(axis=1) != 1):
        raise ExcursionError("consecutive path points are not nearest neighbours")
    if not cfg.bK.contains_array(path[:1])[0]:
        raise ExcursionError("excursion does not start on the internal boundary of K")
    if not cfg.beVR.contains_array(path[-1:])[0]:
        raise ExcursionError("excursion does not end on the external boundary of V_R")
    if np.any(cfg.beVR.contains_array(path[:-1])):
        raise ExcursionError("excursion visits the external boundary of V_R before its end")


def sample_excursion(start: Point, cfg: Configuration, rng: RngStream, lean: bool = False) -> Excursion:
    """Simple random walk from `start` stopped at its first visit of the external boundary of V_R."""
    start = tuple(int(c) for c in start)
    start_ord = cfg.K.index.get(start)
    if start_ord is None or start not in cfg.bK:
        raise ExcursionError(f"start point {start} is not on the internal boundary of K")
    center = np.asarray(cfg.xhat if start in cfg.K2 else (0,) * cfg.d, dtype=np.int64)
    path = _walk(np.asarray(start, dtype=np.int64), center, cfg.xhat_norm_sq, rng)
    digest = path_digest(path)
    if _validate_all() or digest % VALIDATE_FRACTION == 0:
        validate_excursion(path, cfg)
    end = tuple(int(c) for c in path[-1])
    return Excursion(
        start=start,
        end=end,
        start_ord=start_ord,
        end_ord=int(cfg.beVR.ordinals_of(path[-1:])[0]),
        length=path.shape[0] - 1,
        digest=digest,
        kmask=visit_mask(path, cfg.K),
        path=None if lean else path,
    )


def harmonic_draw(tables: SceneTables, rng: RngStream) -> int:
    """Ordinal in K of a site drawn from the harmonic measure, by CDF inversion over its support."""
    return int(tables.kernels.support[rng.choice_cdf(np.cumsum(tables.hbar_support))])


def sample_from_harmonic(tables: SceneTables, rng: RngStream) -> Point:
    return tables.cfg.K.sites[harmonic_draw(tables, rng)]


def direct_trajectory(tables: SceneTables, streams: ReplicaStreams, lean: bool = False) -> List[Excursion]:
    """
    Excursions of one unconditioned trajectory: start from the harmonic measure, and after
    each excursion ending at y escape with probability p_y or re-enter K by the exact hitting law.
    """
    cfg = tables.cfg
    rng = streams["direct"]
    support = tables.kernels.support
    x = harmonic_draw(tables, rng)
    out: List[Excursion] = []
    while True:
        exc = sample_excursion(cfg.K.sites[x], cfg, streams["paths"], lean)
        out.append(exc)
        if rng.random() < tables.escape.p[exc.end_ord]:
            return out
        x = int(support[rng.choice_cdf(np.cumsum(tables.kernels.hit[exc.end_ord]))])


def trace(excursions: Iterable[Excursion], K: SiteSet) -> Trace:
    occupied = 0
    for exc in excursions:
        occupied |= exc.kmask
    return Trace(n_sites=len(K), occupied=occupied)


# --- Codecs ---

_HEADER = struct.Struct("<BI")  # dimension, length


def encode_excursion(exc: Excursion, d: int) -> bytes:
    """Compact record: dimension, length, start coordinates, then one 4-bit move code per step."""
    if exc.path is None:
        raise ExcursionError("memory-lean excursions carry no path to encode")
    steps = np.diff(exc.path, axis=0)
    moves = unit_moves(d)
    codes = np.argmax((steps[:, None, :] == moves[None, :, :]).all(axis=2), axis=1).astype(np.uint8)
    if codes.shape[0] % 2:
        codes = np.append(codes, np.uint8(0))
    packed = (codes[0::2] | (codes[1::2] << 4)).astype(np.uint8)
    start = struct.pack(f"<{d}q", *exc.start)
    return _HEADER.pack(d, exc.length) + start + packed.tobytes()


def decode_excursion(record: bytes, cfg: Configuration) -> Excursion:
    d, length = _HEADER.unpack_from(record, 0)
    offset = _HEADER.size
    start = np.array(struct.unpack_from(f"<{d}q", record, offset), dtype=np.int64)
    offset += 8 * d
    packed = np.frombuffer(record, dtype=np.uint8, offset=offset)
    codes = np.empty(packed.shape[0] * 2, dtype=np.uint8)
    codes[0::2] = packed & 0x0F
    codes[1::2] = packed >> 4
    path = np.vstack([start[None, :], start + np.cumsum(unit_moves(d)[codes[:length]], axis=0)])
    validate_excursion(path, cfg)
    return Excursion(
        start=tuple(int(c) for c in path[0]),
        end=tuple(int(c) for c in path[-1]),
        start_ord=int(cfg.K.ordinals_of(path[:1])[0]),
        end_ord=int(cfg.beVR.ordinals_of(path[-1:])[0]),
        length=length,
        digest=path_digest(path),
        kmask=visit_mask(path, cfg.K),
        path=path,
    )


def excursion_rows(excursions: Iterable[Excursion], label: str = "") -> List[dict]:
    """Human-readable CSV rows, one per excursion."""
    rows = []
    for i, exc in enumerate(excursions):
        rows.append({
            "label": label,
            "index": i,
            "start": " ".join(map(str, exc.start)),
            "end": " ".join(map(str, exc.end)),
            "length": exc.length,
            "digest": f"{exc.digest:016x}",
            "kmask": f"{exc.kmask:x}",
            "path": "" if exc.path is None else ";".join(" ".join(map(str, p)) for p in exc.path.tolist()),
        })
    return rows
