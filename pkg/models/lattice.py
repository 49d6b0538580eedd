# models/lattice.py
from functools import cached_property
from typing import Iterator, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

Point = Tuple[int, ...]


class SiteSet(BaseModel):
    """
    A finite set of lattice sites with a fixed lexicographic enumeration.

    The enumeration is the row order of `coords`; it never changes once the
    set is built, so ordinals can be shared between tables and bitmasks.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dim: int = Field(..., description="Lattice dimension d.")
    coords: np.ndarray = Field(
        ..., description="(n, d) int64 array of sites, lexicographically sorted, no duplicates."
    )

    @model_validator(mode="before")
    @classmethod
    def _canonicalize(cls, data):
        if not isinstance(data, dict):
            return data
        dim = int(data["dim"])
        raw = np.asarray(data.get("coords", ()), dtype=np.int64)
        raw = raw.reshape(-1, dim) if raw.size else np.zeros((0, dim), dtype=np.int64)
        if raw.shape[0]:
            raw = np.unique(raw, axis=0)
        raw.setflags(write=False)
        return {"dim": dim, "coords": raw}

    @classmethod
    def from_points(cls, points, dim: Optional[int] = None) -> "SiteSet":
        points = [tuple(int(c) for c in p) for p in points]
        if dim is None:
            if not points:
                raise ValueError("dimension required for an empty site set")
            dim = len(points[0])
        return cls(dim=dim, coords=np.array(points, dtype=np.int64).reshape(-1, dim))

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    def __iter__(self) -> Iterator[Point]:
        return iter(self.sites)

    def __contains__(self, point) -> bool:
        return tuple(int(c) for c in point) in self.index

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiteSet):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.coords, other.coords)

    def __hash__(self) -> int:
        return hash((self.dim, self.coords.tobytes()))

    @cached_property
    def sites(self) -> Tuple[Point, ...]:
        return tuple(tuple(int(c) for c in row) for row in self.coords)

    @cached_property
    def index(self) -> dict:
        return {site: i for i, site in enumerate(self.sites)}

    @cached_property
    def lookup_grid(self):
        # Dense ordinal grid over the bounding box; -1 marks sites outside the set.
        if not len(self):
            return None
        lo = self.coords.min(axis=0)
        shape = tuple(int(s) for s in self.coords.max(axis=0) - lo + 1)
        grid = np.full(shape, -1, dtype=np.int32)
        grid[tuple((self.coords - lo).T)] = np.arange(len(self))
        return lo, np.array(shape), grid

    def ordinals_of(self, points: np.ndarray) -> np.ndarray:
        """Vectorised lookup: ordinal of every row of `points`, or -1 when absent."""
        points = np.asarray(points, dtype=np.int64).reshape(-1, self.dim)
        out = np.full(points.shape[0], -1, dtype=np.int64)
        if self.lookup_grid is None or not points.shape[0]:
            return out
        lo, shape, grid = self.lookup_grid
        local = points - lo
        ok = np.all((local >= 0) & (local < shape), axis=1)
        if ok.any():
            out[ok] = grid[tuple(local[ok].T)]
        return out

    def contains_array(self, points: np.ndarray) -> np.ndarray:
        return self.ordinals_of(points) >= 0

    def translate(self, vector) -> "SiteSet":
        shift = np.asarray(vector, dtype=np.int64).reshape(1, self.dim)
        return SiteSet(dim=self.dim, coords=self.coords + shift)

    def union(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(dim=self.dim, coords=np.vstack([self.coords, other.coords]))


class Configuration(BaseModel):
    """
    The two-set scene: K1 containing the origin, its translate K2 = K1 + xhat,
    the two balls of radius R = (|xhat| - 1)/2 and the derived boundaries.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d: int = Field(..., description="Lattice dimension, at least 3.")
    K1: SiteSet
    xhat: Point
    K2: SiteSet
    K: SiteSet = Field(..., description="K1 union K2 in the fixed enumeration.")
    xhat_norm_sq: int = Field(..., description="Exact |xhat|^2; ball tests use it in integer arithmetic.")
    R: float = Field(..., description="(|xhat| - 1)/2 in lattice units.")
    delta: float = Field(..., description="(diam(K1) v 1)/R.")
    u: float = Field(..., description="Interlacement level.")
    diam_K1: float
    dist: float = Field(..., description="dist(K1, K2), Euclidean.")
    bK: SiteSet = Field(..., description="Internal boundary of K.")
    beVR: SiteSet = Field(..., description="External boundary of V_R (both balls).")
    VR: Optional[SiteSet] = Field(
        None, description="B_R^1 union B_R^2; materialised only for scenes small enough for exact solves."
    )

    @cached_property
    def k1_ordinals(self) -> np.ndarray:
        """Ordinals in K of the K1 sites, in K1's own enumeration."""
        return self.K.ordinals_of(self.K1.coords)

    @cached_property
    def k2_ordinals(self) -> np.ndarray:
        return self.K.ordinals_of(self.K2.coords)

    def with_level(self, u: float) -> "Configuration":
        return self.model_copy(update={"u": float(u)})
