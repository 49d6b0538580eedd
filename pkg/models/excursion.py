# models/excursion.py
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from models.lattice import Point


class Excursion(BaseModel):
    """
    One nearest-neighbour path from the internal boundary of K to its first visit
    of the external boundary of V_R.

    `path` is dropped in memory-lean mode; the digest, endpoints, length and K-visit
    mask are enough for traces and for multiset comparisons.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    start: Point
    end: Point
    start_ord: int = Field(..., description="Ordinal of `start` in K.")
    end_ord: int = Field(..., description="Ordinal of `end` on the external boundary of V_R.")
    length: int = Field(..., description="Number of steps.")
    digest: int = Field(..., description="64-bit blake2b digest of the path coordinates.")
    kmask: int = Field(..., description="Bitmask over K of the sites the path visits.")
    path: Optional[np.ndarray] = Field(None, description="(length + 1, d) coordinates, or None.")

    @property
    def key(self) -> Tuple[int, int, int, int]:
        return (self.start_ord, self.end_ord, self.length, self.digest)

    def lean(self) -> "Excursion":
        return self if self.path is None else self.model_copy(update={"path": None})


class Trace(BaseModel):
    """Sites of K visited by a collection of excursions, as a bitmask over K's enumeration."""
    model_config = ConfigDict(frozen=True)

    n_sites: int
    occupied: int = 0

    def __or__(self, other: "Trace") -> "Trace":
        return Trace(n_sites=self.n_sites, occupied=self.occupied | other.occupied)

    def __contains__(self, ordinal: int) -> bool:
        return bool((self.occupied >> ordinal) & 1)

    def ordinals(self) -> List[int]:
        return [i for i in range(self.n_sites) if (self.occupied >> i) & 1]

    def pattern(self, ordinals) -> int:
        """Occupation of the given K ordinals packed into bits 0, 1, ... in that order."""
        return sum(((self.occupied >> int(o)) & 1) << i for i, o in enumerate(ordinals))

    def is_empty(self) -> bool:
        return self.occupied == 0
