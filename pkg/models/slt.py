# models/slt.py
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from models.excursion import Excursion


class Mark(BaseModel):
    """A point (start site, level) of the Poisson process; the excursion is attached on consumption."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    site: int = Field(..., description="Ordinal of the start site in K.")
    level: float
    excursion: Optional[Excursion] = None


class TranscriptRow(BaseModel):
    step: int
    site: int
    level: float
    xi: float
    density_id: str


class SltState(BaseModel):
    """
    Lazy realisation of the mark process over the support of the harmonic measure.

    Arrays are indexed by slot, the position of a site in `support`. Marks at each
    slot come from an optional explicit queue (ascending levels) and then from a
    clock, the next undiscovered level of a rate-hbar Poisson process.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    support: np.ndarray = Field(..., description="K ordinals of the slots.")
    rates: np.ndarray = Field(..., description="hbar on the slots.")
    G: np.ndarray = Field(..., description="Accumulated soft local time per slot (extended precision).")
    clocks: np.ndarray = Field(..., description="Next clock level per slot (extended precision).")
    pending: List[List[Mark]] = Field(default_factory=list, description="Explicit marks, descending, per slot.")
    consumed: np.ndarray
    step: int = 0
    history: List[np.ndarray] = Field(default_factory=list, description="G after each step; history[0] = 0.")
    xis: List[float] = Field(default_factory=list)
    marks: List[Mark] = Field(default_factory=list, description="marks[s - 1] was consumed at step s.")
    transcript: List[TranscriptRow] = Field(default_factory=list)
    densities: Dict[str, np.ndarray] = Field(default_factory=dict)

    def slot_of(self, site: int) -> int:
        hits = np.flatnonzero(self.support == site)
        if not hits.size:
            raise KeyError(site)
        return int(hits[0])
