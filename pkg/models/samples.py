# models/samples.py
from collections import Counter
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.excursion import Excursion, Trace
from models.slt import TranscriptRow


class RiSample(BaseModel):
    """The interlacement excursion soup on K: N1 possibly-returning trajectories, then N2 lone excursions."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    N1: int
    T: List[int] = Field(default_factory=list, description="Excursions per possibly-returning trajectory.")
    Theta: int
    N2: int
    Ntot: int
    excursions: List[Excursion] = Field(default_factory=list)
    zeta_used: int = 0
    Gfinal: np.ndarray
    trace: Trace
    transcript: Optional[List[TranscriptRow]] = None

    @model_validator(mode="after")
    def _check_counts(self):
        if self.Theta != sum(self.T) or len(self.T) != self.N1:
            raise ValueError(f"Theta={self.Theta} does not match T={self.T}")
        if any(t < 1 for t in self.T):
            raise ValueError("every trajectory makes at least one excursion")
        if self.Ntot != self.Theta + self.N2 or len(self.excursions) != self.Ntot:
            raise ValueError(
                f"Ntot={self.Ntot} must equal Theta + N2 = {self.Theta + self.N2} "
                f"and the number of excursions ({len(self.excursions)})"
            )
        return self


class NsSample(BaseModel):
    """Noodle soup: a Poisson number of independent excursions with harmonic starts."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    Nprime: int
    excursions: List[Excursion] = Field(default_factory=list)
    trace: Trace
    method: Literal["slt", "direct", "coupled"] = "slt"

    @model_validator(mode="after")
    def _check_counts(self):
        if len(self.excursions) != self.Nprime:
            raise ValueError(f"Nprime={self.Nprime} but {len(self.excursions)} excursions")
        return self


FailureBucket = Literal["success", "Dc", "D_N1_zero", "D_N1_no_N22", "remainder"]


class CouplingRecord(BaseModel):
    """One replica of the coupled pair with the event indicators and diagnostics."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    replica: int
    seed: int
    N1: int
    N1p: int
    N21: int
    N21p: int
    N22: int
    Theta: int
    Xi22: float
    D: bool
    Upsilon: bool
    ri: RiSample
    ns: NsSample
    psi_sup_dev: float = Field(..., description="sup over the support of |Psi - 1|.")
    spread: float = Field(..., description="max - min of the interlacement curve after Theta steps.")
    H: bool = Field(..., description="spread <= Xi22 / 2.")
    bucket: FailureBucket

    @model_validator(mode="after")
    def _check_events(self):
        if self.D != (self.Theta + self.N21 == self.N1p + self.N21p):
            raise ValueError("D must hold exactly when Theta + N21 = N1' + N21'")
        if self.ri.Ntot != self.Theta + self.N21 + self.N22:
            raise ValueError("interlacement count must be Theta + N21 + N22")
        if self.ns.Nprime != self.N1p + self.N21p + self.N22:
            raise ValueError("noodle-soup count must be N1' + N21' + N22")
        if self.Upsilon and excursion_multiset(self.ri.excursions) != excursion_multiset(self.ns.excursions):
            raise ValueError("Upsilon holds but the excursion multisets differ")
        return self

    def outcome(self) -> "CouplingOutcome":
        fields = {name: getattr(self, name) for name in CouplingOutcome.model_fields if hasattr(self, name)}
        return CouplingOutcome(**fields, ri_trace=self.ri.trace.occupied, ns_trace=self.ns.trace.occupied)


def excursion_multiset(excursions: List[Excursion]) -> Counter:
    return Counter(exc.key for exc in excursions)


class CouplingSummary(BaseModel):
    """Aggregate of coupled replicas: coupling failure frequency and its decomposition."""
    replicas: int
    failures: int
    phat: float
    ci_low: float
    ci_high: float
    buckets: Dict[str, int]
    D_failures: int
    H_frequency: float
    psi_sup_dev_median: float
    mean_N1p: float
    mean_Theta: float


class PoissonShiftCoupler(BaseModel):
    """
    Tables for the maximal coupling of Y ~ Poisson(lam) with k + X, X ~ Poisson(lam),
    for every shift |k| <= kmax. `pmf` covers 0..nmax and is renormalised after truncation.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    lam: float
    kmax: int
    nmax: int
    pmf: np.ndarray

    def tables(self, k: int):
        """(values, pmf of Y, pmf of k + X, overlap) on the common value range."""
        lo, hi = min(0, k), self.nmax + max(0, k)
        values = np.arange(lo, hi + 1)
        a = np.zeros(values.shape[0])
        b = np.zeros(values.shape[0])
        a[-lo:-lo + self.nmax + 1] = self.pmf
        b[k - lo:k - lo + self.nmax + 1] = self.pmf
        return values, a, b, np.minimum(a, b)


class CouplingOutcome(BaseModel):
    """The scalar part of a CouplingRecord; what replica runs keep when samples are not dumped."""
    replica: int
    seed: int
    N1: int
    N1p: int
    N21: int
    N21p: int
    N22: int
    Theta: int
    Xi22: float
    D: bool
    Upsilon: bool
    psi_sup_dev: float
    spread: float
    H: bool
    bucket: FailureBucket
    ri_trace: int
    ns_trace: int
