# models/reports.py
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import EXACT_HISTOGRAM_MAX_SITES
from models.samples import CouplingSummary


class TraceHistogram(BaseModel):
    """Counts of trace bitmasks over all 2^n_sites subsets of an ordered site set."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    n_sites: int = Field(..., ge=0, le=EXACT_HISTOGRAM_MAX_SITES)
    counts: np.ndarray
    total: int

    @model_validator(mode="after")
    def _check_counts(self):
        if self.counts.shape != (1 << self.n_sites,):
            raise ValueError(f"expected {1 << self.n_sites} outcomes, got {self.counts.shape}")
        if int(self.counts.sum()) != self.total:
            raise ValueError(f"counts sum to {int(self.counts.sum())}, total is {self.total}")
        return self

    @classmethod
    def from_masks(cls, masks, n_sites: int) -> "TraceHistogram":
        masks = np.asarray(list(masks), dtype=np.int64)
        counts = np.bincount(masks, minlength=1 << n_sites) if masks.size else np.zeros(1 << n_sites, np.int64)
        return cls(n_sites=n_sites, counts=counts, total=int(masks.size))

    def frequencies(self) -> np.ndarray:
        return self.counts / self.total


class TvEstimate(BaseModel):
    tv: float
    ci_low: float
    ci_high: float
    se: float = Field(..., description="Bootstrap standard deviation.")


class TraceTvReport(BaseModel):
    """Empirical TV between standalone trace laws next to the coupled failure frequency."""
    dist: float
    replicas: int
    tv: TvEstimate
    coupling: CouplingSummary
    margin: float
    consistent: bool = Field(..., description="tv <= phat + margin.")


class CovarianceReport(BaseModel):
    dist: float
    replicas: int
    cov: float
    ci_low: float
    ci_high: float
    ns_cov: float
    ns_ci_low: float
    ns_ci_high: float
    shape_new: float = Field(..., description="sqrt(u) cap(K1)^(3/2) / dist^(d-2), constants dropped.")
    shape_old: float = Field(..., description="u cap(K1)^2 / dist^(d-2), constants dropped.")


class ConsistencyReport(BaseModel):
    """|cov| <= 3 (tv + margin) over every extremal pair of 0/1 truth tables."""
    dist: float
    replicas: int
    tv: TvEstimate
    margin: float
    pairs: int
    max_abs_cov: float
    violations: List[Tuple[int, int]] = Field(default_factory=list, description="(f1 index, f2 index).")

    @property
    def holds(self) -> bool:
        return not self.violations


class LemmaRung(BaseModel):
    R: float
    dist: float
    q: float
    one_minus_q: float
    escape_ratio: float
    regime_ok: bool
    sup_g_dev: float
    harmonic_margin: float = Field(..., description="min over the boundary of K1 of hbar_K - hbar_K1/4.")
    inv_sqrt_moment: float
    inv_sqrt_shape: float
    inv_cube_moment: float
    p_n1_no_n22: float
    p_n1_no_n22_bound: float
    decoupling_shape: float


class FitResult(BaseModel):
    slope: float
    intercept: float
    slope_ci: Tuple[float, float]
    residuals: List[float] = Field(default_factory=list)
    points: int


class LemmaReport(BaseModel):
    rungs: List[LemmaRung]
    escape_fit: Optional[FitResult] = Field(None, description="log(1 - q) against log R.")
    density_fit: Optional[FitResult] = Field(None, description="log sup|g - 1| against log R.")
    density_decreasing: bool
    margins_nonnegative: bool


class RungResult(BaseModel):
    x: float
    phat: float
    ci_low: float
    ci_high: float
    failures: int
    replicas: int
    censored: bool


class ScalingReport(BaseModel):
    """Failure frequency along one ladder and the log-log fit over its uncensored rungs."""
    kind: Literal["distance", "level", "capacity"]
    ladder: List[RungResult]
    fit: Optional[FitResult] = None
    buckets: Dict[str, Dict[str, int]] = Field(default_factory=dict, description="Decomposition per rung.")

    @model_validator(mode="after")
    def _check_sorted(self):
        xs = [r.x for r in self.ladder]
        if xs != sorted(xs):
            raise ValueError("ladder must be sorted by its abscissa")
        return self

    @property
    def fitted_slope(self) -> float:
        return self.fit.slope if self.fit else float("nan")
