# models/potential.py
from typing import Dict, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from models.lattice import Configuration, SiteSet


class GreenTable(BaseModel):
    """
    Tabulated lattice Green's function G(0, x) of simple random walk.

    Values are keyed by the canonical displacement (absolute values, sorted), so
    the table is closed under coordinate permutations and sign flips. Beyond
    `cutoff` the calibrated tail a + (b0 + b1 * s(x)) / |x|^2, times |x|^(2-d), is used,
    where s(x) = sum x_i^4 / |x|^4.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    d: int
    cutoff: float
    quadrature_limit: int = Field(..., description="Max subintervals of the adaptive quadrature.")
    values: Dict[Tuple[int, ...], float] = Field(default_factory=dict)
    tail_coef: Optional[Tuple[float, float, float]] = Field(
        None, description="(a_d, b0, b1), fitted on the cutoff shell."
    )
    a_d_closed_form: float
    tail_fit_residual: Optional[float] = Field(
        None, description="Max relative deviation of the fitted tail on the calibration shell."
    )


class EquilibriumData(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    K: SiteSet
    e: np.ndarray = Field(..., description="Equilibrium measure e_K in K's enumeration.")
    cap: float
    hbar: np.ndarray = Field(..., description="Harmonic measure e_K / cap.")
    residual: float = Field(..., description="max_x |sum_y G(x,y) e(y) - 1|.")
    condition: float = Field(..., description="2-norm condition number of the Green matrix of K.")


class EscapeTable(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    K: SiteSet
    boundary: SiteSet = Field(..., description="The external boundary of V_R.")
    p: np.ndarray = Field(..., description="p_y = P_y[tau_K = inf], in boundary's enumeration.")
    q: float
    regime_ok: bool = Field(..., description="q >= 1/2.")
    forced: bool = Field(False, description="Diagnostic mode with p forced to 1.")


class KernelTable(BaseModel):
    """
    Excursion kernels restricted to the support of the harmonic measure.

    Rows of `exit` are indexed by `support` (ordinals into K) and columns by the
    external boundary of V_R; `hit` and `g` have the transposed shape.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    support: np.ndarray = Field(..., description="Ordinals in K of the sites with hbar > 0.")
    exit: Optional[np.ndarray] = Field(None, description="Absent when the tables were built without exit laws.")
    exit_se: Optional[np.ndarray] = Field(
        None, description="Standard errors of `exit` when it is a Monte Carlo estimate."
    )
    exit_method: Literal["exact", "monte_carlo", "skipped"]
    hit: np.ndarray = Field(..., description="P_y[X_{tau_K} = x | tau_K < inf].")
    g: np.ndarray = Field(..., description="Transition density hit(y, x) / hbar(x).")


class SceneTables(BaseModel):
    """Everything a replica needs: scene, potential tables and exact excursion counts."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    cfg: Configuration
    eq: EquilibriumData
    eq_K1: EquilibriumData
    escape: EscapeTable
    kernels: KernelTable
    mean_T1: float = Field(..., description="E[T_1], excursions of a possibly-returning trajectory.")
    mean_T_direct: float = Field(..., description="Excursions of one unconditioned trajectory.")
    mean_total: float = Field(..., description="E[N] = E[Theta] + q u cap(K).")
    mean_theta: float = Field(..., description="E[Theta] = (1 - q) u cap(K) E[T_1].")
    green_a_d: float
    green_a_d_closed_form: float

    @property
    def theta(self) -> float:
        """u * cap(K)."""
        return self.cfg.u * self.eq.cap

    @property
    def hbar_support(self) -> np.ndarray:
        return self.eq.hbar[self.kernels.support]

    def with_level(self, u: float) -> "SceneTables":
        """Same scene at another level; only the u-linear means change."""
        scale = u / self.cfg.u if self.cfg.u > 0 else None
        if scale is None:
            theta = u * self.eq.cap
            q = self.escape.q
            mean_theta = (1 - q) * theta * self.mean_T1
            mean_total = mean_theta + q * theta
        else:
            mean_theta = self.mean_theta * scale
            mean_total = self.mean_total * scale
        return self.model_copy(
            update={"cfg": self.cfg.with_level(u), "mean_theta": mean_theta, "mean_total": mean_total}
        )
