# utils/slt_utils.py
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from models.excursion import Excursion
from models.lattice import SiteSet
from models.potential import SceneTables
from models.slt import Mark, SltState, TranscriptRow
from utils.rng_utils import RngStream

logger = logging.getLogger(__name__)

UNIT_DENSITY = "unit"
LEVEL_RTOL = 1e-9

Attach = Callable[[int], Excursion]


class SltError(ValueError):
    """Raised for degenerate densities and for inconsistent mark surgery."""


def _exponential_levels(rates: np.ndarray, rng: RngStream) -> np.ndarray:
    return np.array([rng.exponential(1.0 / r) for r in rates], dtype=np.longdouble)


def _blank_state(tables: SceneTables, clocks: np.ndarray) -> SltState:
    rates = tables.hbar_support.astype(np.float64)
    n = rates.shape[0]
    zeros = np.zeros(n, dtype=np.longdouble)
    return SltState(
        support=tables.kernels.support.copy(),
        rates=rates,
        G=zeros.copy(),
        clocks=np.asarray(clocks, dtype=np.longdouble),
        pending=[[] for _ in range(n)],
        consumed=np.zeros(n, dtype=np.int64),
        history=[zeros.copy()],
        densities={UNIT_DENSITY: np.ones(n)},
    )


def slt_init(tables: SceneTables, rng: RngStream) -> SltState:
    """Fresh state: G = 0 and the first clock level of each slot drawn Exponential(hbar)."""
    return _blank_state(tables, _exponential_levels(tables.hbar_support, rng))


def slt_from_marks(
    tables: SceneTables,
    marks: Sequence[Mark],
    floors: np.ndarray,
    rng: RngStream,
) -> SltState:
    """
    State whose mark process is the given explicit marks plus an independent
    Poisson process glued above `floors` (one floor per slot).
    """
    clocks = np.asarray(floors, dtype=np.longdouble) + _exponential_levels(tables.hbar_support, rng)
    state = _blank_state(tables, clocks)
    slots = {int(site): i for i, site in enumerate(state.support)}
    for mark in marks:
        state.pending[slots[mark.site]].append(mark)
    for queue in state.pending:
        queue.sort(key=lambda m: m.level, reverse=True)
    return state


def _next_levels(state: SltState) -> np.ndarray:
    levels = state.clocks.copy()
    for i, queue in enumerate(state.pending):
        if queue and queue[-1].level < levels[i]:
            levels[i] = queue[-1].level
    return levels


def slt_next(
    state: SltState,
    density: np.ndarray,
    rng: RngStream,
    attach: Attach,
    density_id: str = UNIT_DENSITY,
) -> Tuple[float, Mark]:
    """
    One step of the selection recursion: xi = min over slots with density > 0 of
    (t_x - G(x)) / density(x), ties to the lowest slot; G += xi * density everywhere.
    """
    density = np.asarray(density, dtype=np.float64)
    active = density > 0
    if not active.any():
        raise SltError("degenerate density")
    levels = _next_levels(state)
    gaps = np.full(density.shape[0], np.inf, dtype=np.longdouble)
    gaps[active] = (levels[active] - state.G[active]) / density[active]
    slot = int(np.argmin(gaps))
    xi = max(gaps[slot], np.longdouble(0))

    state.G = state.G + xi * density.astype(np.longdouble)
    queue = state.pending[slot]
    if queue and queue[-1].level <= state.clocks[slot]:
        mark = queue.pop()
    else:
        mark = Mark(site=int(state.support[slot]), level=float(state.clocks[slot]))
        state.clocks[slot] += np.longdouble(rng.exponential(1.0 / state.rates[slot]))
    if mark.excursion is None:
        mark = mark.model_copy(update={"excursion": attach(mark.site)})

    state.step += 1
    state.consumed[slot] += 1
    state.history.append(state.G.copy())
    state.xis.append(float(xi))
    state.marks.append(mark)
    state.densities.setdefault(density_id, density)
    state.transcript.append(
        TranscriptRow(step=state.step, site=mark.site, level=mark.level, xi=float(xi), density_id=density_id)
    )
    return float(xi), mark


def run_unit_steps(state: SltState, n: int, rng: RngStream, attach: Attach) -> List[Mark]:
    ones = state.densities[UNIT_DENSITY]
    return [slt_next(state, ones, rng, attach)[1] for _ in range(n)]


MarkSpec = Union[Mark, Tuple[int, float], Tuple[int, float, Optional[Excursion]]]


def slt_resample_overwrite(state: SltState, from_step: int, marks: Sequence[MarkSpec]) -> SltState:
    """
    Replaces the consumed marks of steps from_step + 1, from_step + 2, ... with the given
    marks. Each level must equal the curve at its site after the step it replaces;
    G, the clocks and the explicit queues are left untouched.
    """
    if from_step < 0 or from_step + len(marks) > state.step:
        raise SltError(f"cannot overwrite steps {from_step + 1}..{from_step + len(marks)} of {state.step}")
    slots = {int(site): i for i, site in enumerate(state.support)}
    for j, spec in enumerate(marks):
        mark = spec if isinstance(spec, Mark) else Mark(
            site=int(spec[0]), level=float(spec[1]), excursion=spec[2] if len(spec) > 2 else None
        )
        if mark.site not in slots:
            raise SltError(f"site {mark.site} is outside the support of the harmonic measure")
        step = from_step + j + 1
        curve = float(state.history[step][slots[mark.site]])
        if abs(mark.level - curve) > LEVEL_RTOL * max(1.0, abs(curve)):
            raise SltError(
                f"inconsistent resampling level at step {step}: level {mark.level!r} vs curve {curve!r}"
            )
        if mark.excursion is None:
            if state.marks[step - 1].site != mark.site:
                raise SltError(f"mark moved to site {mark.site} at step {step} needs its own excursion")
            mark = mark.model_copy(update={"excursion": state.marks[step - 1].excursion})
        state.marks[step - 1] = mark
        row = state.transcript[step - 1]
        state.transcript[step - 1] = row.model_copy(update={"site": mark.site, "level": mark.level})
    return state


def replay_curve(state: SltState) -> np.ndarray:
    """G rebuilt from the transcript: the affine sum of xi times the recorded densities."""
    G = np.zeros(state.support.shape[0], dtype=np.longdouble)
    for row in state.transcript:
        G = G + np.longdouble(row.xi) * state.densities[row.density_id].astype(np.longdouble)
    return G


def transcript_rows(state: SltState, K: SiteSet) -> List[dict]:
    return [
        {
            "step": row.step,
            "site": " ".join(str(c) for c in K.sites[row.site]),
            "level": repr(row.level),
            "xi": repr(row.xi),
            "density_id": row.density_id,
        }
        for row in state.transcript
    ]
