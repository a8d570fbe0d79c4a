"""Heat currents, power, efficiency and periodic steady-state detection."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from bandgap_engine.bath_model import BathLabel
from bandgap_engine.hierarchy import DepthError, DrivenTLS, HierarchyState, ModeTable
from bandgap_engine.master_equations import MarkovRedfieldState, RedfieldPlusState, effective_first_order

LOGGER = logging.getLogger(__name__)

SolverState = Union[HierarchyState, RedfieldPlusState, MarkovRedfieldState]


class InsufficientSpanError(ValueError):
    pass


class UnsupportedStateError(TypeError):
    pass


def first_order_ados(state: SolverState, modes: ModeTable) -> np.ndarray:
    """Unscaled first-order auxiliary matrices, one per mode."""
    if isinstance(state, HierarchyState):
        rows = state.index_set.unit_rows
        if np.any(rows < 0):
            raise DepthError("hierarchy depth 0 carries no first-order ADOs")
        return state.ados[rows] * np.sqrt(modes.scales)[:, None, None]
    if isinstance(state, RedfieldPlusState):
        return state.ados
    if isinstance(state, MarkovRedfieldState):
        return effective_first_order(state)
    raise UnsupportedStateError(f"no first-order ADOs on {type(state).__name__}")


def _coherence_flow(ados: np.ndarray) -> complex:
    # -i sum_k Tr([|1><1|, sigma_x] rho_k)
    total = ados.sum(axis=0)
    return -1j * (total[0, 1] - total[1, 0])


def heat_current(state: SolverState, tls: DrivenTLS, modes: ModeTable, label: BathLabel) -> float:
    """I_alpha(t); positive when energy flows into the qubit."""
    ados = first_order_ados(state, modes)
    selected = modes.select(label)
    if selected.size == 0:
        return 0.0
    return float((tls.omega(state.t) * _coherence_flow(ados[selected])).real)


def excited_population_rate(state: SolverState, modes: ModeTable) -> float:
    return float(_coherence_flow(first_order_ados(state, modes)).real)


def excited_population(state: SolverState) -> float:
    rho = state.root if isinstance(state, HierarchyState) else state.rho
    return float(rho[1, 1].real)


def bath_bath_correlation(state: SolverState, modes: ModeTable) -> complex:
    """Normalised slow-fast correlation from the mixed second-level ADOs."""
    if not isinstance(state, HierarchyState):
        raise DepthError(f"{type(state).__name__} has no second-order ADOs")
    if state.index_set.depth < 2:
        raise DepthError(f"bath-bath correlation needs depth >= 2, got {state.index_set.depth}")
    slow = modes.select(BathLabel.SLOW)
    fast = modes.select(BathLabel.FAST)
    norm = modes.c0.get(BathLabel.SLOW, 0.0).real * modes.c0.get(BathLabel.FAST, 0.0).real
    if slow.size == 0 or fast.size == 0 or norm == 0:
        return 0j
    rows = state.index_set.pair_rows[np.ix_(slow, fast)]
    weights = np.sqrt(np.outer(modes.scales[slow], modes.scales[fast]))
    traces = np.trace(state.ados[rows], axis1=-2, axis2=-1)
    return complex(np.sum(weights * traces) / norm)


@dataclass(frozen=True, eq=False)
class CurrentTrace:
    label: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values):
            raise ValueError("times and values differ in length")


def period_average(times: np.ndarray, values: np.ndarray, period: float) -> float:
    """Trapezoidal mean over the last full period of a uniform sample."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values)
    if len(times) < 2:
        raise InsufficientSpanError("need at least two samples")
    step = times[1] - times[0]
    per_period = int(round(period / step))
    if per_period < 1 or abs(per_period * step - period) > 1e-6 * period:
        raise InsufficientSpanError(f"period {period} is not an integer number of samples of step {step}")
    if len(times) < per_period + 1:
        raise InsufficientSpanError(f"trace spans {times[-1] - times[0]:.6g} < period {period:.6g}")
    window = slice(len(times) - per_period - 1, len(times))
    return float(integrate.trapezoid(values[window], times[window]).real / period)


def mean_current(trace: CurrentTrace, period: float) -> float:
    return period_average(trace.times, trace.values, period)


def power(
    mean_hot: float,
    mean_cold: float,
    times: np.ndarray,
    omegas: np.ndarray,
    population_rates: np.ndarray,
    period: float,
) -> Tuple[float, float]:
    """(P_by_sum, P_by_work); positive means heat converted into work."""
    by_sum = mean_hot + mean_cold
    by_work = period_average(times, np.asarray(omegas) * np.asarray(population_rates), period)
    return by_sum, by_work


@dataclass(frozen=True)
class Efficiency:
    value: Optional[float]
    meaningful: bool


def efficiency(mean_cold: float, mean_hot: float) -> Efficiency:
    if mean_hot == 0:
        return Efficiency(value=None, meaningful=False)
    value = 1.0 - abs(mean_cold / mean_hot)
    return Efficiency(value=value, meaningful=mean_hot + mean_cold > 0)


def _settled(a: float, b: float, tol: float, atol: float) -> bool:
    return abs(a - b) <= max(tol * max(abs(a), abs(b)), atol)


@dataclass
class SteadyStateDetector:
    """Feeds on per-period averages; settles after three mutually close periods.

    Two averages are close when they differ by less than ``tol`` relative, by
    less than ``atol``, or by less than ``scale_tol`` times the component's
    scale. The scale is the largest magnitude the component has reached, never
    below the matching entry of ``scales``.
    """

    period: float
    tol: float = 1e-4
    atol: float = 1e-10
    scale_tol: float = 0.0
    scales: Tuple[float, ...] = ()
    window: int = 3
    history: Deque[Tuple[float, ...]] = field(default_factory=deque)
    peaks: List[float] = field(default_factory=list)
    periods_seen: int = 0
    detected_at: Optional[float] = None

    def add_period(self, averages: Sequence[float], t_end: float) -> bool:
        self.periods_seen += 1
        row = tuple(float(v) for v in averages)
        self.history.append(row)
        if not self.peaks:
            self.peaks = [float(self.scales[i]) if i < len(self.scales) else 0.0 for i in range(len(row))]
        self.peaks = [max(peak, abs(v)) for peak, v in zip(self.peaks, row)]
        while len(self.history) > self.window:
            self.history.popleft()
        if self.detected_at is None and len(self.history) == self.window and self._stable():
            self.detected_at = t_end
            LOGGER.debug("Steady state detected", extra={"detect_time": t_end, "periods": self.periods_seen})
        return self.detected_at is not None

    def _stable(self) -> bool:
        rows = list(self.history)
        floors = [max(self.atol, self.scale_tol * peak) for peak in self.peaks]
        return all(
            _settled(a, b, self.tol, floor)
            for prev, cur in zip(rows, rows[1:])
            for a, b, floor in zip(prev, cur, floors)
        )

    @property
    def deviation(self) -> float:
        """Largest relative change between the two most recent periods."""
        if len(self.history) < 2:
            return math.inf
        prev, cur = self.history[-2], self.history[-1]
        return max(
            (abs(a - b) / max(abs(a), abs(b), self.atol) for a, b in zip(prev, cur)),
            default=0.0,
        )


def detect_steady_state(
    period_averages: Sequence[Sequence[float]],
    period: float,
    tol: float = 1e-4,
    atol: float = 1e-10,
    scale_tol: float = 0.0,
    scales: Sequence[float] = (),
) -> Optional[float]:
    """Time at which the stream of per-period averages settles, or None while pending."""
    detector = SteadyStateDetector(period=period, tol=tol, atol=atol, scale_tol=scale_tol, scales=tuple(scales))
    for n, averages in enumerate(period_averages, start=1):
        if detector.add_period(averages, n * period):
            return detector.detected_at
    return None


@dataclass(frozen=True)
class SteadyStateReport:
    mean_slow: float
    mean_fast: float
    p_by_sum: float
    p_by_work: Optional[float]
    efficiency: Efficiency
    x_corr: Optional[float]
    deviation: float
    depth: Optional[int]
    step: Optional[float]
    filter_threshold: Optional[float]
    detect_time: Optional[float]
    mean_excited: Optional[float] = None

    @property
    def first_law_gap(self) -> Optional[float]:
        if self.p_by_work is None:
            return None
        return abs(self.p_by_sum - self.p_by_work) / max(abs(self.p_by_sum), 1e-6)

