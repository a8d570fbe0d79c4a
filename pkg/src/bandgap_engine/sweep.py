"""Sweep orchestration: one independent steady-state solve per grid point."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from bandgap_engine import __version__
from bandgap_engine.bath_model import BathDecomposition, BathLabel, FitError, QuadratureError, fit_exponentials
from bandgap_engine.config import RunConfig, Solver, config_to_dict
from bandgap_engine.floquet_analytics import RateWeighting, bm_heat_currents, bm_rates
from bandgap_engine.hierarchy import (
    CapacityError,
    ConvergenceScan,
    DepthError,
    DrivenTLS,
    HeomConfig,
    InstabilityError,
    ModeTable,
    build_index_set,
    convergence_scan,
    initial_density,
    initial_state,
    mode_table,
    propagate,
)
from bandgap_engine.integrate import align_step, default_step
from bandgap_engine.master_equations import MarkovRedfieldState, RedfieldPlusState, propagate_perturbative
from bandgap_engine.observables import (
    CurrentTrace,
    SolverState,
    SteadyStateDetector,
    SteadyStateReport,
    bath_bath_correlation,
    efficiency,
    excited_population,
    excited_population_rate,
    heat_current,
    mean_current,
    period_average,
    power,
)

LOGGER = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_TIMEOUT = "timeout"
STATUS_BLOWUP = "blowup"
STATUS_FIT_FAILURE = "fit_failure"
STATUS_ERROR = "error"

TRACE_SAMPLES_PER_PERIOD = 50


@dataclass(frozen=True, eq=False)
class PointTrace:
    """Subsampled time series: t, P0, P1, I_slow, I_fast, Re <X_s X_f> (NaN when not computed)."""

    columns: Tuple[str, ...]
    rows: np.ndarray


@dataclass(frozen=True)
class PointResult:
    lam: float
    omega_s: float
    solver: Solver
    status: str
    error: str = ""
    report: Optional[SteadyStateReport] = None
    trace: Optional[PointTrace] = None
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass(frozen=True)
class SweepResult:
    config: RunConfig
    points: Tuple[PointResult, ...]
    config_hash: str
    version: str = __version__

    @property
    def failed(self) -> List[PointResult]:
        return [p for p in self.points if not p.ok]


def config_hash(config: RunConfig) -> str:
    payload = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def fit_baths(config: RunConfig) -> Tuple[BathDecomposition, BathDecomposition]:
    solver = config.solver
    fits = []
    for spec in (config.baths.slow, config.baths.fast):
        fits.append(
            fit_exponentials(spec, t_max=solver.fit_window, tol=solver.fit_tolerance, max_modes=solver.fit_max_modes)
        )
    return fits[0], fits[1]


class _Recorder:
    """Per-step observables for the running period, plus an optional trace."""

    def __init__(self, tls: DrivenTLS, modes: ModeTable, correlations: bool, trace_stride: Optional[int]) -> None:
        self.tls = tls
        self.modes = modes
        self.correlations = correlations
        self.trace_stride = trace_stride
        self.samples: List[Tuple[float, ...]] = []
        self.trace: List[Tuple[float, ...]] = []
        self.steps = 0

    def sample(self, state: SolverState) -> Tuple[float, ...]:
        corr = bath_bath_correlation(state, self.modes).real if self.correlations else math.nan
        return (
            state.t,
            heat_current(state, self.tls, self.modes, BathLabel.SLOW),
            heat_current(state, self.tls, self.modes, BathLabel.FAST),
            excited_population(state),
            excited_population_rate(state, self.modes),
            corr,
        )

    def __call__(self, state: SolverState) -> None:
        row = self.sample(state)
        self.samples.append(row)
        self.steps += 1
        if self.trace_stride is not None and self.steps % self.trace_stride == 0:
            self.trace.append(row)

    def start(self, state: SolverState) -> None:
        row = self.sample(state)
        self.samples = [row]
        if self.trace_stride is not None and not self.trace:
            self.trace.append(row)

    def next_period(self) -> None:
        self.samples = self.samples[-1:]

    def columns(self) -> np.ndarray:
        return np.array(self.samples, dtype=float).T


def _initial(method: Solver, cfg: HeomConfig, modes: ModeTable) -> SolverState:
    rho = initial_density(cfg.initial_state)
    if method is Solver.HEOM:
        return initial_state(build_index_set(len(modes), cfg.depth, cfg.index_ceiling), rho)
    if method is Solver.REDFIELD_PLUS:
        return RedfieldPlusState.start(rho, len(modes))
    return MarkovRedfieldState.start(rho, len(modes))


def _advance(
    method: Solver,
    state: SolverState,
    tls: DrivenTLS,
    decomps: Sequence[BathDecomposition],
    cfg: HeomConfig,
    t_end: float,
    recorder: _Recorder,
) -> SolverState:
    if method is Solver.HEOM:
        return propagate(state, tls, decomps, cfg, t_end, observer=recorder)
    return propagate_perturbative(state, tls, decomps, cfg.step, t_end, observer=recorder)


def _dynamical_point(
    config: RunConfig, lam: float, omega_s: float, decomps: Sequence[BathDecomposition]
) -> Tuple[str, SteadyStateReport, Optional[PointTrace]]:
    solver = config.solver
    method = solver.method
    tls = DrivenTLS(config.system.omega_0, lam, omega_s)
    modes = mode_table(decomps)
    period = tls.period
    h_max = solver.step or default_step(omega_s, tls.omega_0, float(np.max(modes.gammas.real, initial=0.0)))
    h, per_period = align_step(period, h_max)
    depth = solver.depth if method is Solver.HEOM else 1
    cfg = HeomConfig(
        depth=depth,
        step=h,
        filter_threshold=solver.filter_threshold,
        initial_state=solver.initial_state,
        index_ceiling=solver.index_ceiling,
    )
    correlations = method is Solver.HEOM and depth >= 2
    stride = max(1, per_period // TRACE_SAMPLES_PER_PERIOD) if config.output.traces else None
    recorder = _Recorder(tls, modes, correlations, stride)
    state = _initial(method, cfg, modes)
    recorder.start(state)
    # currents scale with their own transient peak, populations with 1
    detector = SteadyStateDetector(
        period=period,
        tol=solver.steady_tol,
        atol=solver.steady_atol,
        scale_tol=solver.steady_scale_tol,
        scales=(0.0, 0.0, 1.0),
    )
    max_periods = max(3, int(math.floor(solver.max_time / period)))
    LOGGER.debug(
        "Point started",
        extra={"omega_s": omega_s, "lam": lam, "solver": method.value, "step": h, "modes": len(modes)},
    )
    status = STATUS_TIMEOUT
    for n in range(1, max_periods + 1):
        recorder.next_period()
        state = _advance(method, state, tls, decomps, cfg, n * period, recorder)
        t, i_slow, i_fast, p1, _, _ = recorder.columns()
        averages = (
            period_average(t, i_slow, period),
            period_average(t, i_fast, period),
            period_average(t, p1, period),
        )
        if detector.add_period(averages, state.t):
            status = STATUS_OK
            break

    t, i_slow, i_fast, p1, p1_rate, corr = recorder.columns()
    mean_slow = mean_current(CurrentTrace(BathLabel.SLOW.value, t, i_slow), period)
    mean_fast = mean_current(CurrentTrace(BathLabel.FAST.value, t, i_fast), period)
    omegas = np.array([tls.omega(x) for x in t])
    hot_mean, cold_mean = (mean_slow, mean_fast) if config.baths.hot is BathLabel.SLOW else (mean_fast, mean_slow)
    p_sum, p_work = power(hot_mean, cold_mean, t, omegas, p1_rate, period)
    report = SteadyStateReport(
        mean_slow=mean_slow,
        mean_fast=mean_fast,
        p_by_sum=p_sum,
        p_by_work=p_work,
        efficiency=efficiency(cold_mean, hot_mean),
        x_corr=period_average(t, corr, period) if correlations else None,
        deviation=detector.deviation,
        depth=depth if method in (Solver.HEOM, Solver.REDFIELD_PLUS) else None,
        step=h,
        filter_threshold=solver.filter_threshold if method is Solver.HEOM else None,
        detect_time=detector.detected_at,
        mean_excited=period_average(t, p1, period),
    )
    trace = None
    if stride is not None:
        rows = np.array(recorder.trace, dtype=float)
        trace = PointTrace(
            columns=("t", "P0", "P1", "I_s", "I_f", "X_corr"),
            rows=np.column_stack([rows[:, 0], 1.0 - rows[:, 3], rows[:, 3], rows[:, 1], rows[:, 2], rows[:, 5]]),
        )
    if status == STATUS_TIMEOUT:
        LOGGER.warning(
            "Steady state not reached",
            extra={"omega_s": omega_s, "lam": lam, "max_time": solver.max_time, "deviation": detector.deviation},
        )
    return status, report, trace


def _born_markov_point(config: RunConfig, lam: float, omega_s: float) -> SteadyStateReport:
    tls = DrivenTLS(config.system.omega_0, lam, omega_s)
    baths = config.baths
    model = bm_rates(
        tls,
        baths.hot_bath,
        baths.cold_bath,
        weighting=RateWeighting(config.solver.rate_weighting),
        k_max=config.solver.sideband_window,
    )
    hot_mean, cold_mean = bm_heat_currents(model)
    mean_slow, mean_fast = (hot_mean, cold_mean) if baths.hot is BathLabel.SLOW else (cold_mean, hot_mean)
    return SteadyStateReport(
        mean_slow=mean_slow,
        mean_fast=mean_fast,
        p_by_sum=hot_mean + cold_mean,
        p_by_work=None,
        efficiency=efficiency(cold_mean, hot_mean),
        x_corr=None,
        deviation=0.0,
        depth=None,
        step=None,
        filter_threshold=None,
        detect_time=None,
    )


def solve_point(
    config: RunConfig, lam: float, omega_s: float, decomps: Optional[Sequence[BathDecomposition]] = None
) -> PointResult:
    """Steady state of one grid point; failures come back as a status, never raised."""
    method = config.solver.method
    started = time.perf_counter()
    base = PointResult(lam=lam, omega_s=omega_s, solver=method, status=STATUS_ERROR)
    try:
        if method is Solver.BORN_MARKOV:
            result = dataclasses.replace(base, status=STATUS_OK, report=_born_markov_point(config, lam, omega_s))
        else:
            if decomps is None:
                decomps = fit_baths(config)
            status, report, trace = _dynamical_point(config, lam, omega_s, decomps)
            result = dataclasses.replace(base, status=status, report=report, trace=trace)
    except (FitError, QuadratureError) as exc:
        result = dataclasses.replace(base, status=STATUS_FIT_FAILURE, error=str(exc))
    except InstabilityError as exc:
        result = dataclasses.replace(base, status=STATUS_BLOWUP, error=str(exc))
    except (CapacityError, DepthError, ValueError) as exc:
        result = dataclasses.replace(base, status=STATUS_ERROR, error=str(exc))
    except Exception as exc:  # noqa: BLE001
        LOGGER.exception("Point failed", extra={"omega_s": omega_s, "lam": lam})
        result = dataclasses.replace(base, status=STATUS_ERROR, error=f"{type(exc).__name__}: {exc}")
    result = dataclasses.replace(result, wall_time=time.perf_counter() - started)
    LOGGER.info(
        "Point finished",
        extra={
            "omega_s": omega_s,
            "lam": lam,
            "solver": method.value,
            "status": result.status,
            "detect_time": result.report.detect_time if result.report else None,
        },
    )
    return result


def run_sweep(config: RunConfig, decomps: Optional[Sequence[BathDecomposition]] = None) -> SweepResult:
    """Solve every (lam, omega_s) point; rows come back in grid order."""
    points = config.grid
    digest = config_hash(config)
    if config.solver.method is not Solver.BORN_MARKOV and decomps is None:
        try:
            decomps = fit_baths(config)
        except (FitError, QuadratureError) as exc:
            LOGGER.error("Bath fit failed", extra={"error": str(exc)})
            rows = tuple(
                PointResult(lam=lam, omega_s=w, solver=config.solver.method, status=STATUS_FIT_FAILURE, error=str(exc))
                for lam, w in points
            )
            return SweepResult(config=config, points=rows, config_hash=digest)
    results: List[Optional[PointResult]] = [None] * len(points)
    if config.workers <= 1 or len(points) <= 1:
        for i, (lam, omega_s) in enumerate(points):
            results[i] = solve_point(config, lam, omega_s, decomps)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {
                pool.submit(solve_point, config, lam, omega_s, decomps): i for i, (lam, omega_s) in enumerate(points)
            }
            for future in concurrent.futures.as_completed(futures):
                results[futures[future]] = future.result()
    LOGGER.info(
        "Sweep completed",
        extra={"points": len(points), "failed": sum(1 for r in results if r is not None and not r.ok)},
    )
    return SweepResult(config=config, points=tuple(r for r in results if r is not None), config_hash=digest)


def depth_scan(
    config: RunConfig,
    depths: Sequence[int],
    lam: float,
    omega_s: float,
    decomps: Optional[Sequence[BathDecomposition]] = None,
) -> ConvergenceScan:
    """Hierarchy depth convergence at one grid point."""
    if decomps is None:
        decomps = fit_baths(config)
    solver = dataclasses.replace(config.solver, method=Solver.HEOM)

    def evaluate(depth: int) -> Tuple[float, float]:
        scoped = dataclasses.replace(config, solver=dataclasses.replace(solver, depth=depth))
        status, report, _ = _dynamical_point(scoped, lam, omega_s, decomps)
        if status != STATUS_OK:
            LOGGER.warning("Depth run did not settle", extra={"depth": depth, "status": status})
        return report.mean_slow, report.mean_fast

    return convergence_scan(depths, evaluate)
