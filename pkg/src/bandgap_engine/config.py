from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from bandgap_engine.bath_model import BathLabel, BathSpec, Family, SpectralDensity
from bandgap_engine.hierarchy import DEFAULT_INDEX_CEILING, INITIAL_STATES


class ConfigError(ValueError):
    def __init__(self, errors: List[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class Solver(str, enum.Enum):
    HEOM = "heom"
    REDFIELD_PLUS = "redfield_plus"
    REDFIELD_MARKOV = "redfield_markov"
    BORN_MARKOV = "born_markov"


@dataclass(frozen=True)
class SystemSection:
    omega_0: float
    lam: Tuple[float, ...]
    omega_s: Tuple[float, ...]


@dataclass(frozen=True)
class BathSection:
    slow: BathSpec
    fast: BathSpec
    hot: BathLabel

    @property
    def hot_bath(self) -> BathSpec:
        return self.slow if self.hot is BathLabel.SLOW else self.fast

    @property
    def cold_bath(self) -> BathSpec:
        return self.fast if self.hot is BathLabel.SLOW else self.slow


@dataclass(frozen=True)
class SolverSection:
    method: Solver
    depth: int = 3
    step: Optional[float] = None
    filter_threshold: float = 1e-7
    fit_tolerance: float = 1e-4
    fit_max_modes: int = 16
    fit_window: Optional[float] = None
    steady_tol: float = 1e-4
    steady_atol: float = 1e-10
    steady_scale_tol: float = 1e-4
    max_time: float = 3000.0
    initial_state: str = "ground"
    rate_weighting: str = "prefactor"
    sideband_window: Optional[int] = None
    index_ceiling: int = DEFAULT_INDEX_CEILING


@dataclass(frozen=True)
class OutputSection:
    directory: Path
    traces: bool = False
    resonance_orders: int = 2


@dataclass(frozen=True)
class RunConfig:
    system: SystemSection
    baths: BathSection
    solver: SolverSection
    output: OutputSection
    workers: int = 1

    @property
    def grid(self) -> List[Tuple[float, float]]:
        """(lam, omega_s) points, lam-major."""
        return [(lam, omega_s) for lam in self.system.lam for omega_s in self.system.omega_s]


REQUIRED_TOP_LEVEL_KEYS = {"system", "baths", "solver", "output"}
RATE_WEIGHTINGS = {"prefactor", "bessel"}


class _Errors:
    def __init__(self) -> None:
        self.items: List[str] = []

    def add(self, message: str) -> None:
        self.items.append(message)

    def raise_if_any(self) -> None:
        if self.items:
            raise ConfigError(self.items)


def _require_keys(mapping: Mapping[str, Any], keys: set, context: str, errors: _Errors) -> bool:
    missing = keys - set(mapping.keys())
    for key in sorted(missing):
        errors.add(f"Missing required key {context}.{key}")
    return not missing


def _require_type(value: Any, expected_type: type, context: str, errors: _Errors) -> bool:
    if not isinstance(value, expected_type):
        errors.add(f"Expected {context} to be {expected_type.__name__}")
        return False
    return True


def _number(
    value: Any, context: str, errors: _Errors, minimum: Optional[float] = None, strict: bool = False
) -> Optional[float]:
    if isinstance(value, bool):
        errors.add(f"{context} must be a number")
        return None
    try:
        number = float(value)
    except (TypeError, ValueError):
        errors.add(f"{context} must be a number, got {value!r}")
        return None
    if minimum is not None:
        if strict and not number > minimum:
            errors.add(f"{context} must be > {minimum:g}, got {number:g}")
            return None
        if not strict and not number >= minimum:
            errors.add(f"{context} must be >= {minimum:g}, got {number:g}")
            return None
    return number


def _integer(value: Any, context: str, errors: _Errors, minimum: int) -> Optional[int]:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        errors.add(f"{context} must be an integer >= {minimum}")
        return None
    return value


def parse_grid(value: Any, context: str, errors: _Errors, positive: bool = True) -> Tuple[float, ...]:
    """Scalar, explicit list or {start, stop, num}; strictly increasing."""
    if isinstance(value, Mapping):
        if not _require_keys(value, {"start", "stop", "num"}, context, errors):
            return ()
        start = _number(value["start"], f"{context}.start", errors)
        stop = _number(value["stop"], f"{context}.stop", errors)
        num = _integer(value["num"], f"{context}.num", errors, 1)
        if start is None or stop is None or num is None:
            return ()
        if num == 1:
            points = [start]
        else:
            points = [start + (stop - start) * i / (num - 1) for i in range(num)]
    elif isinstance(value, list):
        if not value:
            errors.add(f"{context} must not be empty")
            return ()
        points = []
        for i, item in enumerate(value):
            number = _number(item, f"{context}[{i}]", errors)
            if number is None:
                return ()
            points.append(number)
    else:
        number = _number(value, context, errors)
        if number is None:
            return ()
        points = [number]
    if any(b <= a for a, b in zip(points, points[1:])):
        errors.add(f"{context} must be strictly increasing")
        return ()
    if positive and points[0] <= 0:
        errors.add(f"{context} values must be > 0")
        return ()
    if not positive and points[0] < 0:
        errors.add(f"{context} values must be >= 0")
        return ()
    return tuple(points)


def parse_grid_text(text: str) -> Tuple[float, ...]:
    """Command-line grid: "start:stop:num" or a comma-separated list."""
    errors = _Errors()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError([f"grid {text!r} must look like start:stop:num"])
        try:
            num = int(parts[2])
        except ValueError:
            raise ConfigError([f"grid {text!r} has a non-integer point count"]) from None
        grid = parse_grid({"start": parts[0], "stop": parts[1], "num": num}, "--grid", errors)
    else:
        grid = parse_grid([item for item in text.split(",") if item.strip()], "--grid", errors)
    errors.raise_if_any()
    return grid


def _validate_system(system: Mapping[str, Any], errors: _Errors) -> Optional[SystemSection]:
    if not _require_keys(system, {"omega_0", "lam", "omega_s"}, "system", errors):
        return None
    omega_0 = _number(system["omega_0"], "system.omega_0", errors, minimum=0.0, strict=True)
    lam = parse_grid(system["lam"], "system.lam", errors, positive=False)
    omega_s = parse_grid(system["omega_s"], "system.omega_s", errors)
    if omega_0 is None or not lam or not omega_s:
        return None
    return SystemSection(omega_0=omega_0, lam=lam, omega_s=omega_s)


def _validate_bath(raw: Any, label: BathLabel, errors: _Errors) -> Optional[BathSpec]:
    context = f"baths.{label.value}"
    if not _require_type(raw, dict, context, errors):
        return None
    if not _require_keys(raw, {"kappa", "omega", "temperature"}, context, errors):
        return None
    family_name = str(raw.get("family", Family.BANDGAP.value))
    if family_name not in {f.value for f in Family}:
        errors.add(f"{context}.family must be one of {[f.value for f in Family]}, got {family_name!r}")
        return None
    kappa = _number(raw["kappa"], f"{context}.kappa", errors, minimum=0.0, strict=True)
    omega = _number(raw["omega"], f"{context}.omega", errors, minimum=0.0, strict=True)
    xi = _number(raw.get("xi", 1.0), f"{context}.xi", errors, minimum=0.0, strict=True)
    temperature = _number(raw["temperature"], f"{context}.temperature", errors, minimum=0.0)
    if None in (kappa, omega, xi, temperature):
        return None
    spectral = SpectralDensity(family=Family(family_name), kappa=kappa, omega=omega, xi=xi)
    return BathSpec(spectral=spectral, temperature=temperature, label=label)


def _validate_baths(baths: Mapping[str, Any], omega_0: Optional[float], errors: _Errors) -> Optional[BathSection]:
    if not _require_keys(baths, {"slow", "fast", "hot"}, "baths", errors):
        return None
    slow = _validate_bath(baths["slow"], BathLabel.SLOW, errors)
    fast = _validate_bath(baths["fast"], BathLabel.FAST, errors)
    hot_name = str(baths["hot"])
    if hot_name not in {label.value for label in BathLabel}:
        errors.add(f"baths.hot must be 'slow' or 'fast', got {hot_name!r}")
        return None
    if slow is None or fast is None:
        return None
    if omega_0 is not None:
        for spec in (slow, fast):
            try:
                spec.check_against(omega_0)
            except ValueError as exc:
                errors.add(f"baths.{spec.label.value}.omega: {exc}")
    return BathSection(slow=slow, fast=fast, hot=BathLabel(hot_name))


def _validate_solver(solver: Mapping[str, Any], errors: _Errors) -> Optional[SolverSection]:
    if not _require_keys(solver, {"method"}, "solver", errors):
        return None
    method = str(solver["method"])
    if method not in {s.value for s in Solver}:
        errors.add(f"solver.method must be one of {[s.value for s in Solver]}, got {method!r}")
        return None
    defaults = SolverSection(method=Solver(method))
    depth = _integer(solver.get("depth", defaults.depth), "solver.depth", errors, 1)
    step = solver.get("step")
    if step is not None:
        step = _number(step, "solver.step", errors, minimum=0.0, strict=True)
    fit_window = solver.get("fit_window")
    if fit_window is not None:
        fit_window = _number(fit_window, "solver.fit_window", errors, minimum=0.0, strict=True)
    sideband = solver.get("sideband_window")
    if sideband is not None:
        sideband = _integer(sideband, "solver.sideband_window", errors, 0)
    initial_state = str(solver.get("initial_state", defaults.initial_state))
    if initial_state not in INITIAL_STATES:
        errors.add(f"solver.initial_state must be one of {sorted(INITIAL_STATES)}, got {initial_state!r}")
    weighting = str(solver.get("rate_weighting", defaults.rate_weighting))
    if weighting not in RATE_WEIGHTINGS:
        errors.add(f"solver.rate_weighting must be one of {sorted(RATE_WEIGHTINGS)}, got {weighting!r}")
    values = dict(
        filter_threshold=_number(solver.get("filter_threshold", defaults.filter_threshold), "solver.filter_threshold", errors, minimum=0.0),
        fit_tolerance=_number(solver.get("fit_tolerance", defaults.fit_tolerance), "solver.fit_tolerance", errors, minimum=0.0, strict=True),
        steady_tol=_number(solver.get("steady_tol", defaults.steady_tol), "solver.steady_tol", errors, minimum=0.0, strict=True),
        steady_atol=_number(solver.get("steady_atol", defaults.steady_atol), "solver.steady_atol", errors, minimum=0.0),
        steady_scale_tol=_number(
            solver.get("steady_scale_tol", defaults.steady_scale_tol), "solver.steady_scale_tol", errors, minimum=0.0
        ),
        max_time=_number(solver.get("max_time", defaults.max_time), "solver.max_time", errors, minimum=0.0, strict=True),
    )
    fit_max_modes = _integer(solver.get("fit_max_modes", defaults.fit_max_modes), "solver.fit_max_modes", errors, 1)
    index_ceiling = _integer(solver.get("index_ceiling", defaults.index_ceiling), "solver.index_ceiling", errors, 1)
    if None in values.values() or None in (depth, fit_max_modes, index_ceiling):
        return None
    return SolverSection(
        method=Solver(method),
        depth=depth,
        step=step,
        fit_window=fit_window,
        fit_max_modes=fit_max_modes,
        initial_state=initial_state,
        rate_weighting=weighting,
        sideband_window=sideband,
        index_ceiling=index_ceiling,
        **values,
    )


def _validate_output(output: Mapping[str, Any], errors: _Errors) -> Optional[OutputSection]:
    if not _require_keys(output, {"directory"}, "output", errors):
        return None
    traces = output.get("traces", False)
    if not isinstance(traces, bool):
        errors.add("output.traces must be true or false")
        return None
    orders = _integer(output.get("resonance_orders", 2), "output.resonance_orders", errors, 1)
    if orders is None:
        return None
    return OutputSection(directory=Path(str(output["directory"])), traces=traces, resonance_orders=orders)


def _parse_yaml(config_path: Path) -> Any:
    try:
        with config_path.open("r", encoding="utf-8") as handle:
            return yaml.safe_load(handle) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError([f"YAML parse error in {config_path}{where}: {getattr(exc, 'problem', exc)}"]) from exc


def load_config(path: str | Path) -> RunConfig:
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError([f"Config file not found: {config_path}"])
    raw = _parse_yaml(config_path)
    errors = _Errors()
    if not _require_type(raw, dict, "config root", errors):
        errors.raise_if_any()
    _require_keys(raw, REQUIRED_TOP_LEVEL_KEYS, "config", errors)
    sections: Dict[str, Any] = {}
    for key in sorted(REQUIRED_TOP_LEVEL_KEYS & set(raw)):
        if _require_type(raw[key], dict, key, errors):
            sections[key] = raw[key]
    system = _validate_system(sections["system"], errors) if "system" in sections else None
    omega_0 = system.omega_0 if system else None
    baths = _validate_baths(sections["baths"], omega_0, errors) if "baths" in sections else None
    solver = _validate_solver(sections["solver"], errors) if "solver" in sections else None
    output = _validate_output(sections["output"], errors) if "output" in sections else None
    parallel = raw.get("parallel", {}) or {}
    workers = 1
    if _require_type(parallel, dict, "parallel", errors):
        workers = _integer(parallel.get("workers", 1), "parallel.workers", errors, 1) or 1
    errors.raise_if_any()
    return RunConfig(system=system, baths=baths, solver=solver, output=output, workers=workers)


def apply_overrides(
    config: RunConfig,
    solver: Optional[str] = None,
    grid: Optional[str] = None,
    output_dir: Optional[str] = None,
    workers: Optional[int] = None,
) -> RunConfig:
    """Command-line overrides, validated like the file they replace."""
    errors = _Errors()
    if solver is not None:
        if solver not in {s.value for s in Solver}:
            errors.add(f"--solver must be one of {[s.value for s in Solver]}, got {solver!r}")
        else:
            config = dataclasses.replace(config, solver=dataclasses.replace(config.solver, method=Solver(solver)))
    if grid is not None:
        try:
            omega_s = parse_grid_text(grid)
        except ConfigError as exc:
            errors.items.extend(exc.errors)
        else:
            config = dataclasses.replace(config, system=dataclasses.replace(config.system, omega_s=omega_s))
    if output_dir is not None:
        config = dataclasses.replace(config, output=dataclasses.replace(config.output, directory=Path(output_dir)))
    if workers is not None:
        if workers < 1:
            errors.add(f"--workers must be >= 1, got {workers}")
        else:
            config = dataclasses.replace(config, workers=workers)
    errors.raise_if_any()
    return config


def _plain(value: Any) -> Any:
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    return _plain(dataclasses.asdict(config))
