from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from bandgap_engine.config import RunConfig, config_to_dict
from bandgap_engine.floquet_analytics import Resonance, predict_resonances
from bandgap_engine.sweep import PointResult, SweepResult

LOGGER = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "omega_s",
    "lambda",
    "kappa_s",
    "kappa_f",
    "T_s",
    "T_f",
    "Omega_s",
    "Omega_f",
    "I_s",
    "I_f",
    "P_sum",
    "P_work",
    "eta",
    "X_corr",
    "L",
    "h",
    "delta",
    "detect_time",
    "solver",
    "eta_meaningful",
    "status",
    "error",
]

RESONANCE_COLUMNS = ["frequency", "mechanism", "bath", "order"]


class OutputError(OSError):
    pass


def _cell(value: Optional[Any]) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def sweep_row(config: RunConfig, point: PointResult) -> List[str]:
    slow = config.baths.slow
    fast = config.baths.fast
    report = point.report
    values: List[Optional[Any]] = [
        point.omega_s,
        point.lam,
        slow.spectral.kappa,
        fast.spectral.kappa,
        slow.temperature,
        fast.temperature,
        slow.spectral.omega,
        fast.spectral.omega,
    ]
    if report is None:
        values.extend([None] * 10)
        values.extend([point.solver.value, None])
    else:
        values.extend(
            [
                report.mean_slow,
                report.mean_fast,
                report.p_by_sum,
                report.p_by_work,
                report.efficiency.value,
                report.x_corr,
                report.depth,
                report.step,
                report.filter_threshold,
                report.detect_time,
                point.solver.value,
                report.efficiency.meaningful,
            ]
        )
    values.extend([point.status, point.error])
    return [_cell(v) for v in values]


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc


def write_sweep_csv(result: SweepResult, path: Path) -> None:
    _write_csv(path, SWEEP_COLUMNS, (sweep_row(result.config, p) for p in result.points))


def resonance_markers(config: RunConfig) -> List[Resonance]:
    return predict_resonances(
        config.system.omega_0,
        config.system.lam[0],
        config.baths.slow.spectral.omega,
        config.baths.fast.spectral.omega,
        config.output.resonance_orders,
    )


def write_resonances(markers: Iterable[Resonance], path: Path) -> None:
    _write_csv(
        path,
        RESONANCE_COLUMNS,
        ([repr(m.frequency), m.mechanism, m.bath, str(m.order)] for m in markers),
    )


def _trace_name(index: int, point: PointResult) -> str:
    return f"trace_{index:04d}_lam{point.lam:g}_ws{point.omega_s:g}.csv"


def write_manifest(result: SweepResult, path: Path, files: Dict[str, str]) -> None:
    manifest = {
        "version": result.version,
        "config_hash": result.config_hash,
        "config": config_to_dict(result.config),
        "files": files,
        "points": [
            {
                "lambda": p.lam,
                "omega_s": p.omega_s,
                "status": p.status,
                "wall_time": p.wall_time,
            }
            for p in result.points
        ],
    }
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc


def emit_outputs(result: SweepResult, directory: Optional[Path] = None) -> Dict[str, Path]:
    """Sweep CSV, resonance sidecar, optional traces and the provenance manifest."""
    out = Path(directory) if directory is not None else result.config.output.directory
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"{out}: {exc}") from exc
    written = {"sweep": out / "sweep.csv", "resonances": out / "resonances.csv"}
    write_sweep_csv(result, written["sweep"])
    write_resonances(resonance_markers(result.config), written["resonances"])
    traces = [(i, p) for i, p in enumerate(result.points) if p.trace is not None]
    if traces:
        trace_dir = out / "traces"
        trace_dir.mkdir(exist_ok=True)
        for i, point in traces:
            path = trace_dir / _trace_name(i, point)
            _write_csv(path, point.trace.columns, ([_cell(float(v)) for v in row] for row in point.trace.rows))
            written[f"trace_{i:04d}"] = path
    written["manifest"] = out / "manifest.json"
    write_manifest(result, written["manifest"], {k: str(v.relative_to(out)) for k, v in written.items() if k != "manifest"})
    LOGGER.info("Outputs written", extra={"directory": str(out), "files": len(written)})
    return written


def read_sweep_csv(path: Path) -> List[Dict[str, str]]:
    try:
        with Path(path).open("r", encoding="utf-8", newline="") as handle:
            return list(csv.DictReader(handle))
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc
