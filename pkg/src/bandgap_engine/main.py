from __future__ import annotations

import argparse
import json
import logging
import logging.handlers
import os
import sys
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from bandgap_engine.bath_model import FitError, QuadratureError, counter_term, write_decomposition
from bandgap_engine.config import ConfigError, apply_overrides, load_config
from bandgap_engine.export import OutputError, emit_outputs, read_sweep_csv, resonance_markers, write_resonances
from bandgap_engine.render import render_summary
from bandgap_engine.sweep import depth_scan, fit_baths, run_sweep

LOGGER = logging.getLogger(__name__)


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        standard_keys = {
            "name",
            "msg",
            "args",
            "levelname",
            "levelno",
            "pathname",
            "filename",
            "module",
            "exc_info",
            "exc_text",
            "stack_info",
            "lineno",
            "funcName",
            "created",
            "msecs",
            "relativeCreated",
            "thread",
            "threadName",
            "processName",
            "process",
            "taskName",
        }
        payload = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "message": record.getMessage(),
            "logger": record.name,
        }
        if hasattr(record, "run_id"):
            payload["run_id"] = record.run_id
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        extras = {k: v for k, v in record.__dict__.items() if k not in standard_keys}
        payload.update(extras)
        return json.dumps(payload, default=str)


class RunIdFilter(logging.Filter):
    def __init__(self, run_id: str) -> None:
        super().__init__()
        self.run_id = run_id

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = self.run_id
        return True


def _setup_logging(log_dir: Path, run_id: str, verbose: bool = False) -> None:
    log_dir.mkdir(parents=True, exist_ok=True)
    formatter = JsonFormatter()
    handler_stdout = logging.StreamHandler(sys.stdout)
    handler_stdout.setFormatter(formatter)
    handler_stdout.addFilter(RunIdFilter(run_id))

    handler_file = logging.handlers.RotatingFileHandler(
        log_dir / "bandgap_engine.log", maxBytes=1_000_000, backupCount=3
    )
    handler_file.setFormatter(formatter)
    handler_file.addFilter(RunIdFilter(run_id))

    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, handlers=[handler_stdout, handler_file], force=True)


def run_command(args: argparse.Namespace) -> int:
    config = load_config(Path(args.config))
    config = apply_overrides(
        config, solver=args.solver, grid=args.grid, output_dir=args.output_dir, workers=args.workers
    )
    result = run_sweep(config)
    written = emit_outputs(result)
    failed = result.failed
    LOGGER.info(
        "Run completed",
        extra={"points": len(result.points), "failed": len(failed), "csv": str(written["sweep"])},
    )
    return 1 if failed else 0


def fit_command(args: argparse.Namespace) -> int:
    config = load_config(Path(args.config))
    config = apply_overrides(config, output_dir=args.output_dir)
    out = config.output.directory
    out.mkdir(parents=True, exist_ok=True)
    try:
        decomps = fit_baths(config)
    except (FitError, QuadratureError) as exc:
        LOGGER.error("Bath fit failed", extra={"error": str(exc)})
        return 1
    for decomp in decomps:
        path = out / f"bath_{decomp.spec.label.value}.txt"
        write_decomposition(decomp, path, mu=counter_term(decomp.spec.spectral))
        print(f"{decomp.spec.label.value}: {len(decomp)} modes, certified error {decomp.certified_error:.3e} -> {path}")
    return 0


def resonances_command(args: argparse.Namespace) -> int:
    config = load_config(Path(args.config))
    config = apply_overrides(config, output_dir=args.output_dir)
    markers = resonance_markers(config)
    for mark in markers:
        print(f"{mark.frequency:10.6f}  {mark.mechanism:<18} {mark.bath:<5} order {mark.order}")
    if args.output_dir:
        out = config.output.directory
        out.mkdir(parents=True, exist_ok=True)
        write_resonances(markers, out / "resonances.csv")
    return 0


def scan_command(args: argparse.Namespace) -> int:
    config = load_config(Path(args.config))
    omega_s = args.omega_s if args.omega_s is not None else config.system.omega_s[0]
    lam = args.lam if args.lam is not None else config.system.lam[0]
    scan = depth_scan(config, sorted(args.depths), lam, omega_s)
    print(f"{'L':>3}  {'I_s':>14}  {'I_f':>14}")
    for depth, slow, fast in scan.table:
        print(f"{depth:>3}  {slow:+.6e}  {fast:+.6e}")
    if scan.converged:
        print(f"Converged depth: {scan.depth}")
        return 0
    print("No depth in the grid met the 1% criterion")
    return 1


def summary_command(args: argparse.Namespace) -> int:
    print(render_summary(read_sweep_csv(Path(args.csv))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Bandgap heat engine simulations")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    subparsers = parser.add_subparsers(dest="command")

    run_parser = subparsers.add_parser("run", help="Run a sweep and write CSV outputs")
    run_parser.add_argument("--config", required=True, help="Path to config YAML")
    run_parser.add_argument(
        "--solver", choices=["heom", "redfield_plus", "redfield_markov", "born_markov"], help="Solver override"
    )
    run_parser.add_argument("--grid", help="omega_s grid override, start:stop:num or a comma list")
    run_parser.add_argument("--output-dir", help="Output directory override")
    run_parser.add_argument("--workers", type=int, help="Parallel sweep workers")

    fit_parser = subparsers.add_parser("fit", help="Write bath decomposition tables")
    fit_parser.add_argument("--config", required=True, help="Path to config YAML")
    fit_parser.add_argument("--output-dir", help="Output directory override")

    resonance_parser = subparsers.add_parser("resonances", help="Print predicted resonance frequencies")
    resonance_parser.add_argument("--config", required=True, help="Path to config YAML")
    resonance_parser.add_argument("--output-dir", help="Also write resonances.csv here")

    scan_parser = subparsers.add_parser("scan", help="Hierarchy depth convergence scan")
    scan_parser.add_argument("--config", required=True, help="Path to config YAML")
    scan_parser.add_argument("--depths", type=int, nargs="+", required=True, help="Depths to compare")
    scan_parser.add_argument("--omega-s", type=float, help="Driving frequency (default: first grid point)")
    scan_parser.add_argument("--lam", type=float, help="Driving amplitude (default: first grid point)")

    summary_parser = subparsers.add_parser("summary", help="Summarise a sweep CSV")
    summary_parser.add_argument("--csv", required=True, help="Path to sweep.csv")

    return parser


COMMANDS = {
    "run": run_command,
    "fit": fit_command,
    "resonances": resonances_command,
    "scan": scan_command,
    "summary": summary_command,
}


def main(argv: Optional[List[str]] = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command not in COMMANDS:
        parser.print_help()
        sys.exit(1)

    run_id = str(uuid.uuid4())
    log_dir = Path(os.getenv("BANDGAP_ENGINE_LOG_DIR", "logs"))
    _setup_logging(log_dir, run_id, verbose=args.verbose)

    try:
        code = COMMANDS[args.command](args)
    except ConfigError as exc:
        LOGGER.error("Configuration error", extra={"error": str(exc), "errors": exc.errors})
        sys.exit(1)
    except OutputError as exc:
        LOGGER.error("Output error", extra={"error": str(exc)})
        sys.exit(1)
    sys.exit(code)


if __name__ == "__main__":
    main()
