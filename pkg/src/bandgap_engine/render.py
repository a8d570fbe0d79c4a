from __future__ import annotations

from typing import Iterable, Mapping, Optional


def _number(row: Mapping[str, str], key: str) -> Optional[float]:
    value = row.get(key, "")
    return float(value) if value not in ("", None) else None


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:+.4e}"


def render_summary(rows: Iterable[Mapping[str, str]]) -> str:
    """Plain-text digest of a sweep CSV: one block per point plus the power peak."""
    lines = ["Bandgap Engine Sweep Summary", ""]
    count = 0
    failed = 0
    best = None
    for row in rows:
        count += 1
        power = _number(row, "P_sum")
        status = row.get("status", "")
        if status != "ok":
            failed += 1
        if power is not None and (best is None or power > best[0]):
            best = (power, row)
        eta = _number(row, "eta")
        meaningful = row.get("eta_meaningful") == "true"
        lines.extend(
            [
                f"{count}. omega_s={row['omega_s']} lambda={row['lambda']} [{row.get('solver', '')}] {status}",
                f"   I_s: {_fmt(_number(row, 'I_s'))}   I_f: {_fmt(_number(row, 'I_f'))}",
                f"   P: {_fmt(power)}   P_work: {_fmt(_number(row, 'P_work'))}",
                f"   eta: {'-' if eta is None else f'{eta:.3f}'}{'' if meaningful or eta is None else ' (dissipator)'}",
            ]
        )
        if row.get("error"):
            lines.append(f"   Error: {row['error']}")
        lines.append("")
    if count == 0:
        lines.append("No sweep points found.")
        return "\n".join(lines)
    lines.append(f"Points: {count}  failed: {failed}")
    if best is not None:
        power, row = best
        regime = "engine" if power > 0 else "dissipator"
        lines.append(f"Peak power {power:+.4e} at omega_s={row['omega_s']} lambda={row['lambda']} ({regime})")
    return "\n".join(lines)
