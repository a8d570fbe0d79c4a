"""Fixed-step classical Runge-Kutta stepping shared by all propagators."""

from __future__ import annotations

import math
from typing import Callable, Tuple

import numpy as np

Rhs = Callable[[float, np.ndarray], np.ndarray]

STEPS_PER_SHORTEST_SCALE = 200


def rk4_step(rhs: Rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def default_step(omega_s: float, omega_0: float, max_decay: float = 0.0) -> float:
    """h = tau_min / 200 over drive period, qubit period and fastest mode decay."""
    scales = [2.0 * math.pi / omega_s, 2.0 * math.pi / omega_0]
    if max_decay > 0:
        scales.append(1.0 / max_decay)
    return min(scales) / STEPS_PER_SHORTEST_SCALE


def align_step(period: float, h_max: float) -> Tuple[float, int]:
    """Largest step <= h_max that divides one period exactly."""
    if not period > 0 or not h_max > 0:
        raise ValueError("align_step requires positive period and step")
    steps = max(1, int(math.ceil(period / h_max - 1e-9)))
    return period / steps, steps


def steps_between(t_start: float, t_end: float, h: float) -> int:
    """Number of fixed steps covering [t_start, t_end]; the span must be a multiple of h."""
    if t_end < t_start:
        raise ValueError(f"t_end={t_end} precedes t={t_start}")
    count = (t_end - t_start) / h
    steps = int(round(count))
    if abs(count - steps) > 1e-6 * max(1.0, count):
        raise ValueError(f"span {t_end - t_start} is not a multiple of step {h}")
    return steps
