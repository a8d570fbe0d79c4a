"""Closed-form Floquet layer: sidebands, Born-Markov rates and currents, resonance markers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import special

from bandgap_engine.bath_model import BathLabel, BathSpec, spectral_function
from bandgap_engine.hierarchy import DrivenTLS

LOGGER = logging.getLogger(__name__)

SUM_RULE_DEFICIT = 1e-8
MAX_SIDEBAND_ORDER = 2000


class RateWeighting(str, Enum):
    PREFACTOR = "prefactor"
    BESSEL = "bessel"


def bessel_weight(k: int, x: float) -> float:
    if not math.isfinite(x):
        raise ValueError(f"bessel_weight needs a finite argument, got {x}")
    return float(special.jv(k, x))


def sideband_window(x: float, deficit: float = SUM_RULE_DEFICIT) -> int:
    """Smallest k_max with 1 - sum_{|k|<=k_max} J_k(x)^2 < deficit."""
    total = special.jv(0, x) ** 2
    k = 0
    while 1.0 - total >= deficit:
        k += 1
        if k > MAX_SIDEBAND_ORDER:
            raise ValueError(f"Bessel sum rule not met for x={x} within {MAX_SIDEBAND_ORDER} sidebands")
        total += 2.0 * special.jv(k, x) ** 2
    return k


@dataclass(frozen=True)
class FloquetExpansion:
    tls: DrivenTLS
    k_max: int

    @property
    def argument(self) -> float:
        return self.tls.lam / self.tls.omega_s

    @property
    def ks(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)

    @property
    def quasi_energies(self) -> np.ndarray:
        return self.tls.omega_0 + self.ks * self.tls.omega_s

    @property
    def weights(self) -> np.ndarray:
        return special.jv(self.ks, self.argument)

    @property
    def sum_rule_deficit(self) -> float:
        return float(1.0 - np.sum(self.weights**2))


def floquet_expansion(tls: DrivenTLS, k_max: Optional[int] = None) -> FloquetExpansion:
    if k_max is None:
        k_max = sideband_window(tls.lam / tls.omega_s)
    if k_max < 0:
        raise ValueError(f"k_max must be >= 0, got {k_max}")
    return FloquetExpansion(tls=tls, k_max=k_max)


@dataclass(frozen=True, eq=False)
class BornMarkovModel:
    """Sideband rates for one hot and one cold reservoir.

    ``rates_0[i]`` and ``rates_1[i]`` belong to ``expansion.ks[i]``.
    """

    expansion: FloquetExpansion
    hot: BathSpec
    cold: BathSpec
    weighting: RateWeighting
    rates_0: np.ndarray
    rates_1: np.ndarray

    @property
    def gamma_0(self) -> float:
        return float(np.sum(self.rates_0))

    @property
    def gamma_1(self) -> float:
        return float(np.sum(self.rates_1))

    @property
    def ratio(self) -> float:
        """w = Gamma_0 / Gamma_1."""
        if self.gamma_1 == 0:
            return math.inf if self.gamma_0 > 0 else math.nan
        return self.gamma_0 / self.gamma_1

    @property
    def populations(self) -> Tuple[float, float]:
        total = self.gamma_0 + self.gamma_1
        if total == 0:
            return math.nan, math.nan
        return self.gamma_0 / total, self.gamma_1 / total

    def sideband_weights(self) -> np.ndarray:
        return _sideband_weights(self.expansion, self.weighting)


def _sideband_weights(expansion: FloquetExpansion, weighting: RateWeighting) -> np.ndarray:
    if weighting is RateWeighting.BESSEL:
        return expansion.weights**2
    tls = expansion.tls
    return np.full(len(expansion.ks), tls.lam**2 / (4.0 * tls.omega_s**2))


def bm_rates(
    tls: DrivenTLS,
    hot: BathSpec,
    cold: BathSpec,
    weighting: RateWeighting = RateWeighting.PREFACTOR,
    k_max: Optional[int] = None,
) -> BornMarkovModel:
    """Gamma_{0/1}^(k) = a_k [S_h(-/+ omega^(k)) + S_c(-/+ omega^(-k))].

    Only physical sidebands enter: omega^(k) > 0 for the hot reservoir and
    omega^(-k) > 0 for the cold one, so the sums do not depend on ``k_max``
    once the window covers them.
    """
    expansion = floquet_expansion(tls, k_max)
    forward = expansion.quasi_energies
    mirrored = tls.omega_0 - expansion.ks * tls.omega_s
    weighting = RateWeighting(weighting)
    a = _sideband_weights(expansion, weighting)
    rates_0 = a * (_physical(hot, forward, -1.0) + _physical(cold, mirrored, -1.0))
    rates_1 = a * (_physical(hot, forward, 1.0) + _physical(cold, mirrored, 1.0))
    LOGGER.debug(
        "Born-Markov rates",
        extra={"omega_s": tls.omega_s, "k_max": expansion.k_max, "gamma_0": float(rates_0.sum()), "gamma_1": float(rates_1.sum())},
    )
    return BornMarkovModel(
        expansion=expansion,
        hot=hot,
        cold=cold,
        weighting=weighting,
        rates_0=np.asarray(rates_0, dtype=float),
        rates_1=np.asarray(rates_1, dtype=float),
    )


def _physical(bath: BathSpec, quanta: np.ndarray, sign: float) -> np.ndarray:
    # sidebands with non-positive quasi-energy exchange nothing
    return np.where(quanta > 0, spectral_function(bath, sign * quanta), 0.0)


def _exchange_sum(model: BornMarkovModel, bath: BathSpec, quanta: np.ndarray) -> float:
    # S(w) exp(-beta w) = S(-w) also fixes the zero-temperature limit
    total = model.gamma_0 + model.gamma_1
    if total == 0:
        return 0.0
    a = model.sideband_weights()
    s_minus = _physical(bath, quanta, -1.0)
    s_plus = _physical(bath, quanta, 1.0)
    terms = a * quanta * (model.gamma_1 * s_minus - model.gamma_0 * s_plus) / total
    return float(np.sum(terms))


def bm_heat_currents(model: BornMarkovModel) -> Tuple[float, float]:
    """Steady (I_hot, I_cold); positive means energy flows into the qubit."""
    tls = model.expansion.tls
    ks = model.expansion.ks
    hot = _exchange_sum(model, model.hot, tls.omega_0 + ks * tls.omega_s)
    cold = _exchange_sum(model, model.cold, tls.omega_0 - ks * tls.omega_s)
    return hot, cold


def bm_population_ode(p0_initial: float, t, gamma_0: float, gamma_1: float) -> np.ndarray:
    """Solution of dP0/dt = Gamma_0 (1 - P0) - Gamma_1 P0."""
    if not 0.0 <= p0_initial <= 1.0:
        raise ValueError(f"P0 must lie in [0, 1], got {p0_initial}")
    if gamma_0 < 0 or gamma_1 < 0:
        raise ValueError("rates must be non-negative")
    t = np.asarray(t, dtype=float)
    total = gamma_0 + gamma_1
    if total == 0:
        return np.full_like(t, p0_initial)
    asymptote = gamma_0 / total
    return asymptote + (p0_initial - asymptote) * np.exp(-total * t)


@dataclass(frozen=True)
class Resonance:
    frequency: float
    mechanism: str
    bath: str
    order: int


def predict_resonances(
    omega_0: float, lam: float, omega_slow: float, omega_fast: float, k_max: int
) -> List[Resonance]:
    """Driving frequencies where heat-current features are expected.

    The predictions depend on the level splitting and the reservoir centres
    only; ``lam`` is accepted so callers can pass a full parameter set.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    marks: List[Resonance] = []
    for label, center in ((BathLabel.SLOW, omega_slow), (BathLabel.FAST, omega_fast)):
        detuning = abs(center - omega_0)
        if detuning > 0:
            marks.extend(Resonance(detuning / k, "sideband", label.value, k) for k in range(1, k_max + 1))
        marks.append(Resonance(center, "bath_mode", label.value, 1))
        marks.append(Resonance(2.0 * center, "bath_mode", label.value, 2))
        marks.append(Resonance(0.5 * (omega_0 + center), "qubit_bath_hybrid", label.value, 2))
    marks.append(Resonance(0.5 * abs(omega_fast - omega_slow), "bath_difference", "both", 2))
    marks.append(Resonance(0.5 * (omega_fast + omega_slow), "bath_sum", "both", 2))
    return sorted(marks, key=lambda r: (r.frequency, r.bath, r.mechanism))
