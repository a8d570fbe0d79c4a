"""Second-order master equations in auxiliary-operator form.

Redfield-plus keeps one first-order auxiliary matrix per exponential mode and
coincides with the hierarchy truncated at depth one. The time-local Redfield
equation replaces them by operators q_k that are driven by sigma_x alone.
Both are written in the Schroedinger picture.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from bandgap_engine.bath_model import BathDecomposition
from bandgap_engine.hierarchy import (
    DimensionError,
    DrivenTLS,
    ModeTable,
    check_finite,
    liouville,
    mode_table,
    sigma_x_left,
    sigma_x_right,
)
from bandgap_engine.integrate import rk4_step, steps_between

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RedfieldPlusState:
    t: float
    rho: np.ndarray
    ados: np.ndarray

    @classmethod
    def start(cls, rho: np.ndarray, n_modes: int, t: float = 0.0) -> "RedfieldPlusState":
        return cls(t=t, rho=np.array(rho, dtype=complex), ados=np.zeros((n_modes, 2, 2), dtype=complex))


@dataclass(frozen=True, eq=False)
class MarkovRedfieldState:
    t: float
    rho: np.ndarray
    q: np.ndarray

    @classmethod
    def start(cls, rho: np.ndarray, n_modes: int, t: float = 0.0) -> "MarkovRedfieldState":
        return cls(t=t, rho=np.array(rho, dtype=complex), q=np.zeros((n_modes, 2, 2), dtype=complex))


PerturbativeState = Union[RedfieldPlusState, MarkovRedfieldState]


def _check_modes(n_aux: int, modes: ModeTable) -> None:
    if n_aux != len(modes):
        raise DimensionError(f"state carries {n_aux} auxiliary matrices, decompositions provide {len(modes)}")


def _commutator_x(a: np.ndarray) -> np.ndarray:
    return sigma_x_left(a) - sigma_x_right(a)


class _RedfieldPlus:
    def __init__(self, tls: DrivenTLS, modes: ModeTable) -> None:
        self.tls = tls
        self.gammas = modes.gammas[:, None, None]
        self.forward = modes.amplitudes[:, None, None]
        self.backward = modes.backward[:, None, None]

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        omega = self.tls.omega(t)
        rho, ados = y[0], y[1:]
        out = np.empty_like(y)
        out[0] = liouville(omega, rho) - 1j * _commutator_x(ados.sum(axis=0))
        out[1:] = (
            liouville(omega, ados)
            - self.gammas * ados
            - 1j * (self.forward * sigma_x_left(rho) - self.backward * sigma_x_right(rho))
        )
        return out


class _MarkovRedfield:
    def __init__(self, tls: DrivenTLS, modes: ModeTable) -> None:
        self.tls = tls
        self.gammas = modes.gammas[:, None, None]
        self.forward = modes.amplitudes[:, None, None]
        self.sigma_x = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        omega = self.tls.omega(t)
        rho, q = y[0], y[1:]
        effective = q @ rho + rho @ np.conj(np.swapaxes(q, -1, -2))
        out = np.empty_like(y)
        out[0] = liouville(omega, rho) - 1j * _commutator_x(effective.sum(axis=0))
        out[1:] = liouville(omega, q) - self.gammas * q - 1j * self.forward * self.sigma_x
        return out


def redfield_plus_rhs(
    state: RedfieldPlusState, tls: DrivenTLS, decomps: Sequence[BathDecomposition]
) -> RedfieldPlusState:
    """Derivatives of (rho, first-order ADOs), returned in state form at the same t."""
    modes = mode_table(decomps)
    _check_modes(len(state.ados), modes)
    y = np.concatenate([state.rho[None], state.ados])
    dy = _RedfieldPlus(tls, modes)(state.t, y)
    return RedfieldPlusState(t=state.t, rho=dy[0], ados=dy[1:])


def markov_redfield_rhs(
    state: MarkovRedfieldState, tls: DrivenTLS, decomps: Sequence[BathDecomposition]
) -> MarkovRedfieldState:
    modes = mode_table(decomps)
    _check_modes(len(state.q), modes)
    y = np.concatenate([state.rho[None], state.q])
    dy = _MarkovRedfield(tls, modes)(state.t, y)
    return MarkovRedfieldState(t=state.t, rho=dy[0], q=dy[1:])


def effective_first_order(state: MarkovRedfieldState) -> np.ndarray:
    """q_k rho + rho q_k^dagger per mode; plays the role of the first-order ADOs."""
    return state.q @ state.rho + state.rho @ np.conj(np.swapaxes(state.q, -1, -2))


def propagate_perturbative(
    state: PerturbativeState,
    tls: DrivenTLS,
    decomps: Sequence[BathDecomposition],
    step: float,
    t_end: float,
    observer: Optional[Callable[[PerturbativeState], None]] = None,
) -> PerturbativeState:
    """Fixed-step RK4 for either perturbative solver."""
    modes = mode_table(decomps)
    if isinstance(state, RedfieldPlusState):
        aux, rhs, wrap = state.ados, _RedfieldPlus(tls, modes), RedfieldPlusState
    elif isinstance(state, MarkovRedfieldState):
        aux, rhs, wrap = state.q, _MarkovRedfield(tls, modes), MarkovRedfieldState
    else:
        raise TypeError(f"unsupported state type {type(state).__name__}")
    _check_modes(len(aux), modes)
    steps = steps_between(state.t, t_end, step)
    y = np.concatenate([state.rho[None], aux])
    t0 = state.t
    for n in range(1, steps + 1):
        y = rk4_step(rhs, t0 + (n - 1) * step, y, step)
        t = t0 + n * step
        check_finite(y, t)
        if observer is not None:
            observer(wrap(t, y[0], y[1:]))
    return wrap(t0 + steps * step, y[0], y[1:])
