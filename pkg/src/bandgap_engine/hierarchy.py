"""Rescaled hierarchical equations of motion for the modulated qubit.

The system Hamiltonian is H0(t) = omega(t) |1><1| in the basis (|0>, |1>),
coupled through sigma_x to every exponential mode of both reservoirs.
Auxiliary matrices are stored as one (N, 2, 2) complex array, ordered by
hierarchy level; neighbour lookups use precomputed index arrays with a
trailing zero row standing in for absent neighbours.
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from bandgap_engine.bath_model import BathDecomposition, BathLabel
from bandgap_engine.integrate import rk4_step, steps_between

LOGGER = logging.getLogger(__name__)

ADOIndex = Tuple[int, ...]

BLOWUP_LIMIT = 1e6
DEFAULT_INDEX_CEILING = 200_000
DEFAULT_FILTER_THRESHOLD = 1e-7

# [H0, rho] = omega(t) * SPLIT * rho elementwise for H0 = diag(0, omega)
SPLIT = np.array([[0.0, -1.0], [1.0, 0.0]])


class CapacityError(RuntimeError):
    pass


class DimensionError(ValueError):
    pass


class InstabilityError(RuntimeError):
    def __init__(self, message: str, t: float) -> None:
        super().__init__(message)
        self.t = t


class DepthError(ValueError):
    pass


@dataclass(frozen=True)
class DrivenTLS:
    omega_0: float
    lam: float
    omega_s: float

    def __post_init__(self) -> None:
        if not self.omega_0 > 0:
            raise ValueError(f"omega_0 must be positive, got {self.omega_0}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if not self.omega_s > 0:
            raise ValueError(f"omega_s must be positive, got {self.omega_s}")

    def omega(self, t: float) -> float:
        return self.omega_0 + self.lam * math.cos(self.omega_s * t)

    def phase(self, t: float) -> float:
        """Accumulated splitting int_0^t omega."""
        return self.omega_0 * t + self.lam / self.omega_s * math.sin(self.omega_s * t)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega_s


def sigma_x_left(a: np.ndarray) -> np.ndarray:
    return a[..., ::-1, :]


def sigma_x_right(a: np.ndarray) -> np.ndarray:
    return a[..., :, ::-1]


def liouville(omega: float, a: np.ndarray) -> np.ndarray:
    """-i [H0, a] for every trailing 2x2 block."""
    return -1j * omega * SPLIT * a


INITIAL_STATES: Dict[str, np.ndarray] = {
    "ground": np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex),
    "excited": np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex),
    "mixed": np.array([[0.5, 0.0], [0.0, 0.5]], dtype=complex),
    "coherent": np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex),
}


def initial_density(name: str) -> np.ndarray:
    try:
        return INITIAL_STATES[name].copy()
    except KeyError:
        raise ValueError(f"unknown initial state {name!r}; expected one of {sorted(INITIAL_STATES)}") from None


@dataclass(frozen=True, eq=False)
class ModeTable:
    """Exponential modes of both reservoirs, slow modes first."""

    gammas: np.ndarray
    amplitudes: np.ndarray
    backward: np.ndarray
    scales: np.ndarray
    labels: Tuple[BathLabel, ...]
    c0: Dict[BathLabel, complex]

    def __len__(self) -> int:
        return len(self.gammas)

    def select(self, label: BathLabel) -> np.ndarray:
        return np.array([k for k, owner in enumerate(self.labels) if owner is label], dtype=int)


def mode_table(decomps: Sequence[BathDecomposition]) -> ModeTable:
    ordered = sorted(decomps, key=lambda d: 0 if d.spec.label is BathLabel.SLOW else 1)
    labels = [d.spec.label for d in ordered]
    if len(set(labels)) != len(labels):
        raise DimensionError(f"duplicate bath labels: {[lbl.value for lbl in labels]}")
    gammas = np.concatenate([d.rates for d in ordered]) if ordered else np.zeros(0, dtype=complex)
    amps = np.concatenate([d.amplitudes for d in ordered]) if ordered else np.zeros(0, dtype=complex)
    backward = np.concatenate([d.backward_amplitudes() for d in ordered]) if ordered else np.zeros(0, dtype=complex)
    scales = np.concatenate([d.scales() for d in ordered]) if ordered else np.zeros(0)
    return ModeTable(
        gammas=gammas,
        amplitudes=amps,
        backward=backward,
        scales=np.where(scales > 0, scales, 1.0),
        labels=tuple(lbl for d in ordered for lbl in [d.spec.label] * len(d)),
        c0={d.spec.label: d.c0 for d in ordered},
    )


@dataclass(frozen=True, eq=False)
class IndexSet:
    """All multi-indices with |n| <= depth plus neighbour links.

    ``plus[i, k]`` is the row of n + e_k and ``minus[i, k]`` the row of
    n - e_k; both hold ``len(self)`` (the zero pad row) when absent.
    """

    n_modes: int
    depth: int
    counts: np.ndarray
    plus: np.ndarray = field(repr=False)
    minus: np.ndarray = field(repr=False)
    lookup: Dict[ADOIndex, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def indices(self) -> List[ADOIndex]:
        return [tuple(int(v) for v in row) for row in self.counts]

    @property
    def levels(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def position(self, index: Sequence[int]) -> Optional[int]:
        return self.lookup.get(tuple(int(v) for v in index))

    def unit(self, k: int) -> Optional[int]:
        index = [0] * self.n_modes
        index[k] = 1
        return self.position(index)

    def pair(self, k: int, l: int) -> Optional[int]:
        index = [0] * self.n_modes
        index[k] += 1
        index[l] += 1
        return self.position(index)

    @functools.cached_property
    def pair_rows(self) -> np.ndarray:
        """pair_rows[k, l] is the row of e_k + e_l, -1 below depth two."""
        rows = np.full((self.n_modes, self.n_modes), -1, dtype=np.int64)
        modes = np.arange(self.n_modes)
        for i in np.flatnonzero(self.levels == 2):
            k, l = np.repeat(modes, self.counts[i])
            rows[k, l] = rows[l, k] = i
        return rows

    @functools.cached_property
    def unit_rows(self) -> np.ndarray:
        """Rows of the first-level ADOs, -1 where the depth is zero."""
        rows = [self.unit(k) for k in range(self.n_modes)]
        return np.array([-1 if r is None else r for r in rows], dtype=np.int64)

    @classmethod
    def from_counts(cls, counts: np.ndarray, depth: int) -> "IndexSet":
        counts = np.asarray(counts, dtype=np.int64).reshape(len(counts), -1)
        n_rows, n_modes = counts.shape
        lookup = {tuple(int(v) for v in row): i for i, row in enumerate(counts)}
        plus = np.full((n_rows, n_modes), n_rows, dtype=np.int64)
        minus = np.full((n_rows, n_modes), n_rows, dtype=np.int64)
        for i, row in enumerate(counts):
            key = list(int(v) for v in row)
            for k in range(n_modes):
                key[k] += 1
                plus[i, k] = lookup.get(tuple(key), n_rows)
                key[k] -= 2
                if key[k] >= 0:
                    minus[i, k] = lookup.get(tuple(key), n_rows)
                key[k] += 1
        return cls(n_modes=n_modes, depth=depth, counts=counts, plus=plus, minus=minus, lookup=lookup)


def index_count(n_modes: int, depth: int) -> int:
    return math.comb(n_modes + depth, depth)


def build_index_set(n_modes: int, depth: int, ceiling: int = DEFAULT_INDEX_CEILING) -> IndexSet:
    """Enumerate by level; within a level, lower modes carry larger counts first."""
    if n_modes < 1 or depth < 0:
        raise ValueError(f"build_index_set requires K >= 1 and L >= 0, got K={n_modes}, L={depth}")
    total = index_count(n_modes, depth)
    if total > ceiling:
        raise CapacityError(f"hierarchy with K={n_modes}, L={depth} needs {total} ADOs (ceiling {ceiling})")
    rows = np.zeros((total, n_modes), dtype=np.int64)
    i = 0
    for level in range(depth + 1):
        for combo in itertools.combinations_with_replacement(range(n_modes), level):
            for k in combo:
                rows[i, k] += 1
            i += 1
    LOGGER.debug("Index set built", extra={"modes": n_modes, "depth": depth, "size": total})
    return IndexSet.from_counts(rows, depth)


@dataclass(frozen=True, eq=False)
class HierarchyState:
    t: float
    index_set: IndexSet
    ados: np.ndarray

    @property
    def root(self) -> np.ndarray:
        return self.ados[0]

    @property
    def active(self) -> np.ndarray:
        return np.any(self.ados != 0, axis=(1, 2))


def initial_state(index_set: IndexSet, rho: np.ndarray, t: float = 0.0) -> HierarchyState:
    ados = np.zeros((len(index_set), 2, 2), dtype=complex)
    ados[0] = rho
    return HierarchyState(t=t, index_set=index_set, ados=ados)


@dataclass(frozen=True)
class HeomConfig:
    depth: int
    step: float
    filter_threshold: float = DEFAULT_FILTER_THRESHOLD
    initial_state: str = "ground"
    index_ceiling: int = DEFAULT_INDEX_CEILING

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not self.filter_threshold >= 0:
            raise ValueError(f"filter_threshold must be >= 0, got {self.filter_threshold}")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        initial_density(self.initial_state)


class HeomGenerator:
    """Vectorised right-hand side over the whole index set."""

    def __init__(self, tls: DrivenTLS, modes: ModeTable, index_set: IndexSet) -> None:
        if index_set.n_modes != len(modes):
            raise DimensionError(f"index set has {index_set.n_modes} modes, decompositions provide {len(modes)}")
        self.tls = tls
        self.index_set = index_set
        counts = index_set.counts.astype(float)
        has_up = index_set.plus < len(index_set)
        self.plus = index_set.plus
        self.minus = index_set.minus
        self.damping = counts @ modes.gammas
        self.up = np.where(has_up, np.sqrt((counts + 1.0) * modes.scales), 0.0)
        down = np.sqrt(counts / modes.scales)
        self.down_left = down * modes.amplitudes
        self.down_right = down * modes.backward

    def __call__(self, t: float, ados: np.ndarray) -> np.ndarray:
        padded = np.concatenate([ados, np.zeros((1, 2, 2), dtype=complex)])
        upper = padded[self.plus]
        lower = padded[self.minus]
        coupling = np.einsum("nk,nkij->nij", self.up, sigma_x_left(upper) - sigma_x_right(upper))
        coupling += np.einsum("nk,nkij->nij", self.down_left, sigma_x_left(lower))
        coupling -= np.einsum("nk,nkij->nij", self.down_right, sigma_x_right(lower))
        return liouville(self.tls.omega(t), ados) - self.damping[:, None, None] * ados - 1j * coupling


def heom_rhs(state: HierarchyState, tls: DrivenTLS, decomps: Sequence[BathDecomposition]) -> np.ndarray:
    if state.ados.shape != (len(state.index_set), 2, 2):
        raise DimensionError(f"ADO array shape {state.ados.shape} does not match index set of {len(state.index_set)}")
    generator = HeomGenerator(tls, mode_table(decomps), state.index_set)
    return generator(state.t, state.ados)


def _filter_rows(ados: np.ndarray, threshold: float) -> int:
    if threshold <= 0:
        return 0
    small = np.max(np.abs(ados), axis=(1, 2)) < threshold
    small[0] = False
    ados[small] = 0.0
    return int(small.sum())


def filter_ados(state: HierarchyState, threshold: float) -> HierarchyState:
    """Zero every non-root ADO whose largest element is below threshold."""
    if not threshold >= 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    ados = state.ados.copy()
    _filter_rows(ados, threshold)
    return replace(state, ados=ados)


def check_finite(ados: np.ndarray, t: float) -> None:
    peak = float(np.max(np.abs(ados)))
    if not math.isfinite(peak) or peak > BLOWUP_LIMIT:
        raise InstabilityError(f"ADO magnitude {peak:.3e} exceeded guard at t={t:.6g}", t=t)


Observer = Callable[[HierarchyState], None]


def propagate(
    state: HierarchyState,
    tls: DrivenTLS,
    decomps: Sequence[BathDecomposition],
    cfg: HeomConfig,
    t_end: float,
    observer: Optional[Observer] = None,
) -> HierarchyState:
    """Fixed-step RK4 from state.t to t_end with filtering after every step."""
    steps = steps_between(state.t, t_end, cfg.step)
    generator = HeomGenerator(tls, mode_table(decomps), state.index_set)
    ados = state.ados.copy()
    t0 = state.t
    for n in range(1, steps + 1):
        t_prev = t0 + (n - 1) * cfg.step
        ados = rk4_step(generator, t_prev, ados, cfg.step)
        _filter_rows(ados, cfg.filter_threshold)
        t = t0 + n * cfg.step
        check_finite(ados, t)
        if observer is not None:
            observer(HierarchyState(t=t, index_set=state.index_set, ados=ados))
    return HierarchyState(t=t0 + steps * cfg.step, index_set=state.index_set, ados=ados)


@dataclass(frozen=True)
class ConvergenceScan:
    depth: Optional[int]
    table: Tuple[Tuple[int, float, float], ...]

    @property
    def converged(self) -> bool:
        return self.depth is not None


def _close(a: float, b: float, rel: float, floor: float) -> bool:
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), floor)


def convergence_scan(
    depths: Sequence[int],
    evaluate: Callable[[int], Tuple[float, float]],
    rel: float = 0.01,
    floor: float = 1e-12,
) -> ConvergenceScan:
    """Smallest depth whose mean currents move by < rel against the next depth in the grid.

    ``evaluate`` maps a depth to the period-averaged (slow, fast) currents. Every
    requested depth is evaluated and reported in ``table``.
    """
    depths = list(depths)
    if not depths:
        raise ValueError("convergence_scan needs at least one depth")
    if any(b <= a for a, b in zip(depths, depths[1:])):
        raise ValueError(f"depth grid must be strictly ascending, got {depths}")
    table: List[Tuple[int, float, float]] = []
    found: Optional[int] = None
    for depth in depths:
        slow, fast = evaluate(depth)
        table.append((depth, float(slow), float(fast)))
        LOGGER.info("Depth evaluated", extra={"depth": depth, "I_s": slow, "I_f": fast})
        if found is None and len(table) >= 2:
            prev = table[-2]
            if _close(prev[1], slow, rel, floor) and _close(prev[2], fast, rel, floor):
                found = prev[0]
    if found is None:
        LOGGER.warning("Depth scan did not converge", extra={"depths": depths})
    return ConvergenceScan(depth=found, table=tuple(table))


def save_checkpoint(state: HierarchyState, path: Union[str, Path]) -> None:
    with Path(path).open("wb") as handle:
        np.savez(
            handle,
            t=np.array(state.t),
            depth=np.array(state.index_set.depth),
            counts=state.index_set.counts,
            ados=state.ados,
        )


def load_checkpoint(path: Union[str, Path]) -> HierarchyState:
    with np.load(Path(path)) as data:
        index_set = IndexSet.from_counts(data["counts"], int(data["depth"]))
        return HierarchyState(t=float(data["t"]), index_set=index_set, ados=data["ados"].astype(complex))
