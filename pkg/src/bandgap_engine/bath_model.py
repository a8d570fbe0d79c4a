"""Reservoir spectra, thermal correlation functions and their exponential fits.

Two spectral families are supported. The bandgap family

    J(w) = kappa xi^8 w / ((w^2 - Omega^2)^6 + w^2 xi^10)

and the narrow family

    J(w) = kappa w / ((w^4 - Omega^4)^6 + w^2)

Both are odd in w. The correlation function C(t) = int dw/pi S(w) exp(-i w t)
with S(w) = J(w) / (1 - exp(-beta w)) is evaluated by adaptive quadrature and
fitted by a sum of complex exponentials that the hierarchy consumes.
"""

from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, linalg, optimize

LOGGER = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

QUADRATURE_TOL = 1e-9
WINDOW_RELATIVE_CUTOFF = 1e-10
MIN_DECAY_RATE = 1e-6
TABLE_MAGIC = "# bandgap-engine bath decomposition v1"


class QuadratureError(RuntimeError):
    pass


class FitError(RuntimeError):
    def __init__(self, message: str, best_error: float, best: Optional["BathDecomposition"] = None) -> None:
        super().__init__(message)
        self.best_error = best_error
        self.best = best


class Family(str, Enum):
    BANDGAP = "bandgap"
    NARROW = "narrow"


class BathLabel(str, Enum):
    SLOW = "slow"
    FAST = "fast"


@dataclass(frozen=True)
class SpectralDensity:
    family: Family
    kappa: float
    omega: float
    xi: float = 1.0

    def __post_init__(self) -> None:
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not self.xi > 0:
            raise ValueError(f"xi must be positive, got {self.xi}")

    def over_omega(self, w: ArrayLike) -> ArrayLike:
        """J(w)/w, regular at w = 0."""
        w = np.asarray(w, dtype=float)
        if self.family is Family.BANDGAP:
            xi = self.xi
            value = self.kappa * xi**8 / ((w**2 - self.omega**2) ** 6 + w**2 * xi**10)
        else:
            value = self.kappa / ((w**4 - self.omega**4) ** 6 + w**2)
        return value if value.ndim else float(value)

    def value(self, w: ArrayLike) -> ArrayLike:
        return np.asarray(w, dtype=float) * self.over_omega(w)

    @property
    def kappa_eff(self) -> float:
        return float(self.over_omega(self.omega))


def spectral_density_value(sd: SpectralDensity, w: ArrayLike) -> ArrayLike:
    value = sd.value(w)
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True)
class BathSpec:
    spectral: SpectralDensity
    temperature: float
    label: BathLabel

    def __post_init__(self) -> None:
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be non-negative, got {self.temperature}")

    @property
    def beta(self) -> float:
        return math.inf if self.temperature == 0 else 1.0 / self.temperature

    def check_against(self, omega_0: float) -> None:
        """Slow baths sit below the qubit splitting, fast baths above it."""
        center = self.spectral.omega
        if self.label is BathLabel.SLOW and not center < omega_0:
            raise ValueError(f"slow bath requires Omega < omega_0 ({center} >= {omega_0})")
        if self.label is BathLabel.FAST and not center > omega_0:
            raise ValueError(f"fast bath requires Omega > omega_0 ({center} <= {omega_0})")


def spectral_function(bath: BathSpec, w: ArrayLike) -> ArrayLike:
    sd = bath.spectral
    w = np.asarray(w, dtype=float)
    if bath.temperature == 0:
        value = np.where(w > 0, sd.value(w), 0.0)
    else:
        x = bath.beta * w
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            # x / (1 - exp(-x)) -> 1 as x -> 0
            bose = np.where(np.abs(x) < 1e-12, 1.0 + 0.5 * x, x / -np.expm1(-x))
            bose = np.where(np.isfinite(bose), bose, 0.0)
        value = sd.over_omega(w) * bath.temperature * bose
    return float(value) if np.ndim(value) == 0 else value


@functools.lru_cache(maxsize=64)
def frequency_window(bath: BathSpec) -> float:
    """Half-width W with |S| < 1e-10 max|S| outside [-W, W]."""
    center = bath.spectral.omega
    grid = np.linspace(0.0, 4.0 * center, 8001)
    peak = float(np.max(np.abs(spectral_function(bath, grid))))
    window = center
    while abs(spectral_function(bath, window)) >= WINDOW_RELATIVE_CUTOFF * peak:
        window *= 1.25
    return window


def _breakpoints(bath: BathSpec) -> List[Tuple[float, float]]:
    window = frequency_window(bath)
    center = bath.spectral.omega
    marks = [0.0, 0.5 * center, center, 1.5 * center, 2.0 * center, window]
    marks = sorted({m for m in marks if m <= window})
    positive = list(zip(marks[:-1], marks[1:]))
    if bath.temperature == 0:
        return positive
    negative = [(-b, -a) for a, b in reversed(positive)]
    return negative + positive


def _quad(func, a: float, b: float, **kwargs) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, _ = integrate.quad(func, a, b, limit=400, **kwargs)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{a}, {b}] did not converge: {exc}") from exc
    return value


def correlation_quadrature(bath: BathSpec, t: float, tol: float = QUADRATURE_TOL) -> complex:
    if t < 0:
        raise ValueError("correlation_quadrature requires t >= 0")
    pieces = _breakpoints(bath)
    eps = tol / (2 * len(pieces))

    def integrand(w: float) -> float:
        return spectral_function(bath, w)

    real = 0.0
    imag = 0.0
    for a, b in pieces:
        if t == 0:
            real += _quad(integrand, a, b, epsabs=eps, epsrel=1e-10)
        else:
            real += _quad(integrand, a, b, weight="cos", wvar=t, epsabs=eps, epsrel=1e-10)
            imag -= _quad(integrand, a, b, weight="sin", wvar=t, epsabs=eps, epsrel=1e-10)
    return complex(real, imag) / math.pi


def correlation_on_grid(bath: BathSpec, times: Iterable[float], tol: float = QUADRATURE_TOL) -> np.ndarray:
    return np.array([correlation_quadrature(bath, float(t), tol) for t in times], dtype=complex)


def counter_term(sd: SpectralDensity) -> float:
    """Reorganization scalar mu = (2/pi) int_0^inf J(w)/w dw."""
    center = sd.omega
    total = 0.0
    for a, b in ((0.0, center), (center, 2.0 * center)):
        total += _quad(sd.over_omega, a, b, epsabs=QUADRATURE_TOL, epsrel=1e-10)
    total += _quad(sd.over_omega, 2.0 * center, np.inf, epsabs=QUADRATURE_TOL, epsrel=1e-10)
    return 2.0 * total / math.pi


def memory_time(bath: BathSpec, horizon: float = 400.0, step: float = 0.5, threshold: float = 1e-3) -> float:
    """First time after which |C(t)| stays below threshold * |C(0)| on the scan grid."""
    times = np.arange(0.0, horizon + step, step)
    magnitude = np.abs(correlation_on_grid(bath, times, tol=1e-7))
    above = np.nonzero(magnitude >= threshold * magnitude[0])[0]
    last = int(above[-1]) if above.size else 0
    if last + 1 >= len(times):
        LOGGER.warning("Correlation did not decay within scan horizon", extra={"horizon": horizon})
        return horizon
    return float(times[last + 1])


def default_fit_window(bath: BathSpec, floor: float = 50.0) -> float:
    return max(floor, 3.0 * memory_time(bath))


@dataclass(frozen=True)
class ExponentialMode:
    d: complex
    gamma: complex

    def __post_init__(self) -> None:
        if not self.gamma.real > 0:
            raise ValueError(f"mode must decay, got gamma={self.gamma}")


@dataclass(frozen=True)
class BathDecomposition:
    spec: BathSpec
    modes: Tuple[ExponentialMode, ...]
    t_max: float
    certified_error: float

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([m.d for m in self.modes], dtype=complex)

    @property
    def rates(self) -> np.ndarray:
        return np.array([m.gamma for m in self.modes], dtype=complex)

    def __len__(self) -> int:
        return len(self.modes)

    def reconstruct(self, t: ArrayLike) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.exp(-np.outer(t, self.rates)) @ self.amplitudes

    @property
    def c0(self) -> complex:
        return complex(np.sum(self.amplitudes))

    def conjugate_partners(self) -> Optional[np.ndarray]:
        """Index of the mode with conjugate rate, or None if the set is not closed."""
        rates = self.rates
        partners = np.empty(len(rates), dtype=int)
        for k, gamma in enumerate(rates):
            distance = np.abs(rates - np.conj(gamma))
            j = int(np.argmin(distance))
            if distance[j] > 1e-9 * (1.0 + abs(gamma)):
                return None
            partners[k] = j
        return partners

    def backward_amplitudes(self) -> np.ndarray:
        """Coefficients of C*(t) on the same rates."""
        partners = self.conjugate_partners()
        if partners is None:
            return np.conj(self.amplitudes)
        return np.conj(self.amplitudes[partners])

    def scales(self) -> np.ndarray:
        """Rescaling magnitudes c_k used by the hierarchy."""
        return 0.5 * (np.abs(self.amplitudes) + np.abs(self.backward_amplitudes()))


def _pencil_rates(basis: np.ndarray, dt: float, n_poles: int) -> np.ndarray:
    shift_0 = basis[:-1, :n_poles]
    shift_1 = basis[1:, :n_poles]
    poles = linalg.eigvals(linalg.pinv(shift_0) @ shift_1)
    poles = poles[np.abs(poles) > 1e-300]
    return -np.log(poles) / dt


def _conjugation_closed(rates: Sequence[complex], scale: float) -> List[Tuple[float, float]]:
    """Collapse raw rates into (decay, |frequency|) representatives."""
    reps: List[Tuple[float, float]] = []
    for gamma in rates:
        decay = max(float(gamma.real), 10 * MIN_DECAY_RATE)
        freq = abs(float(gamma.imag))
        if freq < 1e-6 * max(scale, 1.0):
            freq = 0.0
        duplicate = any(abs(decay - a) + abs(freq - b) < 1e-6 * max(scale, 1.0) for a, b in reps)
        if not duplicate:
            reps.append((decay, freq))
    return sorted(reps)


def _expand(decays: np.ndarray, freqs: np.ndarray, complex_mask: np.ndarray) -> np.ndarray:
    rates: List[complex] = []
    for a, b, is_complex in zip(decays, freqs, complex_mask):
        if is_complex:
            rates.extend([complex(a, b), complex(a, -b)])
        else:
            rates.append(complex(a, 0.0))
    return np.array(rates, dtype=complex)


def _amplitudes(times: np.ndarray, samples: np.ndarray, rates: np.ndarray) -> np.ndarray:
    basis = np.exp(-np.outer(times, rates))
    amps, *_ = np.linalg.lstsq(basis, samples, rcond=None)
    return amps


def _refine(
    times: np.ndarray, samples: np.ndarray, reps: List[Tuple[float, float]]
) -> Tuple[np.ndarray, np.ndarray]:
    decays = np.array([a for a, _ in reps])
    freqs = np.array([b for _, b in reps])
    complex_mask = freqs > 0
    n_reps = len(reps)
    n_complex = int(complex_mask.sum())
    rates = _expand(decays, freqs, complex_mask)
    amps = _amplitudes(times, samples, rates)
    n_modes = len(rates)

    def unpack(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        f = freqs.copy()
        f[complex_mask] = x[n_reps:n_reps + n_complex]
        r = _expand(x[:n_reps], f, complex_mask)
        offset = n_reps + n_complex
        d = x[offset:offset + n_modes] + 1j * x[offset + n_modes:]
        return r, d

    def residual(x: np.ndarray) -> np.ndarray:
        r, d = unpack(x)
        diff = np.exp(-np.outer(times, r)) @ d - samples
        return np.concatenate([diff.real, diff.imag])

    x0 = np.concatenate([decays, freqs[complex_mask], amps.real, amps.imag])
    lower = np.full_like(x0, -np.inf)
    lower[:n_reps] = MIN_DECAY_RATE
    x0[:n_reps] = np.maximum(x0[:n_reps], 2 * MIN_DECAY_RATE)
    result = optimize.least_squares(residual, x0, bounds=(lower, np.inf), method="trf", x_scale="jac", max_nfev=200 * len(x0))
    return unpack(result.x)


def _decomposition(bath: BathSpec, rates: np.ndarray, amps: np.ndarray, t_max: float, error: float) -> BathDecomposition:
    order = np.lexsort((rates.imag, rates.real))
    modes = tuple(ExponentialMode(d=complex(amps[k]), gamma=complex(rates[k])) for k in order)
    return BathDecomposition(spec=bath, modes=modes, t_max=t_max, certified_error=error)


def fit_exponentials(
    bath: BathSpec,
    t_max: Optional[float] = None,
    tol: float = 1e-4,
    max_modes: int = 16,
    samples: int = 600,
) -> BathDecomposition:
    """Matrix-pencil identification refined by nonlinear least squares.

    The rate set is closed under complex conjugation so the backward
    amplitudes of C*(t) live on the same exponentials.
    """
    if t_max is None:
        t_max = default_fit_window(bath)
    if not t_max > 0 or not tol > 0:
        raise ValueError("fit_exponentials requires t_max > 0 and tol > 0")
    band = 1.5 * bath.spectral.omega
    count = max(samples, int(math.ceil(t_max * 4.0 * band / math.pi)) + 1)
    count += count % 2
    times = np.linspace(0.0, t_max, count)
    dt = times[1] - times[0]
    target = correlation_on_grid(bath, times)

    half = count // 2
    hankel = linalg.hankel(target[:half], target[half - 1:])
    _, _, vh = linalg.svd(hankel, full_matrices=False)
    basis = vh.T

    best: Optional[BathDecomposition] = None
    for n_poles in range(1, max_modes + 1):
        raw = _pencil_rates(basis, dt, n_poles)
        reps = _conjugation_closed(raw, bath.spectral.omega)
        if sum(2 if b > 0 else 1 for _, b in reps) > max_modes:
            break
        rates, amps = _refine(times, target, reps)
        error = float(np.max(np.abs(np.exp(-np.outer(times, rates)) @ amps - target)))
        LOGGER.debug(
            "Fit attempt",
            extra={"label": bath.label.value, "modes": len(rates), "error": error},
        )
        candidate = _decomposition(bath, rates, amps, t_max, error)
        if best is None or error < best.certified_error:
            best = candidate
        if error <= tol:
            LOGGER.info(
                "Bath decomposition certified",
                extra={"label": bath.label.value, "modes": len(rates), "certified_error": error},
            )
            return candidate
    best_error = best.certified_error if best else math.inf
    raise FitError(
        f"no fit with at most {max_modes} modes reached tol={tol:g} (best {best_error:.3e})",
        best_error=best_error,
        best=best,
    )


def write_decomposition(decomposition: BathDecomposition, path: Union[str, Path], mu: Optional[float] = None) -> None:
    spec = decomposition.spec
    lines = [
        TABLE_MAGIC,
        f"# label: {spec.label.value}",
        f"# family: {spec.spectral.family.value}",
        f"# kappa: {spec.spectral.kappa!r}",
        f"# omega: {spec.spectral.omega!r}",
        f"# xi: {spec.spectral.xi!r}",
        f"# temperature: {spec.temperature!r}",
        f"# t_max: {decomposition.t_max!r}",
        f"# certified_error: {decomposition.certified_error!r}",
    ]
    if mu is not None:
        lines.append(f"# counter_term: {mu!r}")
    lines.append("# re_d im_d re_gamma im_gamma")
    for mode in decomposition.modes:
        lines.append(f"{mode.d.real!r} {mode.d.imag!r} {mode.gamma.real!r} {mode.gamma.imag!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_decomposition(path: Union[str, Path]) -> BathDecomposition:
    header = {}
    modes = []
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0] != TABLE_MAGIC:
        raise ValueError(f"{path}: not a bath decomposition table")
    for number, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                header[key.strip()] = value.strip()
            continue
        fields = line.split()
        if len(fields) != 4:
            raise ValueError(f"{path}:{number}: expected 4 columns, got {len(fields)}")
        re_d, im_d, re_g, im_g = (float(f) for f in fields)
        modes.append(ExponentialMode(d=complex(re_d, im_d), gamma=complex(re_g, im_g)))
    spectral = SpectralDensity(
        family=Family(header["family"]),
        kappa=float(header["kappa"]),
        omega=float(header["omega"]),
        xi=float(header["xi"]),
    )
    spec = BathSpec(spectral=spectral, temperature=float(header["temperature"]), label=BathLabel(header["label"]))
    return BathDecomposition(
        spec=spec,
        modes=tuple(modes),
        t_max=float(header["t_max"]),
        certified_error=float(header["certified_error"]),
    )
