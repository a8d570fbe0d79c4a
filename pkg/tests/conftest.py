from __future__ import annotations

from pathlib import Path

import pytest

from bandgap_engine.bath_model import (
    BathDecomposition,
    BathLabel,
    BathSpec,
    ExponentialMode,
    Family,
    SpectralDensity,
)
from bandgap_engine.config import load_config
from bandgap_engine.sweep import fit_baths

PRESETS = Path(__file__).resolve().parents[1] / "config" / "presets"


def make_decomposition(label, modes, omega=None, temperature=0.0):
    center = omega if omega is not None else (2.0 if label is BathLabel.SLOW else 4.0)
    spec = BathSpec(
        spectral=SpectralDensity(family=Family.BANDGAP, kappa=1.0, omega=center),
        temperature=temperature,
        label=label,
    )
    return BathDecomposition(
        spec=spec,
        modes=tuple(ExponentialMode(d=complex(d), gamma=complex(g)) for d, g in modes),
        t_max=50.0,
        certified_error=0.0,
    )


@pytest.fixture
def synthetic_baths():
    """Conjugation-closed mode sets with asymmetric amplitudes."""
    slow = make_decomposition(
        BathLabel.SLOW,
        [(0.03 + 0.01j, 0.5 - 2.0j), (0.02 - 0.015j, 0.5 + 2.0j)],
    )
    fast = make_decomposition(
        BathLabel.FAST,
        [(0.02 + 0.004j, 0.8 - 4.0j), (0.025 - 0.002j, 0.8 + 4.0j), (0.01, 1.5)],
        temperature=2.0,
    )
    return slow, fast


@pytest.fixture
def uncoupled_baths():
    slow = make_decomposition(BathLabel.SLOW, [(0.0, 0.5 - 2.0j), (0.0, 0.5 + 2.0j)])
    fast = make_decomposition(BathLabel.FAST, [(0.0, 1.0)], temperature=2.0)
    return slow, fast


def _fitted_preset(name):
    config = load_config(PRESETS / f"{name}.yaml")
    return config, fit_baths(config)


@pytest.fixture(scope="session")
def regular_gradient():
    """Fast reservoir hot; fitted once per session."""
    return _fitted_preset("regular_gradient")


@pytest.fixture(scope="session")
def reversed_gradient():
    return _fitted_preset("reversed_gradient")
