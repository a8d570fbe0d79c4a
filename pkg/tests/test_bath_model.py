import math

import numpy as np
import pytest

from bandgap_engine import bath_model
from bandgap_engine.bath_model import (
    BathLabel,
    BathSpec,
    Family,
    FitError,
    SpectralDensity,
    correlation_quadrature,
    counter_term,
    fit_exponentials,
    read_decomposition,
    spectral_density_value,
    spectral_function,
    write_decomposition,
)

from conftest import make_decomposition


def _bath(temperature=2.0, omega=4.0, kappa=1.0, label=BathLabel.FAST, family=Family.BANDGAP):
    return BathSpec(SpectralDensity(family=family, kappa=kappa, omega=omega), temperature, label)


def test_bandgap_density_values():
    sd = SpectralDensity(family=Family.BANDGAP, kappa=1.0, omega=2.0)

    assert spectral_density_value(sd, 2.0) == pytest.approx(0.5, rel=1e-12)
    assert spectral_density_value(sd, -2.0) == pytest.approx(-0.5, rel=1e-12)
    assert spectral_density_value(sd, 0.0) == 0.0
    assert sd.kappa_eff == pytest.approx(0.25)


def test_narrow_density_peak():
    sd = SpectralDensity(family=Family.NARROW, kappa=1.0, omega=2.0)

    assert spectral_density_value(sd, 2.0) == pytest.approx(0.5, rel=1e-12)


def test_density_is_odd():
    sd = SpectralDensity(family=Family.BANDGAP, kappa=1.3, omega=3.0, xi=0.8)
    w = np.linspace(0.01, 10.0, 57)

    np.testing.assert_allclose(spectral_density_value(sd, -w), -spectral_density_value(sd, w), rtol=1e-14)


def test_density_rejects_bad_parameters():
    with pytest.raises(ValueError):
        SpectralDensity(family=Family.BANDGAP, kappa=0.0, omega=2.0)
    with pytest.raises(ValueError):
        BathSpec(SpectralDensity(family=Family.BANDGAP, kappa=1.0, omega=2.0), -1.0, BathLabel.SLOW)


def test_spectral_function_zero_temperature_is_one_sided():
    bath = _bath(temperature=0.0)

    assert spectral_function(bath, 3.5) == pytest.approx(spectral_density_value(bath.spectral, 3.5))
    assert spectral_function(bath, -3.5) == 0.0


def test_spectral_function_difference_and_detailed_balance():
    bath = _bath(temperature=2.0)
    w = np.array([0.3, 1.3, 3.9, 4.2])

    np.testing.assert_allclose(
        spectral_function(bath, w) - spectral_function(bath, -w), spectral_density_value(bath.spectral, w), rtol=1e-10
    )
    np.testing.assert_allclose(
        spectral_function(bath, w), np.exp(w / 2.0) * spectral_function(bath, -w), rtol=1e-10
    )


def test_spectral_function_zero_frequency_limit():
    bath = _bath(temperature=2.0, omega=4.0)

    assert spectral_function(bath, 0.0) == pytest.approx(2.0 / 4.0**12, rel=1e-12)
    assert spectral_function(bath, 1e-7) == pytest.approx(2.0 / 4.0**12, rel=1e-6)


def test_correlation_at_zero_is_real_and_positive():
    value = correlation_quadrature(_bath(temperature=2.0), 0.0)

    assert value.imag == 0.0
    assert value.real > 0


def test_correlation_rejects_negative_time():
    with pytest.raises(ValueError):
        correlation_quadrature(_bath(), -1.0)


def test_counter_term_is_linear_in_kappa():
    weak = counter_term(SpectralDensity(family=Family.BANDGAP, kappa=1.0, omega=2.0))
    strong = counter_term(SpectralDensity(family=Family.BANDGAP, kappa=2.0, omega=2.0))

    assert weak > 0
    assert strong == pytest.approx(2.0 * weak, rel=1e-6)


def _three_mode_signal(times):
    times = np.asarray(times, dtype=float)
    return (
        (0.5 + 0.1j) * np.exp(-(0.3 - 2.0j) * times)
        + (0.4 - 0.2j) * np.exp(-(0.3 + 2.0j) * times)
        + 0.2 * np.exp(-1.0 * times)
    )


def test_fit_recovers_exponential_signal(monkeypatch):
    monkeypatch.setattr(bath_model, "correlation_on_grid", lambda bath, times: _three_mode_signal(times))
    bath = _bath(temperature=0.0, omega=2.0, label=BathLabel.SLOW)

    decomp = fit_exponentials(bath, t_max=30.0, tol=1e-6)

    assert decomp.certified_error <= 1e-6
    assert decomp.spec.label is BathLabel.SLOW
    assert len(decomp) <= 4
    assert all(mode.gamma.real > 0 for mode in decomp.modes)
    times = np.random.default_rng(3).uniform(0.0, 30.0, 100)
    np.testing.assert_allclose(decomp.reconstruct(times), _three_mode_signal(times), atol=1e-5)
    assert decomp.conjugate_partners() is not None


def test_fit_failure_carries_best_error(monkeypatch):
    monkeypatch.setattr(bath_model, "correlation_on_grid", lambda bath, times: _three_mode_signal(times))

    with pytest.raises(FitError) as excinfo:
        fit_exponentials(_bath(temperature=0.0, omega=2.0, label=BathLabel.SLOW), t_max=30.0, tol=1e-12, max_modes=1)
    assert excinfo.value.best_error > 1e-12


def test_fit_rejects_bad_window():
    with pytest.raises(ValueError):
        fit_exponentials(_bath(), t_max=0.0)


def test_backward_amplitudes_use_conjugate_partner():
    decomp = make_decomposition(BathLabel.FAST, [(0.02 + 0.004j, 0.8 - 4.0j), (0.025 - 0.002j, 0.8 + 4.0j), (0.01, 1.5)])

    np.testing.assert_array_equal(decomp.conjugate_partners(), [1, 0, 2])
    np.testing.assert_allclose(decomp.backward_amplitudes(), [0.025 + 0.002j, 0.02 - 0.004j, 0.01])
    expected = 0.5 * (abs(0.02 + 0.004j) + abs(0.025 - 0.002j))
    np.testing.assert_allclose(decomp.scales(), [expected, expected, 0.01])
    assert decomp.c0 == pytest.approx(0.055 + 0.002j)


def test_decomposition_table_round_trip(tmp_path):
    decomp = make_decomposition(BathLabel.SLOW, [(0.03 + 0.01j, 0.5 - 2.0j), (0.02 - 0.015j, 0.5 + 2.0j)])
    path = tmp_path / "bath_slow.txt"

    write_decomposition(decomp, path, mu=0.125)
    loaded = read_decomposition(path)

    assert loaded == decomp
    assert "# counter_term: 0.125" in path.read_text(encoding="utf-8")


def test_read_decomposition_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.txt"
    path.write_text("1 2 3 4\n", encoding="utf-8")

    with pytest.raises(ValueError):
        read_decomposition(path)


@pytest.mark.slow
def test_fit_of_slow_bandgap_bath_meets_tolerance():
    bath = _bath(temperature=0.0, omega=2.0, label=BathLabel.SLOW)

    decomp = fit_exponentials(bath, t_max=60.0, tol=1e-4)

    assert decomp.certified_error <= 1e-4
    times = np.linspace(0.05, 59.95, 40)
    exact = np.array([correlation_quadrature(bath, t) for t in times])
    assert np.max(np.abs(decomp.reconstruct(times) - exact)) <= 10 * max(decomp.certified_error, 1e-6)
    assert math.isclose(decomp.c0.imag, correlation_quadrature(bath, 0.0).imag, abs_tol=1e-3)
