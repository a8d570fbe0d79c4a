import math

import numpy as np
import pytest

from bandgap_engine.bath_model import BathLabel, BathSpec, Family, SpectralDensity
from bandgap_engine.config import load_config
from bandgap_engine.floquet_analytics import (
    RateWeighting,
    bessel_weight,
    bm_heat_currents,
    bm_population_ode,
    bm_rates,
    floquet_expansion,
    predict_resonances,
    sideband_window,
)
from bandgap_engine.hierarchy import DrivenTLS
from bandgap_engine.integrate import rk4_step

from conftest import PRESETS

SLOW_COLD = BathSpec(SpectralDensity(family=Family.BANDGAP, kappa=1.0, omega=2.0), 0.0, BathLabel.SLOW)
FAST_HOT = BathSpec(SpectralDensity(family=Family.BANDGAP, kappa=1.0, omega=4.0), 2.0, BathLabel.FAST)


def test_bessel_weights():
    assert bessel_weight(0, 0.0) == 1.0
    assert bessel_weight(1, 0.0) == 0.0
    assert bessel_weight(1, 1.0) == pytest.approx(0.4400505857, abs=1e-10)
    for k in range(1, 6):
        assert bessel_weight(-k, 1.7) == pytest.approx((-1) ** k * bessel_weight(k, 1.7), abs=1e-14)
    with pytest.raises(ValueError):
        bessel_weight(0, math.nan)


def test_bessel_sum_rule():
    total = sum(bessel_weight(k, 2.0) ** 2 for k in range(-20, 21))

    assert total == pytest.approx(1.0, abs=1e-10)


def test_sideband_window_meets_deficit():
    assert sideband_window(0.0) == 0
    k_max = sideband_window(2.0)
    expansion = floquet_expansion(DrivenTLS(3.0, 2.0, 1.0), k_max)

    assert expansion.sum_rule_deficit < 1e-8
    assert floquet_expansion(DrivenTLS(3.0, 2.0, 1.0), k_max - 1).sum_rule_deficit >= 1e-8
    np.testing.assert_allclose(expansion.quasi_energies, 3.0 + expansion.ks)


def test_zero_driving_gives_zero_rates_and_currents():
    model = bm_rates(DrivenTLS(3.0, 0.0, 1.0), FAST_HOT, SLOW_COLD)

    assert model.gamma_0 == 0.0
    assert model.gamma_1 == 0.0
    assert bm_heat_currents(model) == (0.0, 0.0)


def test_rates_are_non_negative():
    for weighting in RateWeighting:
        model = bm_rates(DrivenTLS(3.0, 1.5, 0.7), FAST_HOT, SLOW_COLD, weighting=weighting)
        assert np.all(model.rates_0 >= 0)
        assert np.all(model.rates_1 >= 0)
        p0, p1 = model.populations
        assert p0 + p1 == pytest.approx(1.0)


def test_zero_temperature_reservoirs_only_absorb():
    cold_fast = BathSpec(FAST_HOT.spectral, 0.0, BathLabel.FAST)

    model = bm_rates(DrivenTLS(3.0, 1.0, 1.0), cold_fast, SLOW_COLD, k_max=2)

    np.testing.assert_array_equal(model.rates_0, 0.0)
    assert model.gamma_1 > 0


def test_equal_temperatures_carry_no_current():
    slow_warm = BathSpec(SLOW_COLD.spectral, 2.0, BathLabel.SLOW)

    model = bm_rates(DrivenTLS(3.0, 0.5, 1.0), FAST_HOT, slow_warm, k_max=0)
    hot, cold = bm_heat_currents(model)

    assert model.ratio == pytest.approx(math.exp(-3.0 / 2.0), rel=1e-12)
    assert abs(hot) <= 1e-14
    assert abs(cold) <= 1e-14


def test_weak_driving_currents_scale_quadratically():
    lams = np.array([1e-3, 2e-3, 4e-3, 8e-3])
    currents = [bm_heat_currents(bm_rates(DrivenTLS(3.0, lam, 1.0), FAST_HOT, SLOW_COLD))[0] for lam in lams]

    slope = np.polyfit(np.log(lams), np.log(np.abs(currents)), 1)[0]

    assert slope == pytest.approx(2.0, abs=0.05)


def test_population_ode_limits():
    t = np.array([0.0, 1.0, 200.0])

    np.testing.assert_allclose(bm_population_ode(1.0, t, 0.3, 0.3)[[0, 2]], [1.0, 0.5])
    np.testing.assert_allclose(bm_population_ode(0.2, t, 0.5, 0.0)[-1], 1.0)
    np.testing.assert_allclose(bm_population_ode(0.4, t, 0.0, 0.0), 0.4)
    with pytest.raises(ValueError):
        bm_population_ode(1.5, t, 0.1, 0.1)


def test_population_ode_matches_numerical_integration():
    gamma_0, gamma_1 = 0.2, 0.5
    y = np.array([0.9])
    h = 0.01
    for n in range(1000):
        y = rk4_step(lambda t, p: gamma_0 * (1 - p) - gamma_1 * p, n * h, y, h)

    assert y[0] == pytest.approx(float(bm_population_ode(0.9, 10.0, gamma_0, gamma_1)), abs=1e-9)


def test_resonance_predictions():
    marks = predict_resonances(3.0, 1.0, 2.0, 4.0, 2)
    frequencies = [m.frequency for m in marks]

    sidebands = sorted(m.frequency for m in marks if m.mechanism == "sideband" and m.bath == "fast")
    assert sidebands == pytest.approx([0.5, 1.0])
    assert any(m.frequency == pytest.approx(2.0) and m.mechanism == "bath_mode" and m.bath == "slow" for m in marks)
    assert any(m.frequency == pytest.approx(2.5) and m.bath == "slow" for m in marks)
    assert any(m.frequency == pytest.approx(1.0) and m.mechanism == "bath_difference" for m in marks)
    assert frequencies == sorted(frequencies)
    assert [m.frequency for m in predict_resonances(3.0, 2.5, 2.0, 4.0, 2)] == frequencies
    with pytest.raises(ValueError):
        predict_resonances(3.0, 1.0, 2.0, 4.0, 0)


@pytest.mark.parametrize("omega_s", [1.0, 0.5])
def test_regular_gradient_runs_as_engine_at_sideband_resonances(omega_s):
    config = load_config(PRESETS / "regular_gradient.yaml")
    tls = DrivenTLS(config.system.omega_0, config.system.lam[0], omega_s)

    for weighting in RateWeighting:
        hot, cold = bm_heat_currents(bm_rates(tls, config.baths.hot_bath, config.baths.cold_bath, weighting=weighting))
        assert hot > 0
        assert cold < 0


@pytest.mark.parametrize("weighting", list(RateWeighting))
def test_currents_do_not_depend_on_sideband_window(weighting):
    tls = DrivenTLS(3.0, 1.0, 1.0)
    reference = bm_heat_currents(bm_rates(tls, FAST_HOT, SLOW_COLD, weighting=weighting, k_max=20))

    for k_max in (4, 8, None):
        currents = bm_heat_currents(bm_rates(tls, FAST_HOT, SLOW_COLD, weighting=weighting, k_max=k_max))
        np.testing.assert_allclose(currents, reference, rtol=1e-6)


def test_negative_quasi_energies_do_not_enter_rates():
    tls = DrivenTLS(3.0, 1.0, 1.0)

    narrow = bm_rates(tls, FAST_HOT, SLOW_COLD, k_max=3)
    wide = bm_rates(tls, FAST_HOT, SLOW_COLD, k_max=6)

    assert wide.gamma_0 == pytest.approx(narrow.gamma_0, rel=1e-6)
    assert wide.gamma_1 == pytest.approx(narrow.gamma_1, rel=1e-6)


def test_reversing_the_gradient_turns_engine_into_dissipator():
    powers = {}
    for name in ("regular_gradient", "reversed_gradient"):
        config = load_config(PRESETS / f"{name}.yaml")
        tls = DrivenTLS(config.system.omega_0, config.system.lam[0], 1.0)
        hot, cold = bm_heat_currents(bm_rates(tls, config.baths.hot_bath, config.baths.cold_bath))
        powers[name] = hot + cold

    assert powers["regular_gradient"] > 0
    assert powers["reversed_gradient"] < 0
