import math

import numpy as np
import pytest

from bandgap_engine.integrate import align_step, default_step, rk4_step, steps_between


def test_rk4_integrates_exponential():
    y = np.array([1.0 + 0j])
    h = 0.01
    for n in range(100):
        y = rk4_step(lambda t, v: -1j * v, n * h, y, h)

    assert y[0] == pytest.approx(np.exp(-1j), abs=1e-10)


def test_default_step_uses_shortest_scale():
    assert default_step(1.0, 3.0) == pytest.approx(2 * math.pi / 3.0 / 200)
    assert default_step(1.0, 3.0, max_decay=10.0) == pytest.approx(0.1 / 200)
    assert default_step(4.0, 3.0) == pytest.approx(2 * math.pi / 4.0 / 200)


def test_align_step_divides_period():
    h, steps = align_step(2 * math.pi, 0.01)

    assert h <= 0.01
    assert steps * h == pytest.approx(2 * math.pi, rel=1e-14)
    assert align_step(1.0, 0.25) == (0.25, 4)
    with pytest.raises(ValueError):
        align_step(1.0, 0.0)


def test_steps_between():
    assert steps_between(0.0, 1.0, 0.25) == 4
    assert steps_between(1.0, 1.0, 0.1) == 0
    with pytest.raises(ValueError):
        steps_between(0.0, 1.0, 0.3)
    with pytest.raises(ValueError):
        steps_between(1.0, 0.0, 0.1)
