import math

import numpy as np
import pytest

from bandgap_engine.bath_model import BathLabel, BathSpec, Family, SpectralDensity, fit_exponentials
from bandgap_engine.hierarchy import (
    CapacityError,
    DimensionError,
    DrivenTLS,
    HeomConfig,
    HierarchyState,
    InstabilityError,
    build_index_set,
    convergence_scan,
    filter_ados,
    heom_rhs,
    initial_density,
    initial_state,
    load_checkpoint,
    mode_table,
    propagate,
    save_checkpoint,
)
from bandgap_engine.integrate import align_step
from bandgap_engine.observables import heat_current


def _random_ados(index_set, rng):
    ados = rng.normal(size=(len(index_set), 2, 2)) + 1j * rng.normal(size=(len(index_set), 2, 2))
    ados[0] = initial_density("mixed") + 0.1 * np.array([[0, 1], [1, 0]])
    return ados


def _global_partners(decomps):
    partners = []
    offset = 0
    for decomp in sorted(decomps, key=lambda d: 0 if d.spec.label is BathLabel.SLOW else 1):
        partners.extend(offset + decomp.conjugate_partners())
        offset += len(decomp)
    return np.array(partners)


def test_index_set_smallest_case_ordering():
    index_set = build_index_set(2, 1)

    assert index_set.indices == [(0, 0), (1, 0), (0, 1)]
    assert index_set.plus[0].tolist() == [1, 2]
    assert index_set.minus[1].tolist() == [0, 3]
    assert index_set.plus[1].tolist() == [3, 3]


def test_index_set_sizes():
    assert len(build_index_set(3, 2)) == 10
    assert len(build_index_set(1, 0)) == 1

    index_set = build_index_set(10, 4)

    assert len(index_set) == 1001
    assert len(set(index_set.indices)) == 1001
    assert index_set.levels.max() == 4
    assert np.all(np.diff(index_set.levels) >= 0)


def test_index_set_neighbours_are_consistent():
    index_set = build_index_set(3, 3)
    pad = len(index_set)

    for i, row in enumerate(index_set.counts):
        for k in range(3):
            up = index_set.plus[i, k]
            if up != pad:
                assert index_set.minus[up, k] == i
                assert index_set.counts[up, k] == row[k] + 1
            else:
                assert row.sum() == 3
            if row[k] == 0:
                assert index_set.minus[i, k] == pad


def test_index_set_capacity_guard():
    with pytest.raises(CapacityError):
        build_index_set(10, 4, ceiling=1000)
    with pytest.raises(ValueError):
        build_index_set(0, 2)


def test_rhs_without_coupling_is_unitary(uncoupled_baths):
    tls = DrivenTLS(3.0, 1.0, 2.0)
    index_set = build_index_set(3, 2)
    state = initial_state(index_set, initial_density("coherent"), t=0.4)

    d_ados = heom_rhs(state, tls, uncoupled_baths)

    omega = tls.omega(0.4)
    np.testing.assert_allclose(d_ados[0], [[0, 0.5j * omega], [-0.5j * omega, 0]], atol=1e-14)
    np.testing.assert_array_equal(d_ados[1:], 0)


def test_rhs_rejects_mode_count_mismatch(synthetic_baths):
    state = initial_state(build_index_set(2, 2), initial_density("ground"))

    with pytest.raises(DimensionError):
        heom_rhs(state, DrivenTLS(3.0, 1.0, 2.0), synthetic_baths)


def test_uncoupled_propagation_tracks_accumulated_phase(uncoupled_baths):
    tls = DrivenTLS(3.0, 1.0, 1.5)
    h, _ = align_step(tls.period, tls.period / 2000)
    cfg = HeomConfig(depth=2, step=h, initial_state="coherent")
    state = initial_state(build_index_set(3, 2), initial_density("coherent"))

    final = propagate(state, tls, uncoupled_baths, cfg, tls.period)

    assert final.t == pytest.approx(tls.period)
    assert final.root[1, 1].real == pytest.approx(0.5, abs=1e-12)
    assert final.root[0, 1] == pytest.approx(0.5 * np.exp(1j * tls.phase(final.t)), abs=1e-8)


def test_propagation_preserves_trace_and_partner_symmetry(synthetic_baths):
    tls = DrivenTLS(3.0, 1.0, 2.0)
    n_modes = len(mode_table(synthetic_baths))
    index_set = build_index_set(n_modes, 3)
    h, _ = align_step(tls.period, 0.01)
    cfg = HeomConfig(depth=3, step=h, filter_threshold=0.0)
    state = initial_state(index_set, initial_density("excited"))

    final = propagate(state, tls, synthetic_baths, cfg, 2 * tls.period)

    assert np.trace(final.root).real == pytest.approx(1.0, abs=1e-10)
    assert np.trace(final.root).imag == pytest.approx(0.0, abs=1e-10)
    np.testing.assert_allclose(final.root, final.root.conj().T, atol=1e-12)
    partners = _global_partners(synthetic_baths)
    for i, row in enumerate(index_set.counts):
        mirror = index_set.position(row[partners])
        np.testing.assert_allclose(final.ados[mirror], final.ados[i].conj().T, atol=1e-12)
    assert np.max(np.abs(final.ados[1:])) > 0


def test_filter_extremes():
    rng = np.random.default_rng(7)
    index_set = build_index_set(3, 2)
    state = HierarchyState(t=0.0, index_set=index_set, ados=_random_ados(index_set, rng))

    unchanged = filter_ados(state, 0.0)
    emptied = filter_ados(state, math.inf)

    np.testing.assert_array_equal(unchanged.ados, state.ados)
    np.testing.assert_array_equal(emptied.ados[0], state.ados[0])
    np.testing.assert_array_equal(emptied.ados[1:], 0)
    assert emptied.active.tolist() == [True] + [False] * (len(index_set) - 1)
    with pytest.raises(ValueError):
        filter_ados(state, -1.0)


def test_propagation_flags_blowup(synthetic_baths):
    tls = DrivenTLS(3.0, 1.0, 2.0)
    index_set = build_index_set(len(mode_table(synthetic_baths)), 1)
    state = initial_state(index_set, 1e7 * initial_density("ground"))
    cfg = HeomConfig(depth=1, step=tls.period / 100)

    with pytest.raises(InstabilityError) as excinfo:
        propagate(state, tls, synthetic_baths, cfg, tls.period)
    assert excinfo.value.t == pytest.approx(tls.period / 100)


def test_checkpoint_resume_matches_uninterrupted_run(tmp_path, synthetic_baths):
    tls = DrivenTLS(3.0, 1.0, 2.0)
    index_set = build_index_set(len(mode_table(synthetic_baths)), 2)
    h, _ = align_step(tls.period, 0.02)
    cfg = HeomConfig(depth=2, step=h, filter_threshold=0.0)
    start = initial_state(index_set, initial_density("ground"))

    direct = propagate(start, tls, synthetic_baths, cfg, 2 * tls.period)
    halfway = propagate(start, tls, synthetic_baths, cfg, tls.period)
    path = tmp_path / "state.ckpt"
    save_checkpoint(halfway, path)
    restored = load_checkpoint(path)
    resumed = propagate(restored, tls, synthetic_baths, cfg, 2 * tls.period)

    assert path.exists()
    assert restored.t == halfway.t
    np.testing.assert_array_equal(restored.ados, halfway.ados)
    np.testing.assert_array_equal(restored.index_set.counts, index_set.counts)
    np.testing.assert_allclose(resumed.ados, direct.ados, rtol=0, atol=1e-12)


def test_heom_config_validation():
    with pytest.raises(ValueError):
        HeomConfig(depth=0, step=0.1)
    with pytest.raises(ValueError):
        HeomConfig(depth=2, step=0.1, initial_state="thermal")


def test_convergence_scan_picks_earlier_depth():
    currents = {1: (1.0, -1.0), 2: (1.1, -1.1), 3: (1.105, -1.104), 4: (1.1051, -1.1041)}

    scan = convergence_scan([1, 2, 3, 4], currents.__getitem__)

    assert scan.converged
    assert scan.depth == 2
    assert [row[0] for row in scan.table] == [1, 2, 3, 4]
    assert scan.table[-1] == (4, 1.1051, -1.1041)


def test_convergence_scan_reports_failure():
    scan = convergence_scan([1, 2, 3], lambda depth: (float(depth), -float(depth)))

    assert not scan.converged
    assert len(scan.table) == 3
    with pytest.raises(ValueError):
        convergence_scan([3, 2], lambda depth: (0.0, 0.0))
    with pytest.raises(ValueError):
        convergence_scan([], lambda depth: (0.0, 0.0))


@pytest.mark.slow
def test_static_qubit_relaxes_to_thermal_populations():
    bath = BathSpec(SpectralDensity(family=Family.BANDGAP, kappa=0.1, omega=4.0), 2.0, BathLabel.FAST)
    decomp = fit_exponentials(bath, tol=1e-6)
    tls = DrivenTLS(3.8, 0.0, 1.0)
    modes = mode_table([decomp])
    h, _ = align_step(tls.period, 2 * math.pi / 3.8 / 200)
    cfg = HeomConfig(depth=2, step=h, filter_threshold=0.0)
    state = initial_state(build_index_set(len(modes), 2), initial_density("mixed"))
    peak = [0.0]

    def watch(current):
        peak[0] = max(peak[0], abs(heat_current(current, tls, modes, BathLabel.FAST)))

    final = propagate(state, tls, [decomp], cfg, 160 * tls.period, observer=watch)

    ratio = final.root[1, 1].real / final.root[0, 0].real
    assert ratio == pytest.approx(math.exp(-3.8 / 2.0), rel=0.05)
    assert abs(heat_current(final, tls, modes, BathLabel.FAST)) <= 1e-6 * peak[0]
