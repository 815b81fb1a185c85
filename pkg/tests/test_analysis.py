import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcswitch.analysis import (
    LinecutSet,
    chi,
    chi_band,
    chi_matrix,
    extract_shift_2d,
    group_steps,
    histogram_threshold,
    monitor,
)
from pcswitch.core import default_bridge, periods
from pcswitch.errors import FlatGrid, UnimodalHistogram, ZeroNormCurve
from pcswitch.microwave import PortEnvironment, TransmissionGrid, drift_grids, sweep_grid
from pcswitch.trap import TrapProtocol, TrapState, i_c_of_j

B = default_bridge()
P = periods(B)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
curve = arrays(np.float64, 16, elements=finite).filter(lambda a: np.linalg.norm(a) > 1e-3)


@given(curve, curve)
def test_chi_is_hermitian_and_bounded(a, b):
    z = a + 1j * np.roll(a, 3)
    w = b - 0.5j * b[::-1]
    assert chi(z, w) == pytest.approx(np.conj(chi(w, z)))
    assert abs(chi(z, w)) <= 1 + 1e-12


@given(curve, st.floats(1e-3, 1e3), st.floats(-np.pi, np.pi))
def test_chi_is_scale_invariant(a, s, phase):
    assert chi(a, s * a, "real") == pytest.approx(1.0)
    assert chi(a, s * np.exp(1j * phase) * a) == pytest.approx(np.exp(1j * phase))


def test_zero_curve_rejected():
    with pytest.raises(ZeroNormCurve):
        chi(np.zeros(4), np.ones(4))
    with pytest.raises(ZeroNormCurve):
        chi_band(np.array([[1.0, 0.0], [0.0, 0.0]]), 1)
    with pytest.raises(ValueError):
        chi(np.ones(3), np.ones(4))


def test_band_matches_full_matrix():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(50, 12)) + 1j * rng.normal(size=(50, 12))
    full = chi_matrix(c)
    band = chi_band(c, 7, block=16)
    for k in range(8):
        assert np.allclose(band[: 50 - k, k], np.diagonal(full, k))
        assert np.all(np.isnan(band[50 - k:, k]))


def test_threshold_sits_between_two_clusters():
    rng = np.random.default_rng(1)
    same = 1 - np.abs(rng.normal(0, 5e-5, 5000))
    other = rng.normal(0.998, 2e-4, 500)
    thr = histogram_threshold(np.concatenate([same, other]), bin_width=1e-5)
    assert other.max() < thr + 3e-4
    assert 0.9985 < thr < 0.9999


def test_unimodal_histogram_raises():
    rng = np.random.default_rng(2)
    with pytest.raises(UnimodalHistogram):
        histogram_threshold(1 - np.abs(rng.normal(0, 1e-5, 2000)), bin_width=1e-5)
    with pytest.raises(UnimodalHistogram):
        histogram_threshold([0.5])


def _templates(k, m=24, seed=0):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(k, m)) + 1j * rng.normal(size=(k, m))
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def test_noiseless_seven_steps():
    t = _templates(7)
    idx = np.repeat(np.arange(7), 30)
    rep = group_steps(t[idx], 0.9, c_axis=np.arange(210) * 0.5)
    assert len(rep.groups) == 7
    assert np.array_equal(rep.labels, idx)
    assert np.allclose(rep.step_widths[1:-1], 15.0)
    assert np.isnan(rep.step_widths[0]) and np.isnan(rep.step_widths[-1])
    assert np.allclose(rep.boundaries, np.arange(1, 7) * 30 - 0.5)
    assert rep.failure_rate == 0 and rep.outlier_indices == []


def test_single_point_steps():
    t = _templates(9)
    rep = group_steps(t, 0.9)
    assert len(rep.groups) == 9
    assert rep.labels.tolist() == list(range(9))


def test_failures_in_the_core_are_counted():
    t = _templates(6, seed=3)
    idx = np.repeat(np.arange(6), 40)
    bad = [60, 100, 140, 180]  # step centres, inside the core zone
    idx[bad] = [4, 0, 5, 1]
    curves = t[idx]
    curves[220] = _templates(1, seed=99)[0]  # unlike every step
    rep = group_steps(LinecutSet(curves, np.arange(24), np.arange(240.0)), 0.9)
    assert len(rep.groups) == 6
    assert sorted(rep.outlier_indices) == bad + [220]
    assert rep.failure_rate == pytest.approx(5 / rep.n_core)
    # a wrong-step curve still matches some step; only the novel one is obvious
    assert rep.obvious_outliers == [220]


def test_physical_staircase_grouping():
    js = np.arange(18, 27)
    ic = i_c_of_j(js, 0.0, 0.0, B)
    mids = 0.5 * (ic[1:] + ic[:-1])
    w = mids[1] - mids[0]
    i_trg = np.linspace(mids[0] + 0.01 * w, mids[-1] - 0.01 * w, 80 * (len(js) - 2))
    i_z = P.i_z * (np.arange(32) / 32 - 0.5)
    g = sweep_grid(i_z, i_trg, 5.1e9, B, PortEnvironment(), c_kind="i_trg",
                   protocol=TrapProtocol(failure_probability=0, boundary_width=0),
                   phi_ext=np.pi)
    thr = histogram_threshold(chi_band(g.tau, 40), bin_width=1e-6)
    rep = group_steps(g, thr, band=40)
    j = np.array(g.meta["j"])
    assert len(np.unique(j - rep.labels)) == 1
    assert len(rep.groups) == len(np.unique(j))


def _pattern(p=64, m=40):
    y, x = np.mgrid[0:p, 0:m]
    return np.cos(2 * np.pi * y / p) * np.sin(2 * np.pi * (x - 13) / 17) + 0.3 * np.sin(
        4 * np.pi * y / p + 1)


@pytest.mark.parametrize("k", [-7, -1, 0, 3, 20])
def test_roll_gives_integer_shift(k):
    a = _pattern()
    res = extract_shift_2d(a, np.roll(a, k, axis=0))
    assert res.shift_samples[0] == pytest.approx(k, abs=1e-9)
    assert res.delta_phi_ext == pytest.approx(-k if k <= 32 else 64 - k, abs=1e-9)
    assert res.chi_max == pytest.approx(1.0)


def test_shift_is_antisymmetric():
    a = _pattern()
    b = np.roll(a, 5, axis=0)
    ab, ba = extract_shift_2d(a, b), extract_shift_2d(b, a)
    assert ab.delta_phi_ext == pytest.approx(-ba.delta_phi_ext)
    assert ab.delta_i_z == pytest.approx(-ba.delta_i_z, abs=1e-9)


def test_shift_in_physical_units():
    phi = P.phi_c * np.arange(120) / 120
    iz = P.i_z * (np.arange(24) / 24 - 0.5)
    g0 = sweep_grid(iz, phi, 5.1e9, B, PortEnvironment(), c_kind="phi_ext", j=20)
    g1 = sweep_grid(iz, phi, 5.1e9, B, PortEnvironment(), c_kind="phi_ext", j=22)
    res = extract_shift_2d(TransmissionGrid(iz, phi, g0.tau), TransmissionGrid(iz, phi, g1.tau))
    assert res.delta_phi_ext == pytest.approx(4 * np.pi, abs=0.05)
    assert abs(res.delta_i_z) < 1e-9


def test_flat_grid_rejected():
    with pytest.raises(FlatGrid):
        extract_shift_2d(np.ones((8, 8)), _pattern(8, 8))


def _series(js, noise=1e-3):
    phi = P.phi_c * np.arange(120) / 120
    iz = P.i_z * (np.arange(24) / 24 - 0.5)
    states = [TrapState(j=int(j), phi_ext=0.0, i_c=0.0, t_hours=float(t))
              for t, j in enumerate(js)]
    return drift_grids(states, iz, phi, 5.1e9, B, PortEnvironment(), noise=noise,
                       rng=np.random.default_rng(0))


def test_monitor_quiet_series():
    rec = monitor(_series([20] * 6))
    assert rec.jump_times == [] and rec.flags == []
    assert np.all(np.abs(rec.delta_phi_ext) < 0.05)


def test_monitor_flags_multi_quantum_jump():
    rec = monitor(_series([20, 20, 20, 22, 22, 21]))
    assert rec.jump_times == [3.0, 5.0]
    assert rec.jump_quanta == [2, -1]
    assert len(rec.flags) == 1
    assert rec.to_dict()["jump_quanta"] == [2, -1]
    with pytest.raises(ValueError):
        monitor(_series([20]))
