import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcswitch import bias as bias_mod
from pcswitch.bias import AppliedBias, arm_current_split, solve_batch, solve_bias
from pcswitch.core import default_bridge, mode_currents, periods
from pcswitch.errors import NoConvergence

B = default_bridge()
P = periods(B)

frac = st.floats(-1.5, 1.5, allow_nan=False)


def test_split_projects_back_to_z():
    arms = arm_current_split(8e-6, 3e-6)
    assert np.allclose(arms, [5e-6, 1e-6, 5e-6, 1e-6])
    assert arms @ np.array([1, -1, 1, -1]) == pytest.approx(8e-6)


@settings(max_examples=60)
@given(frac, frac)
def test_current_driven_reproduces_currents(fz, fc):
    st_ = solve_bias(AppliedBias.current(fz * P.i_z, fc * P.i_c), B)
    cur = mode_currents(st_.phases, B)
    scale = B.squid.i0
    assert float(cur.i_z) == pytest.approx(fz * P.i_z, abs=1e-9 * scale)
    assert float(cur.i_c) == pytest.approx(fc * P.i_c, abs=1e-9 * scale)
    assert abs(float(cur.i_x)) < 1e-9 * scale and abs(float(cur.i_y)) < 1e-9 * scale


@settings(max_examples=60)
@given(frac, st.integers(-120, 120), st.floats(-np.pi, np.pi))
def test_fluxoid_constraint_holds(fz, j, phi_ext):
    st_ = solve_bias(AppliedBias.fluxoid(fz * P.i_z, j, phi_ext), B)
    assert float(st_.loop_phase) == pytest.approx(2 * np.pi * j + phi_ext, abs=1e-9)
    assert float(mode_currents(st_.phases, B).i_z) == pytest.approx(fz * P.i_z,
                                                                    abs=1e-9 * B.squid.i0)


@settings(max_examples=30)
@given(st.integers(-50, 50), st.floats(-np.pi, np.pi))
def test_external_phase_is_a_fluxoid_shift(j, phi):
    a = solve_batch(B, 0.1 * P.i_z, j=j, phi_ext=phi + 2 * np.pi)
    b = solve_batch(B, 0.1 * P.i_z, j=j + 1, phi_ext=phi)
    assert float(a.i_c) == pytest.approx(float(b.i_c), rel=1e-12, abs=1e-18)


def test_round_trip_between_modes():
    cur = solve_batch(B, 0.2 * P.i_z, i_c=0.3 * P.i_c, strict=True)
    loop = float(cur.loop_phase)
    fl = solve_batch(B, 0.2 * P.i_z, j=0, phi_ext=loop, strict=True)
    assert float(fl.i_c) == pytest.approx(0.3 * P.i_c, rel=1e-10)


def test_batch_shapes_broadcast():
    st_ = solve_batch(B, np.linspace(-1, 1, 5)[None, :] * P.i_z, j=np.arange(3)[:, None])
    assert st_.junction_phases.shape == (3, 5, 4)
    assert st_.i_c.shape == (3, 5)
    assert np.all(st_.converged)


def test_applied_bias_validation():
    with pytest.raises(ValueError):
        AppliedBias(bias_mod.BiasMode.CURRENT_DRIVEN, i_z=0.0)
    with pytest.raises(ValueError):
        AppliedBias(bias_mod.BiasMode.FLUXOID_CONSTRAINED, i_z=0.0, i_c=1e-6)
    with pytest.raises(ValueError):
        solve_batch(B, 0.0)


def test_strict_raises_when_newton_is_starved(monkeypatch):
    monkeypatch.setattr(bias_mod, "MAX_ITER", 1)
    with pytest.raises(NoConvergence) as exc:
        solve_batch(B, 0.4 * P.i_z, i_c=37 * P.i_c, strict=True)
    assert exc.value.residual > 0
    st_ = solve_batch(B, 0.4 * P.i_z, i_c=37 * P.i_c)
    assert not np.all(st_.converged)


def test_arm_inductances_include_stray_share():
    st_ = solve_batch(B, 0.0, i_c=0.0)
    assert np.all(st_.arm_inductances > B.l_str / 4)
