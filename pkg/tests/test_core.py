import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcswitch.core import (
    PATTERNS,
    PHI0_RED,
    ArmPhases,
    BridgeParams,
    ModePhases,
    SquidParams,
    arm_branch_phase,
    arm_from_mode_currents,
    arm_phases,
    coupling_gxy,
    default_bridge,
    hamiltonian,
    junction_phase,
    kerr_kxy,
    mode_currents,
    mode_from_arm_currents,
    mode_phases,
    periods,
    squid_current,
    squid_diff_inductance,
)

phase = st.floats(-50, 50, allow_nan=False)
betas = st.floats(0.05, 1.95)


def test_patterns_are_orthogonal():
    gram = PATTERNS @ PATTERNS.T
    assert np.allclose(gram, np.diag(np.diag(gram)))


@given(st.lists(phase, min_size=4, max_size=4))
def test_mode_arm_round_trip(v):
    m = ModePhases(*v)
    back = mode_phases(arm_phases(m)).as_array()
    assert np.allclose(back, m.as_array(), atol=1e-12)


@given(st.lists(st.floats(-1e-4, 1e-4), min_size=4, max_size=4))
def test_current_projection_round_trip(i):
    i = np.array(i)
    assert np.allclose(arm_from_mode_currents(mode_from_arm_currents(i).as_array()), i,
                       atol=1e-18)


def test_hysteretic_squid_rejected():
    with pytest.raises(ValueError):
        SquidParams.from_beta(2.1, 65e-12)
    with pytest.raises(ValueError):
        BridgeParams(SquidParams.from_beta(1.2, 65e-12), n=0)


def test_beta_round_trip():
    p = SquidParams.from_beta(1.2, 65e-12)
    assert p.beta == pytest.approx(1.2, rel=1e-14)
    assert p.l_sh * p.i0 / PHI0_RED == pytest.approx(1.2)


@given(betas, st.floats(-20, 20))
def test_squid_inductance_is_inverse_slope(beta, phi):
    p = SquidParams.from_beta(beta, 65e-12)
    h = 1e-6
    slope = (squid_current(phi + h, p) - squid_current(phi - h, p)) / (2 * h)
    assert squid_diff_inductance(phi, p) == pytest.approx(PHI0_RED / slope, rel=1e-6)
    assert squid_diff_inductance(phi, p) > 0


@settings(max_examples=200)
@given(st.floats(0, 5e-9), st.floats(-500, 500))
def test_junction_phase_inverts_branch_phase(l_str, phi_l):
    b = default_bridge(l_str=l_str)
    assert arm_branch_phase(junction_phase(phi_l, b), b) == pytest.approx(phi_l, abs=1e-9)


@settings(max_examples=50)
@given(st.lists(phase, min_size=4, max_size=4), betas, st.integers(1, 40))
def test_eigenmode_form_matches_branch_form(v, beta, n):
    b = BridgeParams(SquidParams.from_beta(beta, 65e-12), n=n)
    m = ModePhases(*v)
    e1 = hamiltonian(m, b, form="branch")
    e2 = hamiltonian(m, b, form="modes")
    scale = b.squid.e_j * n
    assert e1 == pytest.approx(e2, abs=1e-10 * scale)


def test_eigenmode_form_refuses_stray():
    with pytest.raises(ValueError):
        hamiltonian(ModePhases(0, 0, 0, 0), default_bridge(), form="modes")


@settings(max_examples=40)
@given(st.lists(st.floats(-30, 30), min_size=4, max_size=4), st.floats(0, 3e-9))
def test_mode_currents_are_energy_gradient(v, l_str):
    b = default_bridge(l_str=l_str)
    x = np.array(v)
    cur = mode_currents(ModePhases(*x), b).as_array()
    h = 1e-4
    fd = np.array([
        (hamiltonian(ModePhases(*(x + h * e)), b) - hamiltonian(ModePhases(*(x - h * e)), b))
        / (2 * h * PHI0_RED)
        for e in np.eye(4)
    ])
    assert np.linalg.norm(cur - fd) <= 1e-6 * max(np.linalg.norm(cur), b.squid.i0 * 1e-3)


def _numeric_coeffs(phi_z, phi_c, b, h=1e-2):
    """phi_X phi_Y and phi_X^4 coefficients of H by finite differences."""

    def e(x, y):
        return hamiltonian(ModePhases(x, y, phi_z, phi_c), b, form="modes")

    gxy = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4 * h * h)
    # fourth derivative in x, minus the quadratic stiffness piece
    hx = 0.2
    d4 = (e(2 * hx, 0) - 4 * e(hx, 0) + 6 * e(0, 0) - 4 * e(-hx, 0) + e(-2 * hx, 0)) / hx**4
    return gxy, d4 / 24


@pytest.mark.parametrize("phi_z,phi_c", [(3.0, 10.0), (-7.0, 40.0), (15.0, -100.0)])
def test_coupling_and_kerr_are_taylor_coefficients(phi_z, phi_c):
    b = BridgeParams(SquidParams.from_beta(1.2, 65e-12), n=20)
    gxy, k4 = _numeric_coeffs(phi_z, phi_c, b)
    assert coupling_gxy(phi_z, phi_c, b) == pytest.approx(gxy, rel=1e-4)
    assert kerr_kxy(phi_z, phi_c, b) == pytest.approx(k4, rel=1e-3)


def test_coupling_sign_and_zeros():
    b = default_bridge(l_str=0.0)
    assert coupling_gxy(0.0, 5.0, b) == 0
    assert coupling_gxy(5.0, 0.0, b) == 0
    assert coupling_gxy(5.0, 5.0, b) > 0
    assert coupling_gxy(-5.0, 5.0, b) < 0


def test_periods():
    b = default_bridge()
    p = periods(b)
    i0, beta = b.squid.i0, b.squid.beta
    assert p.i_c == pytest.approx(4 * np.pi * i0 / beta)
    assert p.i_z == pytest.approx(4 * p.i_c)
    assert p.phi_c == pytest.approx(8 * np.pi * 20 + 4 * np.pi * 1.3e-9 / 65e-12)


def test_arm_phase_namedtuples_round_trip():
    a = ArmPhases(1.0, 2.0, 3.0, 4.0)
    assert ArmPhases.from_array(a.as_array()) == a
