import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcswitch.bias import solve_batch
from pcswitch.core import default_bridge, periods
from pcswitch.errors import AliasedSpectrum, IllConditioned, PeriodMismatch
from pcswitch.microwave import PortEnvironment, s21
from pcswitch.modulation import (
    CosineSeries,
    cable_zeta,
    carrier_response,
    cosine_decompose,
    estimate_period,
    fit_zeta,
    full_spectrum,
    sideband_response,
    sideband_spectrum_timedomain,
)
from pcswitch.trap import on_bias_fluxoid

B = default_bridge()
PER = periods(B).i_z
J = on_bias_fluxoid(B)
ENV = PortEnvironment()


def static(i):
    return s21(solve_batch(B, i, j=J, strict=True), 5.1e9, ENV)


def series_at(i_dc, n=256, n_max=24):
    i = i_dc + PER * np.arange(n) / n
    return cosine_decompose(i, static(i), PER, n_max=n_max, origin=i_dc)


SERIES_DC = series_at(PER / 4)
SERIES_ODD = series_at(0.0)


def test_series_reproduces_linecut():
    i = np.linspace(-PER, PER, 37)
    assert np.allclose(SERIES_DC(i), static(i), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.45), st.floats(1e5, 1e10))
def test_fft_carrier_matches_bessel(frac, f_m):
    a = frac * PER
    sp = sideband_spectrum_timedomain(static, a, f_m, orders=2, i_dc=PER / 4)
    assert abs(sp.carrier - carrier_response(SERIES_DC, a)) < 1e-9


@pytest.mark.parametrize("k", [-2, -1, 1, 2])
def test_fft_sidebands_match_bessel(k):
    a = 0.1 * PER
    s = series_at(0.1 * PER)
    sp = sideband_spectrum_timedomain(static, a, 1e6, orders=3, i_dc=0.1 * PER)
    assert abs(sp.sidebands[k] - sideband_response(s, a, k)) < 1e-9


def test_parseval():
    spec, power = full_spectrum(static, 0.2 * PER, 1e6, i_dc=0.07 * PER)
    assert sum(abs(v) ** 2 for v in spec.values()) == pytest.approx(power, rel=1e-12)


def test_odd_bias_suppresses_carrier_even_bias_suppresses_first_order():
    odd = sideband_spectrum_timedomain(static, 0.05 * PER, 1e6, i_dc=0.0)
    assert abs(odd.carrier) < 1e-12 * abs(odd.sidebands[1])
    even = sideband_spectrum_timedomain(static, 0.05 * PER, 1e6, i_dc=PER / 4)
    assert abs(even.sidebands[1]) < 1e-12 * abs(even.carrier)


def test_period_checks():
    i = PER * np.arange(100) / 100
    with pytest.raises(PeriodMismatch):
        cosine_decompose(i[:90], static(i[:90]), PER)
    two = 2 * PER * np.arange(200) / 200
    with pytest.raises(PeriodMismatch):
        cosine_decompose(two, static(two), 2 * PER / 3)
    with pytest.raises(ValueError):
        cosine_decompose(np.r_[0.0, 1.0, 3.0], np.zeros(3), 3.0)
    assert estimate_period(np.real(static(two)), two[1] - two[0]) == pytest.approx(PER, rel=0.02)


def test_aliasing_guard():
    with pytest.raises(AliasedSpectrum):
        sideband_spectrum_timedomain(static, 0.1 * PER, 1e6, samples=64, orders=32)


def test_cable_profile():
    assert cable_zeta(5e9) == pytest.approx(10 ** (-1 / 20))
    assert cable_zeta(20e9, 1.0) == pytest.approx(10 ** (-2 / 20))


def test_fit_zeta_recovers_injected_values():
    f = np.array([1e6, 1e8, 3e9])
    amps = np.linspace(0.01, 0.3, 12) * PER
    true = np.array([1.0, 0.8, 0.55])
    data = np.array([carrier_response(SERIES_DC, amps, z) for z in true])
    fit = fit_zeta(f, amps, data, SERIES_DC)
    assert np.allclose(fit.zeta, true, rtol=1e-6)


def test_fit_zeta_needs_the_nonlinear_regime():
    amps = np.linspace(0.001, 0.01, 10) * PER
    data = carrier_response(SERIES_DC, amps, 1.0)[None, :]
    with pytest.raises(IllConditioned):
        fit_zeta([1e6], amps, data, SERIES_DC)
    with pytest.raises(ValueError):
        fit_zeta([1e6], amps[:5], data[:, :5], SERIES_DC)


def test_series_call_with_sine_terms():
    s = CosineSeries(c0=2.0, c=np.array([1.0]), s=np.array([0.5]), period=1.0)
    assert s(0.25) == pytest.approx(1.0 + 0.5)
    assert SERIES_ODD.n_max == 24


@pytest.mark.parametrize("period", [1.0, 2.37, 3.3])
def test_period_estimate_on_harmonic_signal(period):
    t = np.arange(1000) * 0.01
    x = np.sin(2 * np.pi * t / period) + 0.3 * np.cos(6 * np.pi * t / period)
    assert estimate_period(x, 0.01) == pytest.approx(period, rel=1e-4)
    assert estimate_period(np.ones(50), 0.01) == np.inf
