"""Three-wave mixing: cosine series of tau(I_Z), Bessel carrier model, sidebands.

Bessel-argument convention: the carrier under ``I_Z(t) = I_dc + i_z0 sin(2 pi f_m t)`` is

    c_0/2 + sum_n c_n J_0(2 pi n zeta i_z0 / I_Z_period)

so ``zeta = 1`` means the actuation reaches the device unattenuated.  Sine
terms of the series only feed odd/even sidebands, never the carrier.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .errors import AliasedSpectrum, IllConditioned, PeriodMismatch

log = logging.getLogger(__name__)

DEFAULT_N_MAX = 12
# J_0(x) departs from 1 - x^2/4 by ~x^4/64; 1 % of that happens at x ~ 0.89
NONLINEAR_ARG = 0.89


@dataclass
class CosineSeries:
    """Fourier series of tau over one I_Z period, centred on ``origin``.

    ``tau(I) = c0/2 + sum_n c[n-1] cos(2 pi n u) + s[n-1] sin(2 pi n u)``
    with ``u = (I - origin) / period``.
    """

    c0: complex
    c: np.ndarray
    period: float
    s: np.ndarray | None = None
    origin: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c)
        if self.s is None:
            self.s = np.zeros_like(self.c)
        self.s = np.asarray(self.s)

    @property
    def n_max(self):
        return len(self.c)

    def __call__(self, i_z):
        u = (np.asarray(i_z, dtype=float) - self.origin) / self.period
        n = np.arange(1, self.n_max + 1)
        arg = 2 * np.pi * np.multiply.outer(u, n)
        return self.c0 / 2 + np.cos(arg) @ self.c + np.sin(arg) @ self.s


@dataclass
class ModulationSpectrum:
    f_m: float
    carrier: complex
    sidebands: dict
    i_z0: float
    f_carrier: float = 0.0
    mean_power: float = 0.0

    def gain_db(self, k):
        """Modulation gain of order ``k`` relative to a unit incident carrier."""
        amp = self.carrier if k == 0 else self.sidebands[k]
        return 20 * np.log10(abs(amp))


@dataclass
class ZetaFit:
    f_m_grid: np.ndarray
    zeta: np.ndarray
    fit_residual: np.ndarray
    extra: dict = field(default_factory=dict)


def estimate_period(samples, spacing):
    """Fundamental period of a uniformly sampled curve.

    Uses the cumulative-mean-normalised squared difference
    ``d[k] = mean((x[i] - x[i + k])**2)``, which vanishes at the period
    without the overlap bias of a plain autocorrelation.
    """
    x = np.asarray(samples, dtype=float)
    x = x - np.mean(x)
    if not np.any(x):
        return np.inf
    n = len(x)
    spec = np.fft.fft(x, 2 * n)
    r = np.real(np.fft.ifft(spec * np.conj(spec)))[:n]
    sq = np.concatenate([[0.0], np.cumsum(x**2)])
    k = np.arange(n)
    d = (sq[n - k] + (sq[n] - sq[k]) - 2 * r) / (n - k)
    kmax = n - n // 8
    cum = np.cumsum(d[1:kmax])
    dn = np.ones(kmax)
    dn[1:] = d[1:kmax] * np.arange(1, kmax) / np.where(cum > 0, cum, np.inf)
    below = np.flatnonzero(dn[1:] < 0.1) + 1
    if below.size == 0:
        return np.inf
    m = below[0]
    while m + 1 < kmax and dn[m + 1] < dn[m]:
        m += 1
    if 0 < m < n - 1:
        y0, y1, y2 = d[m - 1], d[m], d[m + 1]
        den = y0 - 2 * y1 + y2
        m = m + (0.5 * (y0 - y2) / den if den != 0 else 0.0)
    return m * spacing


def cosine_decompose(i_z, tau, period, n_max=DEFAULT_N_MAX, origin=None, check_period=True):
    """Project ``tau(I_Z)`` onto ``{1/2, cos, sin}`` harmonics of ``period``.

    ``i_z`` must be uniform and cover an integer number of periods (end point
    excluded).  If ``check_period`` and the data span at least two periods,
    the autocorrelation period must agree with ``period`` within 2 %.
    """
    i_z = np.asarray(i_z, dtype=float)
    tau = np.asarray(tau)
    if origin is None:
        origin = i_z[0]
    d = np.diff(i_z)
    if not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise ValueError("i_z must be uniformly sampled")
    span = d[0] * len(i_z)
    n_periods = span / period
    if n_periods < 1 - 1e-9 or abs(n_periods - round(n_periods)) > 1e-6:
        raise PeriodMismatch(f"samples cover {n_periods:.6g} periods, need an integer >= 1")
    if check_period and n_periods >= 2 - 1e-9:
        est = estimate_period(np.real(tau), d[0])
        if not abs(est - period) <= 0.02 * period:
            raise PeriodMismatch(f"estimated period {est:.6g} vs declared {period:.6g}")
    u = (i_z - origin) / period
    n = np.arange(1, n_max + 1)
    arg = 2 * np.pi * np.multiply.outer(u, n)
    m = len(i_z)
    c0 = 2 * np.mean(tau)
    c = 2 / m * (np.cos(arg).T @ tau)
    s = 2 / m * (np.sin(arg).T @ tau)
    series = CosineSeries(c0=c0, c=c, period=period, s=s, origin=origin)
    peak = max(np.max(np.abs(c)), np.max(np.abs(s)), 1e-300)
    if max(abs(c[-1]), abs(s[-1])) > 1e-4 * peak:
        log.warning("series truncated at n_max=%d still carries %.2g of the peak", n_max,
                    max(abs(c[-1]), abs(s[-1])) / peak)
    return series


def bessel_argument(n, i_z0, zeta, period):
    return 2 * np.pi * np.asarray(n) * zeta * np.asarray(i_z0) / period


def carrier_response(series: CosineSeries, i_z0, zeta=1.0):
    """Carrier amplitude under sinusoidal I_Z modulation of amplitude ``i_z0``."""
    i_z0 = np.asarray(i_z0, dtype=float)
    if np.any(i_z0 < 0):
        raise ValueError("i_z0 must be >= 0")
    n = np.arange(1, series.n_max + 1)
    x = bessel_argument(n, np.multiply.outer(i_z0, np.ones_like(n)), zeta, series.period)
    return series.c0 / 2 + special.j0(x) @ series.c


def sideband_response(series: CosineSeries, i_z0, k, zeta=1.0):
    """Closed-form Jacobi-Anger amplitude of sideband ``k`` (k != 0)."""
    n = np.arange(1, series.n_max + 1)
    x = bessel_argument(n, i_z0, zeta, series.period)
    jk = special.jv(abs(k), x) * (np.sign(k) if abs(k) % 2 else 1)
    # cos(x sin t) -> J_k for even k; sin(x sin t) -> -i sgn(k) J_|k| for odd k
    if k % 2 == 0:
        return jk @ series.c
    return -1j * jk @ series.s


def sideband_spectrum_timedomain(
    static_tau, i_z0, f_m, f_carrier=0.0, samples=256, periods=1, orders=3, i_dc=0.0
):
    """Carrier and sideband amplitudes by direct DFT of ``tau(I_Z(t))``.

    ``I_Z(t) = i_dc + i_z0 sin(2 pi f_m t)`` is sampled ``samples`` times per
    modulation period over ``periods`` whole periods.  Sideband ``k`` sits at
    ``f_carrier + k f_m`` with the complex amplitude of the k-th Fourier
    coefficient of ``tau(t)``.
    """
    if samples < 64:
        raise ValueError("need at least 64 samples per modulation period")
    if int(periods) != periods or periods < 1:
        raise ValueError("periods must be a positive integer")
    if orders >= samples // 2:
        raise AliasedSpectrum(f"order {orders} is beyond Nyquist ({samples // 2})")
    total = samples * periods
    t = np.arange(total) / (samples * f_m)
    tau_t = np.asarray(static_tau(i_dc + i_z0 * np.sin(2 * np.pi * f_m * t)))
    spec = np.fft.fft(tau_t) / total
    bins = {k: spec[(k * periods) % total] for k in range(-orders, orders + 1)}
    carrier = bins.pop(0)
    return ModulationSpectrum(
        f_m=f_m,
        carrier=carrier,
        sidebands=bins,
        i_z0=i_z0,
        f_carrier=f_carrier,
        mean_power=float(np.mean(np.abs(tau_t) ** 2)),
    )


def full_spectrum(static_tau, i_z0, f_m, samples=256, i_dc=0.0):
    """All DFT bins of one modulation period, keyed by order (for Parseval checks)."""
    t = np.arange(samples) / (samples * f_m)
    tau_t = np.asarray(static_tau(i_dc + i_z0 * np.sin(2 * np.pi * f_m * t)))
    spec = np.fft.fft(tau_t) / samples
    orders = np.fft.fftfreq(samples, 1 / samples).astype(int)
    return dict(zip(orders.tolist(), spec)), float(np.mean(np.abs(tau_t) ** 2))


def cable_zeta(f, db_at_5ghz=1.0):
    """Amplitude factor of a cable losing ``db_at_5ghz`` dB at 5 GHz, scaling as sqrt(f)."""
    att_db = db_at_5ghz * np.sqrt(np.asarray(f, dtype=float) / 5e9)
    return 10 ** (-att_db / 20)


def _fit_one(series, i_z0, data, zeta_max, grid_points):
    data = np.asarray(data)

    def cost(z):
        r = carrier_response(series, i_z0, z) - data
        return float(np.real(np.vdot(r, r)))

    zs = np.linspace(zeta_max / grid_points, zeta_max, grid_points)
    costs = np.array([cost(z) for z in zs])
    k = int(np.argmin(costs))
    lo = zs[max(k - 1, 0)] if k > 0 else 0.0
    hi = zs[min(k + 1, len(zs) - 1)]
    res = optimize.minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * zeta_max})
    z = float(res.x)
    return z, np.sqrt(cost(z) / len(data))


def fit_zeta(f_m_grid, i_z0, carriers, series: CosineSeries, zeta_max=4.0, grid_points=400):
    """Fit the actuation scale ``zeta`` per modulation frequency.

    ``carriers[i, k]`` is the measured carrier at ``f_m_grid[i]`` and
    ``i_z0[k]`` (or ``i_z0[i, k]``).  Complex data are fitted in full; pass
    ``re(tau)`` to fit the real part only.
    """
    f_m_grid = np.atleast_1d(np.asarray(f_m_grid, dtype=float))
    carriers = np.atleast_2d(np.asarray(carriers))
    i_z0 = np.asarray(i_z0, dtype=float)
    if i_z0.ndim == 1:
        i_z0 = np.broadcast_to(i_z0, carriers.shape)
    if carriers.shape[1] < 8:
        raise ValueError("need at least 8 modulation amplitudes per frequency")
    zetas, resid = [], []
    for f, iz, data in zip(f_m_grid, i_z0, carriers):
        z, r = _fit_one(series, iz, data, zeta_max, grid_points)
        x_max = bessel_argument(1, np.max(iz), z, series.period)
        if x_max < NONLINEAR_ARG:
            raise IllConditioned(
                f"f_m={f:.4g} Hz: largest Bessel argument {x_max:.3g} rad stays in the "
                "quadratic regime; extend i_z0 towards the period"
            )
        zetas.append(z)
        resid.append(r)
    return ZetaFit(f_m_grid, np.array(zetas), np.array(resid))
