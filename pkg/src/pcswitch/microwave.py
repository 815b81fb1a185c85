"""Two-port transmission of the bridge treated as a symmetric lattice.

The NW/SE arm pair forms the series branch ``Z_a = i w L_a`` and the NE/SW pair
the lattice branch ``Z_b = i w L_b``.  With ideal 1:1 baluns on both ports::

    tau = Z0 (Z_b - Z_a) / ((Z_a + Z0)(Z_b + Z0))

scaled by a flat insertion loss.  ``tau`` vanishes exactly at balance and
``re(tau)`` has the sign of ``L_b - L_a``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bias import BiasState, solve_batch
from .core import PHI0_RED, BridgeParams, arm_current, arm_phases, ModePhases
from .errors import EmptyBand, NoCompressionInRange
from .trap import TrapProtocol, trap_many

log = logging.getLogger(__name__)

DEFAULT_FREQUENCY = 5.1e9


@dataclass(frozen=True)
class PortEnvironment:
    z0: float = 50.0
    freq_grid: tuple = ()
    insertion_loss_db: float = 6.0

    def __post_init__(self):
        if not self.z0 > 0:
            raise ValueError("z0 must be positive")
        f = np.asarray(self.freq_grid, dtype=float)
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise ValueError("freq_grid must be strictly increasing")

    @property
    def loss_factor(self):
        return 10 ** (-self.insertion_loss_db / 20)


@dataclass
class TransmissionGrid:
    """tau sampled on (c, i_z): row m is the linecut at ``c_axis[m]``."""

    i_z_axis: np.ndarray
    c_axis: np.ndarray
    tau: np.ndarray
    meta: dict = field(default_factory=dict)
    flags: np.ndarray | None = None

    def __post_init__(self):
        self.i_z_axis = np.asarray(self.i_z_axis, dtype=float)
        self.c_axis = np.asarray(self.c_axis, dtype=float)
        self.tau = np.asarray(self.tau, dtype=complex)
        if self.tau.shape != (len(self.c_axis), len(self.i_z_axis)):
            raise ValueError(
                f"tau shape {self.tau.shape} does not match axes "
                f"({len(self.c_axis)}, {len(self.i_z_axis)})"
            )
        if self.flags is None:
            self.flags = np.zeros(self.tau.shape, dtype=bool)


def lattice_tau(l_a, l_b, f, z0=50.0):
    """Lossless lattice transmission for series/lattice inductances ``l_a``/``l_b``."""
    w = 2 * np.pi * np.asarray(f, dtype=float)
    za = 1j * w * np.asarray(l_a)
    zb = 1j * w * np.asarray(l_b)
    return z0 * (zb - za) / ((za + z0) * (zb + z0))


def pair_inductances(arm_l):
    """Series (NW, SE) and lattice (SW, NE) inductances from ``(..., 4)`` arms."""
    arm_l = np.asarray(arm_l)
    l_a = 0.5 * (arm_l[..., 0] + arm_l[..., 2])
    l_b = 0.5 * (arm_l[..., 1] + arm_l[..., 3])
    return l_a, l_b


def s21(bias: BiasState, f, env: PortEnvironment):
    """Complex transmission at a solved bias (broadcasts over bias and ``f``)."""
    if np.any(np.asarray(f) <= 0):
        raise ValueError("frequency must be positive")
    l_a, l_b = pair_inductances(bias.arm_inductances)
    return env.loss_factor * lattice_tau(l_a, l_b, f, env.z0)


# ------------------------------------------------------------------- sweeps


def _trapped_fluxoids(c_values, protocol, b, seed=None):
    rng = np.random.default_rng(protocol.rng_seed if seed is None else seed)
    return trap_many(c_values, protocol, b, rng=rng)


def sweep_grid(
    i_z_values,
    c_values,
    f,
    b: BridgeParams,
    env: PortEnvironment,
    c_kind="i_c",
    protocol: TrapProtocol | None = None,
    j=0,
    threads=1,
    phi_ext=0.0,
):
    """Transmission over an (I_Z, C) grid at frequency ``f``.

    ``c_kind``:

    * ``"i_c"`` -- continuous circulating current, loop open (no trapping);
    * ``"i_trg"`` -- trap at each value with ``protocol`` then sweep I_Z on the
      trapped branch with ``phi_ext`` applied after trapping; ``meta["j"]``
      holds the trapped fluxoids;
    * ``"phi_ext"`` -- fixed fluxoid ``j`` with the external phase swept.

    Points where the solver fails are flagged, not fatal.
    """
    i_z = np.atleast_1d(np.asarray(i_z_values, dtype=float))
    c = np.atleast_1d(np.asarray(c_values, dtype=float))
    meta = {"c_kind": c_kind, "frequency": float(f)}

    if c_kind == "i_trg":
        protocol = protocol or TrapProtocol()
        res = _trapped_fluxoids(c, protocol, b)
        meta["j"] = res.j.tolist()
        meta["j_ideal"] = res.j_ideal.tolist()
        meta["failed"] = res.failed.tolist()
        uj, inv = np.unique(res.j, return_inverse=True)
        meta["phi_ext"] = float(phi_ext)
        rows, flags = _rows(lambda jj: solve_batch(b, i_z, j=jj, phi_ext=phi_ext), uj, f, env,
                            threads)
        tau, fl = rows[inv], flags[inv]
    elif c_kind == "i_c":
        tau, fl = _rows(lambda cc: solve_batch(b, i_z, i_c=cc), c, f, env, threads)
    elif c_kind == "phi_ext":
        meta["j_fixed"] = int(j)
        tau, fl = _rows(
            lambda pe: solve_batch(b, i_z, j=j, phi_ext=pe), c, f, env, threads
        )
    else:
        raise ValueError(f"unknown c_kind {c_kind!r}")
    return TransmissionGrid(i_z, c, tau, meta=meta, flags=fl)


def _rows(solve_row, values, f, env, threads):
    """Solve one grid row per value; a single batched solve unless threaded."""

    def solve(v):
        st = solve_row(v)
        bad = ~np.asarray(st.converged)
        return np.where(bad, 0.0, s21(st, f, env)), bad

    values = np.asarray(values)
    if threads > 1 and len(values) > 1:
        chunks = np.array_split(values, threads)
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(lambda ch: solve(ch[:, None]), chunks))
        return np.concatenate([o[0] for o in out]), np.concatenate([o[1] for o in out])
    return solve(values[:, None])


# ------------------------------------------------------------------- contrast


@dataclass
class ContrastResult:
    freqs: np.ndarray
    contrast_db: np.ndarray
    clipped: np.ndarray
    bandwidth_hz: float
    band: tuple


def on_off_contrast(freqs, tau_on, tau_off, threshold_db=20.0, floor_db=80.0):
    """On/off contrast per frequency and the widest contiguous band above threshold.

    Where ``tau_off`` is exactly zero the contrast is clipped to ``floor_db``
    and flagged in ``clipped``.
    """
    freqs = np.asarray(freqs, dtype=float)
    a_on = np.abs(np.asarray(tau_on))
    a_off = np.abs(np.asarray(tau_off))
    with np.errstate(divide="ignore", invalid="ignore"):
        c = 20 * np.log10(a_on / a_off)
    clipped = ~np.isfinite(c) | (c > floor_db)
    c = np.where(clipped, floor_db, c)
    c = np.where((a_on == 0) & (a_off == 0), 0.0, c)
    clipped &= ~((a_on == 0) & (a_off == 0))
    above = c > threshold_db
    if not np.any(above):
        raise EmptyBand(f"contrast never exceeds {threshold_db} dB")
    best, lo_best = (-1.0, 0), None
    start = None
    for k, flag in enumerate(np.append(above, False)):
        if flag and start is None:
            start = k
        elif not flag and start is not None:
            width = freqs[k - 1] - freqs[start]
            if width > best[0]:
                best, lo_best = (width, start), (freqs[start], freqs[k - 1])
            start = None
    return ContrastResult(freqs, c, clipped, float(best[0]), lo_best)


def on_off_from_sweep(grid_freq, i_z_axis, ref_index=None):
    """Pick on/off I_Z columns from a (freq, I_Z) transmission map.

    On maximises and off minimises ``|tau|`` at the reference frequency row
    (middle of the band by default).  Returns ``(k_on, k_off)``.
    """
    grid_freq = np.asarray(grid_freq)
    if ref_index is None:
        ref_index = grid_freq.shape[0] // 2
    mag = np.abs(grid_freq[ref_index])
    return int(np.argmax(mag)), int(np.argmin(mag))


# ------------------------------------------------------------------- compression


def drive_amplitude(p_dbm, f, z0=50.0):
    """X-mode phase amplitude for an input power in dBm: P = (A PHI0_RED w)^2 / 2 Z0."""
    p = 1e-3 * 10 ** (np.asarray(p_dbm, dtype=float) / 10)
    return np.sqrt(2 * z0 * p) / (PHI0_RED * 2 * np.pi * f)


def drive_power_dbm(amplitude, f, z0=50.0):
    p = (np.asarray(amplitude) * PHI0_RED * 2 * np.pi * f) ** 2 / (2 * z0)
    return 10 * np.log10(p / 1e-3)


def describing_inductances(bias: BiasState, amplitude, b: BridgeParams, samples=512):
    """Large-signal arm inductances for an X drive ``phi_X = A sin(wt)``.

    Each arm sees its branch phase swing by ``(dphi_l/dphi_X) A sin(wt)``;
    the effective inductance is ``PHI0_RED * swing / I_1`` with ``I_1`` the
    fundamental (sine) Fourier component of the arm current over one period.
    """
    if samples < 256:
        raise ValueError("use at least 256 samples per period")
    theta = 2 * np.pi * np.arange(samples) / samples
    s = np.sin(theta)
    a = np.atleast_1d(np.asarray(amplitude, dtype=float))
    swing = arm_phases(ModePhases(1.0, 0.0, 0.0, 0.0)).as_array()  # (4,)
    phi0 = bias.arm_phases.as_array()  # (4,)
    i0 = bias.arm_currents
    dphi = a[:, None, None] * swing[None, :, None] * s[None, None, :]
    i_t = arm_current(phi0[None, :, None] + dphi, b) - i0[None, :, None]
    i1 = 2 * np.mean(i_t * s, axis=-1)
    return PHI0_RED * a[:, None] * swing[None, :] / i1


def large_signal_tau(bias: BiasState, f, env: PortEnvironment, b, amplitude, linear_arms=False):
    """Transmission vs X-drive phase amplitude (quasi-static describing function)."""
    a = np.atleast_1d(np.asarray(amplitude, dtype=float))
    if linear_arms:
        l_arm = np.broadcast_to(bias.arm_inductances, (len(a), 4))
    else:
        l_arm = describing_inductances(bias, a, b)
    l_a, l_b = pair_inductances(l_arm)
    return env.loss_factor * lattice_tau(l_a, l_b, f, env.z0)


@dataclass
class CompressionResult:
    p1db_dbm: float
    amplitude: float
    small_signal: complex
    powers_dbm: np.ndarray
    gain_db: np.ndarray


def compression_point(
    bias: BiasState,
    f,
    env: PortEnvironment,
    b: BridgeParams,
    drive_range=(-110.0, -30.0),
    points=161,
    linear_arms=False,
):
    """Input power (dBm) where ``|tau|`` first falls 1 dB below small signal."""
    tau0 = complex(np.ravel(s21(bias, f, env))[0])
    if tau0 == 0:
        raise NoCompressionInRange("bias is balanced: no small-signal transmission")
    powers = np.linspace(drive_range[0], drive_range[1], points)

    def gain(p):
        t = large_signal_tau(bias, f, env, b, drive_amplitude(p, f, env.z0), linear_arms)
        return 20 * np.log10(np.abs(t) / abs(tau0))

    g = gain(powers)
    below = np.flatnonzero(g <= -1.0)
    if below.size == 0:
        raise NoCompressionInRange(
            f"no 1 dB compression between {drive_range[0]} and {drive_range[1]} dBm"
        )
    k = below[0]
    if k == 0:
        raise NoCompressionInRange("already compressed at the lowest drive power")
    lo, hi = powers[k - 1], powers[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gain(mid)[0] <= -1.0:
            hi = mid
        else:
            lo = mid
    p1 = 0.5 * (lo + hi)
    return CompressionResult(
        p1db_dbm=float(p1),
        amplitude=float(drive_amplitude(p1, f, env.z0)),
        small_signal=tau0,
        powers_dbm=powers,
        gain_db=g,
    )


# ------------------------------------------------------------------- synthetic data


def with_noise(tau, sigma, rng):
    """Add complex white noise of standard deviation ``sigma`` per quadrature."""
    tau = np.asarray(tau, dtype=complex)
    if sigma == 0:
        return tau.copy()
    return tau + sigma * (rng.standard_normal(tau.shape) + 1j * rng.standard_normal(tau.shape))


def drift_grids(states, i_z_axis, phi_axis, f, b: BridgeParams, env: PortEnvironment,
                noise=0.0, rng=None):
    """One (phi_ext, I_Z) grid per trapped state, sampled on fixed nominal axes."""
    rng = rng if rng is not None else np.random.default_rng(0)
    phi_axis = np.asarray(phi_axis, dtype=float)
    out = []
    for s in states:
        g = sweep_grid(i_z_axis, phi_axis + s.phi_ext, f, b, env, c_kind="phi_ext", j=s.j)
        meta = dict(g.meta, t_hours=s.t_hours, phi_ext_offset=s.phi_ext)
        out.append(TransmissionGrid(g.i_z_axis, phi_axis, with_noise(g.tau, noise, rng),
                                    meta=meta, flags=g.flags))
    return out
