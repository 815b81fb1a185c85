"""Closed-form physics of a single rf-SQUID and of the four-arm bridge.

Phases are dimensionless and measured in units of the reduced flux quantum
``PHI0_RED = hbar / 2e``; one trapped flux quantum is ``2*pi`` of loop phase.

Energy of one arm ``l`` made of ``N`` identical rf-SQUIDs with equal junction
phase ``phi_J = phi_l / N``::

    E_l = N * (-E_J cos(phi_J) + (PHI0_RED**2 / L_sh) * phi_J**2)

with ``E_J = PHI0_RED * I_0`` and ``beta = L_sh * I_0 / PHI0_RED``.  The arm
current is ``I_0 (sin phi_J + 2 phi_J / beta)`` and the current-phase relation
stays single valued for ``beta < 2``.  A stray inductance ``L_str / 4`` in series
with every arm adds ``L_str * I_l / (4 PHI0_RED)`` to the branch phase.

Arm phases (order NW, SW, SE, NE) follow from the mode phases through the
orthogonal pattern matrix ``PATTERNS``::

    phi_NW =  phi_Z + (phi_Y - phi_X)/sqrt2 + phi_C/4
    phi_SW = -phi_Z + (phi_X + phi_Y)/sqrt2 + phi_C/4
    phi_SE =  phi_Z + (phi_X - phi_Y)/sqrt2 + phi_C/4
    phi_NE = -phi_Z - (phi_X + phi_Y)/sqrt2 + phi_C/4

Summing the arm energies gives the eigenmode form (no stray inductance)::

    H = PHI0_RED**2/(N L_sh) (phi_C**2/4 + 2 phi_X**2 + 2 phi_Y**2 + 4 phi_Z**2)
        - 4 N E_J [cC cX cY cZ - sC sX sY sZ]

where ``cC = cos(phi_C/4N)``, ``cX = cos(phi_X/(sqrt2 N))``, ``cZ = cos(phi_Z/N)``
and likewise for the sines.  Expanding around ``phi_X = phi_Y = 0``:

* second order, cross term: ``(2 E_J / N) sin(phi_Z/N) sin(phi_C/4N) phi_X phi_Y``
  -> :func:`coupling_gxy`;
* fourth order, self term: ``-(E_J / 24 N**3) cos(phi_Z/N) cos(phi_C/4N) phi_X**4``
  (the ``phi_Y**4`` term is identical and the ``phi_X**2 phi_Y**2`` term is six
  times larger) -> :func:`kerr_kxy`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import constants

PHI0_RED = constants.hbar / (2 * constants.e)
"""Reduced flux quantum hbar/2e in Wb."""

PHI0 = constants.h / (2 * constants.e)
"""Flux quantum h/2e in Wb."""

ARMS = ("nw", "sw", "se", "ne")
MODES = ("x", "y", "z", "c")

_S = 1 / np.sqrt(2)
PATTERNS = np.array(
    [
        [-_S, _S, _S, -_S],  # X
        [_S, _S, -_S, -_S],  # Y
        [1.0, -1.0, 1.0, -1.0],  # Z
        [0.25, 0.25, 0.25, 0.25],  # C
    ]
)
"""Row k holds d(phi_l)/d(phi_k) for arms NW, SW, SE, NE."""

_PATTERN_NORM2 = np.sum(PATTERNS**2, axis=1)


@dataclass(frozen=True)
class SquidParams:
    """One rf-SQUID: critical current ``i0`` (A) and shunt inductance ``l_sh`` (H)."""

    i0: float
    l_sh: float

    def __post_init__(self):
        if not self.i0 > 0:
            raise ValueError(f"i0 must be positive, got {self.i0}")
        if not self.l_sh > 0:
            raise ValueError(f"l_sh must be positive, got {self.l_sh}")
        if not self.beta < 2:
            raise ValueError(f"beta={self.beta:.4g} is hysteretic (must be < 2)")

    @classmethod
    def from_beta(cls, beta, l_sh):
        return cls(i0=beta * PHI0_RED / l_sh, l_sh=l_sh)

    @property
    def beta(self):
        return self.l_sh * self.i0 / PHI0_RED

    @property
    def e_j(self):
        return PHI0_RED * self.i0


@dataclass(frozen=True)
class BridgeParams:
    """The assembled bridge.

    ``skew`` is an optional linear I_Z -> phi_C cross coupling (rad/A) used only
    by fluxoid-constrained solves; its physical value is unknown, default 0.
    """

    squid: SquidParams
    n: int = 20
    l_str: float = 0.0
    l_pcs: float = 0.0
    skew: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if self.l_str < 0:
            raise ValueError("l_str must be >= 0")
        if self.l_pcs < 0:
            raise ValueError("l_pcs must be >= 0")


class ModePhases(NamedTuple):
    phi_x: float | np.ndarray
    phi_y: float | np.ndarray
    phi_z: float | np.ndarray
    phi_c: float | np.ndarray

    def as_array(self):
        """Stack into shape ``(..., 4)``."""
        return np.stack(np.broadcast_arrays(*self), axis=-1)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(a[..., 0], a[..., 1], a[..., 2], a[..., 3])


class ArmPhases(NamedTuple):
    phi_nw: float | np.ndarray
    phi_sw: float | np.ndarray
    phi_se: float | np.ndarray
    phi_ne: float | np.ndarray

    def as_array(self):
        return np.stack(np.broadcast_arrays(*self), axis=-1)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(a[..., 0], a[..., 1], a[..., 2], a[..., 3])


class ModeCurrents(NamedTuple):
    i_x: float | np.ndarray
    i_y: float | np.ndarray
    i_z: float | np.ndarray
    i_c: float | np.ndarray

    def as_array(self):
        return np.stack(np.broadcast_arrays(*self), axis=-1)


class Periods(NamedTuple):
    i_c: float
    phi_c: float
    i_z: float


# ---------------------------------------------------------------- single squid


def squid_current(phi, p: SquidParams):
    """Current through one rf-SQUID at junction phase ``phi``."""
    phi = np.asarray(phi, dtype=float)
    return p.i0 * (np.sin(phi) + 2 * phi / p.beta)


def squid_slope(phi, p: SquidParams):
    """dI/dphi of one rf-SQUID (A/rad); strictly positive for beta < 2."""
    return p.i0 * (np.cos(phi) + 2 / p.beta)


def squid_diff_inductance(phi, p: SquidParams):
    """Differential inductance ``PHI0_RED dphi/dI = L_sh / (beta cos phi + 2)``."""
    return PHI0_RED / squid_slope(phi, p)


# ---------------------------------------------------------------- linear maps


def arm_phases(m: ModePhases) -> ArmPhases:
    return ArmPhases.from_array(m.as_array() @ PATTERNS)


def mode_phases(a: ArmPhases) -> ModePhases:
    return ModePhases.from_array((a.as_array() @ PATTERNS.T) / _PATTERN_NORM2)


def mode_from_arm_currents(i_arm):
    """Project arm currents ``(..., 4)`` onto the X, Y, Z, C patterns."""
    return ModeCurrents(*np.moveaxis(np.asarray(i_arm) @ PATTERNS.T, -1, 0))


def arm_from_mode_currents(i_modes):
    """Inverse of :func:`mode_from_arm_currents`; ``i_modes`` has shape ``(..., 4)``."""
    i_modes = np.asarray(i_modes, dtype=float)
    return (i_modes / _PATTERN_NORM2) @ PATTERNS


# ---------------------------------------------------------------- single arm


def stray_per_arm_coeff(b: BridgeParams):
    """Branch phase per ampere added by the stray inductance of one arm."""
    return b.l_str / (4 * PHI0_RED)


def arm_branch_phase(phi_j, b: BridgeParams):
    """Branch phase across an arm whose squids sit at junction phase ``phi_j``."""
    phi_j = np.asarray(phi_j, dtype=float)
    return b.n * phi_j + stray_per_arm_coeff(b) * squid_current(phi_j, b.squid)


def junction_phase(phi_l, b: BridgeParams):
    """Invert :func:`arm_branch_phase` (safeguarded Newton, vectorised)."""
    phi_l = np.asarray(phi_l, dtype=float)
    if b.l_str == 0:
        return phi_l / b.n
    s = stray_per_arm_coeff(b)
    p = b.squid
    # f(x) = A x + B sin x - phi_l with A > B, so the root lies in a known bracket
    a_lin = b.n + s * 2 * p.i0 / p.beta
    b_sin = s * p.i0
    lo = (phi_l - b_sin) / a_lin
    hi = (phi_l + b_sin) / a_lin
    x = phi_l / a_lin
    for _ in range(100):
        f = a_lin * x + b_sin * np.sin(x) - phi_l
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        step = f / (a_lin + b_sin * np.cos(x))
        x_new = x - step
        outside = (x_new <= lo) | (x_new >= hi)
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        done = np.abs(x_new - x) <= 4e-16 * np.maximum(1.0, np.abs(x))
        x = x_new
        if np.all(done):
            break
    return x


def arm_current(phi_l, b: BridgeParams):
    return squid_current(junction_phase(phi_l, b), b.squid)


def arm_energy(phi_l, b: BridgeParams):
    """Energy of one arm as a function of its branch phase (J)."""
    p = b.squid
    phi_j = junction_phase(phi_l, b)
    e = b.n * (-p.e_j * np.cos(phi_j) + PHI0_RED**2 / p.l_sh * phi_j**2)
    if b.l_str > 0:
        # (L_str / 4) I^2 / 2, written via the current to stay finite as L_str -> 0
        e = e + b.l_str / 8 * squid_current(phi_j, p) ** 2
    return e


def arm_inductance(phi_j, b: BridgeParams):
    """Differential inductance of a whole arm, stray share included (H)."""
    return b.n * squid_diff_inductance(phi_j, b.squid) + b.l_str / 4


def loop_diff_inductance(phi_j_arms, b: BridgeParams):
    """Differential inductance of the bridge loop seen by the C current (H)."""
    phi_j_arms = np.asarray(phi_j_arms, dtype=float)
    return np.sum(b.n * squid_diff_inductance(phi_j_arms, b.squid), axis=-1) + b.l_str


# ---------------------------------------------------------------- bridge


def hamiltonian(m: ModePhases, b: BridgeParams, form="branch"):
    """Bridge energy (J) at mode phases ``m``.

    ``form="branch"`` sums arm energies and supports stray inductance.
    ``form="modes"`` evaluates the closed eigenmode expression, valid only
    for ``l_str == 0``.
    """
    if form == "branch":
        a = arm_phases(m).as_array()
        return np.sum(arm_energy(a, b), axis=-1)
    if form != "modes":
        raise ValueError(f"unknown form {form!r}")
    if b.l_str != 0:
        raise ValueError("the eigenmode form has no stray-inductance term")
    n, p = b.n, b.squid
    x, y, z, c = (np.asarray(v, dtype=float) for v in m)
    quad = PHI0_RED**2 / (n * p.l_sh) * (c**2 / 4 + 2 * x**2 + 2 * y**2 + 4 * z**2)
    ax, ay = x / (np.sqrt(2) * n), y / (np.sqrt(2) * n)
    az, ac = z / n, c / (4 * n)
    trig = np.cos(ac) * np.cos(ax) * np.cos(ay) * np.cos(az) - np.sin(ac) * np.sin(
        ax
    ) * np.sin(ay) * np.sin(az)
    return quad - 4 * n * p.e_j * trig


def mode_currents(m: ModePhases, b: BridgeParams) -> ModeCurrents:
    """``I_k = (1/PHI0_RED) dH/dphi_k`` via the chain rule over the arms."""
    i_arm = arm_current(arm_phases(m).as_array(), b)
    return mode_from_arm_currents(i_arm)


def coupling_gxy(phi_z, phi_c, b: BridgeParams):
    """Coefficient of ``phi_X * phi_Y`` in H (J): (2 E_J/N) sin(phi_Z/N) sin(phi_C/4N)."""
    n = b.n
    return 2 * b.squid.e_j / n * np.sin(np.asarray(phi_z) / n) * np.sin(
        np.asarray(phi_c) / (4 * n)
    )


def kerr_kxy(phi_z, phi_c, b: BridgeParams):
    """Coefficient of ``phi_X**4`` in H (J): -(E_J/24N^3) cos(phi_Z/N) cos(phi_C/4N)."""
    n = b.n
    return -b.squid.e_j / (24 * n**3) * np.cos(np.asarray(phi_z) / n) * np.cos(
        np.asarray(phi_c) / (4 * n)
    )


def periods(b: BridgeParams) -> Periods:
    """Periods of the bridge response.

    ``i_c``: C current period 4 pi I_0 / beta (stray independent).
    ``phi_c``: loop phase period 8 pi N + 4 pi L_str / L_sh.
    ``i_z``: Z current advancing phi_Z/N by 2 pi at fixed fluxoid, 16 pi I_0 / beta.
    """
    p = b.squid
    return Periods(
        i_c=4 * np.pi * p.i0 / p.beta,
        phi_c=8 * np.pi * b.n + 4 * np.pi * b.l_str / p.l_sh,
        i_z=16 * np.pi * p.i0 / p.beta,
    )


DEFAULT_BETA = 1.2
DEFAULT_L_SH = 65e-12
DEFAULT_L_STR = 1.3e-9
DEFAULT_L_PCS = 1e-12


def default_bridge(**overrides) -> BridgeParams:
    """Reference device: beta 1.2, L_sh 65 pH, N = 20, L_str 1.3 nH, L_PCS 1 pH."""
    beta = overrides.pop("beta", DEFAULT_BETA)
    l_sh = overrides.pop("l_sh", DEFAULT_L_SH)
    kw = dict(n=20, l_str=DEFAULT_L_STR, l_pcs=DEFAULT_L_PCS)
    kw.update(overrides)
    return BridgeParams(SquidParams.from_beta(beta, l_sh), **kw)
