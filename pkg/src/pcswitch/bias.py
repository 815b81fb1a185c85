"""DC operating point of the bridge by damped Newton iteration.

The unknowns are the four junction phases (one per arm, all squids in an arm
identical).  Two kinds of bias are supported:

* current driven: the X, Y, Z and C mode currents are prescribed;
* fluxoid constrained: X, Y, Z currents are prescribed and the total loop
  phase is pinned to ``2 pi j + phi_ext`` (plus the optional ``skew * I_Z``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import (
    PATTERNS,
    PHI0_RED,
    ArmPhases,
    BridgeParams,
    ModePhases,
    arm_branch_phase,
    arm_from_mode_currents,
    arm_inductance,
    mode_phases,
    squid_current,
    squid_slope,
    stray_per_arm_coeff,
)
from .errors import BranchAmbiguity, NoConvergence

MAX_ITER = 200
MAX_HALVINGS = 60
CURRENT_TOL = 1e-12  # in units of I_0
LOOP_TOL = 1e-10  # rad


class BiasMode(enum.Enum):
    CURRENT_DRIVEN = "current"
    FLUXOID_CONSTRAINED = "fluxoid"


@dataclass(frozen=True)
class AppliedBias:
    mode: BiasMode
    i_z: float = 0.0
    i_c: float | None = None
    j: int | None = None
    phi_ext: float | None = None

    def __post_init__(self):
        if self.mode is BiasMode.CURRENT_DRIVEN:
            if self.i_c is None or self.j is not None or self.phi_ext is not None:
                raise ValueError("current-driven bias takes i_c only")
        elif self.i_c is not None or self.j is None or self.phi_ext is None:
            raise ValueError("fluxoid-constrained bias takes j and phi_ext only")

    @classmethod
    def current(cls, i_z, i_c):
        return cls(BiasMode.CURRENT_DRIVEN, i_z=i_z, i_c=i_c)

    @classmethod
    def fluxoid(cls, i_z, j, phi_ext=0.0):
        return cls(BiasMode.FLUXOID_CONSTRAINED, i_z=i_z, j=int(j), phi_ext=phi_ext)


@dataclass
class BiasState:
    """Solved operating point; fields may be batched with a leading shape."""

    phases: ModePhases
    arm_phases: ArmPhases
    junction_phases: np.ndarray  # (..., 4) rad, order NW SW SE NE
    arm_currents: np.ndarray  # (..., 4) A
    arm_inductances: np.ndarray  # (..., 4) H, includes L_str/4
    residual_norm: np.ndarray | float  # A
    converged: np.ndarray | bool = True
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def i_c(self):
        return np.mean(self.arm_currents, axis=-1)

    @property
    def loop_phase(self):
        return self.phases.phi_c


def arm_current_split(i_z, i_c):
    """Arm currents (NW, SW, SE, NE) for pure Z actuation plus circulation.

    Opposite arms carry the same current: ``i_c + i_z/4`` on NW/SE and
    ``i_c - i_z/4`` on SW/NE, so projecting back onto the Z pattern
    (1, -1, 1, -1) returns ``i_z`` exactly.
    """
    i_z = np.asarray(i_z, dtype=float)
    i_c = np.asarray(i_c, dtype=float)
    a = i_c + i_z / 4
    b_ = i_c - i_z / 4
    return np.stack([a, b_, a, b_], axis=-1)


def _loop_scale(b: BridgeParams):
    # converts a loop-phase residual into an equivalent C current
    return b.squid.i0 / (4 * b.n)


def _residual(phi_j, targets, loop_target, b):
    """Residual in amperes; ``loop_target`` NaN means current driven."""
    p = b.squid
    i_arm = squid_current(phi_j, p)
    r = i_arm @ PATTERNS.T - targets
    fl = ~np.isnan(loop_target)
    if np.any(fl):
        loop = np.sum(arm_branch_phase(phi_j[fl], b), axis=-1)
        r[fl, 3] = (loop - loop_target[fl]) * _loop_scale(b)
    return r


def _jacobian(phi_j, loop_target, b):
    slope = squid_slope(phi_j, b.squid)  # (B, 4)
    jac = PATTERNS[None, :, :] * slope[:, None, :]
    fl = ~np.isnan(loop_target)
    if np.any(fl):
        jac[fl, 3, :] = (b.n + stray_per_arm_coeff(b) * slope[fl]) * _loop_scale(b)
    return jac


def _initial_guess(targets, loop_target, b):
    p = b.squid
    # linear (large-phase) part of the current-phase relation: I ~ 2 I_0 phi / beta
    lin = 2 * p.i0 / p.beta
    i_arm = arm_from_mode_currents(targets)
    fl = ~np.isnan(loop_target)
    if np.any(fl):
        l_lin = 4 * b.n * p.l_sh / 2 + b.l_str
        i_c = loop_target[fl] * PHI0_RED / l_lin
        i_arm[fl] = i_arm[fl] - np.mean(i_arm[fl], axis=-1, keepdims=True) + i_c[:, None]
    return i_arm / lin


def newton_batch(targets, loop_target, b: BridgeParams, x0=None):
    """Damped Newton over a batch.

    Parameters
    ----------
    targets : (B, 4) array
        Prescribed X, Y, Z, C mode currents (the C column is ignored for
        fluxoid-constrained rows).
    loop_target : (B,) array
        Loop phase ``2 pi j + phi_ext`` for fluxoid rows, NaN for
        current-driven rows.

    Returns ``(phi_j, residual_norm, converged, iterations)``.
    """
    if not b.squid.beta < 2:
        raise BranchAmbiguity("beta >= 2: current-phase relation is multivalued")
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    loop_target = np.atleast_1d(np.asarray(loop_target, dtype=float))
    nb = targets.shape[0]
    x = _initial_guess(targets, loop_target, b) if x0 is None else np.array(x0, float)
    # stop a decade inside the advertised tolerances; quadratic convergence
    # makes the extra margin essentially free
    tol = 0.1 * CURRENT_TOL * b.squid.i0
    loop_tol_a = 0.1 * LOOP_TOL * _loop_scale(b)

    def norms(r):
        return np.max(np.abs(r), axis=-1)

    def done(r):
        ok = np.all(np.abs(r[:, :3]) <= tol, axis=-1)
        fl = ~np.isnan(loop_target)
        return ok & np.where(fl, np.abs(r[:, 3]) <= loop_tol_a, np.abs(r[:, 3]) <= tol)

    r = _residual(x, targets, loop_target, b)
    conv = done(r)
    it = 0
    while not np.all(conv) and it < MAX_ITER:
        it += 1
        act = ~conv
        xa, ra, lt = x[act], r[act], loop_target[act]
        step = np.linalg.solve(_jacobian(xa, lt, b), -ra[..., None])[..., 0]
        n0 = norms(ra)
        alpha = np.ones(len(xa))
        accepted = np.zeros(len(xa), dtype=bool)
        x_new, r_new = xa.copy(), ra.copy()
        for _ in range(MAX_HALVINGS + 1):
            pend = ~accepted
            trial = xa[pend] + alpha[pend, None] * step[pend]
            rt = _residual(trial, targets[act][pend], lt[pend], b)
            good = norms(rt) < n0[pend]
            idx = np.flatnonzero(pend)[good]
            x_new[idx], r_new[idx] = trial[good], rt[good]
            accepted[idx] = True
            if np.all(accepted):
                break
            alpha[~accepted] *= 0.5
        x[act], r[act] = x_new, r_new
        stalled = np.zeros(nb, dtype=bool)
        stalled[np.flatnonzero(act)[~accepted]] = True
        conv = done(r)
        # no descent possible: already at round-off level or genuinely stuck
        if np.any(stalled & ~conv):
            near = norms(r) <= 64 * np.finfo(float).eps * np.maximum(
                np.max(np.abs(targets), axis=-1), b.squid.i0
            )
            conv = conv | (stalled & near)
            if np.all(conv | stalled):
                break
    return x, norms(r), conv, it


def _state_from_phi_j(phi_j, resid, conv, it, b: BridgeParams) -> BiasState:
    branch = arm_branch_phase(phi_j, b)
    arms = ArmPhases.from_array(branch)
    return BiasState(
        phases=mode_phases(arms),
        arm_phases=arms,
        junction_phases=phi_j,
        arm_currents=squid_current(phi_j, b.squid),
        arm_inductances=arm_inductance(phi_j, b),
        residual_norm=resid,
        converged=conv,
        iterations=it,
    )


def solve_batch(b: BridgeParams, i_z, i_c=None, j=None, phi_ext=0.0, strict=False):
    """Vectorised solve; broadcasts ``i_z`` against ``i_c`` or ``(j, phi_ext)``.

    Non-converged points are flagged in ``BiasState.converged`` unless
    ``strict`` is set, in which case :class:`NoConvergence` is raised.
    """
    if (i_c is None) == (j is None):
        raise ValueError("give exactly one of i_c or j")
    if i_c is not None:
        i_z, i_c = np.broadcast_arrays(np.asarray(i_z, float), np.asarray(i_c, float))
        shape = i_z.shape
        targets = np.zeros(shape + (4,))
        targets[..., 2], targets[..., 3] = i_z, i_c
        loop = np.full(shape, np.nan)
    else:
        i_z, j, phi_ext = np.broadcast_arrays(
            np.asarray(i_z, float), np.asarray(j), np.asarray(phi_ext, float)
        )
        shape = i_z.shape
        targets = np.zeros(shape + (4,))
        targets[..., 2] = i_z
        loop = 2 * np.pi * j + phi_ext + b.skew * i_z
    phi_j, resid, conv, it = newton_batch(
        targets.reshape(-1, 4), loop.reshape(-1), b
    )
    if strict and not np.all(conv):
        raise NoConvergence(
            f"{np.count_nonzero(~conv)} bias points did not converge",
            residual=float(np.max(resid[~conv])),
        )
    return _state_from_phi_j(
        phi_j.reshape(shape + (4,)),
        resid.reshape(shape),
        conv.reshape(shape),
        it,
        b,
    )


def solve_bias(applied: AppliedBias, b: BridgeParams) -> BiasState:
    """Solve a single operating point; raises :class:`NoConvergence` on failure."""
    if applied.mode is BiasMode.CURRENT_DRIVEN:
        st = solve_batch(b, applied.i_z, i_c=applied.i_c)
    else:
        st = solve_batch(b, applied.i_z, j=applied.j, phi_ext=applied.phi_ext)
    if not bool(st.converged):
        raise NoConvergence(
            f"Newton failed for {applied}", residual=float(st.residual_norm)
        )
    return st
