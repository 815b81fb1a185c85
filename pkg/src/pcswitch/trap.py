"""Persistent-current-switch (PCS) trapping, fluxoid bookkeeping and drift.

The PCS thermal cycle is collapsed to an instantaneous event: while the patch
is normal the target current ``i_trg`` flows through the open bridge loop, and
on re-closing the loop keeps the fluxoid branch whose circulating current is
nearest to ``i_trg``.  Two stochastic channels sit on top of that rule:

* boundary fuzz -- near the midpoint between two branches the choice follows a
  logistic law of width ``boundary_width * I_stp``;
* outright failure -- with probability ``failure_probability`` the fluxoid is
  offset by +-1, +-2, +-3 with geometrically decaying weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .bias import solve_batch
from .core import PHI0_RED, BridgeParams, loop_diff_inductance, periods
from .errors import NoConvergence


@dataclass(frozen=True)
class TrapProtocol:
    heater_threshold: float = 4.8e-3  # A, metadata only
    ramp_duration: float = 200e-6  # s, metadata only
    failure_probability: float = 0.023
    rng_seed: int = 0
    boundary_width: float = 0.05  # fraction of the local step width
    failure_offsets: tuple = (1, 2, 3)
    failure_decay: float = 0.7

    def __post_init__(self):
        if not 0 <= self.failure_probability < 1:
            raise ValueError("failure_probability must lie in [0, 1)")
        if self.boundary_width < 0:
            raise ValueError("boundary_width must be >= 0")

    def offset_distribution(self):
        """Signed fluxoid offsets and their probabilities for a failed trap."""
        mags = np.asarray(self.failure_offsets, dtype=int)
        w = self.failure_decay ** np.arange(len(mags))
        offsets = np.concatenate([mags, -mags])
        probs = np.concatenate([w, w])
        return offsets, probs / probs.sum()


@dataclass(frozen=True)
class TrapState:
    j: int
    phi_ext: float
    i_c: float
    failed: bool = False
    t_hours: float = 0.0


@dataclass
class TrapSweep:
    """Result of trapping at many target currents."""

    i_trg: np.ndarray
    j: np.ndarray
    j_ideal: np.ndarray
    failed: np.ndarray


def phi_ext_from_source(i_src, b: BridgeParams):
    """External loop phase produced by the C source through the closed PCS."""
    return b.l_pcs * np.asarray(i_src, dtype=float) / PHI0_RED


def i_c_of_j(j, phi_ext, i_z, b: BridgeParams):
    """Circulating current on fluxoid branch ``j`` (vectorised)."""
    st = solve_batch(b, i_z, j=j, phi_ext=phi_ext)
    if not np.all(st.converged):
        raise NoConvergence(
            "fluxoid solve failed", residual=float(np.max(st.residual_norm))
        )
    i_c = st.i_c
    return float(i_c) if np.ndim(i_c) == 0 else i_c


def open_loop_fluxoid(i_trg, b: BridgeParams, i_z=0.0):
    """Loop phase carried by ``i_trg`` in the open loop, in flux quanta."""
    st = solve_batch(b, i_z, i_c=i_trg, strict=True)
    return st.phases.phi_c / (2 * np.pi)


def loop_inductance(i_c, i_z, b: BridgeParams):
    """Differential loop inductance at a current-driven bias (H)."""
    st = solve_batch(b, i_z, i_c=i_c, strict=True)
    return loop_diff_inductance(st.junction_phases, b)


def step_width(i_trg, i_z, b: BridgeParams):
    """C current needed to add one flux quantum: ``2 pi PHI0_RED / L_loop``."""
    return 2 * np.pi * PHI0_RED / loop_inductance(i_trg, i_z, b)


def diff_inductance_readouts(i_stp):
    """Loop inductance implied by a step width, for both flux-quantum conventions.

    Returns ``(h/2e) / I_stp`` (equal to the loop inductance) and
    ``(hbar/2e) / I_stp``.
    """
    i_stp = np.asarray(i_stp, dtype=float)
    return 2 * np.pi * PHI0_RED / i_stp, PHI0_RED / i_stp


def _branch_currents(js, b):
    uj = np.unique(js)
    ic = np.atleast_1d(i_c_of_j(uj, 0.0, 0.0, b))
    return dict(zip(uj.tolist(), ic.tolist()))


def trap_many(i_trg, protocol: TrapProtocol, b: BridgeParams, rng=None) -> TrapSweep:
    """Trap once at every entry of ``i_trg``; one random stream for the batch."""
    if rng is None:
        rng = np.random.default_rng(protocol.rng_seed)
    i_trg = np.atleast_1d(np.asarray(i_trg, dtype=float))
    x = np.atleast_1d(open_loop_fluxoid(i_trg, b))
    j_lo = np.floor(x).astype(int)
    ic = _branch_currents(np.concatenate([j_lo, j_lo + 1]), b)
    ic_lo = np.array([ic[k] for k in j_lo.tolist()])
    ic_hi = np.array([ic[k + 1] for k in j_lo.tolist()])
    mid = 0.5 * (ic_lo + ic_hi)
    j_ideal = np.where(i_trg > mid, j_lo + 1, j_lo)

    u_fuzz = rng.random(len(i_trg))
    u_fail = rng.random(len(i_trg))
    offsets, probs = protocol.offset_distribution()
    draw = rng.choice(offsets, size=len(i_trg), p=probs)

    w = protocol.boundary_width * (ic_hi - ic_lo)
    if protocol.boundary_width > 0:
        p_up = expit((i_trg - mid) / w)
        j = np.where(u_fuzz < p_up, j_lo + 1, j_lo)
    else:
        j = j_ideal.copy()
    failed = u_fail < protocol.failure_probability
    j = np.where(failed, j + draw, j)
    return TrapSweep(i_trg=i_trg, j=j, j_ideal=j_ideal, failed=failed)


def trap(i_trg, protocol: TrapProtocol, b: BridgeParams, rng=None) -> TrapState:
    """Run the PCS protocol once and return the trapped state (``phi_ext = 0``)."""
    res = trap_many([i_trg], protocol, b, rng=rng)
    j = int(res.j[0])
    return TrapState(j=j, phi_ext=0.0, i_c=i_c_of_j(j, 0.0, 0.0, b), failed=bool(res.failed[0]))


# ------------------------------------------------------------ period counting


def quanta_per_period(b: BridgeParams, convention="loop"):
    """Trapped flux quanta per transmission period.

    ``"loop"`` follows from the loop model, ``4N + 2 L_str/L_sh``.
    ``"naive"`` is the alternative reading ``4N + L_str/L_sh``.
    """
    ratio = b.l_str / b.squid.l_sh
    if convention == "loop":
        return int(round(periods(b).phi_c / (2 * np.pi)))
    if convention == "naive":
        return int(round(4 * b.n + ratio))
    raise ValueError(f"unknown convention {convention!r}")


def stray_from_quanta(count, b: BridgeParams, convention="loop"):
    """Back out ``L_str`` (H) from a measured quanta-per-period count."""
    excess = count - 4 * b.n
    if convention == "loop":
        return excess * b.squid.l_sh / 2
    if convention == "naive":
        return excess * b.squid.l_sh
    raise ValueError(f"unknown convention {convention!r}")


def count_quanta_per_period(b: BridgeParams, f=5.1e9, i_z=None, max_quanta=None, rtol=1e-9):
    """Brute-force count: smallest P with tau(j + P) == tau(j) for every j.

    Solves the full fluxoid-constrained bridge for a run of consecutive
    fluxoid numbers and compares the simulated transmission sequence with
    its own shifts.
    """
    from .microwave import PortEnvironment, s21

    if i_z is None:
        i_z = 0.1 * periods(b).i_z
    if max_quanta is None:
        max_quanta = 4 * b.n + int(np.ceil(4 * b.l_str / b.squid.l_sh)) + 8
    js = np.arange(0, 2 * max_quanta + 1)
    st = solve_batch(b, i_z, j=js, strict=True)
    tau = s21(st, f, PortEnvironment(insertion_loss_db=0.0))
    scale = np.max(np.abs(tau))
    for p in range(1, max_quanta + 1):
        n = len(js) - p
        if np.max(np.abs(tau[p:] - tau[:n])) <= rtol * scale:
            return p
    raise ValueError(f"no period up to {max_quanta} quanta")


# ------------------------------------------------------------ drift


def drift_monitor(
    schedule,
    jump_rate,
    protocol: TrapProtocol,
    b: BridgeParams,
    j0=0,
    decay_per_day=0.0,
    inject=None,
):
    """Time series of the trapped state at the times in ``schedule`` (hours).

    Spontaneous jumps arrive as a Poisson process of rate ``jump_rate`` per hour,
    each changing j by +-1.  ``inject`` maps an epoch index to an extra
    deterministic change of j applied from that epoch on.  ``decay_per_day``
    shrinks the effective trapped loop phase linearly in time.
    """
    if jump_rate < 0:
        raise ValueError("jump_rate must be >= 0")
    rng = np.random.default_rng(protocol.rng_seed)
    t = np.asarray(schedule, dtype=float)
    dt = np.diff(t, prepend=t[0])
    n_jumps = rng.poisson(jump_rate * dt)
    steps = np.array([rng.choice([-1, 1], size=k).sum() if k else 0 for k in n_jumps])
    if inject:
        for epoch, dj in inject.items():
            steps[int(epoch)] += int(dj)
    js = j0 + np.cumsum(steps)
    phi_ext = -2 * np.pi * js * decay_per_day * (t - t[0]) / 24.0
    i_c = np.atleast_1d(i_c_of_j(js, phi_ext, 0.0, b))
    return [
        TrapState(j=int(jj), phi_ext=float(pe), i_c=float(ic), t_hours=float(tt))
        for jj, pe, ic, tt in zip(js, phi_ext, i_c, t)
    ]


def on_bias_fluxoid(b: BridgeParams):
    """Fluxoid of the maximally unbalanced state (junction phases pi, 0, pi, 0).

    Together with ``I_Z = I_Z_period / 4`` this is a quarter of a loop period.
    """
    return int(round(periods(b).phi_c / (2 * np.pi) / 4))
