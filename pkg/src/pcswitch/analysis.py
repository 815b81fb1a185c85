"""Measurement analysis shared by simulated and imported transmission data.

Linecut similarity is the normalized correlation

    chi_mn = sum_d conj(tau_m(d)) tau_n(d) / (|tau_m| |tau_n|)

reported as its real part by default (``readout="abs"`` gives ``|chi|``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import FlatGrid, UnimodalHistogram, ZeroNormCurve

OUTLIER_FLOOR = 0.9
BIN_WIDTH = 1e-4


@dataclass
class LinecutSet:
    """Linecuts ``curves[m]`` = tau(I_Z) at sweep value ``c_axis[m]``."""

    curves: np.ndarray
    i_z_axis: np.ndarray
    c_axis: np.ndarray

    def __post_init__(self):
        self.curves = np.asarray(self.curves, dtype=complex)
        self.i_z_axis = np.asarray(self.i_z_axis, dtype=float)
        self.c_axis = np.asarray(self.c_axis, dtype=float)
        if self.curves.ndim != 2 or self.curves.shape != (len(self.c_axis), len(self.i_z_axis)):
            raise ValueError("curves must be (len(c_axis), len(i_z_axis))")

    @classmethod
    def from_grid(cls, grid):
        return cls(grid.tau, grid.i_z_axis, grid.c_axis)


def _readout(z, readout):
    if readout == "real":
        return np.real(z)
    if readout == "abs":
        return np.abs(z)
    raise ValueError(f"unknown readout {readout!r}")


def chi(curve_m, curve_n, readout=None):
    """Normalized correlation of two linecuts; complex unless ``readout`` is given."""
    a = np.asarray(curve_m)
    b = np.asarray(curve_n)
    if a.shape != b.shape:
        raise ValueError("curves must have equal length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroNormCurve("cannot normalise a zero curve")
    z = np.vdot(a, b) / (na * nb)
    return z if readout is None else _readout(z, readout)


def normalize_curves(curves):
    u = np.asarray(curves, dtype=complex)
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms == 0):
        bad = np.flatnonzero(norms == 0)
        raise ZeroNormCurve(f"zero-norm linecuts at indices {bad[:10].tolist()}")
    return u / norms[:, None]


def chi_matrix(curves, readout="real"):
    """Full chi matrix (use :func:`chi_band` for long sweeps)."""
    u = normalize_curves(curves)
    return _readout(u.conj() @ u.T, readout)


def chi_band(curves, band, readout="real", block=512):
    """``out[m, k] = chi(m, m + k)`` for ``0 <= k <= band`` (NaN past the end)."""
    u = normalize_curves(curves)
    n = len(u)
    band = int(min(band, n - 1))
    out = np.full((n, band + 1), np.nan)
    for s in range(0, n, block):
        e = min(s + block, n)
        ce = min(e + band, n)
        g = _readout(u[s:e].conj() @ u[s:ce].T, readout)
        rows = np.arange(e - s)
        for k in range(band + 1):
            cols = rows + k
            ok = cols < ce - s
            out[s + rows[ok], k] = g[rows[ok], cols[ok]]
    return out


# ------------------------------------------------------------------ threshold


def histogram_threshold(chi_values, bin_width=BIN_WIDTH, min_prominence=0.01):
    """Valley between the two highest-chi peaks of the chi histogram.

    ``chi_values`` may be a full chi matrix (diagonal ignored), a band from
    :func:`chi_band` (column 0 ignored) or a flat array of pair values.
    """
    v = np.asarray(chi_values, dtype=float)
    if v.ndim == 2 and v.shape[0] == v.shape[1] and np.allclose(np.diag(v), 1):
        v = v[~np.eye(len(v), dtype=bool)]
    elif v.ndim == 2:
        v = v[:, 1:]
    v = v[np.isfinite(v)].ravel()
    if v.size < 2:
        raise UnimodalHistogram("not enough chi values")
    top = np.max(v) + bin_width
    lo = np.min(v)
    nbins = int(np.ceil((top - lo) / bin_width)) + 1
    edges = top - bin_width * np.arange(nbins + 1)[::-1]
    h, _ = np.histogram(v, bins=nbins, range=(edges[0], edges[-1]))
    centers = 0.5 * (edges[:-1] + edges[1:])
    min_prom = max(1.0, min_prominence * h.max())
    # grow a window down from the top until two peaks stand clear of its edge
    width = 256
    while True:
        start = max(0, nbins - width)
        padded = np.concatenate([[0], h[start:], [0]])
        peaks, _ = signal.find_peaks(padded, prominence=min_prom)
        peaks = peaks - 1 + start
        clear = start == 0 or (len(peaks) >= 2 and peaks[-2] - start > width // 4)
        if clear:
            break
        width *= 2
    if len(peaks) < 2:
        raise UnimodalHistogram("chi histogram has a single peak; widen the sweep")
    hi_peak, lo_peak = peaks[-1], peaks[-2]
    seg = h[lo_peak : hi_peak + 1]
    vmin = seg.min()
    at_min = np.flatnonzero(seg == vmin)
    # longest contiguous run of minimum bins
    runs = np.split(at_min, np.flatnonzero(np.diff(at_min) > 1) + 1)
    run = max(runs, key=len)
    return float(np.mean(centers[lo_peak + run]))


# ------------------------------------------------------------------ grouping


@dataclass
class StepReport:
    groups: list  # (first, last) inclusive index ranges
    labels: np.ndarray  # group id per index, -1 if unassignable
    boundaries: np.ndarray  # fractional index positions between groups
    step_widths: np.ndarray  # per group in c-axis units, NaN for edge groups
    group_centers: np.ndarray  # c-axis value at each group's centre
    threshold: float
    outlier_indices: list
    obvious_outliers: list
    failure_rate: float
    failure_rate_sigma: float
    n_core: int
    medoids: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = [None if (isinstance(x, float) and np.isnan(x)) else x for x in v.tolist()]
        d["groups"] = [list(map(int, g)) for g in self.groups]
        return d


def _classes(band, threshold):
    n = band.shape[0]
    m, k = np.nonzero(np.nan_to_num(band[:, 1:], nan=-np.inf) >= threshold)
    k = k + 1
    g = coo_matrix((np.ones(len(m)), (m, m + k)), shape=(n, n))
    _, lab = connected_components(g, directed=False)
    # renumber by first appearance
    _, first = np.unique(lab, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[lab]


def _step_classes(lab, min_fraction):
    """Classes large enough to be steps, ordered by median sweep position.

    Once steps are resolved (typical class size >= 3) classes smaller than
    ``min_fraction`` of the typical size are treated as stray linecuts, except
    for partial steps at either end of the sweep.
    """
    counts = np.bincount(lab)
    # class size seen by a typical index; robust to many tiny stray classes
    typical = np.median(counts[lab])
    floor = max(2, min_fraction * typical) if typical >= 3 else 1
    # partial steps cut by the sweep ends stay, however short
    edge = np.zeros(len(counts), dtype=bool)
    edge[[lab[0], lab[-1]]] = counts[[lab[0], lab[-1]]] >= 2
    keep = np.flatnonzero((counts >= floor) | edge)
    idx = np.arange(len(lab))
    med = np.array([np.median(idx[lab == c]) for c in keep])
    order = np.argsort(med, kind="stable")
    return keep[order], med[order]


def _place_boundary(lab, a_cls, b_cls, lo, hi, guess):
    """Half-integer boundary minimising summed squared distance of misassigned indices."""
    idx = np.arange(lo, hi + 1)
    la = idx[lab[idx] == a_cls]
    lb = idx[lab[idx] == b_cls]
    cands = np.arange(lo, hi + 1) + 0.5
    cands = cands[(cands > lo) & (cands < hi)]
    if cands.size == 0:
        return guess
    db = lb[None, :] - cands[:, None]
    da = la[None, :] - cands[:, None]
    cost = np.sum(np.where(db < 0, db**2, 0), axis=1) + np.sum(np.where(da > 0, da**2, 0), axis=1)
    best = np.flatnonzero(cost == cost.min())
    return float(np.mean(cands[best]))


def group_steps(
    curves,
    threshold,
    c_axis=None,
    band=None,
    readout="real",
    min_fraction=0.25,
    boundary_zone=0.4,
    outlier_floor=OUTLIER_FLOOR,
    chi_values=None,
):
    """Group linecuts that share a trapped flux and measure the step widths.

    Linecuts are linked when their chi reaches ``threshold`` (within ``band``
    sweep positions); linked classes are ordered along the sweep by their
    median position, so the sweep is assumed monotone.  Each boundary between
    consecutive classes minimises the summed squared distance of indices that
    sit on the wrong side of it.

    The failure rate counts mismatched indices in the core of every step,
    i.e. farther than ``boundary_zone`` step lengths from any boundary, where
    boundary stochasticity cannot explain them.
    """
    if hasattr(curves, "tau"):
        curves = LinecutSet.from_grid(curves)
    if isinstance(curves, LinecutSet):
        c_axis = curves.c_axis if c_axis is None else c_axis
        curves = curves.curves
    curves = np.asarray(curves)
    n = len(curves)
    if c_axis is None:
        c_axis = np.arange(n, dtype=float)
    c_axis = np.asarray(c_axis, dtype=float)
    if band is None:
        band = min(n - 1, 600)
    if chi_values is None:
        chi_values = chi_band(curves, band, readout) if n > 1 else np.ones((1, 1))
    lab = _classes(chi_values, threshold) if n > 1 else np.zeros(1, dtype=int)

    group_cls, med = _step_classes(lab, min_fraction)
    bounds = []
    for k in range(len(group_cls) - 1):
        lo, hi = int(np.ceil(med[k])), int(np.floor(med[k + 1]))
        bounds.append(_place_boundary(lab, group_cls[k], group_cls[k + 1], lo, hi,
                                      0.5 * (med[k] + med[k + 1])))
    bounds = np.array(bounds)
    edges = np.concatenate([[-0.5], bounds, [n - 0.5]])
    groups = []
    for g in range(len(group_cls)):
        first = int(np.ceil(edges[g]))
        last = int(np.floor(edges[g + 1]))
        groups.append((first, max(first, last)))

    frac = np.arange(n, dtype=float)
    c_at = lambda x: np.interp(x, frac, c_axis)  # noqa: E731
    widths = np.full(len(group_cls), np.nan)
    for g in range(1, len(group_cls) - 1):
        widths[g] = c_at(edges[g + 1]) - c_at(edges[g])
    centers = c_at(0.5 * (np.clip(edges[:-1], 0, n - 1) + np.clip(edges[1:], 0, n - 1)))

    # per-index labels: nearest group of the same class
    centers_idx = np.array([0.5 * (a + b) for a, b in groups])
    labels = np.full(n, -1)
    for c in np.unique(lab):
        owners = np.flatnonzero(group_cls == c)
        if owners.size == 0:
            continue
        members = np.flatnonzero(lab == c)
        near = owners[np.argmin(np.abs(members[:, None] - centers_idx[owners][None, :]), axis=1)]
        labels[members] = near

    pos_group = np.searchsorted(edges[1:-1], frac)
    mismatch = lab != group_cls[pos_group]
    lengths = np.array([b - a + 1 for a, b in groups], dtype=float)
    if len(groups) > 2:
        # edge groups are cut by the sweep; measure their zone in typical steps
        lengths[[0, -1]] = np.median(lengths[1:-1])
    seg_len = lengths[pos_group]
    d_left = np.where(pos_group > 0, frac - edges[pos_group], np.inf)
    d_right = np.where(pos_group < len(group_cls) - 1, edges[pos_group + 1] - frac, np.inf)
    zone = boundary_zone * seg_len
    core = (d_left > zone) & (d_right > zone)
    # near a boundary, a mismatch is explained if it carries the neighbour's class
    nb_cls = np.where(d_left < d_right, group_cls[np.maximum(pos_group - 1, 0)],
                      group_cls[np.minimum(pos_group + 1, len(group_cls) - 1)])
    fuzz = mismatch & ~core & (lab == nb_cls)
    outliers = np.flatnonzero(mismatch & ~fuzz)

    n_core = int(np.count_nonzero(core))
    fails = int(np.count_nonzero(mismatch & core))
    rate = fails / n_core if n_core else float("nan")
    sigma = np.sqrt(rate * (1 - rate) / n_core) if n_core else float("nan")

    u = normalize_curves(curves)
    medoids = []
    for g, (a, b) in enumerate(groups):
        own = np.arange(a, b + 1)
        own = own[lab[own] == group_cls[g]]
        if own.size == 0:
            own = np.arange(a, b + 1)
        if own.size > 200:
            own = own[np.linspace(0, own.size - 1, 200).astype(int)]
        sub = _readout(u[own].conj() @ u[own].T, readout)
        medoids.append(int(own[np.argmax(sub.mean(axis=1))]))
    obvious = []
    if outliers.size:
        sims = _readout(u[outliers].conj() @ u[medoids].T, readout)
        obvious = outliers[np.max(sims, axis=1) < outlier_floor].tolist()

    return StepReport(
        groups=groups,
        labels=labels,
        boundaries=bounds,
        step_widths=widths,
        group_centers=centers,
        threshold=float(threshold),
        outlier_indices=outliers.tolist(),
        obvious_outliers=obvious,
        failure_rate=float(rate),
        failure_rate_sigma=float(sigma),
        n_core=n_core,
        medoids=medoids,
    )


# ------------------------------------------------------------------ 2-D shifts


@dataclass
class ShiftResult:
    delta_i_z: float
    delta_phi_ext: float
    chi_max: float
    shift_samples: tuple


def _quadratic_peak(z):
    """Offset of the extremum of a quadratic fitted to a 3x3 patch."""
    y, x = np.mgrid[-1:2, -1:2]
    a = np.column_stack([np.ones(9), x.ravel(), y.ravel(), x.ravel() ** 2,
                         x.ravel() * y.ravel(), y.ravel() ** 2])
    c = np.linalg.lstsq(a, z.ravel(), rcond=None)[0]
    h = np.array([[2 * c[5], c[4]], [c[4], 2 * c[3]]])
    g = -np.array([c[2], c[1]])
    try:
        d = np.linalg.solve(h, g)
    except np.linalg.LinAlgError:
        return 0.0, 0.0
    if not np.all(np.isfinite(d)):
        return 0.0, 0.0
    return tuple(np.clip(d, -1, 1))


def _grid_arrays(g):
    if hasattr(g, "tau"):
        return np.asarray(g.tau), np.asarray(g.c_axis), np.asarray(g.i_z_axis)
    t = np.asarray(g)
    return t, np.arange(t.shape[0], dtype=float), np.arange(t.shape[1], dtype=float)


def extract_shift_2d(grid_a, grid_b, readout="real"):
    """Equivalent bias change ``d`` with ``grid_b(phi, I) ~ grid_a(phi + d_phi, I + d_I)``.

    ``shift_samples`` is the displacement of the pattern in samples, which
    has the opposite sign: ``np.roll(a, k, axis=0)`` gives ``(k, 0)``.

    Axis 0 (phi_ext) is treated as periodic over the sampled range and axis 1
    (I_Z) is zero padded.  The correlation peak is refined with a 3x3
    quadratic fit.
    """
    a, c_axis, iz_axis = _grid_arrays(grid_a)
    b, _, _ = _grid_arrays(grid_b)
    if a.shape != b.shape:
        raise ValueError("grids must share axes")
    for name, g in (("a", a), ("b", b)):
        if np.ptp(np.real(g)) == 0 and np.ptp(np.imag(g)) == 0:
            raise FlatGrid(f"grid {name} has zero variance")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    p, m = a.shape
    size = (p, 2 * m)
    fa = np.fft.fft2(a, s=size)
    fb = np.fft.fft2(b, s=size)
    # r[s] = sum_x conj(a[x]) b[x + s]
    r = _readout(np.fft.ifft2(np.conj(fa) * fb), readout) / (na * nb)
    # b(x) = a(x + d)  <=>  r peaks at s = -d
    k0, k1 = np.unravel_index(np.argmax(r), r.shape)
    rows = [(k0 + d) % p for d in (-1, 0, 1)]
    cols = [(k1 + d) % (2 * m) for d in (-1, 0, 1)]
    patch = r[np.ix_(rows, cols)]
    s1_int = k1 if k1 < m else k1 - 2 * m
    if abs(s1_int) >= m - 1:
        patch[:, 0] = patch[:, 2] = patch[:, 1]
    dy, dx = _quadratic_peak(patch)
    s0 = (k0 if k0 <= p // 2 else k0 - p) + dy
    s1 = s1_int + dx
    d_phi = c_axis[1] - c_axis[0] if len(c_axis) > 1 else 1.0
    d_iz = iz_axis[1] - iz_axis[0] if len(iz_axis) > 1 else 1.0
    return ShiftResult(
        delta_i_z=float(-s1 * d_iz),
        delta_phi_ext=float(-s0 * d_phi),
        chi_max=float(r[k0, k1]),
        shift_samples=(float(s0), float(s1)),
    )


@dataclass
class DriftRecord:
    timestamps: np.ndarray
    delta_phi_ext: np.ndarray
    delta_i_z: np.ndarray
    chi_max: np.ndarray
    jump_times: list
    jump_quanta: list
    flags: list

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d


def monitor(grids, timestamps=None, cadence=1.0, jump_threshold=np.pi):
    """Track the flux shift of a grid series against its first grid.

    A jump is declared between consecutive epochs whose extracted phase
    shifts differ by more than ``jump_threshold`` (half a flux quantum).
    Jumps spanning more than one quantum are flagged.
    """
    grids = list(grids)
    if len(grids) < 2:
        raise ValueError("need at least two grids")
    if timestamps is None:
        timestamps = cadence * np.arange(len(grids))
    timestamps = np.asarray(timestamps, dtype=float)
    res = [extract_shift_2d(grids[0], g) for g in grids]
    dphi = np.array([r.delta_phi_ext for r in res])
    diz = np.array([r.delta_i_z for r in res])
    chis = np.array([r.chi_max for r in res])
    jumps, quanta, flags = [], [], []
    step = np.diff(dphi)
    for k in np.flatnonzero(np.abs(step) > jump_threshold):
        q = int(np.round(step[k] / (2 * np.pi)))
        jumps.append(float(timestamps[k + 1]))
        quanta.append(q)
        if abs(q) > 1:
            flags.append(f"t={timestamps[k + 1]:g}: {q:+d} quanta in one interval")
    return DriftRecord(timestamps, dphi, diz, chis, jumps, quanta, flags)
