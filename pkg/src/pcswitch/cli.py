"""``pcswitch`` command line.

Exit codes: 0 success, 2 configuration / file format, 3 solver, 4 analysis.
Every output file embeds the config hash and the package version.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import chi_band, group_steps, histogram_threshold, monitor
from .bias import solve_batch
from .config import RunConfig, load_config
from .core import periods
from .errors import AnalysisError, ConfigError, SolverError, UnimodalHistogram
from .gridio import read_grid, write_grid
from .microwave import (
    compression_point,
    drift_grids,
    on_off_contrast,
    s21,
    sweep_grid,
    with_noise,
)
from .modulation import (
    carrier_response,
    cable_zeta,
    cosine_decompose,
    fit_zeta,
    sideband_response,
    sideband_spectrum_timedomain,
)
from .trap import diff_inductance_readouts, drift_monitor

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ANALYSIS = 0, 2, 3, 4

log = logging.getLogger("pcswitch")


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, complex):
        return [_clean(v.real), _clean(v.imag)]
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _write_json(path, payload, rc: RunConfig, command):
    body = {"command": command, "config_hash": rc.hash, "version": __version__}
    body.update(payload)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(body), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _rng(rc, stream):
    return np.random.default_rng([rc.seed, stream])


def _out(args, rc, name):
    d = Path(args.out if args.out is not None else rc.data["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d / name


# ------------------------------------------------------------------ commands


def cmd_simulate_grid(rc: RunConfig, out_path, threads=1):
    b = rc.bridge()
    sw = rc.section("sweep")
    grid = sweep_grid(
        rc.axis("sweep", "i_z"),
        rc.axis("sweep", "c"),
        rc.frequency,
        b,
        rc.environment(),
        c_kind=sw["c_kind"],
        protocol=rc.protocol(),
        j=sw["j"],
        threads=threads,
    )
    grid.tau = with_noise(grid.tau, sw["noise"], _rng(rc, 1))
    grid.meta["seed"] = rc.seed
    write_grid(out_path, grid, config_hash=rc.hash)
    return grid


def _ground_truth_agreement(j_true, labels):
    j_true = np.asarray(j_true)
    ok = labels >= 0
    if not np.any(ok):
        return None
    vals, counts = np.unique(j_true[ok] - labels[ok], return_counts=True)
    offset = vals[np.argmax(counts)]
    return {
        "group_offset": int(offset),
        "agreement": float(np.mean((j_true - labels == offset) & ok)),
    }


def cmd_analyze_steps(rc: RunConfig, grid_path):
    grid, header = read_grid(grid_path)
    an = rc.section("analysis")
    n = len(grid.c_axis)
    band = chi_band(grid.tau, min(an["band"], max(n - 1, 1)), an["readout"])
    thr = an["threshold"]
    if thr is None:
        try:
            thr = histogram_threshold(band, bin_width=an["bin_width"])
        except UnimodalHistogram as exc:
            raise UnimodalHistogram(
                f"{exc}; the grid must span at least two trapped-flux steps "
                "(widen the C sweep) or set analysis.threshold"
            ) from exc
    rep = group_steps(grid, thr, band=an["band"], readout=an["readout"],
                      boundary_zone=an["boundary_zone"], chi_values=band)
    l_h, l_hbar = diff_inductance_readouts(rep.step_widths)
    payload = {
        "grid": str(grid_path),
        "grid_config_hash": header.get("config_hash"),
        "report": rep.to_dict(),
        "differential_inductance": {
            "c_center": rep.group_centers,
            "l_h_over_2e": l_h,
            "l_hbar_over_2e": l_hbar,
            "units": "H",
        },
    }
    meta = grid.meta or {}
    if "j" in meta:
        truth = _ground_truth_agreement(meta["j"], rep.labels)
        payload["ground_truth"] = truth
        if "failed" in meta:
            payload["ground_truth"]["injected_failure_fraction"] = float(np.mean(meta["failed"]))
    return rep, payload


def cmd_monitor(rc: RunConfig):
    b = rc.bridge()
    m = rc.section("monitor")
    per = periods(b)
    t = m["cadence_hours"] * np.arange(m["epochs"])
    inject = {int(k): int(v) for k, v in m["inject"].items()}
    states = drift_monitor(t, m["jump_rate"], rc.protocol(), b, j0=rc.fluxoid(m["j0"]),
                           decay_per_day=m["decay_per_day"], inject=inject)
    phi = per.phi_c * np.arange(m["phi_count"]) / m["phi_count"]
    i_z = per.i_z * (np.arange(m["i_z_count"]) / m["i_z_count"] - 0.5)
    grids = drift_grids(states, i_z, phi, rc.frequency, b, rc.environment(),
                        noise=m["noise"], rng=_rng(rc, 2))
    rec = monitor(grids, timestamps=t)
    payload = {"drift": rec.to_dict(), "true_j": [s.j for s in states]}
    return rec, payload


def _bias_at(b, j, i_z_frac):
    return solve_batch(b, i_z_frac * periods(b).i_z, j=j, strict=True)


def cmd_sweep_freq(rc: RunConfig):
    b = rc.bridge()
    sf = rc.section("sweep_freq")
    env = rc.environment()
    f = rc.axis("sweep_freq", "freq")
    on = _bias_at(b, rc.fluxoid(sf["on"]["j"]), sf["on"]["i_z_frac"])
    off = _bias_at(b, rc.fluxoid(sf["off"]["j"]), sf["off"]["i_z_frac"])
    tau_on, tau_off = s21(on, f, env), s21(off, f, env)
    res = on_off_contrast(f, tau_on, tau_off, threshold_db=sf["threshold_db"])
    rows = np.column_stack([f, res.contrast_db, res.clipped, tau_on.real, tau_on.imag,
                            tau_off.real, tau_off.imag])
    payload = {"bandwidth_hz": res.bandwidth_hz, "band_hz": res.band,
               "clipped_points": int(np.count_nonzero(res.clipped))}
    return res, rows, payload


def cmd_compression(rc: RunConfig):
    b = rc.bridge()
    c = rc.section("compression")
    bias = _bias_at(b, rc.fluxoid(c["j"]), c["i_z_frac"])
    d = c["drive_dbm"]
    res = compression_point(bias, rc.frequency, rc.environment(), b,
                            drive_range=(d["start"], d["stop"]), points=d["count"],
                            linear_arms=c["linear_arms"])
    payload = {"p1db_dbm": res.p1db_dbm, "p1db_watt": 1e-3 * 10 ** (res.p1db_dbm / 10),
               "amplitude_rad": res.amplitude, "small_signal": res.small_signal,
               "powers_dbm": res.powers_dbm, "gain_db": res.gain_db}
    return res, payload


def _linecut_series(rc, b, j, i_dc, count, n_max):
    per = periods(b).i_z
    i_z = i_dc + per * np.arange(count) / count
    tau = s21(solve_batch(b, i_z, j=j, strict=True), rc.frequency, rc.environment())
    return cosine_decompose(i_z, tau, per, n_max=n_max, origin=i_dc)


def cmd_modulate(rc: RunConfig):
    b = rc.bridge()
    m = rc.section("modulation")
    per = periods(b).i_z
    i_dc = m["i_dc_frac"] * per
    j = rc.fluxoid(m["j"])
    series = _linecut_series(rc, b, j, i_dc, m["linecut_count"], m["n_max"])
    env = rc.environment()

    def static(i):
        return s21(solve_batch(b, i, j=j, strict=True), rc.frequency, env)

    entries = []
    for frac in m["i_z0_frac"]:
        i_z0 = frac * per
        sp = sideband_spectrum_timedomain(static, i_z0, m["f_m"], samples=m["samples"],
                                          orders=m["orders"], i_dc=i_dc)
        bessel = {k: sideband_response(series, i_z0, k) for k in sp.sidebands}
        entries.append({
            "i_z0": i_z0,
            "i_z0_frac": frac,
            "carrier": sp.carrier,
            "carrier_bessel": carrier_response(series, i_z0),
            "feedthrough_db": 20 * np.log10(max(abs(sp.carrier), 1e-300)),
            "sidebands": {k: v for k, v in sp.sidebands.items()},
            "sidebands_bessel": bessel,
            "gain_db": {k: 20 * np.log10(max(abs(v), 1e-300)) for k, v in sp.sidebands.items()},
        })
    payload = {"i_z_period": per, "i_dc": i_dc, "f_m": m["f_m"], "series_c": series.c,
               "series_s": series.s, "entries": entries}
    return payload


def cmd_fit_zeta(rc: RunConfig):
    b = rc.bridge()
    m = rc.section("modulation")
    fz = rc.section("fit_zeta")
    per = periods(b).i_z
    j = rc.fluxoid(fz["j"])
    i_dc = fz["i_dc_frac"] * per
    series = _linecut_series(rc, b, j, i_dc, m["linecut_count"], m["n_max"])
    f_m = rc.axis("fit_zeta", "f_m")
    i_z0 = per * rc.axis("fit_zeta", "i_z0_frac")
    zeta_true = cable_zeta(f_m, fz["cable_db_at_5ghz"])
    rng = _rng(rc, 3)
    env = rc.environment()

    def static(i):
        return s21(solve_batch(b, i, j=j, strict=True), rc.frequency, env)

    # synthetic measurement: time-domain carrier with the drive scaled by zeta
    carriers = np.array([
        [sideband_spectrum_timedomain(static, z * a, f, samples=m["samples"], orders=1,
                                      i_dc=i_dc).carrier for a in i_z0]
        for f, z in zip(f_m, zeta_true)
    ])
    carriers = with_noise(carriers, fz["noise"], rng)
    fit = fit_zeta(f_m, i_z0, carriers, series)
    payload = {"f_m": f_m, "zeta_fit": fit.zeta, "zeta_injected": zeta_true,
               "fit_residual": fit.fit_residual,
               "max_rel_error": float(np.max(np.abs(fit.zeta / zeta_true - 1)))}
    return fit, payload


# ------------------------------------------------------------------ entry point


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--out", help="output directory (default: config output.dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    p = argparse.ArgumentParser(prog="pcswitch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pcswitch {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate-grid", parents=[common], help="trap + I_Z sweep -> grid.csv")
    a = sub.add_parser("analyze-steps", parents=[common], help="group linecuts -> steps.json")
    a.add_argument("grid", help="grid CSV written by simulate-grid or imported data")
    sub.add_parser("monitor", parents=[common], help="drift series -> drift.json")
    sub.add_parser("sweep-freq", parents=[common], help="on/off contrast -> contrast.csv")
    sub.add_parser("compression", parents=[common], help="1 dB compression -> compression.json")
    sub.add_parser("modulate", parents=[common], help="sideband spectrum -> modulation.json")
    sub.add_parser("fit-zeta", parents=[common], help="actuation scale fit -> zeta.json")
    return p


def _run(args):
    rc = load_config(args.config, seed=args.seed)
    cmd = args.command
    if cmd == "simulate-grid":
        path = _out(args, rc, "grid.csv")
        cmd_simulate_grid(rc, path, threads=args.threads)
    elif cmd == "analyze-steps":
        _, payload = cmd_analyze_steps(rc, args.grid)
        path = _write_json(_out(args, rc, "steps.json"), payload, rc, cmd)
    elif cmd == "monitor":
        _, payload = cmd_monitor(rc)
        path = _write_json(_out(args, rc, "drift.json"), payload, rc, cmd)
    elif cmd == "sweep-freq":
        _, rows, payload = cmd_sweep_freq(rc)
        path = _out(args, rc, "contrast.csv")
        header = (f"config_hash={rc.hash} version={__version__}\n"
                  "freq_hz,contrast_db,clipped,tau_on_re,tau_on_im,tau_off_re,tau_off_im")
        np.savetxt(path, rows, delimiter=",", header=header, fmt="%.17g")
        _write_json(_out(args, rc, "contrast.json"), payload, rc, cmd)
    elif cmd == "compression":
        _, payload = cmd_compression(rc)
        path = _write_json(_out(args, rc, "compression.json"), payload, rc, cmd)
    elif cmd == "modulate":
        payload = cmd_modulate(rc)
        path = _write_json(_out(args, rc, "modulation.json"), payload, rc, cmd)
    elif cmd == "fit-zeta":
        _, payload = cmd_fit_zeta(rc)
        path = _write_json(_out(args, rc, "zeta.json"), payload, rc, cmd)
    print(path)


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except AnalysisError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
