"""Grid files: CSV body with a JSON header carried on ``#`` comment lines.

Layout::

    # pcswitch-grid v1
    # {"axes": ..., "units": ..., "frequency": ..., "config_hash": ..., ...}
    i_z,c,tau_re,tau_im,flag
    <row-major values, c outer, i_z inner>

Floats are written with ``repr`` so a read-back is bit exact.
"""

from __future__ import annotations

import json

import numpy as np

from . import __version__
from .errors import ConfigError
from .microwave import TransmissionGrid

MAGIC = "# pcswitch-grid v1"
COLUMNS = "i_z,c,tau_re,tau_im,flag"
C_UNITS = {"i_trg": "A", "i_c": "A", "phi_ext": "rad"}


class GridFormatError(ConfigError):
    """Malformed or mismatched grid file."""


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.generic):
        return v.item()
    return v


def write_grid(path, grid: TransmissionGrid, config_hash="", extra=None):
    c_kind = grid.meta.get("c_kind", "i_c")
    header = {
        "axes": {"i_z": "A", "c": C_UNITS.get(c_kind, "")},
        "units": {"tau": "dimensionless", "frequency": "Hz"},
        "shape": [len(grid.c_axis), len(grid.i_z_axis)],
        "i_z_axis": [float(x) for x in grid.i_z_axis],
        "c_axis": [float(x) for x in grid.c_axis],
        "frequency": grid.meta.get("frequency"),
        "config_hash": config_hash,
        "version": __version__,
        "meta": _jsonable(grid.meta),
    }
    if extra:
        header.update(_jsonable(extra))
    lines = [MAGIC, "# " + json.dumps(header, sort_keys=True, allow_nan=False), COLUMNS]
    tau = grid.tau
    flags = grid.flags.astype(int)
    for m, c in enumerate(grid.c_axis.tolist()):
        for k, iz in enumerate(grid.i_z_axis.tolist()):
            t = complex(tau[m, k])
            lines.append(f"{iz!r},{c!r},{t.real!r},{t.imag!r},{flags[m, k]}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid(path, expect_hash=None):
    """Read a grid file; returns ``(TransmissionGrid, header)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise GridFormatError(f"cannot read grid {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise GridFormatError(f"{path}: empty grid file")
    if lines[0].strip() != MAGIC:
        raise GridFormatError(f"{path}:1: expected {MAGIC!r}")
    if len(lines) < 3 or not lines[1].startswith("# "):
        raise GridFormatError(f"{path}:2: missing JSON header")
    try:
        header = json.loads(lines[1][2:])
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{path}:2: bad JSON header: {exc}") from exc
    for key in ("i_z_axis", "c_axis", "shape"):
        if key not in header:
            raise GridFormatError(f"{path}:2: header lacks {key!r}")
    if lines[2].strip() != COLUMNS:
        raise GridFormatError(f"{path}:3: expected columns {COLUMNS!r}")
    i_z = np.array(header["i_z_axis"], dtype=float)
    c = np.array(header["c_axis"], dtype=float)
    rows, cols = header["shape"]
    body = lines[3:]
    if len(body) != rows * cols or (rows, cols) != (len(c), len(i_z)):
        raise GridFormatError(f"{path}: expected {rows}x{cols} rows, found {len(body)}")
    tau = np.empty(rows * cols, dtype=complex)
    flags = np.empty(rows * cols, dtype=bool)
    for n, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != 5:
            raise GridFormatError(f"{path}:{n + 4}: expected 5 fields")
        try:
            iz, cc, re_, im_ = (float(p) for p in parts[:4])
            fl = int(parts[4])
        except ValueError as exc:
            raise GridFormatError(f"{path}:{n + 4}: {exc}") from exc
        m, k = divmod(n, cols)
        if iz != i_z[k] or cc != c[m]:
            raise GridFormatError(f"{path}:{n + 4}: axis value disagrees with header")
        tau[n] = complex(re_, im_)
        flags[n] = bool(fl)
    if expect_hash is not None and header.get("config_hash") != expect_hash:
        raise GridFormatError(
            f"{path}: config hash {header.get('config_hash')!r} != expected {expect_hash!r}"
        )
    grid = TransmissionGrid(
        i_z, c, tau.reshape(rows, cols), meta=header.get("meta", {}), flags=flags.reshape(rows, cols)
    )
    return grid, header
