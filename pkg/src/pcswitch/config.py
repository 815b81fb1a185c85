"""Run configuration: YAML file + ``PCSWITCH_`` environment overrides + schema check.

Nested keys are addressed in the environment with a double underscore, e.g.
``PCSWITCH_BRIDGE__N=12`` or ``PCSWITCH_SWEEP__I_Z__COUNT=64``.  Values are
parsed as YAML scalars.  All physical quantities are SI (A, H, Hz, rad, dB).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import dataclass

import jsonschema
import numpy as np
import yaml

from .core import (
    DEFAULT_BETA,
    DEFAULT_L_PCS,
    DEFAULT_L_SH,
    DEFAULT_L_STR,
    BridgeParams,
    SquidParams,
)
from .errors import ConfigError
from .microwave import DEFAULT_FREQUENCY, PortEnvironment
from .trap import TrapProtocol, on_bias_fluxoid

ENV_PREFIX = "PCSWITCH_"


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-6`` style floats (YAML 1.1 needs a dot)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _load_yaml(text):
    return yaml.load(text, Loader=_Loader)  # noqa: S506 - safe loader subclass

DEFAULTS = {
    "seed": 0,
    "bridge": {
        "beta": DEFAULT_BETA,
        "i0": None,
        "l_sh": DEFAULT_L_SH,
        "n": 20,
        "l_str": DEFAULT_L_STR,
        "l_pcs": DEFAULT_L_PCS,
        "skew": 0.0,
    },
    "protocol": {
        "heater_threshold": 4.8e-3,
        "ramp_duration": 200e-6,
        "failure_probability": 0.023,
        "boundary_width": 0.05,
        "failure_offsets": [1, 2, 3],
        "failure_decay": 0.7,
    },
    "environment": {
        "z0": 50.0,
        "insertion_loss_db": 6.0,
        "frequency": DEFAULT_FREQUENCY,
    },
    "sweep": {
        "c_kind": "i_trg",
        "c": {"start": 12e-6, "stop": 20e-6, "count": 2000},
        "i_z": {"start": -150e-6, "stop": 150e-6, "count": 61},
        "j": 20,
        "noise": 0.0,
    },
    "analysis": {
        "band": 600,
        "bin_width": 1e-4,
        "threshold": None,
        "readout": "real",
        "boundary_zone": 0.4,
    },
    "monitor": {
        "epochs": 168,
        "cadence_hours": 1.0,
        "jump_rate": 0.0,
        "inject": {},
        "decay_per_day": 0.0,
        "j0": None,
        "phi_count": 240,
        "i_z_count": 48,
        "noise": 1e-3,
    },
    "sweep_freq": {
        "freq": {"start": 1e9, "stop": 10e9, "count": 181},
        "on": {"j": None, "i_z_frac": 0.25},
        "off": {"j": None, "i_z_frac": 0.0},
        "threshold_db": 20.0,
    },
    "compression": {
        "j": None,
        "i_z_frac": 0.25,
        "drive_dbm": {"start": -110.0, "stop": -30.0, "count": 161},
        "linear_arms": False,
    },
    "modulation": {
        "j": None,
        "i_dc_frac": 0.0,
        "i_z0_frac": [0.05, 0.1, 0.2],
        "f_m": 1e6,
        "samples": 256,
        "orders": 3,
        "n_max": 24,
        "linecut_count": 256,
    },
    "fit_zeta": {
        "j": None,
        "i_dc_frac": 0.25,
        "f_m": {"start": 1e6, "stop": 10e9, "count": 10},
        "i_z0_frac": {"start": 0.01, "stop": 0.3, "count": 16},
        "cable_db_at_5ghz": 1.0,
        "noise": 0.0,
    },
    "output": {"dir": "."},
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT = {"type": "integer"}
_J = {"type": ["integer", "null"]}  # null: on-bias fluxoid of the bridge


def _axis(item=_NUM, min_count=1):
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["start", "stop", "count"],
        "properties": {"start": item, "stop": item, "count": {"type": "integer", "minimum": min_count}},
    }


def _obj(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required)}


SCHEMA = _obj(
    {
        "seed": {"type": "integer", "minimum": 0},
        "bridge": _obj({
            "beta": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 2},
            "i0": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "l_sh": _POS,
            "n": {"type": "integer", "minimum": 1},
            "l_str": _NONNEG,
            "l_pcs": _NONNEG,
            "skew": _NUM,
        }),
        "protocol": _obj({
            "heater_threshold": _POS,
            "ramp_duration": _POS,
            "failure_probability": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "boundary_width": _NONNEG,
            "failure_offsets": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            "failure_decay": _POS,
        }),
        "environment": _obj({"z0": _POS, "insertion_loss_db": _NUM, "frequency": _POS}),
        "sweep": _obj({
            "c_kind": {"enum": ["i_trg", "i_c", "phi_ext"]},
            "c": _axis(),
            "i_z": _axis(),
            "j": _INT,
            "noise": _NONNEG,
        }),
        "analysis": _obj({
            "band": {"type": "integer", "minimum": 1},
            "bin_width": _POS,
            "threshold": {"type": ["number", "null"], "minimum": -1, "maximum": 1},
            "readout": {"enum": ["real", "abs"]},
            "boundary_zone": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        }),
        "monitor": _obj({
            "epochs": {"type": "integer", "minimum": 2},
            "cadence_hours": _POS,
            "jump_rate": _NONNEG,
            "inject": {"type": "object", "additionalProperties": _INT},
            "decay_per_day": _NUM,
            "j0": _J,
            "phi_count": {"type": "integer", "minimum": 3},
            "i_z_count": {"type": "integer", "minimum": 3},
            "noise": _NONNEG,
        }),
        "sweep_freq": _obj({
            "freq": _axis(_POS),
            "on": _obj({"j": _J, "i_z_frac": _NUM}),
            "off": _obj({"j": _J, "i_z_frac": _NUM}),
            "threshold_db": _NUM,
        }),
        "compression": _obj({
            "j": _J,
            "i_z_frac": _NUM,
            "drive_dbm": _axis(min_count=2),
            "linear_arms": {"type": "boolean"},
        }),
        "modulation": _obj({
            "j": _J,
            "i_dc_frac": _NUM,
            "i_z0_frac": {"type": "array", "items": _NONNEG, "minItems": 1},
            "f_m": _POS,
            "samples": {"type": "integer", "minimum": 64},
            "orders": {"type": "integer", "minimum": 1},
            "n_max": {"type": "integer", "minimum": 1},
            "linecut_count": {"type": "integer", "minimum": 16},
        }),
        "fit_zeta": _obj({
            "j": _J,
            "i_dc_frac": _NUM,
            "f_m": _axis(_POS),
            "i_z0_frac": _axis(_NONNEG, min_count=8),
            "cable_db_at_5ghz": _NONNEG,
            "noise": _NONNEG,
        }),
        "output": _obj({"dir": {"type": "string"}}),
    }
)


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "inject":
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def _env_overrides(environ):
    over = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        node = over
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        try:
            node[parts[-1]] = _load_yaml(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"environment {key}: cannot parse {raw!r}: {exc}") from exc
    return over


def _line_of(text, path):
    """Source line of a key path in YAML text, or None."""
    if not text:
        return None
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for key in path:
        if not isinstance(node, yaml.MappingNode):
            break
        for k, v in node.value:
            if k.value == str(key):
                line, node = k.start_mark.line + 1, v
                break
        else:
            break
    return line


def _validate(cfg, text=None, source="<config>"):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    msgs = []
    for e in errors:
        field = ".".join(str(p) for p in e.absolute_path) or "<root>"
        line = _line_of(text, list(e.absolute_path))
        where = f"{source}:{line}: " if line else f"{source}: "
        msgs.append(f"{where}{field}: {e.message}")
    raise ConfigError("invalid configuration\n  " + "\n  ".join(msgs))


def canonical_hash(cfg):
    """sha256 of the canonical JSON of the resolved config (output paths excluded)."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def _axis_values(spec):
    return np.linspace(spec["start"], spec["stop"], spec["count"])


@dataclass
class RunConfig:
    data: dict

    @property
    def seed(self):
        return int(self.data["seed"])

    @property
    def hash(self):
        return canonical_hash(self.data)

    def section(self, name):
        return self.data[name]

    def bridge(self) -> BridgeParams:
        d = self.data["bridge"]
        if d.get("i0") is not None:
            squid = SquidParams(i0=d["i0"], l_sh=d["l_sh"])
        elif d.get("beta") is not None:
            squid = SquidParams.from_beta(d["beta"], d["l_sh"])
        else:
            raise ConfigError("bridge: give beta or i0")
        try:
            return BridgeParams(squid, n=d["n"], l_str=d["l_str"], l_pcs=d["l_pcs"], skew=d["skew"])
        except ValueError as exc:
            raise ConfigError(f"bridge: {exc}") from exc

    def protocol(self) -> TrapProtocol:
        d = dict(self.data["protocol"])
        d["failure_offsets"] = tuple(d["failure_offsets"])
        return TrapProtocol(rng_seed=self.seed, **d)

    def environment(self) -> PortEnvironment:
        e = self.data["environment"]
        return PortEnvironment(z0=e["z0"], insertion_loss_db=e["insertion_loss_db"])

    @property
    def frequency(self):
        return float(self.data["environment"]["frequency"])

    def fluxoid(self, j):
        """``j`` or, when unset, the on-bias fluxoid of the configured bridge."""
        return on_bias_fluxoid(self.bridge()) if j is None else int(j)

    def axis(self, *path):
        node = self.data
        for p in path:
            node = node[p]
        return _axis_values(node)


def load_config(path=None, overrides=None, environ=None, seed=None) -> RunConfig:
    """Resolve defaults <- file <- environment <- explicit overrides, then validate."""
    text = None
    source = "<defaults>"
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        source = str(path)
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            user = _load_yaml(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: YAML error: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, user)
    env = _env_overrides(os.environ if environ is None else environ)
    cfg = _merge(cfg, env)
    if overrides:
        cfg = _merge(cfg, overrides)
    if seed is not None:
        cfg["seed"] = int(seed)
    inject = cfg.get("monitor", {}).get("inject")
    if isinstance(inject, dict):
        cfg["monitor"]["inject"] = {str(k): v for k, v in inject.items()}
    _validate(cfg, text, source)
    rc = RunConfig(cfg)
    rc.bridge()  # physical consistency (beta < 2 etc.)
    return rc
