import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcswitch.cli import EXIT_ANALYSIS, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from pcswitch.config import canonical_hash, load_config
from pcswitch.errors import ConfigError
from pcswitch.gridio import GridFormatError, read_grid, write_grid
from pcswitch.microwave import TransmissionGrid

SMALL = """\
seed: 3
protocol: {failure_probability: 0.0}
sweep:
  c: {start: 12e-6, stop: 14e-6, count: 120}
  i_z: {start: -1.0e-4, stop: 1.0e-4, count: 16}
"""


def test_defaults_validate_and_hash_is_stable():
    a, b = load_config(environ={}), load_config(environ={})
    assert a.hash == b.hash
    assert a.bridge().squid.beta == pytest.approx(1.2)
    c = load_config(environ={}, overrides={"output": {"dir": "/elsewhere"}})
    assert c.hash == a.hash
    assert load_config(environ={}, seed=1).hash != a.hash


def test_yaml_file_and_environment_layers(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(SMALL)
    rc = load_config(p, environ={"PCSWITCH_BRIDGE__N": "12", "PCSWITCH_SWEEP__I_Z__COUNT": "8"})
    assert rc.seed == 3
    assert rc.bridge().n == 12
    assert rc.axis("sweep", "c")[0] == pytest.approx(12e-6)
    assert len(rc.axis("sweep", "i_z")) == 8
    assert rc.protocol().rng_seed == 3


def test_schema_error_names_field_and_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: 1\nbridge:\n  n: -4\n")
    with pytest.raises(ConfigError, match=r"bad.yaml:3: bridge.n"):
        load_config(p, environ={})
    p.write_text("bogus_section: 1\n")
    with pytest.raises(ConfigError, match="bogus_section"):
        load_config(p, environ={})


def test_unphysical_bridge_rejected():
    with pytest.raises(ConfigError):
        load_config(environ={}, overrides={"bridge": {"beta": 2.5}})


def test_unparseable_file(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(p, environ={})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml", environ={})


def test_canonical_hash_ignores_key_order():
    assert canonical_hash({"a": 1, "b": {"c": 2, "d": 3}}) == canonical_hash(
        {"b": {"d": 3, "c": 2}, "a": 1})


cplx = st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(arrays(np.complex128, (3, 4), elements=cplx),
       arrays(np.float64, 4, elements=st.floats(-1, 1), unique=True),
       arrays(np.float64, 3, elements=st.floats(-1, 1), unique=True))
def test_grid_round_trip_is_bit_exact(tmp_path, tau, i_z, c):
    g = TransmissionGrid(i_z, c, tau, meta={"c_kind": "i_trg", "j": [1, 2, 3]})
    g.flags[0, 1] = True
    path = tmp_path / "g.csv"
    write_grid(path, g, config_hash="abc")
    back, header = read_grid(path, expect_hash="abc")
    assert np.array_equal(back.tau.view(float), g.tau.view(float))
    assert np.array_equal(back.i_z_axis, g.i_z_axis) and np.array_equal(back.c_axis, g.c_axis)
    assert np.array_equal(back.flags, g.flags)
    assert header["meta"]["j"] == [1, 2, 3]
    assert header["axes"]["c"] == "A"


def test_grid_format_errors(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("")
    with pytest.raises(GridFormatError, match="empty"):
        read_grid(p)
    g = TransmissionGrid([0.0, 1.0], [0.0], [[1 + 1j, 2]])
    write_grid(p, g, config_hash="h1")
    with pytest.raises(GridFormatError, match="hash"):
        read_grid(p, expect_hash="h2")
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:3] + ["0.0,0.0,oops,0,0", lines[4]]) + "\n")
    with pytest.raises(GridFormatError, match=":4:"):
        read_grid(p)
    p.write_text("\n".join(lines[:4]) + "\n")
    with pytest.raises(GridFormatError, match="expected 1x2"):
        read_grid(p)


def _cfg(tmp_path, text=SMALL):
    p = tmp_path / "run.yaml"
    p.write_text(text + f"output: {{dir: '{tmp_path}'}}\n")
    return str(p)


def test_cli_grid_pipeline_is_deterministic(tmp_path, capsys):
    cfg = _cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate-grid", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["simulate-grid", "--config", cfg, "--out", str(b), "--threads", "3"]) == EXIT_OK
    assert (a / "grid.csv").read_bytes() == (b / "grid.csv").read_bytes()
    assert main(["analyze-steps", str(a / "grid.csv"), "--config", cfg, "--out", str(a)]) == 0
    report = json.loads((a / "steps.json").read_text())
    assert report["ground_truth"]["agreement"] == 1.0
    assert report["config_hash"] == load_config(cfg, environ={}).hash
    assert "l_h_over_2e" in report["differential_inductance"]


@pytest.mark.parametrize("cmd,name", [("sweep-freq", "contrast.json"),
                                      ("compression", "compression.json"),
                                      ("modulate", "modulation.json"),
                                      ("fit-zeta", "zeta.json")])
def test_cli_commands_write_outputs(tmp_path, cmd, name):
    cfg = _cfg(tmp_path)
    assert main([cmd, "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    payload = json.loads((tmp_path / name).read_text())
    assert payload["command"] == cmd and payload["version"]


def test_cli_exit_codes(tmp_path, monkeypatch):
    bad = _cfg(tmp_path, "bridge: {n: 0}\n")
    assert main(["compression", "--config", bad]) == EXIT_CONFIG
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["analyze-steps", str(empty), "--out", str(tmp_path)]) == EXIT_CONFIG
    monkeypatch.setenv("PCSWITCH_COMPRESSION__LINEAR_ARMS", "true")
    assert main(["compression", "--out", str(tmp_path)]) == EXIT_SOLVER
    monkeypatch.delenv("PCSWITCH_COMPRESSION__LINEAR_ARMS")
    # a grid inside one step has a single chi population
    one = _cfg(tmp_path, "sweep:\n  c: {start: 13.0e-6, stop: 13.01e-6, count: 40}\n"
                         "  i_z: {start: -1.0e-4, stop: 1.0e-4, count: 16}\n")
    assert main(["simulate-grid", "--config", one, "--out", str(tmp_path)]) == EXIT_OK
    assert main(["analyze-steps", str(tmp_path / "grid.csv"), "--config", one,
                 "--out", str(tmp_path)]) == EXIT_ANALYSIS
