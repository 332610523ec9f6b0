import json
import os
import subprocess
import sys

import pytest

from yamabe_atlas.cli import (EXIT_CONFIG, EXIT_OK, EXIT_PROBE, EXIT_STEP_FAILURE, dispatch,
                              main, parse_config)
from yamabe_atlas.errors import ConfigParseError, ConfigValidationError


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_document_gets_defaults():
    cfg = parse_config("subcommand: flow\n")
    assert cfg.subcommand == "flow"
    assert cfg["manifold"]["kind"] == "torus" and cfg["manifold"]["grid_n"] == 24
    assert cfg["flow"]["cfl_factor"] == 0.1 and cfg["flow"]["T"] == 1.0
    assert cfg["numerics"]["fd_order"] == 4 and cfg["seed"] == 0


def test_integers_accepted_for_floats():
    cfg = parse_config("subcommand: flow\nflow:\n  T: 2\n")
    assert cfg["flow"]["T"] == 2.0 and isinstance(cfg["flow"]["T"], float)


def test_overlap_validation_cites_precondition():
    with pytest.raises(ConfigValidationError, match="overlap"):
        parse_config("subcommand: flow\nmanifold:\n  charts_per_axis: 2\n  overlap: 0.6\n")


def test_misspelled_key_reports_line_and_key():
    with pytest.raises(ConfigParseError) as info:
        parse_config("subcommand: flow\nflow:\n  T: 0.5\n  cfl_facotr: 0.1\n")
    assert info.value.line == 4 and info.value.key == "cfl_facotr"


@pytest.mark.parametrize("doc", ["subcommand: [flow\n", "- a\n- b\n", "subcommand: flow\nbogus: 1\n",
                                 "subcommand: flow\nflow:\n  T: fast\n",
                                 "subcommand: flow\nmanifold:\n  m: true\n"])
def test_parse_errors(doc):
    with pytest.raises(ConfigParseError):
        parse_config(doc)


@pytest.mark.parametrize("doc", ["subcommand: explode\n", "subcommand: flow\nflow: {b: -1}\n",
                                 "subcommand: flow\nmanifold: {kind: sphere, m: 4}\n",
                                 "subcommand: flow\nnumerics: {fd_order: 3}\n",
                                 "subcommand: probe\nprobe: {t0: 0.1}\n"])
def test_validation_errors(doc):
    with pytest.raises(ConfigValidationError):
        parse_config(doc)


def test_validate_atlas_on_sphere(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path, f"subcommand: validate-atlas\noutput_dir: {out}\n"
                          "manifold: {kind: sphere, grid_n: 16}\nfigures: false\n")
    assert main(["run", cfg]) == EXIT_OK
    report = json.loads((out / "regularity.json").read_text())
    assert report["passed"] is True
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "validate-atlas"
    assert {"numpy", "scipy", "python"} <= set(manifest["versions"])
    assert manifest["wall_time_seconds"] >= 0.0


def test_flow_with_floor_above_initial_data(tmp_path):
    cfg = write(tmp_path, f"subcommand: flow\noutput_dir: {tmp_path / 'o'}\n"
                          "manifold: {grid_n: 10}\nflow: {b: 0.9}\n")
    assert main(["run", cfg]) == EXIT_CONFIG


def test_flow_to_horizon_and_reproducible(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cfg = write(tmp_path, f"subcommand: flow\noutput_dir: {out}\nmanifold: {{grid_n: 10}}\n"
                              "flow: {T: 0.05, output_every: 2, snapshot_every: 2}\n", f"{name}.yaml")
        assert main(["run", cfg]) == EXIT_OK
        outs.append(out)
    assert (outs[0] / "trace.csv").exists() and (outs[0] / "trace.png").exists()
    assert (outs[0] / "snapshots" / "final" / "chart_000.txt").exists()
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*")
                   if p.is_file() and p.suffix in (".csv", ".json", ".txt")
                   and p.name != "manifest.json")
    assert len(files) > 3
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


def test_nothing_written_outside_output_dir(tmp_path, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    cfg = write(tmp_path, "subcommand: norms\noutput_dir: results\nmanifold: {grid_n: 10}\n")
    before = set(os.listdir(tmp_path))
    assert main(["run", cfg]) == EXIT_OK
    assert os.listdir(work) == ["results"]
    assert set(os.listdir(tmp_path)) == before


def test_step_failure_exit_status(tmp_path):
    cfg = write(tmp_path, f"subcommand: flow\noutput_dir: {tmp_path / 'o'}\nfigures: false\n"
                          "manifold: {kind: sphere, grid_n: 16}\n"
                          "flow: {kind: unnormalized, u0: '1', b: 0.5, T: 0.5, holder_s: null,"
                          " cfl_factor: 0.2}\n")
    assert main(["run", cfg]) == EXIT_STEP_FAILURE
    summary = json.loads((tmp_path / "o" / "flow_summary.json").read_text())
    assert summary["status"] == "step-failure"


def test_probe_exit_statuses(tmp_path):
    base = "subcommand: probe\nfigures: false\nmanifold: {grid_n: 12}\n"
    ok = write(tmp_path, base + f"output_dir: {tmp_path / 'a'}\n", "ok.yaml")
    kink = write(tmp_path, base + f"output_dir: {tmp_path / 'b'}\n"
                                  "probe: {expression: 'abs(t - 0.5)*sin(x1)'}\n", "kink.yaml")
    assert main(["run", ok]) == EXIT_OK
    assert main(["run", kink]) == EXIT_PROBE
    assert (tmp_path / "b" / "probe.csv").exists()


def test_resolvent_and_curvature_commands(tmp_path):
    res = write(tmp_path, f"subcommand: resolvent\noutput_dir: {tmp_path / 'r'}\n"
                          "manifold: {grid_n: 8}\nresolvent: {samples: 200}\n", "r.yaml")
    assert main(["run", res]) == EXIT_OK
    doc = json.loads((tmp_path / "r" / "resolvent.json").read_text())
    assert doc["sup_bound"] <= 2.1
    cur = write(tmp_path, f"subcommand: curvature\noutput_dir: {tmp_path / 'c'}\nfigures: false\n"
                          "manifold: {kind: sphere, grid_n: 24}\n", "c.yaml")
    assert main(["run", cur]) == EXIT_OK
    doc = json.loads((tmp_path / "c" / "curvature.json").read_text())
    assert abs(doc["mean"] - 6.0) < 0.01


def test_check_action_and_missing_file(tmp_path, capsys):
    cfg = write(tmp_path, "subcommand: norms\n")
    assert main(["check", cfg]) == EXIT_OK
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["norms"]["s"] == 0.5
    assert main(["check", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, "subcommand: norms\nflow: {cfl_facotr: 1}\n")
    proc = subprocess.run([sys.executable, "-m", "yamabe_atlas", "run", cfg],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    assert "cfl_facotr" in proc.stderr and "line 2" in proc.stderr


def test_dispatch_returns_manifest(tmp_path):
    cfg = parse_config(f"subcommand: norms\noutput_dir: {tmp_path}\nfigures: false\n"
                       "manifold: {grid_n: 10}\n")
    status, manifest = dispatch(cfg)
    assert status == EXIT_OK
    assert manifest["outputs"] == ["modulus.csv", "norms.json"]


CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIG_DIR)))
def test_shipped_configs_validate(name, capsys):
    assert main(["check", os.path.join(CONFIG_DIR, name)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["subcommand"]
