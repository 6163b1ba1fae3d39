import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from convexbilliards.cli import load_config, main, run
from convexbilliards.errors import ConfigError
from convexbilliards.rates import CERTIFICATE_SCHEMA, RateCertificate

PI = math.pi


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _base_chain_cfg(**over):
    cfg = {
        "scenario": "simulate_chain",
        "seed": 11,
        "body": {"disc": {"r": 1.0}},
        "law": "cosine",
        "n_max": 4,
    }
    cfg.update(over)
    return cfg


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_validate_ok(tmp_path):
    path = _write(tmp_path, "ok.json", _base_chain_cfg())
    assert main(["validate-config", "--config", path]) == 0


def test_bad_scenario_exit_1(tmp_path):
    path = _write(tmp_path, "bad.json", _base_chain_cfg(scenario="nope"))
    assert main(["validate-config", "--config", path]) == 1


def test_missing_scenario_key_exit_1(tmp_path):
    cfg = _base_chain_cfg(scenario="verify_dominance")
    path = _write(tmp_path, "missing.json", cfg)
    assert main(["validate-config", "--config", path]) == 1


def test_missing_seed_rejected(tmp_path):
    cfg = _base_chain_cfg()
    del cfg["seed"]
    path = _write(tmp_path, "noseed.json", cfg)
    assert main(["validate-config", "--config", path]) == 1


def test_schema_subcommand(capsys):
    assert main(["schema"]) == 0
    out = capsys.readouterr().out
    assert json.loads(out)["properties"]["seed"]["type"] == "integer"


# ---------------------------------------------------------------------------
# scenarios through the entry point
# ---------------------------------------------------------------------------

def test_simulate_chain_zero_steps_header_only(tmp_path):
    cfg = _base_chain_cfg(n_max=0)
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "out"
    assert main(["run", "--config", path, "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines == ["n,s,phi,theta,tau,T"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0


def test_simulate_process_writes_dense_samples(tmp_path):
    cfg = _base_chain_cfg(scenario="simulate_process", n_max=20)
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "proc"
    assert main(["run", "--config", path, "--out", str(out)]) == 0
    rows = (out / "dense.csv").read_text().splitlines()
    assert rows[0] == "t,x,y,vx,vy"
    assert len(rows) == 66
    vals = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    assert np.all(np.hypot(vals[:, 1], vals[:, 2]) <= 1.0 + 1e-9)


def test_process_rate_out_of_range_width_exit_2(tmp_path):
    cfg = _base_chain_cfg(
        scenario="process_rate",
        law={"truncated_uniform": {"theta_star": PI / 3.0}},
        rate={"kind": "disc_process"},
        params={"eta": 0.05, "eps": 0.01})
    del cfg["n_max"]
    path = _write(tmp_path, "cfg.json", cfg)
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 2


def test_chain_rate_certificate_roundtrips(tmp_path):
    cfg = _base_chain_cfg(
        scenario="chain_rate",
        law={"truncated_uniform": {"theta_star": 0.75 * PI}},
        rate={"kind": "disc_chain"})
    del cfg["n_max"]
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "cert"
    assert main(["run", "--config", path, "--out", str(out)]) == 0
    data = json.loads((out / "certificate.json").read_text())
    import jsonschema
    jsonschema.validate(data, CERTIFICATE_SCHEMA)
    clone = RateCertificate.from_json_dict(data)
    assert abs(clone.constants["alpha"] - 2.0 / 3.0) < 1e-12


def test_verify_lb_negative_control_exit_3(tmp_path):
    cfg = _base_chain_cfg(
        scenario="verify_lb",
        law={"truncated_uniform": {"theta_star": 0.75 * PI}},
        lb_profile="t2", replicas=100_000, inflate=10.0)
    del cfg["n_max"]
    path = _write(tmp_path, "cfg.json", cfg)
    assert main(["run", "--config", path, "--out", str(tmp_path / "neg")]) == 3
    rep = json.loads((tmp_path / "neg" / "lb_report.json").read_text())
    assert not rep["passed"]


def test_verify_lb_positive_exit_0(tmp_path):
    cfg = _base_chain_cfg(
        scenario="verify_lb",
        law={"truncated_uniform": {"theta_star": 0.75 * PI}},
        lb_profile="t2", replicas=100_000)
    del cfg["n_max"]
    path = _write(tmp_path, "cfg.json", cfg)
    assert main(["run", "--config", path, "--out", str(tmp_path / "pos")]) == 0


def test_couple_chains_outcomes_csv(tmp_path):
    cfg = _base_chain_cfg(
        scenario="couple_chains",
        law={"truncated_uniform": {"theta_star": 0.75 * PI}},
        rate={"kind": "disc_chain"},
        n_max=20, replicas=500, s0=0.0, s0_alt=PI)
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "cc"
    assert main(["run", "--config", path, "--out", str(out)]) == 0
    rows = (out / "outcomes.csv").read_text().splitlines()
    assert rows[0] == ("replica,coupled,index_or_time,attempts,"
                      "stage1_successes,stage2_successes")
    assert len(rows) == 501


def test_flag_overrides(tmp_path):
    cfg = _base_chain_cfg(n_max=3)
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "ovr"
    assert main(["run", "--config", path, "--out", str(out),
                 "--n-max", "6"]) == 0
    rows = (out / "trajectory.csv").read_text().splitlines()
    assert len(rows) == 7


def test_dominance_worker_invariance(tmp_path):
    cfg = _base_chain_cfg(
        scenario="verify_dominance",
        law={"truncated_uniform": {"theta_star": 0.75 * PI}},
        rate={"kind": "disc_chain"},
        s0=0.0, s0_alt=PI, n_max=6, replicas=30_000, bins=100)
    path = _write(tmp_path, "cfg.json", cfg)
    out1 = tmp_path / "w1"
    out2 = tmp_path / "w2"
    assert main(["run", "--config", path, "--out", str(out1),
                 "--workers", "1"]) == 0
    assert main(["run", "--config", path, "--out", str(out2),
                 "--workers", "2"]) == 0
    assert (out1 / "tv_curve.csv").read_bytes() \
        == (out2 / "tv_curve.csv").read_bytes()


def test_couple_process_outcomes_csv(tmp_path):
    cfg = _base_chain_cfg(
        scenario="couple_process",
        law={"truncated_uniform": {"theta_star": 0.75 * PI}},
        rate={"kind": "disc_process"},
        params={"eta": 0.12, "eps": 0.09},
        t_max=1e6, replicas=64,
        start=[[0.3, 0.2], [1.0, 0.4]],
        start_alt=[[-0.5, 0.1], [-0.2, -1.0]])
    del cfg["n_max"]
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "cp"
    assert main(["run", "--config", path, "--out", str(out)]) == 0
    rows = (out / "outcomes.csv").read_text().splitlines()
    assert len(rows) == 65
    coupled = [r.split(",")[1] for r in rows[1:]]
    assert set(coupled) == {"1"}


def test_optimize_params_scenario(tmp_path):
    cfg = _base_chain_cfg(
        scenario="optimize_params",
        law={"truncated_uniform": {"theta_star": PI / 2.0}},
        rate={"kind": "disc_chain"},
        grid={"eps": [0.2, PI / 4.0, 0.9]})
    del cfg["n_max"]
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "opt"
    assert main(["run", "--config", path, "--out", str(out)]) == 0
    best = json.loads((out / "best_params.json").read_text())
    assert abs(best["eps"] - PI / 4.0) < 1e-12
    cert = json.loads((out / "certificate.json").read_text())
    assert abs(cert["constants"]["alpha"] - 0.25) < 1e-12


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "convexbilliards.cli", "schema"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "scenario" in proc.stdout
