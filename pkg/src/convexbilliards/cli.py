"""Experiment driver.

Runs one experiment described by a JSON config file and writes its
artifacts (CSV tables, certificate JSON, a manifest) under an output
directory.  Identical (config, seed) pairs produce byte-identical CSV
artifacts for any worker count: replicas are partitioned into fixed chunks
with one counter-based stream each and reductions are ordered.

Subcommands::

    convexbilliards run --config exp.json --out DIR [--seed N] [--workers N]
    convexbilliards validate-config --config exp.json
    convexbilliards schema

Exit codes: 0 success, 1 config error, 2 hypothesis violation,
3 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, rng as rngmod
from .coupling import couple_process_disc_batch
from .coupling.chains_batch import couple_chains_batch
from .dynamics import chord_times, run_chain, sample_process_at
from .errors import BilliardError, ConfigError, HypothesisViolated, InvalidParams
from .geometry import Disc, body_from_config
from .rates import (
    CERTIFICATE_SCHEMA,
    RateCertificate,
    RateParams,
    convex_chain_rate,
    convex_process_rate,
    disc_chain_rate,
    disc_pair_profile,
    disc_process_rate,
    optimize_free_params,
    t2_density_floor,
)
from .reflection import law_from_config
from .stats import dominance_report, empirical_tv_curve, lb_check
from .geometry import point_at, summarize

SCENARIOS = [
    "simulate_chain", "simulate_process", "chain_rate", "process_rate",
    "couple_chains", "couple_process", "verify_dominance", "verify_lb",
    "optimize_params",
]

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["scenario", "seed", "body", "law"],
    "properties": {
        "scenario": {"enum": SCENARIOS},
        "seed": {"type": "integer", "minimum": 0},
        "body": {"type": "object"},
        "law": {"type": ["string", "object"]},
        "s0": {"type": "number"},
        "s0_alt": {"type": "number"},
        "n_max": {"type": "integer", "minimum": 0},
        "t_max": {"type": "number"},
        "replicas": {"type": "integer", "minimum": 1},
        "bins": {"type": "integer", "minimum": 2},
        "params": {"type": "object"},
        "rate": {"type": "object"},
        "lb_profile": {"enum": ["phi1", "t2", "phi2_t2", "t1"]},
        "inflate": {"type": "number"},
        "grid": {"type": "object"},
        "sample_times": {"type": "array", "items": {"type": "number"}},
        "start": {"type": "array"},
        "start_alt": {"type": "array"},
    },
    "additionalProperties": False,
}

_REQUIRED = {
    "simulate_chain": ["n_max"],
    "simulate_process": ["n_max"],
    "chain_rate": ["rate"],
    "process_rate": ["rate"],
    "couple_chains": ["rate", "n_max", "replicas"],
    "couple_process": ["rate", "t_max", "replicas"],
    "verify_dominance": ["rate", "n_max", "replicas", "bins"],
    "verify_lb": ["lb_profile", "replicas"],
    "optimize_params": ["rate", "grid"],
}


def fmt(x) -> str:
    """17 significant digits, '.' decimal, no locale."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc
    missing = [k for k in _REQUIRED[cfg["scenario"]] if k not in cfg]
    if missing:
        raise ConfigError(
            f"scenario {cfg['scenario']} requires keys: {', '.join(missing)}")
    return cfg


def _law_floor(cfg, law):
    """Resolve (width, floor, params) from the config and the law."""
    rate = cfg.get("rate", {})
    width = rate.get("width")
    floor = rate.get("floor")
    if width is None or floor is None:
        fc = law.certify_floor(width)
        width = fc.width if width is None else width
        floor = fc.floor if floor is None else floor
    params = RateParams(**cfg.get("params", {}))
    return float(width), float(floor), params


def _rate_inputs(cfg, body, law):
    """Resolve (kind, width, floor, params) for rate-based scenarios."""
    kind = cfg.get("rate", {}).get("kind")
    if kind not in ("disc_chain", "disc_process", "convex_chain",
                    "convex_process"):
        raise ConfigError(f"rate.kind missing or unknown: {kind!r}")
    width, floor, params = _law_floor(cfg, law)
    return kind, width, floor, params


def build_certificate(cfg, body, law) -> RateCertificate:
    kind, width, floor, params = _rate_inputs(cfg, body, law)
    if kind == "disc_chain":
        return disc_chain_rate(width, floor, params.eps)
    if kind == "disc_process":
        if not isinstance(body, Disc):
            raise HypothesisViolated("disc_process rate needs a disc body")
        if not (2.0 * math.pi / 3.0 < width < math.pi):
            raise HypothesisViolated(
                f"certified width {width:.6f} outside the admissible range"
                f" (2*pi/3, pi) required by the process certificate")
        return disc_process_rate(body.r, width, floor, params.eta, params.eps)
    if kind == "convex_chain":
        return convex_chain_rate(summarize(body), width, floor, params.eps)
    x = point_at(body, cfg.get("s0", 0.0))
    xt = point_at(body, cfg.get("s0_alt", 0.5 * body.perimeter))
    return convex_process_rate(body, floor, params, x, xt)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def _scenario_simulate_chain(cfg, body, law, out, workers):
    traj = run_chain(body, law, cfg.get("s0", 0.0), cfg["n_max"],
                     rngmod.substream(cfg["seed"], "simulate-chain"))
    rows = zip(traj.step, traj.s, traj.phi, traj.theta, traj.tau, traj.T)
    write_csv(out / "trajectory.csv", ["n", "s", "phi", "theta", "tau", "T"],
              rows)
    return 0, ["trajectory.csv"]


def _scenario_simulate_process(cfg, body, law, out, workers):
    traj = run_chain(body, law, cfg.get("s0", 0.0), cfg["n_max"],
                     rngmod.substream(cfg["seed"], "simulate-chain"))
    rows = zip(traj.step, traj.s, traj.phi, traj.theta, traj.tau, traj.T)
    write_csv(out / "trajectory.csv", ["n", "s", "phi", "theta", "tau", "T"],
              rows)
    times = cfg.get("sample_times")
    if not times and len(traj):
        times = list(np.linspace(0.0, traj.T[-1], 65))
    dense = []
    for t in times or []:
        st = sample_process_at(traj, body, float(t))
        dense.append((st.clock, st.position[0], st.position[1],
                      st.velocity[0], st.velocity[1]))
    write_csv(out / "dense.csv", ["t", "x", "y", "vx", "vy"], dense)
    return 0, ["trajectory.csv", "dense.csv"]


def _scenario_rate(cfg, body, law, out, workers):
    cert = build_certificate(cfg, body, law)
    data = cert.to_json_dict()
    jsonschema.validate(data, CERTIFICATE_SCHEMA)
    (out / "certificate.json").write_text(json.dumps(data, indent=2,
                                                     sort_keys=True))
    return 0, ["certificate.json"]


def _scenario_couple_chains(cfg, body, law, out, workers):
    cert = build_certificate(cfg, body, law)
    if cert.constants["n0"] != 1:
        raise ConfigError("couple_chains driver currently batches one-bounce"
                          " blocks; use the library API for longer blocks")
    res = couple_chains_batch(body, law, cfg.get("s0", 0.0),
                              cfg.get("s0_alt", 0.5 * body.perimeter),
                              cert, cfg["n_max"], cfg["replicas"],
                              cfg["seed"])
    rows = [(i, int(res.coupled[i]),
             res.coupling_index[i] if res.coupled[i] else -1,
             res.coupling_index[i] if res.coupled[i] else cfg["n_max"],
             int(res.coupled[i]), 0)
            for i in range(cfg["replicas"])]
    write_csv(out / "outcomes.csv",
              ["replica", "coupled", "index_or_time", "attempts",
               "stage1_successes", "stage2_successes"], rows)
    return 0, ["outcomes.csv"]


def _scenario_couple_process(cfg, body, law, out, workers):
    cert = build_certificate(cfg, body, law)
    if cert.kind != "disc_process":
        raise ConfigError("couple_process driver batches disc certificates;"
                          " use the library API for convex bodies")
    start = cfg.get("start") or [[body.r, 0.0], [-1.0, 0.0]]
    start_b = cfg.get("start_alt") or [[-body.r, 0.0], [1.0, 0.0]]
    res = couple_process_disc_batch(
        body.r, law, (np.array(start[0], float), np.array(start[1], float)),
        (np.array(start_b[0], float), np.array(start_b[1], float)),
        cert, cfg["t_max"], cfg["replicas"], cfg["seed"], workers=workers)
    rows = [(i, int(res.coupled[i]),
             res.coupling_time[i] if res.coupled[i] else -1.0,
             int(res.stage1_attempts[i] + res.stage2_attempts[i]),
             int(res.stage1_successes[i]), int(res.stage2_successes[i]))
            for i in range(cfg["replicas"])]
    write_csv(out / "outcomes.csv",
              ["replica", "coupled", "index_or_time", "attempts",
               "stage1_successes", "stage2_successes"], rows)
    return 0, ["outcomes.csv"]


def _scenario_verify_dominance(cfg, body, law, out, workers):
    cert = build_certificate(cfg, body, law)
    curve = empirical_tv_curve(body, law, cfg.get("s0", 0.0),
                               cfg.get("s0_alt", 0.5 * body.perimeter),
                               cfg["n_max"], cfg["replicas"], cfg["bins"],
                               cfg["seed"], workers=workers)
    report = dominance_report(curve, cert)
    write_csv(out / "tv_curve.csv",
              ["n", "empirical", "sigma", "bound", "pass"],
              report.rows())
    data = cert.to_json_dict()
    (out / "certificate.json").write_text(json.dumps(data, indent=2,
                                                     sort_keys=True))
    (out / "report.json").write_text(json.dumps(
        {"passed": bool(report.passed), "points": len(report.points)},
        indent=2))
    files = ["tv_curve.csv", "certificate.json", "report.json"]
    return (0 if report.passed else 3), files


def _scenario_verify_lb(cfg, body, law, out, workers):
    profile = cfg["lb_profile"]
    n = cfg["replicas"]
    inflate = cfg.get("inflate", 1.0)
    width, floor, params = _law_floor(cfg, law)
    gen = rngmod.substream(cfg["seed"], f"lb-{profile}")
    if profile == "phi1":
        th = law.sample(gen, n)
        samples = math.pi + 2.0 * np.asarray(th)
        window = (math.pi - width, math.pi + width)
        level = 0.5 * floor
    elif profile == "t2":
        if not isinstance(body, Disc):
            raise HypothesisViolated("t2 profile requires a disc")
        r = body.r
        th = law.sample(gen, (2, n))
        samples = 2.0 * r * (np.cos(th[0]) + np.cos(th[1]))
        eta = params.eta if params.eta is not None \
            else 0.8 * 2.0 * r * (1.0 - math.cos(0.5 * width))
        level = t2_density_floor(r, width, floor, eta)
        window = (4.0 * r * math.cos(0.5 * width) + eta, 4.0 * r - eta)
    elif profile == "phi2_t2":
        if not isinstance(body, Disc):
            raise HypothesisViolated("phi2_t2 profile requires a disc")
        r = body.r
        eps = params.eps if params.eps is not None else 0.02 * width
        prof = disc_pair_profile(r, width, floor, eps)
        th = law.sample(gen, (2, n))
        ang = np.mod(2.0 * (th[0] + th[1]) + math.pi, 2.0 * math.pi) - math.pi
        tt = 2.0 * r * (np.cos(th[0]) + np.cos(th[1]))
        samples = np.stack([ang, tt], axis=1)
        window = ((-prof["angle_halfwidth"], prof["angle_halfwidth"]),
                  (prof["t_lo"], prof["t_hi"]))
        level = prof["level"]
    else:  # t1
        summary = summarize(body)
        th = law.sample(gen, n)
        samples = chord_times(body, cfg.get("s0", 0.0), th)
        window = (0.0, 2.0 / summary.curvature_max)
        level = summary.curvature_min * floor
    report = lb_check(samples, window, level * inflate)
    payload = {
        "profile": profile, "level": level, "inflate": inflate,
        "passed": bool(report.passed), "worst_z": report.worst_z,
        "n_samples": report.n_samples,
        "n_windows": len(report.windows),
    }
    (out / "lb_report.json").write_text(json.dumps(payload, indent=2))
    return (0 if report.passed else 3), ["lb_report.json"]


def _scenario_optimize(cfg, body, law, out, workers):
    kind, width, floor, _ = _rate_inputs(cfg, body, law)
    fixed = {"width": width, "floor": floor}
    if kind == "disc_process":
        fixed["r"] = body.r
    if kind == "convex_chain":
        fixed = {"summary": summarize(body), "width": width, "floor": floor}
    if kind == "convex_process":
        fixed = {"body": body, "floor": floor,
                 "x": point_at(body, cfg.get("s0", 0.0)),
                 "xt": point_at(body, cfg.get("s0_alt", 0.5 * body.perimeter))}
    params, cert = optimize_free_params(kind, fixed, cfg["grid"])
    (out / "best_params.json").write_text(json.dumps(params.as_dict(),
                                                     indent=2))
    (out / "certificate.json").write_text(json.dumps(cert.to_json_dict(),
                                                     indent=2, sort_keys=True))
    return 0, ["best_params.json", "certificate.json"]


_RUNNERS = {
    "simulate_chain": _scenario_simulate_chain,
    "simulate_process": _scenario_simulate_process,
    "chain_rate": _scenario_rate,
    "process_rate": _scenario_rate,
    "couple_chains": _scenario_couple_chains,
    "couple_process": _scenario_couple_process,
    "verify_dominance": _scenario_verify_dominance,
    "verify_lb": _scenario_verify_lb,
    "optimize_params": _scenario_optimize,
}


def run(cfg: dict, out_dir: str, workers: int = 1) -> int:
    """Execute one experiment; returns the process exit code."""
    t_start = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = body_from_config(cfg["body"])
    law = law_from_config(cfg["law"])
    code, artifacts = _RUNNERS[cfg["scenario"]](cfg, body, law, out, workers)
    manifest = {
        "config_sha256": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "wall_time_s": time.time() - t_start,
        "workers": workers,
        "exit_code": code,
        "artifacts": artifacts,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="convexbilliards",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--replicas", type=int, default=None)
    p_run.add_argument("--n-max", type=int, default=None)
    p_run.add_argument("--t-max", type=float, default=None)
    p_val = sub.add_parser("validate-config", help="check a config file")
    p_val.add_argument("--config", required=True)
    sub.add_parser("schema", help="print the config JSON schema")

    args = parser.parse_args(argv)
    if args.command == "schema":
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return 0
    try:
        cfg = load_config(args.config)
        if args.command == "validate-config":
            print("config OK")
            return 0
        for key, val in (("seed", args.seed), ("replicas", args.replicas),
                         ("n_max", args.n_max), ("t_max", args.t_max)):
            if val is not None:
                cfg[key] = val
        return run(cfg, args.out, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (HypothesisViolated, InvalidParams) as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return 2
    except BilliardError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
