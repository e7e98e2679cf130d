"""Command line front end: parse a run configuration, execute, emit files.

Commands::

    oqst run <scenario> [flags]     scenario in {cavity, projective, tpm, classical}
    oqst verify [flags]             run the invariant suite, nonzero exit on failure

Shared flags: ``--config PATH`` (JSON, overridden by explicit flags),
``--seed U64``, ``--out DIR``, ``--workers N`` (default from OQST_WORKERS).
Outputs are plain CSV plus a ``summary.json`` and are byte-identical for
identical (config, seed) regardless of worker count.

Exit codes: 0 success, 2 configuration error, 3 invariant violation,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .scenarios import (
    CavityConfig,
    RateModel,
    run_cavity,
    run_classical_limit,
    run_projective_example,
    run_tpm_jarzynski,
)
from .qmath import DensityOperator

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_IO = 4

SCENARIOS = ("cavity", "projective", "tpm", "classical")

_DEFAULT_PARAMS = {
    "cavity": {
        "steps": 200, "traj": 2000, "target": 2, "delay": 5, "cutoff": 8,
        "exact_propagator": False, "dense": False,
    },
    "projective": {"omega": 1.0},
    "tpm": {"beta": 1.0},
    "classical": {
        "beta": 1.0, "dt": 0.02, "steps": 50, "mode": "enumerate",
        "traj": 2000, "energies": [0.0, 1.0],
    },
}


class CliError(Exception):
    """Configuration problem; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved invocation: scenario, parameter block, seed, output."""

    scenario: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS + ("verify",):
            raise CliError(f"unknown scenario {self.scenario!r}")
        if self.workers < 1:
            raise CliError("workers must be positive")
        defaults = _DEFAULT_PARAMS.get(self.scenario, {})
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise CliError(f"unknown parameter keys {sorted(unknown)}")
        merged = {**defaults, **self.params}
        for key, value in merged.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                if key in ("beta", "dt", "omega") and value <= 0:
                    raise CliError(f"parameter {key} must be positive")
                if key in ("steps", "traj", "target", "cutoff") and value < 1:
                    raise CliError(f"parameter {key} must be at least 1")
                if key == "delay" and value < 0:
                    raise CliError(f"parameter {key} must be nonnegative")
        object.__setattr__(self, "params", merged)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "params": self.params,
            "seed": self.seed,
            "out": self.out_dir,
            "workers": self.workers,
        }


def _default_workers() -> int:
    env = os.environ.get("OQST_WORKERS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise CliError(f"OQST_WORKERS must be an integer, got {env!r}")


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise CliError("config file must hold a JSON object")
    allowed = {"scenario", "params", "seed", "out", "workers"}
    unknown = set(data) - allowed
    if unknown:
        raise CliError(f"unknown config keys {sorted(unknown)}")
    return data


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oqst",
        description="Trajectory thermodynamics simulator for discretely controlled open systems",
    )
    sub = parser.add_subparsers(dest="command")

    def add_shared(p):
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (64-bit)")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: OQST_WORKERS or 1)")

    run_p = sub.add_parser("run", help="execute a scenario")
    run_p.add_argument("scenario", choices=SCENARIOS)
    add_shared(run_p)
    run_p.add_argument("--steps", type=int, default=None)
    run_p.add_argument("--traj", type=int, default=None)
    run_p.add_argument("--target", type=int, default=None)
    run_p.add_argument("--delay", type=int, default=None)
    run_p.add_argument("--cutoff", type=int, default=None)
    run_p.add_argument("--exact-propagator", action="store_true", default=None)
    run_p.add_argument("--dense", action="store_true", default=None)
    run_p.add_argument("--beta", type=float, default=None)
    run_p.add_argument("--dt", type=float, default=None)
    run_p.add_argument("--mode", choices=("enumerate", "gillespie"), default=None)
    run_p.add_argument("--omega", type=float, default=None)

    ver_p = sub.add_parser("verify", help="run the invariant suite")
    add_shared(ver_p)
    return parser


def parse_config(argv) -> RunConfig:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed its message; translate the exit code
        raise CliError("invalid arguments") from exc
    if ns.command is None:
        raise CliError("a command is required: run or verify")
    file_cfg = _load_config_file(ns.config) if ns.config else {}
    scenario = getattr(ns, "scenario", None) or file_cfg.get("scenario")
    if ns.command == "verify":
        scenario = "verify"
    if not scenario:
        raise CliError("no scenario given")
    params = dict(file_cfg.get("params", {}))
    flag_map = {
        "steps": "steps", "traj": "traj", "target": "target", "delay": "delay",
        "cutoff": "cutoff", "exact_propagator": "exact_propagator",
        "dense": "dense", "beta": "beta", "dt": "dt", "mode": "mode",
        "omega": "omega",
    }
    for attr, key in flag_map.items():
        value = getattr(ns, attr, None)
        if value is not None:
            params[key] = value
    seed = ns.seed if ns.seed is not None else file_cfg.get("seed", 0)
    out_dir = ns.out if ns.out is not None else file_cfg.get("out")
    workers = ns.workers if ns.workers is not None else file_cfg.get("workers", _default_workers())
    return RunConfig(
        scenario=scenario, params=params, seed=int(seed),
        out_dir=out_dir, workers=int(workers),
    )


def fmt(x) -> str:
    """Floating point with 12 significant digits (stable across runs)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(float(obj)))
    return obj


def _write_csv(path: str, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_summary(out_dir: str, payload: dict):
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(_json_ready(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit_cavity(report, config: RunConfig, out_dir: str):
    rec = report.records[0]
    rows = []
    for i, ledger in enumerate(rec.ledgers):
        pops = np.asarray(rec.states[i], dtype=float)
        n_vec = np.arange(pops.size)
        mean_n = float(n_vec @ pops)
        var_n = float(n_vec**2 @ pops - mean_n**2)
        rows.append([
            ledger.step, fmt(report.times[i]), rec.kinds[i], ledger.outcome,
            fmt(mean_n), fmt(var_n), fmt(ledger.w_ctrl_sys), fmt(ledger.q_ctrl_sys),
            fmt(ledger.w_seg), fmt(ledger.q_seg), fmt(ledger.sigma_ctrl),
            fmt(ledger.sigma_seg), fmt(ledger.logp_increment),
        ])
    _write_csv(
        os.path.join(out_dir, "trajectory.csv"),
        ["step", "time", "atom_kind", "outcome", "mean_n", "var_n", "W_ctrl",
         "Q_ctrl", "W_seg", "Q_seg", "Sigma_ctrl", "Sigma_seg", "logp_increment"],
        rows,
    )
    rows = []
    for i in range(len(report.times)):
        rows.append([
            i + 1,
            fmt(report.populations[i, 0]), fmt(report.populations[i, 1]),
            fmt(report.populations[i, 2]), fmt(report.populations[i, 3]),
            fmt(report.sigma_ctrl_avg[i]), fmt(report.sigma_ctrl_se[i]),
            fmt(report.sigma_seg_avg[i]), fmt(report.efficiency[i]),
        ])
    _write_csv(
        os.path.join(out_dir, "ensemble.csv"),
        ["step", "p0", "p1", "p2", "p3", "Sigma_ctrl_avg", "Sigma_ctrl_se",
         "Sigma_seg_avg", "efficiency"],
        rows,
    )
    checks = report.law_checks
    _write_summary(out_dir, {
        "config": config.to_json(),
        "seed": config.seed,
        "totals": report.totals,
        "law_checks": {
            "first_law_ok": checks["first_law_max_residual"] <= 1e-10,
            "second_law_segment_ok": checks["sigma_seg_min"] >= -1e-10,
            "truncation_ok": checks["truncation_max"] <= 1e-6,
            "efficiency_bounded": 0.0 <= checks["efficiency_max"] <= 1.0 + 1e-9,
            "first_law_max_residual": checks["first_law_max_residual"],
            "sigma_seg_min": checks["sigma_seg_min"],
            "truncation_max": checks["truncation_max"],
        },
    })
    return checks["first_law_max_residual"] <= 1e-10 and checks["sigma_seg_min"] >= -1e-10


def _emit_projective(report, config: RunConfig, out_dir: str):
    rows = []
    for i, label in enumerate(report.labels):
        rows.append([
            label, fmt(report.probabilities[i]),
            fmt(report.q_ctrl.get(label, 0.0)), fmt(report.q_closed.get(label, 0.0)),
            fmt(report.post_energies.get(label, 0.0)),
        ])
    _write_csv(
        os.path.join(out_dir, "outcomes.csv"),
        ["outcome", "probability", "Q_ctrl", "Q_closed", "post_energy"],
        rows,
    )
    ok = abs(report.avg_heat) <= 1e-10 and report.entropy_gain >= -1e-9
    _write_summary(out_dir, {
        "config": config.to_json(),
        "seed": config.seed,
        "totals": {
            "W_ctrl": report.w_ctrl,
            "avg_heat": report.avg_heat,
            "shannon_outcomes": report.shannon_outcomes,
            "shannon_spectrum": report.shannon_spectrum,
        },
        "law_checks": {
            "avg_heat_zero": abs(report.avg_heat) <= 1e-10,
            "outcome_entropy_dominates": report.entropy_gain >= -1e-9,
        },
    })
    return ok


def _emit_tpm(report, config: RunConfig, out_dir: str):
    rows = []
    for leaf in report.leaves:
        rows.append([
            leaf.r0, leaf.r1, fmt(leaf.probability), fmt(leaf.eps0), fmt(leaf.eps1),
            fmt(leaf.q_first), fmt(leaf.w_drive), fmt(leaf.w_ctrl), fmt(leaf.q_ctrl),
        ])
    _write_csv(
        os.path.join(out_dir, "leaves.csv"),
        ["r0", "r1", "probability", "eps0", "eps1", "Q_first", "W_drive",
         "W_ctrl", "Q_ctrl"],
        rows,
    )
    ok = report.identity_residual <= 1e-10
    _write_summary(out_dir, {
        "config": config.to_json(),
        "seed": config.seed,
        "totals": {
            "exp_average": report.exp_average,
            "z_ratio": report.z_ratio,
            "identity_residual": report.identity_residual,
        },
        "law_checks": {"jarzynski_identity_ok": ok},
    })
    return ok


def _emit_classical(report, config: RunConfig, out_dir: str):
    rows = []
    for i in range(len(report.sigma_record)):
        rows.append([
            i + 1, fmt((i + 1) * report.dt), fmt(report.heat_avg[i]),
            fmt(report.sigma_record[i]), fmt(report.sigma_state[i]),
            fmt(report.backward_entropy[i]), fmt(report.identity_residual[i]),
        ])
    _write_csv(
        os.path.join(out_dir, "steps.csv"),
        ["step", "time", "heat_avg", "Sigma_record", "Sigma_state",
         "backward_entropy", "identity_residual"],
        rows,
    )
    ok = (
        report.max_identity_residual <= 1e-8
        and bool((report.sigma_record >= -1e-10).all())
    )
    _write_summary(out_dir, {
        "config": config.to_json(),
        "seed": config.seed,
        "totals": {
            "max_identity_residual": report.max_identity_residual,
            "max_redefined_residual": report.max_redefined_residual,
        },
        "law_checks": {
            "difference_identity_ok": report.max_identity_residual <= 1e-8,
            "record_production_nonnegative": bool((report.sigma_record >= -1e-10).all()),
        },
    })
    return ok


def emit_outputs(report, config: RunConfig, out_dir: str) -> bool:
    """Write a scenario report as plot-ready CSV plus summary.json.

    Returns whether the report's law checks all held.
    """
    from .scenarios import CavityReport, ClassicalReport, ProjectiveReport, TpmReport

    if isinstance(report, CavityReport):
        return _emit_cavity(report, config, out_dir)
    if isinstance(report, ProjectiveReport):
        return _emit_projective(report, config, out_dir)
    if isinstance(report, TpmReport):
        return _emit_tpm(report, config, out_dir)
    if isinstance(report, ClassicalReport):
        return _emit_classical(report, config, out_dir)
    raise CliError(f"no emitter for report type {type(report).__name__}")


def execute(config: RunConfig) -> int:
    """Run the configured scenario; returns a process exit code."""
    out_dir = config.out_dir or "."
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        if config.scenario == "verify":
            from .verify import run_all
            results = run_all(config.seed)
            for res in results:
                status = "ok" if res.passed else "FAIL"
                print(f"[{status}] {res.name}: {res.detail}")
            _write_summary(out_dir, {
                "config": config.to_json(),
                "seed": config.seed,
                "checks": {r.name: {"passed": r.passed, "detail": r.detail} for r in results},
                "all_passed": all(r.passed for r in results),
            })
            return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT

        if config.scenario == "cavity":
            p = config.params
            report = run_cavity(CavityConfig(
                steps=p["steps"], trajectories=p["traj"], target_nt=p["target"],
                delay_d=p["delay"], cutoff=p["cutoff"],
                exact_propagator=bool(p["exact_propagator"]), dense=bool(p["dense"]),
                seed=config.seed, workers=config.workers,
            ))
            ok = emit_outputs(report, config, out_dir)
        elif config.scenario == "projective":
            omega = config.params["omega"]
            h = 0.5 * omega * np.diag([1.0, -1.0]).astype(complex)
            report = run_projective_example(
                h, DensityOperator.pure([1, 1]), np.eye(2)
            )
            ok = emit_outputs(report, config, out_dir)
        elif config.scenario == "tpm":
            sz = np.diag([1.0, -1.0]).astype(complex)
            hadamard = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
            report = run_tpm_jarzynski(0.5 * sz, sz, hadamard, config.params["beta"])
            ok = emit_outputs(report, config, out_dir)
        elif config.scenario == "classical":
            p = config.params
            model = RateModel.thermal(p["energies"], p["beta"])
            report = run_classical_limit(
                model, steps=p["steps"], dt=p["dt"], mode=p["mode"],
                trajectories=p["traj"], seed=config.seed,
            )
            ok = emit_outputs(report, config, out_dir)
        else:  # pragma: no cover - guarded by RunConfig
            raise CliError(f"unhandled scenario {config.scenario}")
    except OSError as exc:
        print(f"error: output failed: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        print(f"error: invariant violation during run: {exc}", file=sys.stderr)
        return EXIT_INVARIANT

    print(f"wrote results to {out_dir}")
    return EXIT_OK if ok else EXIT_INVARIANT


def main(argv=None) -> int:
    try:
        config = parse_config(sys.argv[1:] if argv is None else argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return execute(config)


if __name__ == "__main__":
    sys.exit(main())
