"""Command line entry point.

    tic <moments|solve|verify|sweep|simulate> --config cfg.json --out DIR [--seed N] [--threads N]

Exit codes: 0 success, 1 configuration error, 2 numerical failure. Output
files are written to a scratch directory and moved into place only after
the whole run succeeds.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from tic import __version__
from tic.config import ExperimentConfig, parse_config
from tic.dynamics import SpikePolicy, sample_central_moments, simulate_terminal
from tic.equilibrium import solve_equilibrium_backward
from tic.errors import ConfigError, NumericalError
from tic.moments import conditional_central_moments
from tic.verifier import CLASSES, exact_spike_gain, mc_cross_check, objective_parameter_sweep, strong_equilibrium_sweep

log = logging.getLogger("tic")

SUBCOMMANDS = ("moments", "solve", "verify", "sweep", "simulate")
EQUILIBRIUM_HEADER = ["t", "alpha", "beta", "foc_residual", "affine_residual", "concavity_margin"]
VERIFICATION_HEADER = [
    "t", "x", "alpha_v", "beta_v", "gamma1_analytic", "gamma1_fit", "gamma2_fit", "fit_residual", "class",
]


def fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def json_text(obj) -> str:
    return json.dumps(_json_ready(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _equilibrium(cfg: ExperimentConfig, coeffs, spec):
    return solve_equilibrium_backward(
        coeffs, spec, cfg.time_grid, cfg.solver_x_grid, step=cfg.rk4_step, **cfg.solver_options
    )


def _policy(cfg, coeffs, spec):
    supplied = cfg.policy
    if supplied is not None:
        return supplied
    return _equilibrium(cfg, coeffs, spec).policy


def _equilibrium_csv(sol) -> str:
    rows = zip(
        sol.times, sol.policy.alpha, sol.policy.beta, sol.foc_residual, sol.affine_residual, sol.concavity_margin
    )
    return csv_text(EQUILIBRIUM_HEADER, rows)


def _sweep(cfg, coeffs, spec, policy, threads):
    v = cfg.data["verify"]
    return strong_equilibrium_sweep(
        coeffs, policy, spec, v["t_points"], cfg.verify_x_grid, v["alpha_values"], cfg.beta_offsets,
        v["epsilon_ladder"], v["tau1"], v["tau2"], cfg.rk4_step, threads,
    )


def _verification_outputs(cfg, result) -> dict:
    rows = [
        (r.t, r.x, r.alpha_v, r.beta_v, r.gamma1_analytic, r.gamma1_fit, r.gamma2_fit, r.fit_residual, r.classification)
        for r in result.reports
    ]
    summary = {
        "verdict": result.verdict,
        "witness_count": len(result.witnesses),
        "witnesses": [r.as_dict() for r in result.witnesses],
        "inconclusive_cells": [r.as_dict() for r in result.inconclusive],
        "counts": result.counts(),
        "excluded_self_deviations": result.excluded,
        "config": cfg.data,
        "tool": "tic",
        "version": __version__,
    }
    return {"verification.csv": csv_text(VERIFICATION_HEADER, rows), "summary.json": json_text(summary)}


def run(subcommand: str, cfg: ExperimentConfig, threads: int = 1) -> dict[str, str]:
    """Execute one workflow and return ``{file name: contents}``."""
    coeffs, spec = cfg.coefficients, cfg.objective
    if subcommand == "solve":
        return {"equilibrium.csv": _equilibrium_csv(_equilibrium(cfg, coeffs, spec))}

    if subcommand == "moments":
        policy = _policy(cfg, coeffs, spec)
        m = cfg.data["moments"]
        rows = []
        for t in sorted(m["t_points"]):
            xs = np.array(sorted(m["x_values"]), dtype=float)
            mean, central = conditional_central_moments(coeffs, policy, t, xs, spec.n, step=cfg.rk4_step)
            for i, x in enumerate(xs):
                rows.append([t, x, mean[i], *central[:, i]])
        header = ["t", "x", "mean"] + [f"C{k}" for k in range(2, spec.n + 1)]
        return {"moments.csv": csv_text(header, rows)}

    if subcommand == "verify":
        policy = _policy(cfg, coeffs, spec)
        return _verification_outputs(cfg, _sweep(cfg, coeffs, spec, policy, threads))

    if subcommand == "sweep":
        sol = _equilibrium(cfg, coeffs, spec)
        out = {"equilibrium.csv": _equilibrium_csv(sol)}
        out.update(_verification_outputs(cfg, _sweep(cfg, coeffs, spec, sol.policy, threads)))
        grid = cfg.data["objective"].get("weight_grid")
        if grid:
            v = cfg.data["verify"]
            points = objective_parameter_sweep(
                coeffs, spec.kind, grid, cfg.time_grid, cfg.solver_x_grid, v["t_points"], cfg.verify_x_grid,
                v["alpha_values"], cfg.beta_offsets, v["epsilon_ladder"], v["tau1"], v["tau2"], cfg.rk4_step,
                threads, cfg.data["objective"].get("max_moment"), cfg.solver_options,
            )
            keys = sorted({k for p in points for k in p.weights})
            header = keys + ["verdict"] + [c.replace("-", "_") for c in CLASSES] + ["error"]
            rows = [
                [p.weights.get(k, 0.0) for k in keys] + [p.verdict] + [p.counts[c] for c in CLASSES] + [p.error]
                for p in points
            ]
            out["parameter_sweep.csv"] = csv_text(header, rows)
        return out

    if subcommand == "simulate":
        policy = _policy(cfg, coeffs, spec)
        s = cfg.data["simulation"]
        t0, x0 = float(s["t"]), float(s["x"])
        sample = simulate_terminal(coeffs, policy, t0, x0, s["paths"], s["step"], s["seed"], threads=threads)
        mc = sample_central_moments(sample, spec.n)
        mean, central = conditional_central_moments(coeffs, policy, t0, x0, spec.n, step=cfg.rk4_step)
        rows = [("mean", float(mean), mc.mean, mc.mean_se)]
        rows += [(f"C{k}", float(central[k - 2]), mc.central[k - 2], mc.central_se[k - 2]) for k in range(2, spec.n + 1)]
        if "deviation" in s:
            dev = (s["deviation"].get("alpha", 0.0), s["deviation"]["beta"])
            exact = exact_spike_gain(coeffs, policy, spec, dev, t0, x0, s["epsilon"], cfg.rk4_step)
            gain, se = mc_cross_check(
                coeffs, policy, spec, t0, x0, dev, s["epsilon"], s["paths"], s["seed"], s["step"], threads
            )
            rows.append(("spike_gain", float(exact), gain, se))
        table = [
            (name, exact, est, se, (est - exact) / se if se > 0 else 0.0) for name, exact, est, se in rows
        ]
        return {"simulation.csv": csv_text(["quantity", "exact", "monte_carlo", "standard_error", "z"], table)}

    raise ConfigError(f"unknown subcommand {subcommand!r}", "subcommand")


def _write_atomically(out_dir: Path, files: dict[str, str]):
    out_dir.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".tic-", dir=out_dir))
    try:
        for name, text in files.items():
            (scratch / name).write_text(text, encoding="utf-8")
        for name in files:
            os.replace(scratch / name, out_dir / name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def _threads(value) -> int:
    if value is None:
        value = os.environ.get("TIC_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"not an integer: {value!r}", "threads")
    if n < 1:
        raise ConfigError("must be at least 1", "threads")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tic", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--seed", type=int, help="overrides simulation.seed")
    parser.add_argument("--threads", help="worker threads (default: $TIC_THREADS or 1)")
    parser.add_argument("--version", action="version", version=f"tic {__version__}")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="tic: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", "config")
        cfg = parse_config(text)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("must be a 64-bit unsigned integer", "seed")
            cfg.data["simulation"]["seed"] = args.seed
        files = run(args.subcommand, cfg, _threads(args.threads))
        _write_atomically(args.out, files)
    except ConfigError as exc:
        print(f"tic: configuration error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ArithmeticError) as exc:
        print(f"tic: numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
