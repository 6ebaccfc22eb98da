"""Command-line entry points for simulation, discovery, and diagnostics.

Subcommands:
  simulate   integrate a built-in system, optionally add noise, write CSV
  discover   identify sparse dynamics from a trajectory CSV, write model JSON
  benchmark  run a success-rate experiment grid from a config file
  diagnose   recompute reliability diagnostics for a saved model
  modes      modal analysis of an affine system dz/dt = A z + b
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .bayes import BayesConfig, hmc_sample, summarize
from .diagnostics import ModalAnalysis, analyze_affine_modes, build_report, report_json
from .harness import load_config, emit_plot_data, run_experiment, write_table
from .library import build_library, subset_library
from .pipeline import discover, equation_text, model_json
from .smoothing import smooth_and_differentiate
from .systems import (
    NoiseSpec,
    add_noise,
    builtin_names,
    builtin_system,
    load_trajectory_csv,
    sample_initial_condition,
    save_trajectory_csv,
    simulate,
)

__all__ = ["main"]


def _spawn_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0] % 2**31)


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _cmd_simulate(args: argparse.Namespace) -> int:
    system = builtin_system(args.system)
    dt = system.default_dt if args.dt is None else args.dt
    s_ic, s_noise = np.random.SeedSequence(args.seed).spawn(2)
    rng = np.random.default_rng(s_ic)
    x0 = sample_initial_condition(system, rng)
    traj = simulate(system, x0, dt=dt, n=args.n)
    if args.snr is not None:
        traj = add_noise(traj, NoiseSpec(snr_db=args.snr, seed=_spawn_int(s_noise)))
    save_trajectory_csv(traj, args.out)
    label = "noisy" if args.snr is not None else "clean"
    print(f"wrote {label} {args.system} trajectory ({traj.n} samples, dt={dt}) to {args.out}")
    return 0


def _bayes_config(args: argparse.Namespace) -> BayesConfig:
    return BayesConfig(
        chains=args.chains,
        iters=args.iters,
        warmup=args.warmup,
        ci_level=args.ci_level,
        target_accept=args.target_accept,
        seed=args.seed,
    )


def _cmd_discover(args: argparse.Namespace) -> int:
    traj = load_trajectory_csv(args.trajectory)
    snr_db = math.inf if args.snr_db is None else args.snr_db
    model = discover(
        traj,
        degree=args.degree,
        trig=args.trig,
        bayes_cfg=_bayes_config(args),
        seed=args.seed,
        snr_db=snr_db,
        with_diagnostics=args.diagnostics is not None,
    )
    print(equation_text(model))
    _write_text(args.out, model_json(model))
    if args.out not in (None, "-"):
        print(f"model written to {args.out}")
    if args.diagnostics is not None:
        reports = [
            None if rep is None else json.loads(report_json(rep))
            for rep in model.diagnostics
        ]
        Path(args.diagnostics).write_text(json.dumps(reports, indent=2) + "\n")
        print(f"diagnostics written to {args.diagnostics}")
    return 0


def _cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    table = run_experiment(cfg)
    out_dir = Path(cfg.out_dir)
    table_path = out_dir / f"{cfg.system}_table.csv"
    plot_path = Path(args.plot) if args.plot else out_dir / f"{cfg.system}_plot.csv"
    write_table(table, table_path)
    emit_plot_data(table, plot_path)
    print(f"{'n':>8} {'snr_db':>8} {'rate':>6} {'trials':>6} {'mean_s':>8}")
    for row in table.rows:
        snr = "inf" if math.isinf(row.snr_db) else f"{row.snr_db:g}"
        print(
            f"{row.n:>8} {snr:>8} {row.success_rate:>6.2f} "
            f"{row.trials:>6} {row.mean_runtime_seconds:>8.1f}"
        )
    print(f"table written to {table_path}; plot data to {plot_path}")
    return 0


def _cmd_diagnose(args: argparse.Namespace) -> int:
    traj = load_trajectory_csv(args.trajectory)
    saved = json.loads(Path(args.model).read_text())
    meta = saved.get("meta", {})
    degree = int(meta.get("degree", args.degree))
    trig = bool(meta.get("trig", False))
    smoothed = smooth_and_differentiate(traj)
    lib = build_library(smoothed.X, degree=degree, trig=trig)
    column_of = {term.name: k for k, term in enumerate(lib.terms)}
    cfg = _bayes_config(args)

    reports = []
    for j, equation in enumerate(saved["equations"]):
        names = [t["name"] for t in equation["terms"]]
        if not names:
            reports.append(None)
            continue
        missing = [name for name in names if name not in column_of]
        if missing:
            raise ValueError(f"model terms not in the candidate library: {missing}")
        trimmed = subset_library(lib, tuple(column_of[name] for name in names))
        y = smoothed.Xdot[:, j]
        draws = hmc_sample(trimmed, y, cfg)
        summary = summarize(draws, cfg)
        report = build_report(trimmed, draws, y, summary.rhat)
        reports.append(json.loads(report_json(report)))
    _write_text(args.out, json.dumps(reports, indent=2))
    return 0


def _modal_json(modes: ModalAnalysis) -> str:
    def safe(x: float) -> float | str:
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(x)

    payload = {
        "equilibrium": [float(v) for v in modes.equilibrium],
        "eigenvalues": [
            {"real": float(ev.real), "imag": float(ev.imag)}
            for ev in modes.eigenvalues
        ],
        "periods": [safe(v) for v in modes.periods],
        "half_lives": [safe(v) for v in modes.half_lives],
        "decay_timescales": [safe(v) for v in modes.decay_timescales],
    }
    return json.dumps(payload, indent=2)


def _cmd_modes(args: argparse.Namespace) -> int:
    spec = json.loads(Path(args.matrices).read_text())
    modes = analyze_affine_modes(np.asarray(spec["A"], dtype=float),
                                 np.asarray(spec["b"], dtype=float))
    _write_text(args.out, _modal_json(modes))
    return 0


def _add_bayes_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--chains", type=int, default=4)
    parser.add_argument("--iters", type=int, default=2000)
    parser.add_argument("--warmup", type=int, default=1000)
    parser.add_argument("--ci-level", type=float, default=0.90, dest="ci_level")
    parser.add_argument("--target-accept", type=float, default=0.8,
                        dest="target_accept")
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="argoskit",
        description="Sparse ODE discovery from noisy trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="integrate a built-in system to CSV")
    sim.add_argument("--system", required=True, choices=builtin_names())
    sim.add_argument("--dt", type=float, default=None,
                     help="sampling interval (default: system preset)")
    sim.add_argument("--n", type=int, required=True, help="number of samples")
    sim.add_argument("--snr", type=float, default=None,
                     help="noise level in dB (omit for a clean trajectory)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output trajectory CSV")
    sim.set_defaults(handler=_cmd_simulate)

    dis = sub.add_parser("discover", help="identify dynamics from a trajectory CSV")
    dis.add_argument("trajectory", help="input trajectory CSV")
    dis.add_argument("--degree", type=int, default=5)
    dis.add_argument("--trig", action="store_true",
                     help="append sine and cosine columns to the library")
    dis.add_argument("--snr-db", type=float, default=None, dest="snr_db",
                     help="noise level recorded in model metadata")
    dis.add_argument("--out", default="model.json",
                     help="model JSON path ('-' for stdout)")
    dis.add_argument("--diagnostics", default=None,
                     help="also write per-equation diagnostics JSON here")
    _add_bayes_arguments(dis)
    dis.set_defaults(handler=_cmd_discover)

    ben = sub.add_parser("benchmark", help="run a success-rate experiment grid")
    ben.add_argument("config", help="key=value config file")
    ben.add_argument("--plot", default=None, help="plot-data CSV path")
    ben.set_defaults(handler=_cmd_benchmark)

    dia = sub.add_parser("diagnose", help="recompute diagnostics for a saved model")
    dia.add_argument("trajectory", help="input trajectory CSV")
    dia.add_argument("model", help="model JSON produced by `discover`")
    dia.add_argument("--degree", type=int, default=5,
                     help="library degree when the model lacks metadata")
    dia.add_argument("--out", default=None, help="output JSON path (default stdout)")
    _add_bayes_arguments(dia)
    dia.set_defaults(handler=_cmd_diagnose)

    mod = sub.add_parser("modes", help="modal analysis of dz/dt = A z + b")
    mod.add_argument("matrices", help="JSON file with fields A (matrix) and b (vector)")
    mod.add_argument("--out", default=None, help="output JSON path (default stdout)")
    mod.set_defaults(handler=_cmd_modes)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
