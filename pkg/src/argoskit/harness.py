"""Experiment runner: seeded trial grids, success tables, plot-ready output.

Each (n, snr) cell runs independently seeded trials of the full pipeline and
scores exact-structure recovery.  Per-trial results stream to a CSV so an
interrupted experiment resumes where it stopped, and the final table is
invariant to execution order.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bayes import BayesConfig
from .pipeline import compare_truth, discover
from .systems import NoiseSpec, add_noise, builtin_system, sample_initial_condition, simulate

__all__ = [
    "ExperimentConfig",
    "SuccessRow",
    "SuccessTable",
    "load_config",
    "run_experiment",
    "write_table",
    "emit_plot_data",
    "read_plot_data",
]

_TRIALS_SUFFIX = "_trials.csv"
_TRIAL_FIELDS = ["n", "snr_db", "trial", "success", "runtime_seconds", "error"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid experiment description."""

    system: str
    n_grid: tuple[int, ...]
    snr_grid: tuple[float, ...]
    trials: int = 20
    degree: int = 5
    trig: bool = False
    master_seed: int = 0
    out_dir: str = "results"

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.n_grid or not self.snr_grid:
            raise ValueError("grids must be nonempty")


@dataclass(frozen=True)
class SuccessRow:
    """One grid cell's aggregate outcome."""

    n: int
    snr_db: float
    successes: int
    trials: int
    success_rate: float
    mean_runtime_seconds: float


@dataclass(frozen=True)
class SuccessTable:
    """All cells of one experiment."""

    system: str
    rows: tuple[SuccessRow, ...]
    method: str = "bayes"


def _encode_snr(snr_db: float) -> str:
    return "inf" if math.isinf(snr_db) else repr(float(snr_db))


def _decode_snr(text: str) -> float:
    return math.inf if text == "inf" else float(text)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse the flat key=value experiment file."""
    values: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    try:
        system = values["system"]
        n_grid = tuple(int(v) for v in values["n_grid"].split(",") if v.strip())
        snr_grid = tuple(
            _decode_snr(v.strip()) for v in values["snr_grid"].split(",") if v.strip()
        )
    except KeyError as missing:
        raise ValueError(f"config is missing required key {missing}") from None
    return ExperimentConfig(
        system=system,
        n_grid=n_grid,
        snr_grid=snr_grid,
        trials=int(values.get("trials", "20")),
        degree=int(values.get("degree", "5")),
        trig=values.get("trig", "false").lower() in ("true", "1", "yes"),
        master_seed=int(values.get("master_seed", "0")),
        out_dir=values.get("out_dir", "results"),
    )


def _trial_seeds(
    master_seed: int, n_idx: int, snr_idx: int, trial: int
) -> tuple[np.random.SeedSequence, int, int]:
    root = np.random.SeedSequence([master_seed, n_idx, snr_idx, trial])
    s_ic, s_noise, s_pipe = root.spawn(3)
    return (
        s_ic,
        int(s_noise.generate_state(1)[0] % 2**31),
        int(s_pipe.generate_state(1)[0] % 2**31),
    )


def _run_trial(payload: tuple) -> dict:
    (system_name, n, snr_db, n_idx, snr_idx, trial, master_seed, degree, trig) = payload
    start = time.perf_counter()
    error = ""
    success = 0
    try:
        sys_ = builtin_system(system_name)
        s_ic, noise_seed, pipe_seed = _trial_seeds(master_seed, n_idx, snr_idx, trial)
        x0 = sample_initial_condition(sys_, np.random.default_rng(s_ic))
        traj = simulate(sys_, x0, dt=sys_.default_dt, n=n)
        noisy = add_noise(traj, NoiseSpec(snr_db=snr_db, seed=noise_seed))
        model = discover(
            noisy, degree=degree, trig=trig, bayes_cfg=BayesConfig(),
            seed=pipe_seed, snr_db=snr_db,
        )
        success = int(compare_truth(model, sys_))
    except Exception as exc:  # noqa: BLE001 - a failed trial must never kill the run
        error = f"{type(exc).__name__}: {exc}"
    return {
        "n": n,
        "snr_db": _encode_snr(snr_db),
        "trial": trial,
        "success": success,
        "runtime_seconds": time.perf_counter() - start,
        "error": error,
    }


def _trials_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / f"{cfg.system}{_TRIALS_SUFFIX}"


def _load_done(path: Path) -> dict[tuple[int, str, int], dict]:
    done: dict[tuple[int, str, int], dict] = {}
    if not path.exists():
        return done
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["n"]), row["snr_db"], int(row["trial"]))
            done[key] = {
                "n": int(row["n"]),
                "snr_db": row["snr_db"],
                "trial": int(row["trial"]),
                "success": int(row["success"]),
                "runtime_seconds": float(row["runtime_seconds"]),
                "error": row.get("error", ""),
            }
    return done


def _max_workers() -> int:
    limit = os.environ.get("ARGOSKIT_THREADS", "")
    if limit.strip():
        return max(1, int(limit))
    return max(1, os.cpu_count() or 1)


def run_experiment(cfg: ExperimentConfig) -> SuccessTable:
    """Run (or resume) the trial grid and aggregate the success table."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trials_path = _trials_path(cfg)
    done = _load_done(trials_path)

    pending = []
    for n_idx, n in enumerate(cfg.n_grid):
        for snr_idx, snr in enumerate(cfg.snr_grid):
            for trial in range(cfg.trials):
                if (n, _encode_snr(snr), trial) not in done:
                    pending.append(
                        (cfg.system, n, snr, n_idx, snr_idx, trial,
                         cfg.master_seed, cfg.degree, cfg.trig)
                    )

    new_file = not trials_path.exists()
    with trials_path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_TRIAL_FIELDS)
        if new_file:
            writer.writeheader()
            fh.flush()
        workers = min(_max_workers(), max(len(pending), 1))
        if workers == 1:
            results = map(_run_trial, pending)
            for row in results:
                done[(row["n"], row["snr_db"], row["trial"])] = row
                writer.writerow(row)
                fh.flush()
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for row in pool.map(_run_trial, pending):
                    done[(row["n"], row["snr_db"], row["trial"])] = row
                    writer.writerow(row)
                    fh.flush()

    rows = []
    for n in cfg.n_grid:
        for snr in cfg.snr_grid:
            cell = [
                done[(n, _encode_snr(snr), t)]
                for t in range(cfg.trials)
                if (n, _encode_snr(snr), t) in done
            ]
            successes = sum(r["success"] for r in cell)
            runtimes = [r["runtime_seconds"] for r in cell]
            rows.append(
                SuccessRow(
                    n=n,
                    snr_db=snr,
                    successes=successes,
                    trials=len(cell),
                    success_rate=successes / len(cell) if cell else 0.0,
                    mean_runtime_seconds=float(np.mean(runtimes)) if runtimes else 0.0,
                )
            )
    return SuccessTable(system=cfg.system, rows=tuple(rows))


def write_table(table: SuccessTable, path: str | Path) -> None:
    """Write the aggregate success table as CSV."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["n", "snr_db", "successes", "trials", "success_rate",
             "mean_runtime_seconds"]
        )
        for r in table.rows:
            writer.writerow(
                [r.n, _encode_snr(r.snr_db), r.successes, r.trials,
                 repr(r.success_rate), repr(r.mean_runtime_seconds)]
            )


def emit_plot_data(table: SuccessTable, path: str | Path) -> None:
    """Write tidy success-rate rows for external plotting."""
    if not table.rows:
        raise ValueError("table has no rows")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "snr_db", "success_rate", "method"])
        for r in table.rows:
            writer.writerow(
                [r.n, _encode_snr(r.snr_db), repr(r.success_rate), table.method]
            )


def read_plot_data(path: str | Path) -> list[dict]:
    """Parse the tidy plot CSV back into row dictionaries."""
    with Path(path).open(newline="") as fh:
        return [
            {
                "n": int(row["n"]),
                "snr_db": _decode_snr(row["snr_db"]),
                "success_rate": float(row["success_rate"]),
                "method": row["method"],
            }
            for row in csv.DictReader(fh)
        ]
