"""End-to-end model discovery: smoothing, screening, posterior selection.

One call runs the full chain per state variable and assembles a
DiscoveredModel whose retained terms all carry credible intervals that
exclude zero.  Equations are processed independently: a failure in one is
recorded on that equation and never aborts the others.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .bayes import BayesConfig, DivergenceError, hmc_sample, summarize
from .diagnostics import DiagnosticsReport, build_report
from .library import CandidateLibrary, EmptySupportError, TermDescriptor, build_library
from .screening import NonConvergenceError, SparseFit, bic, ols_refit, screen
from .smoothing import smooth_and_differentiate
from .systems import DynamicalSystem, Trajectory

__all__ = [
    "EquationResult",
    "DiscoveredModel",
    "discover",
    "compare_truth",
    "stlsq_baseline",
    "model_json",
    "equation_text",
]

_STLSQ_MAX_ITERS = 50


@dataclass(frozen=True)
class EquationResult:
    """Retained terms of one equation with posterior point estimates."""

    descriptors: tuple[TermDescriptor, ...]
    coefficients: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    converged: bool
    error: str | None

    @property
    def term_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.descriptors)

    @property
    def empty(self) -> bool:
        return len(self.descriptors) == 0


@dataclass(frozen=True)
class DiscoveredModel:
    """Identified equations plus run metadata and optional diagnostics."""

    equations: tuple[EquationResult, ...]
    meta: dict
    diagnostics: tuple[DiagnosticsReport | None, ...] | None = None


def _empty_equation(error: str | None, converged: bool = False) -> EquationResult:
    return EquationResult(
        descriptors=(),
        coefficients=np.zeros(0),
        ci_lower=np.zeros(0),
        ci_upper=np.zeros(0),
        converged=converged,
        error=error,
    )


def discover(
    traj: Trajectory,
    degree: int,
    trig: bool,
    bayes_cfg: BayesConfig,
    seed: int,
    snr_db: float = math.inf,
    with_diagnostics: bool = False,
) -> DiscoveredModel:
    """Identify sparse dynamics for every state variable of a trajectory.

    Smoothing runs once; each equation then gets its own screening pass and
    posterior sampling with seeds derived deterministically from `seed`.
    """
    smoothed = smooth_and_differentiate(traj)
    lib = build_library(smoothed.X, degree=degree, trig=trig)
    m = traj.dim
    eq_seeds = np.random.SeedSequence(seed).spawn(m)

    equations: list[EquationResult] = []
    reports: list[DiagnosticsReport | None] = []
    for j in range(m):
        y = smoothed.Xdot[:, j]
        screen_seed, bayes_seed = (
            int(s.generate_state(1)[0] % 2**31) for s in eq_seeds[j].spawn(2)
        )
        try:
            result = screen(lib, y, seed=screen_seed)
            if len(result.support) == 0:
                equations.append(_empty_equation(None, converged=True))
                reports.append(None)
                continue
            trimmed = result.trimmed
            draws = hmc_sample(
                trimmed, y, dataclasses.replace(bayes_cfg, seed=bayes_seed)
            )
            summary = summarize(draws, bayes_cfg)
        except (
            NonConvergenceError,
            DivergenceError,
            EmptySupportError,
            np.linalg.LinAlgError,
            ValueError,
        ) as exc:
            equations.append(_empty_equation(f"{type(exc).__name__}: {exc}"))
            reports.append(None)
            continue
        kept = np.flatnonzero(summary.retained)
        equations.append(
            EquationResult(
                descriptors=tuple(trimmed.terms[k] for k in kept),
                coefficients=summary.mean[kept].copy(),
                ci_lower=summary.ci_lo[kept].copy(),
                ci_upper=summary.ci_hi[kept].copy(),
                converged=summary.converged,
                error=None,
            )
        )
        reports.append(
            build_report(trimmed, draws, y, summary.rhat)
            if with_diagnostics
            else None
        )

    meta = {
        "n": traj.n,
        "snr_db": "inf" if math.isinf(snr_db) else float(snr_db),
        "seed": seed,
        "degree": degree,
        "trig": trig,
        "converged": [eq.converged for eq in equations],
        "errors": [eq.error for eq in equations],
    }
    return DiscoveredModel(
        equations=tuple(equations),
        meta=meta,
        diagnostics=tuple(reports) if with_diagnostics else None,
    )


def compare_truth(model: DiscoveredModel, sys: DynamicalSystem) -> bool:
    """True when every equation's retained terms match the truth exactly."""
    if len(model.equations) != sys.dim:
        raise ValueError("model and system dimensions differ")
    for eq, truth in zip(model.equations, sys.truth):
        if set(eq.term_names) != {t.name for t in truth}:
            return False
    return True


def stlsq_baseline(
    lib: CandidateLibrary,
    y: np.ndarray,
    threshold: float = 0.1,
    ridge_penalty: float = 0.0,
) -> SparseFit:
    """Sequential thresholded least squares on the raw library columns.

    Alternates a (optionally ridge-regularized) fit on the active set with
    hard thresholding at `threshold` until the active set is stable, then
    refits the survivors by exact OLS.
    """
    if threshold <= 0.0:
        raise ValueError("threshold must be positive")
    y = np.asarray(y, dtype=float)
    theta = lib.theta
    n, p = theta.shape
    active = np.arange(p)
    for _ in range(_STLSQ_MAX_ITERS):
        if active.size == 0:
            break
        A = theta[:, active]
        if ridge_penalty > 0.0:
            coef = np.linalg.solve(
                A.T @ A + ridge_penalty * np.eye(active.size), A.T @ y
            )
        else:
            coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
        keep = np.abs(coef) >= threshold
        if keep.all():
            break
        active = active[keep]

    support, coeffs, rss, warning = ols_refit(theta, y, tuple(int(k) for k in active))
    return SparseFit(
        support=support,
        coeffs=coeffs,
        rss=rss,
        bic=bic(rss, n, len(support)),
        threshold=threshold,
        rank_warning=warning,
    )


def model_json(model: DiscoveredModel) -> str:
    """Serialize a DiscoveredModel as JSON."""
    payload = {
        "equations": [
            {
                "lhs": f"dx{j + 1}/dt",
                "terms": [
                    {
                        "name": name,
                        "mean": float(mean),
                        "ci_lo": float(lo),
                        "ci_hi": float(hi),
                    }
                    for name, mean, lo, hi in zip(
                        eq.term_names, eq.coefficients, eq.ci_lower, eq.ci_upper
                    )
                ],
            }
            for j, eq in enumerate(model.equations)
        ],
        "meta": model.meta,
    }
    return json.dumps(payload, indent=2)


def equation_text(model: DiscoveredModel) -> str:
    """Human-readable equation block, one line per state variable."""
    lines = []
    for j, eq in enumerate(model.equations):
        if eq.empty:
            rhs = "0"
            if eq.error is not None:
                rhs += f"  [failed: {eq.error}]"
        else:
            parts = []
            for i, (name, mean) in enumerate(zip(eq.term_names, eq.coefficients)):
                body = f"{abs(mean):.6g}"
                if name != "1":
                    body += f"*{name}"
                if i == 0:
                    parts.append(body if mean >= 0 else f"-{body}")
                else:
                    parts.append(f"{'+' if mean >= 0 else '-'} {body}")
            rhs = " ".join(parts)
        lines.append(f"dx{j + 1}/dt = {rhs}")
    return "\n".join(lines)
