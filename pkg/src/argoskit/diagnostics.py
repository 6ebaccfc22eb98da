"""Reliability diagnostics for identified models.

Covers multicollinearity scores for the trimmed design, importance-sampling
influence flags for individual observations, residual exports for visual
heteroscedasticity checks, and modal analysis of affine-linear systems.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .library import CandidateLibrary

__all__ = [
    "DiagnosticsReport",
    "ModalAnalysis",
    "vif",
    "psis_loo",
    "residual_diagnostics",
    "analyze_affine_modes",
    "fit_gpd_shape",
    "build_report",
    "report_json",
]

_VIF_FLAG = 10.0
_KHAT_FLAG = 0.7
_RHAT_FLAG = 1.1
_MIN_DRAWS = 100
_SHAPE_CLAMP = 5.0
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class DiagnosticsReport:
    """Per-trial reliability summary with threshold flags."""

    vif: np.ndarray
    terms: tuple[str, ...]
    khat: np.ndarray
    residual_pairs: np.ndarray
    flags: dict[str, bool]


@dataclass(frozen=True)
class ModalAnalysis:
    """Equilibrium and eigenstructure of dz/dt = A z + b."""

    equilibrium: np.ndarray
    eigenvalues: np.ndarray
    periods: tuple[float, ...]
    half_lives: tuple[float, ...]
    decay_timescales: tuple[float, ...]


def _design_of(trimmed: CandidateLibrary | np.ndarray) -> np.ndarray:
    if isinstance(trimmed, CandidateLibrary):
        return trimmed.theta
    return np.asarray(trimmed, dtype=float)


def vif(trimmed: CandidateLibrary | np.ndarray) -> np.ndarray:
    """Variance inflation factor of every non-constant column.

    Each column is regressed on all the others plus an intercept;
    VIF = 1/(1 - R^2).  Constant columns (the intercept itself) have no
    defined VIF and come back as NaN; perfectly collinear columns come back
    as +inf.
    """
    theta = _design_of(trimmed)
    n, p = theta.shape
    if p < 2:
        raise ValueError("need at least two columns")
    if n <= p:
        raise ValueError("need more rows than columns")
    variances = theta.var(axis=0)
    out = np.empty(p)
    for k in range(p):
        if variances[k] == 0.0:
            out[k] = np.nan
            continue
        x = theta[:, k]
        design = np.column_stack([np.ones(n), np.delete(theta, k, axis=1)])
        coef, _, _, _ = np.linalg.lstsq(design, x, rcond=None)
        rss = float(np.sum((x - design @ coef) ** 2))
        tss = float(np.sum((x - x.mean()) ** 2))
        out[k] = np.inf if rss <= 1e-12 * tss else tss / rss
    return out


def fit_gpd_shape(exceedances: np.ndarray) -> float:
    """Generalized-Pareto shape fitted by probability-weighted moments.

    Takes exceedances over a threshold (location zero).  The shape follows
    the heavy-tail-positive convention and is clamped to [-5, 5] where the
    moment system degenerates (for example constant exceedances).
    """
    z = np.sort(np.asarray(exceedances, dtype=float))
    m = z.size
    if m < 2:
        raise ValueError("need at least two exceedances")
    b0 = z.mean()
    if b0 <= 0.0:
        return -_SHAPE_CLAMP
    # Survival-weighted moment E[X (1 - F(X))], unbiased plotting positions.
    b1 = float(np.sum((m - 1 - np.arange(m)) * z)) / (m * (m - 1))
    denom = b0 - 2.0 * b1
    if denom <= 0.0:
        return _SHAPE_CLAMP
    shape = 2.0 - b0 / denom
    return float(np.clip(shape, -_SHAPE_CLAMP, _SHAPE_CLAMP))


def _flat_draws(draws: np.ndarray) -> np.ndarray:
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 3:
        draws = draws.reshape(-1, draws.shape[-1])
    if draws.ndim != 2:
        raise ValueError("draws must be (chains, S, k+1) or (S, k+1)")
    return draws


def psis_loo(
    draws: np.ndarray, trimmed: CandidateLibrary | np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Pareto tail shape of the leave-one-out importance ratios, per row.

    The inverse pointwise likelihoods are the importance ratios; a
    generalized Pareto distribution is fitted to the M = min(ceil(0.2 S),
    ceil(3 sqrt(S))) largest of them (exceedances over the next-largest
    ratio), and the fitted shape is returned.  Values above 0.7 mark
    observations the posterior is fragile to.
    """
    flat = _flat_draws(draws)
    s = flat.shape[0]
    if s < _MIN_DRAWS:
        raise ValueError(f"need at least {_MIN_DRAWS} draws, got {s}")
    theta = _design_of(trimmed)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    beta = flat[:, :-1]
    sigma = np.maximum(flat[:, -1], 1e-300)
    m_tail = min(math.ceil(0.2 * s), math.ceil(3.0 * math.sqrt(s)))

    khat = np.empty(n)
    block = max(1, int(2**22 // max(s, 1)))
    log_norm = -np.log(sigma) - 0.5 * np.log(2.0 * np.pi)
    for start in range(0, n, block):
        stop = min(start + block, n)
        mu = theta[start:stop] @ beta.T
        log_lik = log_norm - 0.5 * ((y[start:stop, None] - mu) / sigma) ** 2
        log_ratio = -log_lik
        log_ratio -= log_ratio.max(axis=1, keepdims=True)
        for i in range(stop - start):
            order = np.sort(log_ratio[i])
            tail = np.exp(order[s - m_tail:])
            threshold = float(np.exp(order[s - m_tail - 1])) if s > m_tail else 0.0
            khat[start + i] = fit_gpd_shape(tail - threshold)
    return khat


def residual_diagnostics(
    draws: np.ndarray, trimmed: CandidateLibrary | np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Posterior-predictive mean and residual per observation, as (n, 2)."""
    flat = _flat_draws(draws)
    theta = _design_of(trimmed)
    y = np.asarray(y, dtype=float).ravel()
    mu = theta @ flat[:, :-1].mean(axis=0)
    return np.column_stack([mu, y - mu])


def analyze_affine_modes(A: np.ndarray, b: np.ndarray) -> ModalAnalysis:
    """Equilibrium, eigenvalues and timescales of dz/dt = A z + b.

    Periods come from each conjugate eigenvalue pair, half-lives from every
    mode's real part, and decay timescales from the real modes only.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.size:
        raise ValueError("A must be square and match b")
    if np.linalg.cond(A) >= _COND_LIMIT:
        raise ValueError("A is singular or numerically near-singular")
    equilibrium = np.linalg.solve(A, -b)
    eigenvalues = np.linalg.eigvals(A)
    order = np.lexsort((eigenvalues.imag, eigenvalues.real))
    eigenvalues = eigenvalues[order]

    scale = float(np.max(np.abs(eigenvalues))) or 1.0
    imag_tol = 1e-12 * scale
    periods = tuple(
        float(2.0 * np.pi / ev.imag)
        for ev in eigenvalues
        if ev.imag > imag_tol
    )
    half_lives = tuple(
        float(np.log(2.0) / abs(ev.real)) if abs(ev.real) > 0 else np.inf
        for ev in eigenvalues
    )
    decay_timescales = tuple(
        float(1.0 / abs(ev.real))
        for ev in eigenvalues
        if abs(ev.imag) <= imag_tol and abs(ev.real) > 0
    )
    return ModalAnalysis(
        equilibrium=equilibrium,
        eigenvalues=eigenvalues,
        periods=periods,
        half_lives=half_lives,
        decay_timescales=decay_timescales,
    )


def build_report(
    trimmed: CandidateLibrary,
    draws: np.ndarray,
    y: np.ndarray,
    rhat: np.ndarray,
) -> DiagnosticsReport:
    """Assemble the per-trial diagnostics with threshold flags."""
    vif_values = vif(trimmed)
    khat = psis_loo(draws, trimmed, y)
    pairs = residual_diagnostics(draws, trimmed, y)
    finite_vif = vif_values[np.isfinite(vif_values)]
    rhat = np.asarray(rhat, dtype=float)
    flags = {
        "multicollinearity": bool(
            np.any(np.isinf(vif_values)) or np.any(finite_vif > _VIF_FLAG)
        ),
        "influential": bool(np.any(khat > _KHAT_FLAG)),
        "convergence": bool(np.any(rhat[np.isfinite(rhat)] >= _RHAT_FLAG))
        or bool(np.any(~np.isfinite(rhat))),
    }
    return DiagnosticsReport(
        vif=vif_values,
        terms=tuple(t.name for t in trimmed.terms),
        khat=khat,
        residual_pairs=pairs,
        flags=flags,
    )


def _json_safe(value: float) -> float | str | None:
    if math.isnan(value):
        return None
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def report_json(report: DiagnosticsReport) -> str:
    """Serialize a report as JSON with non-finite values made portable."""
    payload = {
        "vif": {
            name: _json_safe(float(v))
            for name, v in zip(report.terms, report.vif)
        },
        "khat": [_json_safe(float(k)) for k in report.khat],
        "residuals": [
            [float(mu), float(r)] for mu, r in report.residual_pairs
        ],
        "flags": report.flags,
    }
    return json.dumps(payload)
