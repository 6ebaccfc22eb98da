"""Frequentist screening: pilots, adaptive lasso, threshold sweep, two passes.

All penalized solvers run on internally standardized data: candidate columns
are centered and scaled to unit sample sd, the response is centered and scaled
by its sample sd, and the intercept is recovered from the centering constants.
Adaptive weights supplied on the original coefficient scale are converted to
this internal scale, which makes the penalized objective equal to the plain
weighted-L1 objective on original coefficients up to the 1/(2n) factor
absorbed into lambda.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .library import CandidateLibrary, TermDescriptor, subset_library

__all__ = [
    "SparseFit",
    "LassoPath",
    "ScreenResult",
    "NonConvergenceError",
    "pilot_weights",
    "ridge_pilot",
    "adaptive_lasso",
    "two_phase_lambda",
    "phase1_grid",
    "phase2_grid",
    "bic",
    "threshold_sweep",
    "ols_refit",
    "kkt_residuals",
    "screen",
]

logger = logging.getLogger(__name__)

_KKT_TOL = 1e-7
_CD_TOL_CV = 1e-7
_CD_MAX_SWEEPS = 50000
_CD_MAX_SWEEPS_CV = 1000
_CD_POLISH_SWEEPS = 500
_N_FOLDS = 10
_GAMMA = 1.0
_RIDGE_GRID = np.geomspace(1e-6, 1e3, 50)
_ETA_GRID = 10.0 ** np.arange(-8, 2)
_FALLBACK_RIDGE = 1e-6


class NonConvergenceError(RuntimeError):
    """Coordinate descent failed to converge within the sweep budget."""


@dataclass(frozen=True)
class SparseFit:
    """A support with exact OLS refit coefficients and its BIC score."""

    support: tuple[int, ...]
    coeffs: np.ndarray
    rss: float
    bic: float
    threshold: float
    rank_warning: bool = False


@dataclass(frozen=True)
class LassoPath:
    """Adaptive-lasso solution at the cross-validated penalty."""

    lam: float
    coeffs: np.ndarray
    weights: np.ndarray
    pilot_kind: str


@dataclass(frozen=True)
class ScreenResult:
    """Outcome of the two-pass screening procedure."""

    support: tuple[TermDescriptor, ...]
    trimmed: CandidateLibrary
    refined: CandidateLibrary
    fit: SparseFit
    pass1: SparseFit
    fallback_used: bool


# ---------------------------------------------------------------------------
# standardization and fold statistics


class _Standardized:
    """Centered/scaled view of a library plus response."""

    def __init__(self, lib: CandidateLibrary, y: np.ndarray):
        theta = lib.theta
        y = np.asarray(y, dtype=float)
        n = theta.shape[0]
        self.lib = lib
        self.n = n
        self.y = y
        self.y_mean = y.mean()
        sy = y.std(ddof=1) if n > 1 else 0.0
        self.y_scale = sy if sy > 0 else 1.0
        self.ys = (y - self.y_mean) / self.y_scale

        self.cols = np.flatnonzero(lib.scales > 0)
        self.col_means = theta[:, self.cols].mean(axis=0)
        self.col_scales = lib.scales[self.cols]
        self.Z = (theta[:, self.cols] - self.col_means) / self.col_scales

        names = [t.name for t in lib.terms]
        self.intercept_idx = names.index("1") if "1" in names else None

    def internal_weights(self, weights: np.ndarray) -> np.ndarray:
        """Map original-scale adaptive weights onto standardized coefficients."""
        w = np.asarray(weights, dtype=float)[self.cols]
        return w / self.col_scales

    def to_original(self, beta_z: np.ndarray) -> np.ndarray:
        """Map a standardized-scale solution back to a full p-vector."""
        p = self.lib.p
        beta = np.zeros(p)
        slopes = beta_z * self.y_scale / self.col_scales
        beta[self.cols] = slopes
        intercept = self.y_mean - self.col_means @ slopes
        if self.intercept_idx is not None:
            beta[self.intercept_idx] = intercept
        return beta


def _contiguous_folds(n: int, n_folds: int) -> list[np.ndarray]:
    return [idx for idx in np.array_split(np.arange(n), n_folds) if idx.size]


class _FoldStats:
    """Sufficient statistics for Gram-based solvers on contiguous CV folds."""

    def __init__(self, std: _Standardized, n_folds: int = _N_FOLDS):
        Z, ys, n = std.Z, std.ys, std.n
        q = Z.shape[1]
        folds = _contiguous_folds(n, n_folds)
        f = len(folds)
        self.std = std
        self.q = q
        self.n_folds = f
        self.G_full = Z.T @ Z
        self.c_full = Z.T @ ys
        self.syy_full = float(ys @ ys)

        self.T = np.empty((f, q, q))
        self.u = np.empty((f, q))
        self.sz = np.empty((f, q))
        self.sy = np.empty(f)
        self.syy = np.empty(f)
        self.n_test = np.empty(f)
        for i, idx in enumerate(folds):
            Zf, yf = Z[idx], ys[idx]
            self.T[i] = Zf.T @ Zf
            self.u[i] = Zf.T @ yf
            self.sz[i] = Zf.sum(axis=0)
            self.sy[i] = yf.sum()
            self.syy[i] = float(yf @ yf)
            self.n_test[i] = idx.size
        self.n_train = n - self.n_test

        nt = self.n_train[:, None, None]
        sz_tr = -self.sz
        sy_tr = -self.sy
        self.G_train = (
            self.G_full[None] - self.T - sz_tr[:, :, None] * sz_tr[:, None, :] / nt
        ) / nt
        self.c_train = (
            self.c_full[None] - self.u - sz_tr * sy_tr[:, None] / self.n_train[:, None]
        ) / self.n_train[:, None]

    def cv_mse(self, betas: np.ndarray) -> float:
        """Held-out MSE averaged over folds for per-fold solutions (f, q)."""
        a = (-self.sy - np.einsum("fq,fq->f", -self.sz, betas)) / self.n_train
        quad = np.einsum("fi,fij,fj->f", betas, self.T, betas)
        sse = (
            self.syy
            - 2.0 * np.einsum("fq,fq->f", self.u, betas)
            + quad
            - 2.0 * a * self.sy
            + 2.0 * a * np.einsum("fq,fq->f", self.sz, betas)
            + self.n_test * a**2
        )
        return float(np.mean(sse / self.n_test))


# ---------------------------------------------------------------------------
# coordinate descent


def _cd_solve(
    G: np.ndarray,
    c: np.ndarray,
    lam_w: np.ndarray,
    beta: np.ndarray,
    tol: float,
    sweep_budget: list,
    stop: str = "kkt",
    strict: bool = False,
) -> np.ndarray:
    """Cyclic coordinate descent on a batch of normalized Gram systems.

    Minimizes 0.5 b'Gb - c'b + sum_k lam_w[k] |b_k| for every batch entry.
    Coordinates with infinite penalty are pinned at zero.  Uses an active-set
    strategy: full sweeps establish the active set, then inner sweeps iterate
    on it until stable.

    stop="kkt" runs until the largest stationarity violation (gradient scale)
    is at most tol.  stop="fitvals" runs until the largest per-update change
    in fitted values, max_k G_kk*d_k^2, falls below tol; held-out scoring is
    insensitive to the flat directions that remain on near-singular Grams,
    where gradient or coordinate tolerances can be unreachable.  On budget
    exhaustion the current iterate is returned, unless ``strict`` is set, in
    which case stalling is an error.
    """
    eligible = np.flatnonzero(np.isfinite(lam_w))
    fin = np.isfinite(lam_w)
    beta = beta.copy()
    beta[:, ~fin] = 0.0
    grad = np.einsum("bij,bj->bi", G, beta)
    Gdiag = np.einsum("bii->bi", G).copy()
    Gdiag[Gdiag <= 0.0] = 1.0
    fit_stop = stop == "fitvals"

    def sweep(coords) -> float:
        nonlocal grad
        measure = 0.0
        for k in coords:
            rho = c[:, k] - grad[:, k] + Gdiag[:, k] * beta[:, k]
            thr = lam_w[k]
            newb = np.sign(rho) * np.maximum(np.abs(rho) - thr, 0.0) / Gdiag[:, k]
            delta = newb - beta[:, k]
            if np.abs(delta).any():
                grad += G[:, :, k] * delta[:, None]
                beta[:, k] = newb
                measure = max(measure, float((Gdiag[:, k] * delta**2).max()))
        return measure

    def kkt_violation() -> float:
        r = c[:, fin] - grad[:, fin]
        b = beta[:, fin]
        lw = lam_w[fin]
        v = np.where(b != 0.0, np.abs(r - np.sign(b) * lw),
                     np.maximum(np.abs(r) - lw, 0.0))
        return float(v.max()) if v.size else 0.0

    def spend() -> bool:
        sweep_budget[0] -= 1
        if sweep_budget[0] >= 0:
            return True
        if strict:
            raise NonConvergenceError(
                "coordinate descent exceeded its sweep budget"
            )
        return False

    inner_tol = tol if fit_stop else tol * tol
    while True:
        if not spend():
            return beta
        measure = sweep(eligible)
        if fit_stop:
            if measure < tol:
                return beta
        elif kkt_violation() <= tol:
            return beta
        active = [k for k in eligible if np.abs(beta[:, k]).any()]
        while active:
            if not spend():
                return beta
            if sweep(active) < inner_tol:
                break


def _lambda_max(stats: _FoldStats, wt: np.ndarray) -> float:
    finite = np.isfinite(wt)
    if not finite.any():
        return 1.0
    vals = np.abs(stats.c_full[finite]) / (stats.std.n * wt[finite])
    return float(max(vals.max(), 1e-12))


def phase1_grid(lam_max: float) -> np.ndarray:
    """100 log-spaced penalties from lam_max down to lam_max*1e-3.

    The coarse floor is set one decade above the usual glmnet-style 1e-4
    ratio because the phase-2 refinement probes down to a tenth of the
    phase-1 winner: when the CV curve is still falling at this floor, the
    composed search bottoms out exactly at lam_max*1e-4.  Letting the
    composition dig deeper floods the solution with a tail of tiny
    coefficients whose in-sample fit the downstream BIC sweep cannot
    reliably reject on smoothed-derivative responses.
    """
    return np.geomspace(lam_max, lam_max * 1e-3, 100)


def phase2_grid(lam0: float) -> np.ndarray:
    """100 uniform penalties on [lam0/10, 1.1*lam0]."""
    return np.linspace(lam0 / 10.0, 1.1 * lam0, 100)


def _cv_best_lambda(stats: _FoldStats, wt: np.ndarray, grid: np.ndarray) -> float:
    """Pathwise-warm-started CV over a penalty grid; returns the MSE argmin.

    Fold solves stop on the fitted-value measure with a per-penalty sweep cap;
    near the bottom of the grid the train Grams can be numerically singular
    and coordinate-change tolerances are unreachable there.
    """
    order = np.argsort(grid)[::-1]
    betas = np.zeros((stats.n_folds, stats.q))
    best = (np.inf, float(grid[order[0]]))
    for gi in order:
        lam = float(grid[gi])
        betas = _cd_solve(stats.G_train, stats.c_train, lam * wt, betas,
                          tol=_CD_TOL_CV, sweep_budget=[_CD_MAX_SWEEPS_CV],
                          stop="fitvals")
        mse = stats.cv_mse(betas)
        if mse < best[0]:
            best = (mse, lam)
    return best[1]


def _solve_full(stats: _FoldStats, wt: np.ndarray, lam: float) -> np.ndarray:
    """Full-data solution at lam via a short warm-started path from lam_max.

    Intermediate path steps only seed the warm start.  The target penalty is
    solved until fitted values stabilize (a stall there is a hard error) and
    then polished toward KKT stationarity on a best-effort budget; on
    well-conditioned problems the polish reaches gradient-scale tolerance,
    while near-singular Grams keep whatever the budget allowed, which only
    perturbs coordinates the downstream refit re-estimates anyway.
    """
    n = stats.std.n
    G = (stats.G_full / n)[None]
    c = (stats.c_full / n)[None]
    lam_max = _lambda_max(stats, wt)
    beta = np.zeros((1, stats.q))
    if lam < lam_max:
        lo = max(lam, lam_max * 1e-6)
        for step in np.geomspace(lam_max, lo, 30)[:-1]:
            beta = _cd_solve(G, c, float(step) * wt, beta, tol=_CD_TOL_CV,
                             sweep_budget=[_CD_MAX_SWEEPS_CV], stop="fitvals")
    beta = _cd_solve(G, c, float(lam) * wt, beta, tol=_CD_TOL_CV,
                     sweep_budget=[_CD_MAX_SWEEPS], stop="fitvals", strict=True)
    return _cd_solve(G, c, float(lam) * wt, beta, tol=_KKT_TOL,
                     sweep_budget=[_CD_POLISH_SWEEPS])[0]


# ---------------------------------------------------------------------------
# public operations


def pilot_weights(pilot: np.ndarray, gamma: float = _GAMMA) -> np.ndarray:
    """Adaptive weights w_k = |pilot_k|^-gamma; zero pilots give inf."""
    pilot = np.asarray(pilot, dtype=float)
    with np.errstate(divide="ignore"):
        return np.abs(pilot) ** -gamma


def ridge_pilot(
    lib: CandidateLibrary, y: np.ndarray, seed: int = 0, n_folds: int = _N_FOLDS
) -> np.ndarray:
    """Ridge pilot with the penalty chosen by 10-fold CV on a log grid.

    Coefficients are returned on the original scale with the intercept
    unpenalized (handled by centering).
    """
    std = _Standardized(lib, y)
    if std.cols.size == 0:
        return std.to_original(np.zeros(0))
    stats = _FoldStats(std, n_folds)
    q = stats.q

    evals = np.empty((stats.n_folds, q))
    evecs = np.empty((stats.n_folds, q, q))
    for f in range(stats.n_folds):
        evals[f], evecs[f] = np.linalg.eigh(stats.G_train[f])
    proj = np.einsum("fqk,fq->fk", evecs, stats.c_train)

    best = (np.inf, _RIDGE_GRID[0])
    for alpha in _RIDGE_GRID:
        betas = np.einsum("fqk,fk->fq", evecs, proj / (evals + alpha))
        mse = stats.cv_mse(betas)
        if mse < best[0]:
            best = (mse, alpha)

    G = stats.G_full / std.n
    c = stats.c_full / std.n
    beta_z = np.linalg.solve(G + best[1] * np.eye(q), c)
    return std.to_original(beta_z)


def full_ols_pilot(
    lib: CandidateLibrary, y: np.ndarray, penalty: float | None = None
) -> np.ndarray:
    """Least-squares pilot over every library column.

    Solved on the standardized Gram with a small fixed diagonal stabilizer:
    near-singular libraries would otherwise hand minimum-norm least squares
    arbitrarily large coefficients along noise directions, destroying the
    magnitude ordering the adaptive weights rely on.  Nearly unbiased, so
    collinear nuisance columns are not ranked above the terms they alias the
    way cross-validated shrinkage ranks them.
    """
    if penalty is None:
        penalty = _FALLBACK_RIDGE
    std = _Standardized(lib, y)
    if std.cols.size == 0:
        return std.to_original(np.zeros(0))
    n = std.n
    G = std.Z.T @ std.Z / n
    c = std.Z.T @ std.ys / n
    beta_z = np.linalg.solve(G + penalty * np.eye(std.cols.size), c)
    return std.to_original(beta_z)


def two_phase_lambda(
    lib: CandidateLibrary,
    y: np.ndarray,
    weights: np.ndarray,
    seed: int = 0,
    n_folds: int = _N_FOLDS,
) -> float:
    """Two-phase CV search: a coarse log grid, then a dense uniform grid."""
    std = _Standardized(lib, y)
    stats = _FoldStats(std, n_folds)
    wt = std.internal_weights(weights)
    if not np.isfinite(wt).any() or stats.q == 0:
        return 1.0
    lam_max = _lambda_max(stats, wt)
    lam0 = _cv_best_lambda(stats, wt, phase1_grid(lam_max))
    return _cv_best_lambda(stats, wt, phase2_grid(lam0))


def adaptive_lasso(
    lib: CandidateLibrary,
    y: np.ndarray,
    weights: np.ndarray,
    seed: int = 0,
    lam: float | None = None,
    pilot_kind: str = "ridge",
) -> LassoPath:
    """Weighted-L1 fit at the cross-validated penalty (coordinate descent)."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("adaptive weights must be nonnegative")
    std = _Standardized(lib, y)
    wt = std.internal_weights(weights)
    if not np.isfinite(wt).any() or std.cols.size == 0:
        coeffs = std.to_original(np.zeros(std.cols.size))
        return LassoPath(lam=lam if lam is not None else 1.0, coeffs=coeffs,
                         weights=weights, pilot_kind=pilot_kind)
    stats = _FoldStats(std)
    if lam is None:
        lam = two_phase_lambda(lib, y, weights, seed=seed)
    beta_z = _solve_full(stats, wt, float(lam))
    return LassoPath(lam=float(lam), coeffs=std.to_original(beta_z),
                     weights=weights, pilot_kind=pilot_kind)


def kkt_residuals(
    lib: CandidateLibrary, y: np.ndarray, weights: np.ndarray, path: LassoPath
) -> tuple[float, float]:
    """Max KKT violation over (zero, active) coordinates, internal scale."""
    std = _Standardized(lib, y)
    wt = std.internal_weights(weights)
    beta_z = path.coeffs[std.cols] * std.col_scales / std.y_scale
    resid = std.ys - std.Z @ beta_z
    sub = std.Z.T @ resid / std.n
    zero_viol, active_viol = 0.0, 0.0
    for i in range(std.cols.size):
        if not np.isfinite(wt[i]):
            continue
        bound = path.lam * wt[i]
        if beta_z[i] == 0.0:
            zero_viol = max(zero_viol, abs(sub[i]) - bound)
        else:
            active_viol = max(active_viol, abs(abs(sub[i]) - bound))
    return zero_viol, active_viol


def bic(rss: float, n: int, k: int) -> float:
    """Gaussian profile-likelihood BIC with a tiny floor on the RSS."""
    if rss < 0:
        raise ValueError("rss must be nonnegative")
    if not n > k >= 0:
        raise ValueError("need n > k >= 0")
    return n * np.log(max(rss, 1e-300) / n) + k * np.log(n)


def ols_refit(
    theta: np.ndarray, y: np.ndarray, support: tuple[int, ...]
) -> tuple[tuple[int, ...], np.ndarray, float, bool]:
    """Exact OLS on a column subset, dropping dependent columns if needed.

    Returns (kept support, coefficients, rss, rank_warning).
    """
    if not support:
        return (), np.zeros(0), float(y @ y), False
    cols = np.asarray(support, dtype=int)
    A = theta[:, cols]
    q, r, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(A.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    warning = rank < cols.size
    if warning:
        keep = np.sort(piv[:rank])
        cols = cols[keep]
        A = theta[:, cols]
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return tuple(int(k) for k in cols), coef, float(resid @ resid), warning


def threshold_sweep(
    lib: CandidateLibrary, y: np.ndarray, lasso_coeffs: np.ndarray
) -> SparseFit:
    """Sweep hard thresholds, OLS-refit each support, keep the BIC minimizer."""
    y = np.asarray(y, dtype=float)
    n = lib.n
    coeffs = np.asarray(lasso_coeffs, dtype=float)
    seen: dict[tuple[int, ...], None] = {}
    best: SparseFit | None = None
    for eta in _ETA_GRID:
        support = tuple(int(k) for k in np.flatnonzero(np.abs(coeffs) >= eta))
        if support in seen:
            continue
        seen[support] = None
        if len(support) >= n:
            continue
        kept, beta, rss, warn = ols_refit(lib.theta, y, support)
        score = bic(rss, n, len(kept))
        if best is None or score < best.bic:
            best = SparseFit(
                support=kept, coeffs=beta, rss=rss, bic=score,
                threshold=float(eta), rank_warning=warn,
            )
    assert best is not None
    return best


def _refine_as_subset(lib: CandidateLibrary, d1: int) -> CandidateLibrary:
    """Refined library: monomials of degree <= d1 plus any unary terms.

    Identical to rebuilding from the state matrix at degree d1 because the
    canonical ordering restricted to lower degrees is order-preserving.
    """
    idx = [
        k
        for k, t in enumerate(lib.terms)
        if t.func is not None or sum(t.exponents) <= d1
    ]
    return subset_library(lib, idx)


def screen(lib0: CandidateLibrary, y: np.ndarray, seed: int = 0) -> ScreenResult:
    """Two sequential screening passes with library refinement in between."""
    y = np.asarray(y, dtype=float)

    pilot1 = ridge_pilot(lib0, y, seed=seed)
    w1 = pilot_weights(pilot1)
    path1 = adaptive_lasso(lib0, y, w1, seed=seed, pilot_kind="ridge")
    fit1 = threshold_sweep(lib0, y, path1.coeffs)

    fallback = len(fit1.support) == 0
    if fallback:
        logger.warning("pass-1 screening selected nothing; reusing the full library")
        refined = lib0
    else:
        d1 = max(1, max(lib0.terms[k].degree for k in fit1.support))
        refined = _refine_as_subset(lib0, d1)

    if fallback:
        pilot2 = pilot1
        kind = "ridge"
    else:
        # Columns kept by pass 1 get exact restricted-OLS pilots; columns the
        # first pass dropped stay reconsiderable through a lightly stabilized
        # full-library ridge so an over-penalized term can re-enter pass 2.
        pilot2 = full_ols_pilot(refined, y)
        kept, beta, _, _ = ols_refit(lib0.theta, y, fit1.support)
        ols_values = dict(zip((lib0.terms[k] for k in kept), beta))
        for i, term in enumerate(refined.terms):
            if term in ols_values:
                pilot2[i] = ols_values[term]
        kind = "ols"

    w2 = pilot_weights(pilot2)
    path2 = adaptive_lasso(refined, y, w2, seed=seed, pilot_kind=kind)
    fit2 = threshold_sweep(refined, y, path2.coeffs)

    trimmed = subset_library(refined, fit2.support)
    support_terms = tuple(refined.terms[k] for k in fit2.support)
    return ScreenResult(
        support=support_terms,
        trimmed=trimmed,
        refined=refined,
        fit=fit2,
        pass1=fit1,
        fallback_used=fallback,
    )
