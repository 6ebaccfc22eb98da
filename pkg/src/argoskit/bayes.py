"""Posterior inference on a trimmed term library via Hamiltonian Monte Carlo.

The model is a Gaussian likelihood y ~ N(theta @ beta, sigma^2 I) with
independent normal priors on the coefficients whose scales adapt to the
response and column scales, and an exponential prior on the noise scale
(sampled on log sigma).  Sampling runs a fixed-preconditioner leapfrog HMC
with dual-averaging step-size adaptation and jittered trajectory lengths.
Term retention follows the credible-interval rule: a term is kept when its
equal-tailed interval excludes zero and contains the posterior mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .library import CandidateLibrary

__all__ = [
    "BayesConfig",
    "PosteriorSummary",
    "EquationModel",
    "DivergenceError",
    "hmc_sample",
    "summarize",
    "select_terms",
    "prior_scales",
    "effective_sample_size",
    "mcse_mean",
    "dump_draws",
]

_L_MAX = 32
_DIVERGENCE_ENERGY = 1000.0
_MAX_DIVERGENCE_RATE = 0.10
_RHAT_LIMIT = 1.1
_DUAL_GAMMA = 0.05
_DUAL_T0 = 10.0
_DUAL_KAPPA = 0.75
_SIGMA_FLOOR = 1e-12
_SIGMA_CEILING = 1e150


class DivergenceError(RuntimeError):
    """Raised when too many post-warmup trajectories diverge.

    A high divergence rate means the leapfrog integrator cannot follow the
    posterior geometry, which in this setting almost always indicates a very
    ill-conditioned trimmed design.
    """


@dataclass(frozen=True)
class BayesConfig:
    """Sampler settings."""

    chains: int = 4
    iters: int = 2000
    warmup: int = 1000
    ci_level: float = 0.90
    target_accept: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if not 0 < self.warmup < self.iters:
            raise ValueError("need 0 < warmup < iters")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-coefficient posterior summaries plus the noise scale.

    ``mean``, ``sd``, ``ci_lo``, ``ci_hi`` and ``retained`` cover the k
    coefficients; ``rhat`` has k+1 entries (coefficients then sigma);
    ``draws`` stacks all post-warmup draws as an S x (k+1) matrix with the
    sigma column last.
    """

    mean: np.ndarray
    sd: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    rhat: np.ndarray
    retained: np.ndarray
    sigma_mean: float
    draws: np.ndarray
    converged: bool


@dataclass(frozen=True)
class EquationModel:
    """One equation's retained terms with point estimates and intervals."""

    terms: tuple[str, ...]
    coefficients: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    empty: bool


def prior_scales(theta: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Prior standard deviations for the coefficients, and the response scale.

    Each coefficient gets sd 2.5 * s_y / s_xk from the sample standard
    deviations of the response and its column.  Constant columns (sample sd
    zero, e.g. an intercept) fall back to sd 2.5 * s_y, and a constant
    response falls back to s_y = 1.
    """
    s_y = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
    if s_y == 0.0:
        s_y = 1.0
    s_x = np.std(theta, axis=0, ddof=1)
    tau = np.where(s_x > 0.0, 2.5 * s_y / np.where(s_x > 0.0, s_x, 1.0), 2.5 * s_y)
    return tau, s_y


class _Posterior:
    """Log posterior and gradient in preconditioned coordinates.

    Coefficients are parameterized as beta = m + F v where F F^T approximates
    the posterior covariance at a pilot noise level, and log sigma as
    phi = phi_hat + s_phi * w.  Working in (v, w) gives the sampler a nearly
    isotropic target, so a single scalar step size fits every direction.
    """

    def __init__(
        self, theta: np.ndarray, y: np.ndarray, fixed_sigma: float | None = None
    ) -> None:
        theta = np.asarray(theta, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        n, p = theta.shape
        if n != y.size:
            raise ValueError("theta and y disagree on the sample count")
        if p < 1:
            raise ValueError("need at least one column")
        if n <= p:
            raise ValueError("need more samples than columns")
        self.n = n
        self.p = p
        self.fixed_sigma = fixed_sigma
        self.gram = theta.T @ theta
        self.xty = theta.T @ y
        self.yty = float(y @ y)
        self.tau, self.s_y = prior_scales(theta, y)

        coef, _, _, _ = np.linalg.lstsq(theta, y, rcond=None)
        rss = max(self._rss(coef), 0.0)
        if fixed_sigma is not None:
            if fixed_sigma <= 0.0:
                raise ValueError("fixed_sigma must be positive")
            sigma_hat = float(fixed_sigma)
        else:
            sigma_hat = float(np.sqrt(rss / (n - p)))
            sigma_hat = max(sigma_hat, _SIGMA_FLOOR)
        self.sigma_hat = sigma_hat
        self.phi_hat = float(np.log(sigma_hat))
        self.s_phi = 1.0 / np.sqrt(2.0 * n)

        precision = self.gram / sigma_hat**2 + np.diag(1.0 / self.tau**2)
        chol = np.linalg.cholesky(precision)
        # F = L^{-T} so that F F^T equals the inverse of the precision.
        self.f_mat = np.linalg.solve(chol.T, np.eye(p))
        self.center = np.linalg.solve(
            chol.T, np.linalg.solve(chol, self.xty / sigma_hat**2)
        )
        self.dim = p if fixed_sigma is not None else p + 1

    def _rss(self, beta: np.ndarray) -> float:
        return self.yty - 2.0 * float(beta @ self.xty) + float(beta @ self.gram @ beta)

    def _unpack(self, q: np.ndarray) -> tuple[np.ndarray, float]:
        beta = self.center + self.f_mat @ q[: self.p]
        if self.fixed_sigma is not None:
            return beta, float(self.fixed_sigma)
        # Clamped so a leapfrog excursion to extreme log-sigma yields a
        # huge-but-finite energy (a rejected divergence) instead of 0/0 or
        # a float overflow.
        with np.errstate(over="ignore"):
            sigma = float(np.exp(self.phi_hat + self.s_phi * q[self.p]))
        return beta, min(max(sigma, _SIGMA_FLOOR), _SIGMA_CEILING)

    def beta_draws(self, q_draws: np.ndarray) -> np.ndarray:
        return self.center + q_draws[:, : self.p] @ self.f_mat.T

    def sigma_draws(self, q_draws: np.ndarray) -> np.ndarray:
        if self.fixed_sigma is not None:
            return np.full(q_draws.shape[0], float(self.fixed_sigma))
        return np.exp(self.phi_hat + self.s_phi * q_draws[:, self.p])

    def logp(self, q: np.ndarray) -> float:
        beta, sigma = self._unpack(q)
        rss = max(self._rss(beta), 0.0)
        val = -0.5 * rss / (sigma * sigma) - 0.5 * float(np.sum((beta / self.tau) ** 2))
        if self.fixed_sigma is None:
            phi = self.phi_hat + self.s_phi * q[self.p]
            # -n*phi from the likelihood normalization, -sigma/s_y from the
            # exponential prior, +phi from the log-sigma Jacobian.
            val += -self.n * phi - sigma / self.s_y + phi
        return float(val)

    def grad(self, q: np.ndarray) -> np.ndarray:
        beta, sigma = self._unpack(q)
        resid_proj = self.xty - self.gram @ beta
        g_beta = resid_proj / (sigma * sigma) - beta / self.tau**2
        out = np.empty(self.dim)
        out[: self.p] = self.f_mat.T @ g_beta
        if self.fixed_sigma is None:
            rss = max(self._rss(beta), 0.0)
            out[self.p] = self.s_phi * (
                -self.n + rss / (sigma * sigma) - sigma / self.s_y + 1.0
            )
        return out


def _leapfrog(
    post: _Posterior, q: np.ndarray, r: np.ndarray, eps: float, steps: int
) -> tuple[np.ndarray, np.ndarray]:
    """Run `steps` leapfrog updates of the Hamiltonian flow.

    Numerical overflow along an unstable trajectory is expected: the caller
    rejects such proposals as divergences, so warnings are suppressed here.
    """
    q = q.copy()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        r = r + 0.5 * eps * post.grad(q)
        for _ in range(steps - 1):
            q = q + eps * r
            r = r + eps * post.grad(q)
        q = q + eps * r
        r = r + 0.5 * eps * post.grad(q)
    return q, r


def _energy(post: _Posterior, q: np.ndarray, r: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return -post.logp(q) + 0.5 * float(r @ r)


def _accept_prob(energy_old: float, energy_new: float) -> float:
    delta = energy_new - energy_old
    if not np.isfinite(delta):
        return 0.0
    return float(min(1.0, np.exp(-delta)))


def _initial_step(post: _Posterior, q: np.ndarray, rng: np.random.Generator) -> float:
    """Double or halve the step size until one leapfrog step accepts near 1/2."""
    eps = 1.0
    r = rng.standard_normal(post.dim)
    e0 = _energy(post, q, r)
    q1, r1 = _leapfrog(post, q, r, eps, 1)
    prob = _accept_prob(e0, _energy(post, q1, r1))
    direction = 1.0 if prob > 0.5 else -1.0
    for _ in range(100):
        eps *= 2.0**direction
        q1, r1 = _leapfrog(post, q, r, eps, 1)
        prob = _accept_prob(e0, _energy(post, q1, r1))
        if direction > 0 and prob <= 0.5:
            break
        if direction < 0 and prob >= 0.5:
            break
    return eps


def _run_chain(
    post: _Posterior, cfg: BayesConfig, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """One adaptive chain; returns post-warmup positions and divergence count."""
    kept = cfg.iters - cfg.warmup
    q = np.zeros(post.dim)
    eps = _initial_step(post, q, rng)
    mu = np.log(10.0 * eps)
    log_eps_bar = 0.0
    h_bar = 0.0

    draws = np.empty((kept, post.dim))
    divergences = 0
    for it in range(1, cfg.iters + 1):
        r = rng.standard_normal(post.dim)
        energy_old = _energy(post, q, r)
        steps = int(rng.integers(1, _L_MAX + 1))
        q_new, r_new = _leapfrog(post, q, r, eps, steps)
        energy_new = _energy(post, q_new, r_new)
        delta = energy_new - energy_old
        divergent = (not np.isfinite(delta)) or delta > _DIVERGENCE_ENERGY
        alpha = 0.0 if divergent else _accept_prob(energy_old, energy_new)
        if not divergent and rng.random() < alpha:
            q = q_new

        if it <= cfg.warmup:
            frac = 1.0 / (it + _DUAL_T0)
            h_bar = (1.0 - frac) * h_bar + frac * (cfg.target_accept - alpha)
            log_eps = mu - np.sqrt(it) / _DUAL_GAMMA * h_bar
            weight = it**-_DUAL_KAPPA
            log_eps_bar = weight * log_eps + (1.0 - weight) * log_eps_bar
            eps = float(np.exp(log_eps))
            if it == cfg.warmup:
                eps = float(np.exp(log_eps_bar))
        else:
            if divergent:
                divergences += 1
            draws[it - cfg.warmup - 1] = q
    return draws, divergences


def hmc_sample(
    trimmed: CandidateLibrary | np.ndarray,
    y: np.ndarray,
    cfg: BayesConfig,
    fixed_sigma: float | None = None,
) -> np.ndarray:
    """Sample the coefficient-and-noise posterior for a trimmed design.

    Returns an array of shape (chains, iters - warmup, p + 1) whose last
    column is sigma (constant when `fixed_sigma` is given).  Raises
    DivergenceError when more than 10% of post-warmup trajectories diverge
    (energy error beyond 1000), which signals an ill-conditioned design.
    """
    theta = trimmed.theta if isinstance(trimmed, CandidateLibrary) else np.asarray(trimmed)
    post = _Posterior(theta, np.asarray(y, dtype=float), fixed_sigma=fixed_sigma)
    kept = cfg.iters - cfg.warmup
    out = np.empty((cfg.chains, kept, post.p + 1))
    total_divergent = 0
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    for c, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        q_draws, divergences = _run_chain(post, cfg, rng)
        total_divergent += divergences
        out[c, :, : post.p] = post.beta_draws(q_draws)
        out[c, :, post.p] = post.sigma_draws(q_draws)
    rate = total_divergent / float(cfg.chains * kept)
    if rate > _MAX_DIVERGENCE_RATE:
        raise DivergenceError(
            f"{rate:.1%} of post-warmup trajectories diverged; "
            "the trimmed design is too ill-conditioned for stable inference"
        )
    return out


def _split_rhat(column: np.ndarray) -> float:
    """Split-chain potential scale reduction for one (chains, S) column."""
    chains, s = column.shape
    half = s // 2
    if half < 2:
        return np.nan
    seqs = np.concatenate([column[:, :half], column[:, s - half:]], axis=0)
    within = seqs.var(axis=1, ddof=1).mean()
    between = seqs.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else np.inf
    var_plus = (half - 1) / half * within + between
    return float(np.sqrt(var_plus / within))


def effective_sample_size(x: np.ndarray) -> float:
    """Autocorrelation-adjusted sample size of chain draws.

    Accepts a (chains, S) array or a single flat chain.  Uses the combined
    within/between variance estimate and truncates the autocorrelation sum
    at the first negative paired term, keeping the pair sums nonincreasing.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, s = x.shape
    if s < 4:
        return float(m * s)
    within = x.var(axis=1, ddof=1).mean()
    if within == 0.0:
        return float(m * s)
    var_plus = (s - 1) / s * within
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)

    centered = x - x.mean(axis=1, keepdims=True)
    nfft = int(2 ** np.ceil(np.log2(2 * s)))
    spectra = np.abs(np.fft.rfft(centered, nfft, axis=1)) ** 2
    autocov = np.fft.irfft(spectra, nfft, axis=1)[:, :s].real / s
    rho = 1.0 - (within - autocov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    tau = 0.0
    prev_pair = np.inf
    for k in range(0, s - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0.0:
            break
        pair = min(pair, prev_pair)
        prev_pair = pair
        tau += 2.0 * pair
    tau = max(tau - 1.0, 1.0 / (m * s))
    return float(min(m * s, m * s / tau))


def mcse_mean(x: np.ndarray) -> float:
    """Monte-Carlo standard error of the mean of chain draws."""
    flat = np.asarray(x, dtype=float).ravel()
    sd = float(flat.std(ddof=1))
    if sd == 0.0:
        return 0.0
    return sd / np.sqrt(effective_sample_size(x))


def summarize(draws: np.ndarray, cfg: BayesConfig) -> PosteriorSummary:
    """Reduce chain draws to means, intervals, split R-hat and retention."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 3:
        raise ValueError("draws must have shape (chains, kept, k + 1)")
    chains, _, width = draws.shape
    if chains < 2:
        raise ValueError("need at least two chains to assess convergence")
    k = width - 1
    flat = draws.reshape(-1, width)
    lo_q = (1.0 - cfg.ci_level) / 2.0
    hi_q = 1.0 - lo_q

    mean = flat[:, :k].mean(axis=0)
    sd = flat[:, :k].std(axis=0, ddof=1)
    ci_lo = np.quantile(flat[:, :k], lo_q, axis=0)
    ci_hi = np.quantile(flat[:, :k], hi_q, axis=0)
    rhat = np.array([_split_rhat(draws[:, :, j]) for j in range(width)])
    excludes_zero = (ci_lo > 0.0) | (ci_hi < 0.0)
    mean_inside = (mean >= ci_lo) & (mean <= ci_hi)
    retained = excludes_zero & mean_inside
    finite = rhat[np.isfinite(rhat)]
    converged = bool(finite.size == rhat.size and np.all(finite < _RHAT_LIMIT))
    return PosteriorSummary(
        mean=mean,
        sd=sd,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        rhat=rhat,
        retained=retained,
        sigma_mean=float(flat[:, k].mean()),
        draws=flat,
        converged=converged,
    )


def select_terms(
    summary: PosteriorSummary, trimmed: CandidateLibrary
) -> EquationModel:
    """Keep the credible terms of one equation; empty models are flagged."""
    names = [term.name for term in trimmed.terms]
    if len(names) != summary.mean.size:
        raise ValueError("summary and library disagree on the term count")
    idx = np.flatnonzero(summary.retained)
    return EquationModel(
        terms=tuple(names[i] for i in idx),
        coefficients=summary.mean[idx].copy(),
        ci_lower=summary.ci_lo[idx].copy(),
        ci_upper=summary.ci_hi[idx].copy(),
        empty=idx.size == 0,
    )


def dump_draws(path: str, draws: np.ndarray, names: list[str]) -> None:
    """Write chain draws as CSV with columns chain, iter, beta_*, sigma."""
    draws = np.asarray(draws, dtype=float)
    chains, kept, width = draws.shape
    if width != len(names) + 1:
        raise ValueError("names must cover every coefficient column")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iter"] + [f"beta_{n}" for n in names] + ["sigma"])
        for c in range(chains):
            for it in range(kept):
                writer.writerow([c, it] + [repr(v) for v in draws[c, it]])
