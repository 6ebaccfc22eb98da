"""HMC posterior sampling, summaries, and term retention."""

import numpy as np
import pytest

import argoskit.bayes as bayes
from argoskit.bayes import (
    BayesConfig,
    DivergenceError,
    EquationModel,
    PosteriorSummary,
    dump_draws,
    effective_sample_size,
    hmc_sample,
    mcse_mean,
    prior_scales,
    select_terms,
    summarize,
)
from argoskit.bayes import _energy, _leapfrog, _Posterior
from argoskit.library import TermDescriptor, CandidateLibrary

from _oracles import conjugate_posterior


def _design(n, p, seed, beta=None, sigma=1.0):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(n, p)) * np.linspace(1.0, 2.0, p)
    if beta is None:
        beta = rng.normal(size=p)
    y = theta @ beta + rng.normal(0.0, sigma, size=n)
    return theta, y, beta


def _small_cfg(seed=0, chains=2, iters=900, warmup=400):
    return BayesConfig(chains=chains, iters=iters, warmup=warmup, seed=seed)


# ---------------------------------------------------------------------------
# configuration and prior scales


def test_config_defaults():
    cfg = BayesConfig()
    assert (cfg.chains, cfg.iters, cfg.warmup) == (4, 2000, 1000)
    assert cfg.ci_level == pytest.approx(0.90)
    assert cfg.target_accept == pytest.approx(0.8)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"chains": 0},
        {"warmup": 2000},
        {"warmup": 0},
        {"ci_level": 0.0},
        {"ci_level": 1.0},
        {"target_accept": 0.0},
        {"target_accept": 1.0},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        BayesConfig(**kwargs)


def test_prior_scales_closed_form():
    rng = np.random.default_rng(0)
    theta = np.column_stack([np.ones(50), 3.0 * rng.normal(size=50)])
    y = 2.0 * rng.normal(size=50)
    tau, s_y = prior_scales(theta, y)
    assert s_y == pytest.approx(float(np.std(y, ddof=1)))
    assert tau[0] == pytest.approx(2.5 * s_y)
    assert tau[1] == pytest.approx(2.5 * s_y / np.std(theta[:, 1], ddof=1))


def test_prior_scales_constant_response():
    theta = np.random.default_rng(1).normal(size=(30, 2))
    tau, s_y = prior_scales(theta, np.full(30, 4.0))
    assert s_y == 1.0
    assert np.all(tau == 2.5 / np.std(theta, axis=0, ddof=1))


# ---------------------------------------------------------------------------
# gradient and integrator


def test_log_posterior_gradient_matches_finite_differences():
    theta, y, _ = _design(n=120, p=4, seed=2)
    post = _Posterior(theta, y)
    rng = np.random.default_rng(3)
    h = 1e-5
    for _ in range(20):
        q = rng.normal(size=post.dim)
        grad = post.grad(q)
        fd = np.empty_like(grad)
        for i in range(post.dim):
            e = np.zeros(post.dim)
            e[i] = h
            fd[i] = (post.logp(q + e) - post.logp(q - e)) / (2.0 * h)
        rel = np.abs(grad - fd) / np.maximum(np.abs(grad), 1.0)
        assert np.max(rel) < 1e-6


def test_leapfrog_energy_error_scales_quadratically():
    theta, y, _ = _design(n=200, p=3, seed=4)
    post = _Posterior(theta, y, fixed_sigma=1.0)
    rng = np.random.default_rng(5)
    q0 = rng.normal(size=post.dim)
    r0 = rng.normal(size=post.dim)
    h0 = _energy(post, q0, r0)

    def max_drift(eps, steps):
        worst = 0.0
        q, r = q0, r0
        for _ in range(steps):
            q, r = _leapfrog(post, q, r, eps, 1)
            worst = max(worst, abs(_energy(post, q, r) - h0))
        return worst

    coarse = max_drift(0.05, 64)
    fine = max_drift(0.025, 128)
    assert coarse / fine == pytest.approx(4.0, rel=0.15)


def test_leapfrog_is_time_reversible():
    theta, y, _ = _design(n=150, p=3, seed=6)
    post = _Posterior(theta, y)
    rng = np.random.default_rng(7)
    q0 = rng.normal(size=post.dim)
    r0 = rng.normal(size=post.dim)
    q1, r1 = _leapfrog(post, q0, r0, 0.02, 25)
    q2, r2 = _leapfrog(post, q1, -r1, 0.02, 25)
    assert np.allclose(q2, q0, atol=1e-10)
    assert np.allclose(-r2, r0, atol=1e-10)


# ---------------------------------------------------------------------------
# sampling correctness


def test_fixed_sigma_posterior_matches_conjugate_oracle():
    sigma = 0.7
    theta, y, _ = _design(n=400, p=4, seed=8, sigma=sigma)
    tau, _ = prior_scales(theta, y)
    mean, cov = conjugate_posterior(theta, y, tau, sigma)
    draws = hmc_sample(theta, y, _small_cfg(seed=10, iters=1400, warmup=400),
                       fixed_sigma=sigma)
    assert draws.shape == (2, 1000, 5)
    assert np.all(draws[:, :, -1] == sigma)
    for k in range(4):
        col = draws[:, :, k]
        err = abs(float(col.mean()) - mean[k])
        assert err <= 3.0 * mcse_mean(col), f"coefficient {k}"
        assert float(col.std(ddof=1)) == pytest.approx(np.sqrt(cov[k, k]), rel=0.15)


def test_zero_response_gives_symmetric_posterior():
    theta = np.random.default_rng(11).normal(size=(200, 3))
    y = np.zeros(200)
    draws = hmc_sample(theta, y, _small_cfg(seed=12), fixed_sigma=1.0)
    for k in range(3):
        col = draws[:, :, k]
        assert abs(float(col.mean())) <= 3.0 * mcse_mean(col)


def test_standard_normal_target_moments():
    # With a single orthogonal-to-y column and the noise scale chosen so the
    # likelihood and prior precisions sum to one, the coefficient posterior
    # is exactly standard normal.
    rng = np.random.default_rng(13)
    n = 500
    x = rng.normal(size=n)
    x = (x - x.mean()) / x.std(ddof=1)
    y = rng.normal(size=n)
    y -= x * (x @ y) / (x @ x)
    y *= 10.0 / y.std(ddof=1)
    s_y = y.std(ddof=1)
    tau = 2.5 * s_y
    sigma = np.sqrt((x @ x) / (1.0 - 1.0 / tau**2))
    draws = hmc_sample(x[:, None], y, _small_cfg(seed=14, iters=2400, warmup=400),
                       fixed_sigma=float(sigma))
    col = draws[:, :, 0]
    assert abs(float(col.mean())) <= 3.0 * mcse_mean(col)
    sq = col**2
    assert abs(float(sq.mean()) - 1.0) <= 3.0 * mcse_mean(sq)


def test_sampling_is_deterministic_given_seed():
    theta, y, _ = _design(n=150, p=3, seed=15)
    a = hmc_sample(theta, y, _small_cfg(seed=16, iters=300, warmup=100))
    b = hmc_sample(theta, y, _small_cfg(seed=16, iters=300, warmup=100))
    c = hmc_sample(theta, y, _small_cfg(seed=17, iters=300, warmup=100))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_free_sigma_concentrates_near_truth():
    sigma = 0.5
    theta, y, _ = _design(n=500, p=3, seed=18, sigma=sigma)
    draws = hmc_sample(theta, y, _small_cfg(seed=19, iters=1200, warmup=400))
    sig = draws[:, :, -1]
    assert float(sig.mean()) == pytest.approx(sigma, rel=0.15)
    assert np.all(sig > 0.0)


def test_hmc_input_validation():
    theta, y, _ = _design(n=50, p=3, seed=20)
    with pytest.raises(ValueError):
        hmc_sample(theta, y, _small_cfg(), fixed_sigma=0.0)
    with pytest.raises(ValueError):
        hmc_sample(theta[:2], y[:2], _small_cfg())
    with pytest.raises(ValueError):
        hmc_sample(theta, y[:-1], _small_cfg())


def test_divergence_rate_above_threshold_raises(monkeypatch):
    theta, y, _ = _design(n=100, p=2, seed=21)
    kept = 50

    def always_divergent(post, cfg, rng):
        return np.zeros((kept, post.dim)), kept

    monkeypatch.setattr(bayes, "_run_chain", always_divergent)
    with pytest.raises(DivergenceError):
        hmc_sample(theta, y, _small_cfg(iters=100, warmup=50))


# ---------------------------------------------------------------------------
# chain diagnostics


def test_split_rhat_flags_disjoint_chains():
    rng = np.random.default_rng(22)
    draws = np.empty((2, 500, 2))
    draws[0, :, 0] = rng.normal(0.0, 0.1, size=500)
    draws[1, :, 0] = rng.normal(10.0, 0.1, size=500)
    draws[:, :, 1] = rng.normal(size=(2, 500))
    summary = summarize(draws, BayesConfig())
    assert summary.rhat[0] > 1.1
    assert not summary.converged


def test_split_rhat_is_one_for_identical_constant_chains():
    draws = np.full((3, 400, 2), 2.5)
    summary = summarize(draws, BayesConfig())
    assert np.all(summary.rhat == 1.0)
    assert summary.converged


def test_effective_sample_size_iid_draws():
    x = np.random.default_rng(23).normal(size=(4, 1000))
    ess = effective_sample_size(x)
    assert 0.5 * 4000 < ess <= 4000


def test_effective_sample_size_autocorrelated_draws():
    rng = np.random.default_rng(24)
    phi = 0.95
    x = np.empty((2, 4000))
    for c in range(2):
        eps = rng.normal(size=4000)
        x[c, 0] = eps[0]
        for t in range(1, 4000):
            x[c, t] = phi * x[c, t - 1] + np.sqrt(1 - phi**2) * eps[t]
    total = x.size
    ess = effective_sample_size(x)
    assert 10 < ess < 0.15 * total


def test_mcse_mean_tracks_iid_rate():
    x = np.random.default_rng(25).normal(size=(2, 2000))
    expected = x.std(ddof=1) / np.sqrt(x.size)
    assert mcse_mean(x) == pytest.approx(expected, rel=0.5)
    assert mcse_mean(np.full((2, 100), 3.0)) == 0.0


# ---------------------------------------------------------------------------
# summaries and retention


def test_summarize_requires_three_dims_and_two_chains():
    with pytest.raises(ValueError):
        summarize(np.zeros((10, 3)), BayesConfig())
    with pytest.raises(ValueError):
        summarize(np.zeros((1, 10, 3)), BayesConfig())


def test_summarize_degenerate_constant_coefficient():
    draws = np.full((2, 300, 2), 1.0)
    draws[:, :, 0] = 3.0
    summary = summarize(draws, BayesConfig())
    assert summary.mean[0] == pytest.approx(3.0)
    assert summary.sd[0] == 0.0
    assert summary.ci_lo[0] == summary.ci_hi[0] == pytest.approx(3.0)
    assert summary.retained[0]
    assert summary.sigma_mean == pytest.approx(1.0)
    assert summary.draws.shape == (600, 2)


def test_summarize_symmetric_coefficient_not_retained():
    rng = np.random.default_rng(26)
    draws = np.empty((2, 2000, 2))
    draws[:, :, 0] = rng.normal(0.0, 1.0, size=(2, 2000))
    draws[:, :, 1] = 1.0
    summary = summarize(draws, BayesConfig())
    assert not summary.retained[0]
    assert summary.ci_lo[0] < 0.0 < summary.ci_hi[0]


def test_summarize_standard_normal_interval_endpoints():
    rng = np.random.default_rng(27)
    draws = np.empty((2, 2000, 2))
    draws[:, :, 0] = rng.normal(size=(2, 2000))
    draws[:, :, 1] = 0.5
    summary = summarize(draws, BayesConfig(ci_level=0.90))
    assert summary.ci_lo[0] == pytest.approx(-1.6449, abs=0.07)
    assert summary.ci_hi[0] == pytest.approx(1.6449, abs=0.07)


def test_summarize_mean_outside_interval_blocks_retention():
    # A heavy one-sided outlier cloud drags the mean beyond the upper
    # quantile; such a coefficient must not be retained.
    draws = np.empty((2, 1000, 2))
    draws[:, :, 0] = 5.0
    draws[0, :40, 0] = 1e6
    draws[:, :, 1] = 1.0
    summary = summarize(draws, BayesConfig())
    assert summary.ci_lo[0] > 0.0
    assert summary.mean[0] > summary.ci_hi[0]
    assert not summary.retained[0]


def _two_term_library():
    rng = np.random.default_rng(28)
    x = rng.normal(size=(40, 2))
    theta = np.column_stack([x[:, 0], x[:, 1]])
    terms = (TermDescriptor((1, 0)), TermDescriptor((0, 1)))
    return CandidateLibrary(theta=theta, terms=terms,
                            scales=theta.std(axis=0, ddof=1))


def test_select_terms_passthrough():
    lib = _two_term_library()
    summary = PosteriorSummary(
        mean=np.array([2.0, 0.1]),
        sd=np.array([0.1, 0.5]),
        ci_lo=np.array([1.8, -0.7]),
        ci_hi=np.array([2.2, 0.9]),
        rhat=np.array([1.0, 1.0, 1.0]),
        retained=np.array([True, False]),
        sigma_mean=1.0,
        draws=np.zeros((10, 3)),
        converged=True,
    )
    model = select_terms(summary, lib)
    assert model.terms == ("x1",)
    assert model.coefficients == pytest.approx([2.0])
    assert model.ci_lower == pytest.approx([1.8])
    assert model.ci_upper == pytest.approx([2.2])
    assert not model.empty


def test_select_terms_empty_and_mismatch():
    lib = _two_term_library()
    summary = PosteriorSummary(
        mean=np.zeros(2), sd=np.zeros(2), ci_lo=-np.ones(2), ci_hi=np.ones(2),
        rhat=np.ones(3), retained=np.zeros(2, dtype=bool), sigma_mean=1.0,
        draws=np.zeros((10, 3)), converged=True,
    )
    model = select_terms(summary, lib)
    assert model.empty and model.terms == ()

    bad = PosteriorSummary(
        mean=np.zeros(3), sd=np.zeros(3), ci_lo=np.zeros(3), ci_hi=np.zeros(3),
        rhat=np.ones(4), retained=np.zeros(3, dtype=bool), sigma_mean=1.0,
        draws=np.zeros((10, 4)), converged=True,
    )
    with pytest.raises(ValueError):
        select_terms(bad, lib)


def test_dump_draws_round_trip(tmp_path):
    draws = np.random.default_rng(29).normal(size=(2, 5, 3))
    path = tmp_path / "draws.csv"
    dump_draws(str(path), draws, ["x1", "x2"])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "chain,iter,beta_x1,beta_x2,sigma"
    assert len(lines) == 1 + 2 * 5
    first = lines[1].split(",")
    assert int(first[0]) == 0 and int(first[1]) == 0
    assert float(first[2]) == draws[0, 0, 0]

    with pytest.raises(ValueError):
        dump_draws(str(path), draws, ["x1"])


def test_hmc_accepts_candidate_library_input():
    lib = _two_term_library()
    y = lib.theta @ np.array([1.0, -2.0])
    draws = hmc_sample(lib, y, _small_cfg(seed=30, iters=300, warmup=100),
                       fixed_sigma=0.5)
    assert draws.shape == (2, 200, 3)
