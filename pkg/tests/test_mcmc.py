"""Sampler kernels, convergence diagnostics, and posterior sampling."""

import math

import numpy as np
import pytest

from mblr.errors import DataError
from mblr.mcmc import (
    McmcConfig,
    _CachedTarget,
    _recenter_moves,
    _SimpleTarget,
    effective_sample_size,
    fit_mcmc,
    sample_density,
    split_rhat,
)
from mblr.model import Transform

from conftest import make_dataset, make_model

TINY = McmcConfig(chains=2, warmup=200, samples=300, seed=0)


def test_config_validation():
    with pytest.raises(DataError):
        McmcConfig(chains=1)
    with pytest.raises(DataError):
        McmcConfig(warmup=10)
    with pytest.raises(DataError):
        McmcConfig(scheme="gibbs")
    with pytest.raises(DataError):
        McmcConfig(thin=0)


def test_sample_density_recovers_gaussian_moments():
    """[DERIVED] the adaptive kernel reproduces known normal moments."""
    mu = np.array([1.5, -0.5])
    sig = np.array([0.8, 2.0])

    def logpdf(x):
        return float(-0.5 * np.sum(((x - mu) / sig) ** 2))

    cfg = McmcConfig(chains=2, warmup=500, samples=4000, seed=3)
    draws = sample_density(logpdf, np.zeros(2), cfg, scales=sig)
    flat = draws.reshape(-1, 2)
    np.testing.assert_allclose(flat.mean(axis=0), mu, atol=0.12)
    np.testing.assert_allclose(flat.std(axis=0), sig, rtol=0.10)


def target_pair(seed=40):
    ds = make_dataset(seed=seed, trials=("t1", "t2"), covariates=(("sex", ("f", "m")),))
    model = make_model(ds, "meta_analytic")
    tr = Transform(model.layout, {})
    rng = np.random.default_rng(seed)
    u0 = 0.2 * rng.standard_normal(tr.n_free)
    cached = _CachedTarget(model, tr)
    full = _SimpleTarget(model, tr)
    cached.set_state(u0.copy())
    full.set_state(u0.copy())
    return model, tr, cached, full, rng


def test_cached_target_matches_full_objective():
    """[DERIVED] incremental proposal deltas equal full objective deltas."""
    model, tr, cached, full, rng = target_pair()
    assert cached.value() == pytest.approx(full.value(), abs=1e-10)
    for _ in range(200):
        i = int(rng.integers(tr.n_free))
        step = float(0.5 * rng.standard_normal())
        da = cached.propose(i, step)
        db = full.propose(i, step)
        assert da == pytest.approx(db, abs=1e-9)
        if rng.random() < 0.5:
            cached.accept_staged()
            full.accept_staged()
        else:
            cached.reject_staged()
            full.reject_staged()
    assert cached.value() == pytest.approx(full.value(), abs=1e-8)
    np.testing.assert_allclose(cached.current_theta(), full.current_theta(), atol=1e-12)


def test_recenter_shift_matches_full_objective():
    """[DERIVED] exchange-move deltas equal full objective deltas."""
    model, tr, cached, full, rng = target_pair(seed=41)
    moves = _recenter_moves(model.layout, tr)
    assert moves
    for _ in range(60):
        mv = moves[int(rng.integers(len(moves)))]
        delta = float(0.4 * rng.standard_normal())
        fams = cached.shift_fams(mv)
        da = cached.shift(mv, fams, delta)
        db = full.shift(mv, fams, delta)
        assert da == pytest.approx(db, abs=1e-9)
        if rng.random() < 0.5:
            cached.accept_staged()
            full.accept_staged()
        else:
            cached.reject_staged()
            full.reject_staged()
        # interleave a scalar proposal to catch stale caches
        i = int(rng.integers(tr.n_free))
        step = float(0.3 * rng.standard_normal())
        cached.propose(i, step)
        full.propose(i, step)
        cached.accept_staged()
        full.accept_staged()
    assert cached.value() == pytest.approx(full.value(), abs=1e-8)


def test_recenter_move_leaves_likelihood_invariant():
    model, tr, cached, full, rng = target_pair(seed=42)
    theta = cached.current_theta().copy()
    eta0 = model.linear_predictor(theta)
    for mv in _recenter_moves(model.layout, tr):
        shifted = theta.copy()
        shifted[mv["coords_up"]] += 0.7
        shifted[mv["coords_down"]] -= 0.7
        eta = model.linear_predictor(shifted)
        np.testing.assert_allclose(eta, eta0, atol=1e-12)


def test_recenter_moves_structure():
    ds = make_dataset(
        seed=43,
        trials=("t1", "t2"),
        covariates=(("sex", ("f", "m")), ("age", ("a", "b", "c"))),
    )
    model = make_model(ds, "meta_analytic")
    tr = Transform(model.layout, {})
    moves = _recenter_moves(model.layout, tr)
    # one move per issue, covariate, and effect kind
    assert len(moves) == 2 * 2 * 2
    labels = {mv["label"] for mv in moves}
    assert labels == {"recenter[cov_effect]", "recenter[treat_cov_effect]"}
    sizes = sorted({mv["coords_up"].size for mv in moves})
    assert sizes == [2, 3]
    assert all(mv["coords_down"].size == 2 for mv in moves)


def test_recenter_moves_empty_without_covariates():
    ds = make_dataset(seed=44, covariates=())
    model = make_model(ds, "meta_analytic")
    assert _recenter_moves(model.layout, Transform(model.layout, {})) == []


def test_propose_saturating_sd_is_rejected_cleanly():
    model, tr, cached, full, rng = target_pair(seed=45)
    sd_pos = int(np.flatnonzero(tr.is_sd_free)[0])
    before = cached.current_theta().copy()
    value = cached.value()
    diff = cached.propose(sd_pos, 800.0)
    assert diff == -math.inf
    cached.reject_staged()
    np.testing.assert_array_equal(cached.current_theta(), before)
    assert cached.value() == value
    # accepting a noop stage must also leave the state untouched
    diff = cached.propose(sd_pos, -800.0)
    assert diff == -math.inf
    cached.accept_staged()
    np.testing.assert_array_equal(cached.current_theta(), before)


def test_split_rhat_flags_disagreeing_chains():
    rng = np.random.default_rng(0)
    mixed = rng.standard_normal((4, 500))
    assert split_rhat(mixed) < 1.02
    shifted = mixed + np.arange(4)[:, None]
    assert split_rhat(shifted) > 1.5


def test_effective_sample_size_detects_autocorrelation():
    rng = np.random.default_rng(1)
    iid = rng.standard_normal((2, 1000))
    assert effective_sample_size(iid) > 1200
    walk = np.cumsum(rng.standard_normal((2, 1000)), axis=1)
    assert effective_sample_size(walk) < 100


def test_fit_mcmc_deterministic(small_pooled_dataset):
    model_a = make_model(small_pooled_dataset, "pooled")
    model_b = make_model(small_pooled_dataset, "pooled")
    fit_a = fit_mcmc(model_a, TINY)
    fit_b = fit_mcmc(model_b, TINY)
    np.testing.assert_array_equal(fit_a.draws, fit_b.draws)
    assert fit_a.accept_rates == fit_b.accept_rates


def test_fit_mcmc_seed_changes_draws(small_pooled_dataset):
    model = make_model(small_pooled_dataset, "pooled")
    fit_a = fit_mcmc(model, TINY)
    fit_b = fit_mcmc(model, McmcConfig(chains=2, warmup=200, samples=300, seed=1))
    assert not np.array_equal(fit_a.draws, fit_b.draws)


def test_fit_mcmc_respects_fixed(small_pooled_dataset):
    model = make_model(small_pooled_dataset, "pooled")
    fit = fit_mcmc(model, TINY, fixed={"treat_mean": 0.2})
    idx = model.layout.index("treat_mean")
    assert np.all(fit.draws[:, :, idx] == 0.2)
    assert fit.summary.row("treat_mean")["mean"] == pytest.approx(0.2)


def test_fit_mcmc_reports_block_and_move_rates(small_ma_dataset):
    model = make_model(small_ma_dataset, "meta_analytic")
    fit = fit_mcmc(model, TINY)
    for rates in fit.accept_rates:
        assert "recenter[cov_effect]" in rates
        assert "trial_intercept" in rates
        assert all(0.0 <= v <= 1.0 for v in rates.values())


def test_fit_mcmc_schemes_roughly_agree(small_pooled_dataset):
    model = make_model(small_pooled_dataset, "pooled")
    cfg_a = McmcConfig(chains=2, warmup=400, samples=800, seed=2, scheme="componentwise")
    cfg_b = McmcConfig(chains=2, warmup=400, samples=800, seed=2, scheme="per-block")
    fit_a = fit_mcmc(model, cfg_a)
    fit_b = fit_mcmc(model, cfg_b)
    name = "treat_effect[issue0]"
    assert fit_a.summary.row(name)["mean"] == pytest.approx(
        fit_b.summary.row(name)["mean"], abs=0.25
    )


def test_fit_mcmc_thinning_shapes(small_pooled_dataset):
    model = make_model(small_pooled_dataset, "pooled")
    cfg = McmcConfig(chains=2, warmup=200, samples=300, seed=0, thin=3)
    fit = fit_mcmc(model, cfg)
    assert fit.draws.shape == (2, 100, model.layout.size)


def test_summary_intervals_are_draw_quantiles(small_pooled_dataset):
    model = make_model(small_pooled_dataset, "pooled")
    fit = fit_mcmc(model, TINY)
    idx = model.layout.index("treat_effect[issue0]")
    flat = fit.draws.reshape(-1, model.layout.size)[:, idx]
    row = fit.summary.row("treat_effect[issue0]")
    assert row["lo90"] == pytest.approx(np.quantile(flat, 0.05))
    assert row["hi90"] == pytest.approx(np.quantile(flat, 0.95))
