"""Parameter layout, priors, transforms, and analytic derivatives."""

import math

import numpy as np
import pytest

from mblr.errors import DataError
from mblr.model import (
    ModelSpec,
    PriorConfig,
    Transform,
    from_unconstrained,
    initial_parameters,
    model_spec_for,
    param_layout,
    predict_prob,
    to_unconstrained,
)

from conftest import make_dataset, make_model, random_instance
from oracles import fd_gradient, fd_jacobian, normal_logpdf, rel_err


def layout_for(variant, n_issues=2, n_trials=2, levels=(2,), **prior_kw):
    spec = ModelSpec(
        variant=variant,
        n_issues=n_issues,
        n_trials=n_trials if variant == "meta_analytic" else 1,
        covariate_levels=tuple(levels),
        prior=PriorConfig(**prior_kw),
    )
    return param_layout(spec)


def test_pooled_layout_blocks():
    layout = layout_for("pooled", n_issues=2, levels=(2, 3))
    assert layout.sl("intercept") == slice(0, 2)
    assert layout.sl("cov_effect") == slice(2, 12)
    assert layout.sl("treat_effect") == slice(12, 14)
    assert layout.sl("treat_cov_effect") == slice(14, 24)
    # hyper-means then the four shared sd scalars
    assert layout.names[layout.sl("cov_mean").start] == "cov_mean[0]"
    assert [layout.names[i] for i in layout.sd_indices] == [
        "sd_cov_effect",
        "sd_treat_effect",
        "sd_treat_cov_effect",
        "sd_mean",
    ]


def test_meta_analytic_layout_blocks():
    layout = layout_for("meta_analytic", n_issues=2, n_trials=3, levels=(2,))
    assert layout.sl("trial_intercept") == slice(0, 6)
    assert layout.sl("trial_treat_effect") == slice(6, 12)
    assert layout.names[layout.sl("intercept_mean").start] == "intercept_mean[0]"
    sd_names = [layout.names[i] for i in layout.sd_indices]
    assert "sd_trial_intercept[0]" in sd_names
    assert "sd_trial_treat[1]" in sd_names


def test_sum_to_zero_reconstruction():
    layout = layout_for("pooled", levels=(3,))
    targets = [t for t, _ in layout.reconstructions]
    # one reconstructed slot per covariate in each hyper-mean block
    assert len(targets) == 2
    assert not layout.free_mask[targets].any()
    theta = initial_parameters(layout)
    theta.set("cov_mean[0]", 0.4)
    theta.set("cov_mean[1]", -0.1)
    values = layout.apply_constraint(theta.values)
    assert values[layout.index("cov_mean[2]")] == pytest.approx(-0.3)


def test_sum_to_zero_off_keeps_all_free():
    layout = layout_for("pooled", levels=(3,), sum_to_zero=False)
    assert layout.reconstructions == []
    assert layout.free_mask.all()


def test_prior_config_validation():
    with pytest.raises(DataError):
        PriorConfig(d=-1.0)
    with pytest.raises(DataError):
        PriorConfig(location_prior="cauchy")


def test_log_prior_matches_direct_enumeration():
    """[DERIVED] total prior equals a by-hand sum of normal log densities."""
    ds = make_dataset(seed=21, trials=("t1", "t2"), covariates=(("sex", ("f", "m")),))
    prior = PriorConfig(sum_to_zero=False)
    model = make_model(ds, "meta_analytic", prior)
    layout = model.layout
    rng = np.random.default_rng(0)
    theta = initial_parameters(layout)
    values = theta.values
    values[~layout.is_sd] = 0.4 * rng.standard_normal((~layout.is_sd).sum())
    values[layout.sd_indices] = rng.uniform(0.3, 2.5, layout.sd_indices.size)

    def v(name):
        return values[layout.index(name)]

    expected = 0.0
    issues, trials = layout.issue_labels, layout.trial_labels
    cols = layout.column_labels
    for i in issues:
        for c in cols:
            expected += normal_logpdf(v(f"cov_effect[{i}][{c}]"), v(f"cov_mean[{c}]"), v("sd_cov_effect"))
            expected += normal_logpdf(
                v(f"treat_cov_effect[{i}][{c}]"), v(f"treat_cov_mean[{c}]"), v("sd_treat_cov_effect")
            )
        expected += normal_logpdf(v(f"treat_effect[{i}]"), v("treat_mean"), v("sd_treat_effect"))
        for t in trials:
            expected += normal_logpdf(
                v(f"trial_intercept[{i}][{t}]"), v(f"intercept_mean[{i}]"), v(f"sd_trial_intercept[{i}]")
            )
            expected += normal_logpdf(
                v(f"trial_treat_effect[{i}][{t}]"), v(f"treat_effect[{i}]"), v(f"sd_trial_treat[{i}]")
            )
    for c in cols:
        expected += normal_logpdf(v(f"cov_mean[{c}]"), 0.0, v("sd_mean"))
        expected += normal_logpdf(v(f"treat_cov_mean[{c}]"), 0.0, v("sd_mean"))
    for i in issues:
        expected += normal_logpdf(v(f"intercept_mean[{i}]"), 0.0, prior.location_prior_sd)
    expected += normal_logpdf(v("treat_mean"), 0.0, prior.location_prior_sd)

    assert model.log_prior(theta) == pytest.approx(expected, rel=1e-12)


def test_log_prior_outside_sd_support_is_minus_inf():
    ds = make_dataset(seed=21)
    model = make_model(ds, "meta_analytic")
    theta = initial_parameters(model.layout)
    theta.set("sd_mean", model.layout.prior.d + 0.5)
    assert model.log_prior(theta) == -math.inf


def test_log_likelihood_matches_direct_bernoulli():
    """[DERIVED] likelihood equals the record-by-record Bernoulli sum."""
    ds = make_dataset(seed=22, trials=("t1",), covariates=(("sex", ("f", "m")),))
    model = make_model(ds, "pooled")
    layout = model.layout
    rng = np.random.default_rng(1)
    theta = initial_parameters(layout)
    theta.values[~layout.is_sd] = 0.3 * rng.standard_normal((~layout.is_sd).sum())
    eta = model.linear_predictor(theta)
    p = 1.0 / (1.0 + np.exp(-eta))
    expected = float(np.sum(model.Y * np.log(p) + (1.0 - model.Y) * np.log1p(-p)))
    assert model.log_likelihood(theta) == pytest.approx(expected, rel=1e-10)


def test_linear_predictor_uses_trial_terms():
    ds = make_dataset(seed=23, trials=("t1", "t2"), covariates=())
    model = make_model(ds, "meta_analytic")
    layout = model.layout
    theta = initial_parameters(layout)
    theta.set("trial_intercept[issue0][t1]", -1.0)
    theta.set("trial_intercept[issue0][t2]", 2.0)
    eta = model.linear_predictor(theta)
    rows_t1 = model.trial_index == 0
    controls = model.T == 0.0
    np.testing.assert_allclose(eta[rows_t1 & controls, 0], -1.0)
    np.testing.assert_allclose(eta[~rows_t1 & controls, 0], 2.0)


def test_transform_round_trip():
    ds = make_dataset(seed=24)
    model = make_model(ds, "meta_analytic")
    layout = model.layout
    rng = np.random.default_rng(2)
    theta = initial_parameters(layout)
    theta.values[~layout.is_sd] = rng.standard_normal((~layout.is_sd).sum())
    theta.values[layout.sd_indices] = rng.uniform(0.2, 2.8, layout.sd_indices.size)
    u = to_unconstrained(theta)
    back = from_unconstrained(u)
    np.testing.assert_allclose(
        back.values, layout.apply_constraint(theta.values), rtol=0, atol=1e-12
    )


def test_transform_rejects_out_of_range_sd():
    ds = make_dataset(seed=24)
    model = make_model(ds, "pooled")
    theta = initial_parameters(model.layout)
    theta.set("sd_mean", 0.0)
    with pytest.raises(ValueError):
        to_unconstrained(theta)


def test_objective_gradient_matches_finite_differences():
    """[DERIVED] analytic gradient against central differences."""
    model = random_instance(101)
    tr = Transform(model.layout, {})
    rng = np.random.default_rng(7)
    u = 0.3 * rng.standard_normal(tr.n_free)
    g = model.objective_grad(tr, u)
    g_fd = fd_gradient(lambda x: model.objective(tr, x), u, h=1e-5)
    assert rel_err(g, g_fd) < 1e-6


def test_objective_hessian_matches_finite_differences():
    """[DERIVED] analytic Hessian against differenced analytic gradients."""
    model = random_instance(102)
    tr = Transform(model.layout, {})
    rng = np.random.default_rng(8)
    u = 0.3 * rng.standard_normal(tr.n_free)
    H = model.objective_hess(tr, u)
    H_fd = fd_jacobian(lambda x: model.objective_grad(tr, x), u, h=1e-5)
    assert rel_err(H, 0.5 * (H_fd + H_fd.T)) < 1e-4


def test_transform_fixed_pins_coordinates():
    ds = make_dataset(seed=25)
    model = make_model(ds, "meta_analytic")
    tr = Transform(model.layout, {"sd_mean": 1.5, "treat_mean": 0.25})
    u = np.zeros(tr.n_free)
    values = tr.theta(u)
    assert values[model.layout.index("sd_mean")] == 1.5
    assert values[model.layout.index("treat_mean")] == 0.25
    free_names = {model.layout.names[i] for i in tr.free_idx}
    assert "sd_mean" not in free_names and "treat_mean" not in free_names


def test_realized_sds_matches_rms_deviation():
    ds = make_dataset(seed=26, trials=("t1",), covariates=(("sex", ("f", "m")),))
    model = make_model(ds, "pooled", PriorConfig(sum_to_zero=False))
    layout = model.layout
    rng = np.random.default_rng(3)
    values = initial_parameters(layout).values.copy()
    values[~layout.is_sd] = rng.standard_normal((~layout.is_sd).sum())
    spreads = model.realized_sds(values)
    sl = layout.sl("treat_effect")
    members = values[sl.start : sl.stop]
    mean = values[layout.index("treat_mean")]
    expected = math.sqrt(float(np.mean((members - mean) ** 2)))
    assert spreads[int(layout.index("sd_treat_effect"))] == pytest.approx(expected)


def test_predict_prob_known_values():
    layout = layout_for("pooled", n_issues=1, levels=(2,), sum_to_zero=False)
    theta = initial_parameters(layout)
    theta.set("intercept[0]", -1.0)
    theta.set("cov_effect[0][1]", 0.5)
    theta.set("treat_effect[0]", 0.8)
    control = predict_prob(theta, levels=(1,), treatment=0)
    treated = predict_prob(theta, levels=(1,), treatment=1)
    assert control[0] == pytest.approx(1.0 / (1.0 + math.exp(0.5)))
    assert treated[0] == pytest.approx(1.0 / (1.0 + math.exp(-0.3)))


def test_model_spec_for_rejects_unknown_variant():
    ds = make_dataset(seed=27)
    with pytest.raises(DataError):
        model_spec_for(ds, "mystery")
