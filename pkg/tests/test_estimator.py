"""The scikit-learn style estimator facade."""

import numpy as np
import pytest
from sklearn.base import clone

from mblr.errors import DataError, UsageError
from mblr.estimator import MblrEstimator

from conftest import make_dataset


def test_get_set_params_round_trip():
    est = MblrEstimator(variant="meta_analytic", d=2.5, seed=7)
    params = est.get_params()
    assert params["variant"] == "meta_analytic"
    assert params["d"] == 2.5
    est.set_params(method="grid", grid_points=3)
    assert est.method == "grid" and est.grid_points == 3


def test_clone_keeps_params_drops_state(small_pooled_dataset):
    est = MblrEstimator(variant="pooled").fit(small_pooled_dataset)
    fresh = clone(est)
    assert fresh.get_params() == est.get_params()
    assert not hasattr(fresh, "summary_")


def test_fit_exposes_state(small_pooled_dataset):
    est = MblrEstimator(variant="pooled").fit(small_pooled_dataset)
    assert est.summary_ is est.summary()
    assert est.summary_.method == "laplace"
    assert est.layout_.variant == "pooled"
    assert est.output_.summary is est.summary_


def test_fit_rejects_non_dataset():
    with pytest.raises(UsageError):
        MblrEstimator().fit(np.zeros((4, 2)))


def test_unfitted_usage_errors(small_pooled_dataset):
    est = MblrEstimator()
    with pytest.raises(UsageError):
        est.summary()
    with pytest.raises(UsageError):
        est.predict_proba(small_pooled_dataset)


def test_predict_proba_shape_and_range(small_ma_dataset):
    est = MblrEstimator(variant="meta_analytic").fit(small_ma_dataset)
    probs = est.predict_proba(small_ma_dataset)
    assert probs.shape == (small_ma_dataset.n_records, small_ma_dataset.schema.n_issues)
    assert np.all((probs > 0.0) & (probs < 1.0))
    np.testing.assert_array_equal(est.predict(small_ma_dataset), probs)


def test_predict_proba_rejects_mismatched_covariates(small_pooled_dataset):
    est = MblrEstimator(variant="pooled").fit(small_pooled_dataset)
    other = make_dataset(seed=50, trials=("t1",), covariates=(("age", ("a", "b", "c")),))
    with pytest.raises(DataError):
        est.predict_proba(other)


def test_predict_proba_rejects_unknown_trial(small_ma_dataset):
    est = MblrEstimator(variant="meta_analytic").fit(small_ma_dataset)
    other = make_dataset(seed=51, trials=("t9",))
    with pytest.raises(DataError):
        est.predict_proba(other)


def test_grid_method_runs_on_pooled():
    ds = make_dataset(seed=52, trials=("t1",), covariates=(), arm=(50, 50))
    est = MblrEstimator(variant="pooled", method="grid", grid_points=2).fit(ds)
    assert est.summary_.method == "grid"
    assert "grid_weights" in est.summary_.metadata


def test_mcmc_method_honors_seed():
    ds = make_dataset(seed=53, trials=("t1",), covariates=(), arm=(40, 40))
    est = MblrEstimator(
        variant="pooled", method="mcmc", chains=2, warmup=150, samples=150, seed=4
    ).fit(ds)
    assert est.summary_.metadata["config"]["seed"] == 4
    assert est.result_.draws.shape[0] == 2
