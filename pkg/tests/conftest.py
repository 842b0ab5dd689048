"""Shared fixtures: small deterministic datasets and model instances."""

from __future__ import annotations

import numpy as np
import pytest

from mblr.data import Covariate, CovariateSchema, SafetyDataset, build_design
from mblr.model import Model, PriorConfig, model_spec_for
from mblr.simulate import SimSpec, generate_dataset


def make_dataset(
    seed=0,
    n_issues=2,
    trials=("t1", "t2"),
    arm=(40, 40),
    covariates=(("sex", ("f", "m")),),
    truth=None,
):
    """A small synthetic dataset with mild, fixed generating effects."""
    issues = tuple(f"issue{k}" for k in range(n_issues))
    schema = CovariateSchema(
        covariates=tuple(Covariate(n, lv) for n, lv in covariates),
        issues=issues,
    )
    if truth is None:
        rng = np.random.default_rng(seed + 1000)
        truth = {}
        for k, issue in enumerate(issues):
            base = f"[{issue}]"
            if len(trials) > 1:
                for t in trials:
                    truth[f"trial_intercept{base}[{t}]"] = -1.2 + 0.2 * rng.standard_normal()
                    truth[f"trial_treat_effect{base}[{t}]"] = 0.3 * rng.standard_normal()
            else:
                truth[f"intercept{base}"] = -1.2 + 0.2 * rng.standard_normal()
                truth[f"treat_effect{base}"] = 0.3 * rng.standard_normal()
    variant = "meta_analytic" if len(trials) > 1 else "pooled"
    sim = SimSpec(
        schema=schema,
        variant=variant,
        trial_ids=tuple(trials),
        arm_sizes=tuple(arm for _ in trials),
        level_probs=tuple(
            tuple(1.0 / len(lv) for _ in lv) for _, lv in covariates
        ),
        truth=truth,
        name="fixture",
    )
    return generate_dataset(sim, seed=seed)


def make_model(dataset, variant, prior=None):
    return Model(model_spec_for(dataset, variant, prior), build_design(dataset))


@pytest.fixture(scope="session")
def small_ma_dataset():
    return make_dataset(seed=3)


@pytest.fixture(scope="session")
def small_pooled_dataset():
    return make_dataset(seed=4, trials=("t1",), arm=(60, 60))


@pytest.fixture(scope="session")
def plain_dataset():
    """Single trial, no covariates: the smallest well-posed pooled input."""
    return make_dataset(seed=5, trials=("t1",), arm=(80, 80), covariates=())


def random_instance(seed):
    """A random small model instance for derivative checks.

    Varies the variant, the number of issues, trials, covariates, and
    levels within the documented small-instance envelope.
    """
    rng = np.random.default_rng(seed)
    variant = "pooled" if rng.random() < 0.5 else "meta_analytic"
    n_issues = int(rng.integers(1, 4))
    n_trials = 1 if variant == "pooled" else int(rng.integers(2, 4))
    n_cov = int(rng.integers(0, 3))
    covariates = []
    total_cols = 0
    for j in range(n_cov):
        m = int(rng.integers(2, 4))
        if total_cols + m > 5:
            break
        total_cols += m
        covariates.append((f"c{j}", tuple(f"l{v}" for v in range(m))))
    per_arm = int(rng.integers(15, max(16, 200 // (2 * n_trials))))
    ds = make_dataset(
        seed=int(rng.integers(1 << 30)),
        n_issues=n_issues,
        trials=tuple(f"t{t}" for t in range(n_trials)),
        arm=(per_arm, per_arm),
        covariates=tuple(covariates),
        truth={},
    )
    prior = PriorConfig(
        d=3.0,
        location_prior="normal" if rng.random() < 0.7 else "flat",
        sum_to_zero=bool(rng.random() < 0.7),
    )
    model = make_model(ds, variant, prior)
    return model
