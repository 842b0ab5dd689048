"""scikit-learn style estimator facade over the fitting pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import SafetyDataset, build_design
from .errors import DataError, UsageError
from .fitting import fit_dataset
from .laplace import default_grid
from .mcmc import McmcConfig
from .model import PriorConfig, _eta, _expit, model_spec_for, param_layout
from .summary import PosteriorSummary


class MblrEstimator(BaseEstimator):
    """Hierarchical multi-issue safety model with a fit/predict interface.

    All constructor arguments are stored verbatim (scikit-learn
    convention); ``fit`` accepts a SafetyDataset and exposes the posterior
    summary as ``summary_``. ``predict_proba`` returns per-issue event
    probabilities at the posterior mean.
    """

    def __init__(
        self,
        variant: str = "pooled",
        method: str = "laplace",
        d: float = 3.0,
        location_prior: str = "normal",
        location_prior_sd: float = 10.0,
        sum_to_zero: bool = True,
        chains: int = 4,
        warmup: int = 2000,
        samples: int = 4000,
        thin: int = 1,
        seed: int = 0,
        grid_points: int = 5,
    ):
        self.variant = variant
        self.method = method
        self.d = d
        self.location_prior = location_prior
        self.location_prior_sd = location_prior_sd
        self.sum_to_zero = sum_to_zero
        self.chains = chains
        self.warmup = warmup
        self.samples = samples
        self.thin = thin
        self.seed = seed
        self.grid_points = grid_points

    def _prior(self) -> PriorConfig:
        return PriorConfig(
            d=self.d,
            location_prior=self.location_prior,
            location_prior_sd=self.location_prior_sd,
            sum_to_zero=self.sum_to_zero,
        )

    def fit(self, X: SafetyDataset, y=None) -> "MblrEstimator":
        """Fit the model to a SafetyDataset (y is ignored)."""
        if not isinstance(X, SafetyDataset):
            raise UsageError("fit expects a SafetyDataset")
        prior = self._prior()
        mcmc = None
        grid = None
        if self.method == "mcmc":
            mcmc = McmcConfig(
                chains=self.chains,
                warmup=self.warmup,
                samples=self.samples,
                seed=self.seed,
                thin=self.thin,
            )
        if self.method == "grid":
            spec = model_spec_for(X, self.variant, prior)
            grid = default_grid(param_layout(spec), self.grid_points)
        output = fit_dataset(X, self.variant, method=self.method, prior=prior, mcmc=mcmc, grid=grid)
        self.output_ = output
        self.model_ = output.model
        self.layout_ = output.model.layout
        self.summary_ = output.summary
        self.result_ = output.fit
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "summary_"):
            raise UsageError("estimator has not been fitted")

    def predict_proba(self, X: SafetyDataset) -> np.ndarray:
        """Event probabilities for each record and issue, at the posterior mean."""
        self._check_fitted()
        if not isinstance(X, SafetyDataset):
            raise UsageError("predict_proba expects a SafetyDataset")
        layout = self.layout_
        if X.schema.covariate_levels != layout.covariate_levels:
            raise DataError("dataset covariates do not match the fitted model")
        design = build_design(X)
        if layout.variant == "meta_analytic":
            positions = []
            for trial in X.trial_ids:
                if trial not in layout.trial_labels:
                    raise DataError(f"unknown trial id {trial!r} for the fitted model")
                positions.append(layout.trial_labels.index(trial))
            trial_index = np.asarray(positions, dtype=np.int64)[design.trial_index]
        else:
            trial_index = design.trial_index
        mean = np.asarray(self.summary_.mean, dtype=np.float64)
        eta = _eta(layout, mean, design.X, design.treatment, trial_index)
        return _expit(eta)

    def predict(self, X: SafetyDataset) -> np.ndarray:
        """Alias for predict_proba; the model predicts event probabilities."""
        return self.predict_proba(X)

    def summary(self) -> PosteriorSummary:
        self._check_fitted()
        return self.summary_
