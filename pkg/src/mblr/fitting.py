"""High-level fitting entry points shared by the CLI and the harnesses."""

from __future__ import annotations

from dataclasses import dataclass

from .data import SafetyDataset, build_design
from .errors import UsageError
from .laplace import GridFit, GridSpec, LaplaceFit, MapOptions, fit_grid, fit_laplace
from .mcmc import McmcConfig, McmcFit, fit_mcmc
from .model import Model, PriorConfig, model_spec_for
from .summary import PosteriorSummary
from .util import fingerprint

METHODS = ("laplace", "grid", "mcmc")


def dataset_fingerprint(dataset: SafetyDataset) -> str:
    """Stable digest of schema, trial structure, and every record."""
    return fingerprint(
        {
            "schema": dataset.schema.to_dict(),
            "trial_ids": list(dataset.trial_ids),
            "trial_index": dataset.trial_index.tolist(),
            "treatment": dataset.treatment.tolist(),
            "levels": dataset.levels.tolist(),
            "outcomes": dataset.outcomes.tolist(),
        }
    )


@dataclass(eq=False)
class FitOutput:
    """A fitted model: the summary plus the method-specific fit object."""

    summary: PosteriorSummary
    model: Model
    fit: LaplaceFit | GridFit | McmcFit


def fit_dataset(
    dataset: SafetyDataset,
    variant: str,
    method: str = "laplace",
    prior: PriorConfig | None = None,
    mcmc: McmcConfig | None = None,
    grid: GridSpec | None = None,
    fixed: dict[str, float] | None = None,
) -> FitOutput:
    """Fit one dataset with one method and return its posterior summary."""
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {METHODS}")
    prior = prior if prior is not None else PriorConfig()
    spec = model_spec_for(dataset, variant, prior)
    design = build_design(dataset)
    model = Model(spec, design)
    config = {
        "data": dataset_fingerprint(dataset),
        "variant": variant,
        "method": method,
        "prior": prior.to_dict(),
        "fixed": dict(fixed) if fixed else {},
    }
    if method == "mcmc":
        mcmc = mcmc or McmcConfig()
        config["mcmc"] = mcmc.to_dict()
    if method == "grid" and grid is not None:
        config["grid"] = {k: list(v) for k, v in grid.points.items()}
    fp = fingerprint(config)
    if method == "laplace":
        fit = fit_laplace(model, MapOptions(fixed=dict(fixed) if fixed else {}), fingerprint=fp)
    elif method == "grid":
        if fixed:
            raise UsageError("grid integration does not support pinned coordinates")
        fit = fit_grid(model, grid, fingerprint=fp)
    else:
        fit = fit_mcmc(model, mcmc, fixed=fixed, fingerprint=fp)
    return FitOutput(summary=fit.summary, model=model, fit=fit)
