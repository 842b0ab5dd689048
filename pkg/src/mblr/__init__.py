"""Hierarchical Bayesian logistic models for multi-trial safety data.

The package fits per-issue treatment effects jointly across safety issues
and trials, either pooling trials (``pooled``) or modeling trial-level
effects around per-issue means (``meta_analytic``). Three posterior
engines share one parameterization: a Laplace approximation around the
posterior mode, grid integration over the variance components, and an
adaptive random-walk sampler.
"""

__version__ = "0.1.0"

from .data import (
    Covariate,
    CovariateSchema,
    DesignMatrix,
    SafetyDataset,
    ValidationReport,
    build_design,
    load_dataset,
    load_schema,
    save_dataset,
    save_schema,
    single_issue_dataset,
    validate_dataset,
)
from .errors import DataError, MblrError, NumericalError, UsageError
from .estimator import MblrEstimator
from .fitting import FitOutput, dataset_fingerprint, fit_dataset
from .laplace import (
    GridFit,
    GridSpec,
    LaplaceFit,
    MapOptions,
    MapResult,
    default_grid,
    find_map,
    fit_grid,
    fit_laplace,
    laplace_covariance,
)
from .mcmc import (
    McmcConfig,
    McmcDiagnostics,
    McmcFit,
    diagnose,
    effective_sample_size,
    fit_mcmc,
    sample_density,
    split_rhat,
)
from .model import (
    Model,
    ModelSpec,
    ParameterLayout,
    ParameterSet,
    PriorConfig,
    Transform,
    from_unconstrained,
    grad_log_posterior,
    hessian_log_posterior,
    initial_parameters,
    log_jacobian,
    log_likelihood,
    log_posterior,
    log_prior,
    model_spec_for,
    param_layout,
    predict_prob,
    to_unconstrained,
)
from .report import (
    ComparisonReport,
    ShrinkageTable,
    compare_estimates,
    emit_report,
    shrinkage_table,
    write_scatter_svg,
)
from .simulate import (
    BorrowingConfig,
    BorrowingReport,
    SimpsonReport,
    SimpsonSpec,
    SimSpec,
    Type1Config,
    Type1Report,
    analytic_pooled_log_or,
    generate_dataset,
    generate_simpson,
    load_scenario,
    load_sim_spec,
    load_simpson_spec,
    run_borrowing,
    run_simpson,
    run_type1,
    z_critical,
)
from .summary import (
    Z90,
    PosteriorSummary,
    load_summary_csv,
    load_summary_json,
    make_summary,
    save_summary_csv,
    save_summary_json,
)

__all__ = [name for name in dir() if not name.startswith("_")]
