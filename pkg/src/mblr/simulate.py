"""Synthetic trial generation and the simulation studies.

Three harnesses are provided: a type-I error study on null scenarios, an
aggregation-reversal scenario in which pooling trials flips the sign of
the treatment effect, and a borrowing study contrasting joint and
single-issue fits on a rare outcome.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .data import CovariateSchema, SafetyDataset, single_issue_dataset
from .errors import DataError, MblrError, NumericalError, UsageError
from .fitting import METHODS, FitOutput, dataset_fingerprint, fit_dataset
from .mcmc import McmcConfig
from .model import ModelSpec, PriorConfig, _eta, _expit, initial_parameters, param_layout
from .report import shrinkage_table
from .summary import Z90
from .util import parallel_map, read_json

SCENARIOS = ("null_small", "default_synthetic", "borrowing_rare", "simpson_default")

FAILURE_BUDGET = 0.10


def z_critical(level: float) -> float:
    """Two-sided normal critical value for a given test level."""
    if not 0.0 < level < 1.0:
        raise DataError("test level must be in (0, 1)")
    if abs(level - 0.10) < 1e-12:
        return Z90
    return float(NormalDist().inv_cdf(1.0 - level / 2.0))


@dataclass(frozen=True)
class SimSpec:
    """Data-generating description for one synthetic scenario.

    ``truth`` maps parameter names (as produced by the layout for this
    schema and variant) to their generating values; anything unnamed is
    zero. ``arm_sizes`` holds (control, treated) counts per trial.
    """

    schema: CovariateSchema
    variant: str
    trial_ids: tuple[str, ...]
    arm_sizes: tuple[tuple[int, int], ...]
    level_probs: tuple[tuple[float, ...], ...]
    truth: dict
    prior: PriorConfig = PriorConfig()
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "trial_ids", tuple(str(t) for t in self.trial_ids))
        object.__setattr__(
            self, "arm_sizes", tuple((int(c), int(t)) for c, t in self.arm_sizes)
        )
        object.__setattr__(
            self, "level_probs", tuple(tuple(float(p) for p in row) for row in self.level_probs)
        )
        if self.variant not in ("pooled", "meta_analytic"):
            raise DataError(f"unknown variant {self.variant!r}")
        if len(self.trial_ids) != len(self.arm_sizes):
            raise DataError("arm_sizes must give one (control, treated) pair per trial")
        if len(set(self.trial_ids)) != len(self.trial_ids):
            raise DataError("trial ids must be unique")
        for c, t in self.arm_sizes:
            if c < 0 or t < 0 or c + t < 1:
                raise DataError("arm sizes must be nonnegative with at least one record")
        if len(self.level_probs) != len(self.schema.covariates):
            raise DataError("level_probs must give one distribution per covariate")
        for cov, probs in zip(self.schema.covariates, self.level_probs):
            if len(probs) != len(cov.levels):
                raise DataError(f"level probabilities for {cov.name!r} do not match its levels")
            if any(p < 0.0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                raise DataError(f"level probabilities for {cov.name!r} must sum to 1")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            variant=self.variant,
            n_issues=self.schema.n_issues,
            n_trials=len(self.trial_ids),
            covariate_levels=self.schema.covariate_levels,
            prior=self.prior,
            issue_labels=self.schema.issues,
            trial_labels=self.trial_ids,
            column_labels=self.schema.column_names,
        )

    def to_dict(self) -> dict:
        return {
            "kind": "simulation",
            "name": self.name,
            "schema": self.schema.to_dict(),
            "variant": self.variant,
            "trial_ids": list(self.trial_ids),
            "arm_sizes": [list(pair) for pair in self.arm_sizes],
            "level_probs": [list(row) for row in self.level_probs],
            "truth": dict(self.truth),
            "prior": self.prior.to_dict(),
        }


def sim_spec_from_dict(payload: dict) -> SimSpec:
    try:
        return SimSpec(
            schema=CovariateSchema.from_dict(payload["schema"]),
            variant=payload["variant"],
            trial_ids=tuple(payload["trial_ids"]),
            arm_sizes=tuple(tuple(pair) for pair in payload["arm_sizes"]),
            level_probs=tuple(tuple(row) for row in payload["level_probs"]),
            truth=dict(payload["truth"]),
            prior=PriorConfig(**payload.get("prior", {})),
            name=payload.get("name", ""),
        )
    except KeyError as exc:
        raise DataError(f"scenario is missing field {exc.args[0]!r}") from None


def generate_dataset(sim: SimSpec, seed=0) -> SafetyDataset:
    """Draw one dataset: covariate levels first, then one outcome block."""
    layout = param_layout(sim.model_spec())
    theta = initial_parameters(layout)
    for name in sorted(sim.truth):
        theta.set(name, float(sim.truth[name]))

    trial_parts, treat_parts = [], []
    for t, (nc, nt) in enumerate(sim.arm_sizes):
        trial_parts.append(np.full(nc + nt, t, dtype=np.int64))
        treat_parts.append(np.concatenate([np.zeros(nc, np.int64), np.ones(nt, np.int64)]))
    trial_index = np.concatenate(trial_parts)
    treatment = np.concatenate(treat_parts)
    n = trial_index.size

    rng = np.random.default_rng(seed)
    levels = np.zeros((n, len(sim.schema.covariates)), dtype=np.int64)
    for j, probs in enumerate(sim.level_probs):
        levels[:, j] = rng.choice(len(probs), size=n, p=np.asarray(probs))

    X = np.zeros((n, layout.n_columns))
    offset = 0
    for j, m in enumerate(layout.covariate_levels):
        X[np.arange(n), offset + levels[:, j]] = 1.0
        offset += m
    eta = _eta(layout, layout.apply_constraint(theta.values), X, treatment.astype(np.float64), trial_index)
    outcomes = (rng.random(eta.shape) < _expit(eta)).astype(np.int64)
    return SafetyDataset(
        schema=sim.schema,
        trial_ids=sim.trial_ids,
        trial_index=trial_index,
        treatment=treatment,
        levels=levels,
        outcomes=outcomes,
    )


# -- type-I error study -------------------------------------------------


@dataclass(frozen=True)
class Type1Config:
    sim: SimSpec
    methods: tuple[str, ...] = ("laplace",)
    reps: int = 200
    level: float = 0.10
    seed: int = 0
    target_block: str = "treat_effect"
    mcmc: McmcConfig | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise DataError("need at least one method")
        for m in self.methods:
            if m not in METHODS:
                raise DataError(f"unknown method {m!r}")
        if self.reps < 1:
            raise DataError("reps must be positive")
        if not 0.0 < self.level < 1.0:
            raise DataError("test level must be in (0, 1)")
        if self.seed < 0:
            raise DataError("seed must be nonnegative")


@dataclass(eq=False)
class Type1Report:
    """Rejection rates of a null treatment effect, paired across methods."""

    level: float
    z_crit: float
    reps: int
    completed: int
    target_block: str
    per_method: dict
    paired: dict
    failures: list

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "z_crit": self.z_crit,
            "reps": self.reps,
            "completed": self.completed,
            "target_block": self.target_block,
            "per_method": self.per_method,
            "paired": self.paired,
            "failures": self.failures,
        }


def _decisions(output: FitOutput, method: str, block: str, level: float) -> list[bool]:
    layout = output.model.layout
    sl = layout.sl(block)
    if method == "mcmc":
        draws = output.fit.draws.reshape(-1, layout.size)
        out = []
        for i in range(sl.start, sl.stop):
            lo, hi = np.quantile(draws[:, i], [level / 2.0, 1.0 - level / 2.0])
            out.append(bool(lo > 0.0 or hi < 0.0))
        return out
    crit = z_critical(level)
    return [bool(abs(output.summary.z[i]) > crit) for i in range(sl.start, sl.stop)]


def _type1_rep(payload):
    config, rep = payload
    try:
        data = generate_dataset(config.sim, np.random.SeedSequence((config.seed, rep)))
        decisions = {}
        for method in config.methods:
            mcmc = None
            if method == "mcmc":
                mcmc = config.mcmc or McmcConfig()
                chain_seed = int(np.random.SeedSequence((config.seed, rep, 1)).generate_state(1)[0])
                mcmc = dataclasses.replace(mcmc, seed=chain_seed)
            fit = fit_dataset(data, config.sim.variant, method=method, prior=config.sim.prior, mcmc=mcmc)
            decisions[method] = _decisions(fit, method, config.target_block, config.level)
        return "ok", decisions
    except (MblrError, np.linalg.LinAlgError) as exc:
        return "fail", f"{type(exc).__name__}: {exc}"


_TREATMENT_LOCATION_BLOCKS = (
    "treat_effect",
    "trial_treat_effect",
    "treat_cov_effect",
    "treat_mean",
    "treat_cov_mean",
)


def run_type1(config: Type1Config) -> Type1Report:
    """Estimate rejection rates under a null scenario.

    Replications are paired: every method sees the same generated data.
    Failed replications are dropped for all methods; more than 10%
    failures abort the study.
    """
    for name, val in config.sim.truth.items():
        if name.split("[")[0] in _TREATMENT_LOCATION_BLOCKS and float(val) != 0.0:
            raise DataError(
                f"rejection rates are only calibrated against a null scenario, "
                f"but the generating truth sets {name}={val}"
            )
    results = parallel_map(_type1_rep, [(config, r) for r in range(config.reps)])
    failures = [
        {"rep": r, "message": msg}
        for r, (status, msg) in enumerate(results)
        if status == "fail"
    ]
    completed = [res for status, res in results if status == "ok"]
    if len(failures) > FAILURE_BUDGET * config.reps:
        raise NumericalError(
            f"{len(failures)} of {config.reps} replications failed; aborting the study"
        )
    n_done = len(completed)
    if n_done == 0:
        raise NumericalError("no replication completed")
    per_method = {}
    rates = {}
    for method in config.methods:
        flat = [d for res in completed for d in res[method]]
        rejections = int(sum(flat))
        rate = rejections / len(flat)
        rates[method] = rate
        per_method[method] = {
            "rate": rate,
            "rejections": rejections,
            "decisions": len(flat),
            "mc_se": math.sqrt(rate * (1.0 - rate) / n_done),
        }
    paired = {}
    for i, a in enumerate(config.methods):
        for b in config.methods[i + 1 :]:
            paired[f"{a}_minus_{b}"] = rates[a] - rates[b]
    return Type1Report(
        level=config.level,
        z_crit=z_critical(config.level),
        reps=config.reps,
        completed=n_done,
        target_block=config.target_block,
        per_method=per_method,
        paired=paired,
        failures=failures,
    )


# -- aggregation reversal ------------------------------------------------


@dataclass(frozen=True)
class SimpsonSpec:
    """Two or more trials whose pooled treatment contrast flips sign.

    Each trial applies the same within-trial treatment effect on the log
    odds scale, but control rates and treated fractions vary so that the
    trial-collapsed contrast points the other way.
    """

    control_rates: tuple[float, ...] = (0.05, 0.30)
    treated_fractions: tuple[float, ...] = (0.9, 0.1)
    within_log_or: float = 0.4
    trial_size: int = 4000
    prior: PriorConfig = PriorConfig()

    def __post_init__(self) -> None:
        object.__setattr__(self, "control_rates", tuple(float(r) for r in self.control_rates))
        object.__setattr__(
            self, "treated_fractions", tuple(float(f) for f in self.treated_fractions)
        )
        if len(self.control_rates) < 2:
            raise DataError("need at least two trials")
        if len(self.control_rates) != len(self.treated_fractions):
            raise DataError("control_rates and treated_fractions must have equal length")
        if any(not 0.0 < r < 1.0 for r in self.control_rates):
            raise DataError("control rates must be in (0, 1)")
        if any(not 0.0 < f < 1.0 for f in self.treated_fractions):
            raise DataError("treated fractions must be in (0, 1)")
        if self.within_log_or == 0.0:
            raise DataError("the within-trial effect must be nonzero")
        if self.trial_size < 10:
            raise DataError("trials are too small to be informative")

    @property
    def n_trials(self) -> int:
        return len(self.control_rates)

    def arm_sizes(self) -> tuple[tuple[int, int], ...]:
        out = []
        for frac in self.treated_fractions:
            nt = round(frac * self.trial_size)
            nc = self.trial_size - nt
            if nc < 1 or nt < 1:
                raise DataError("an arm is empty; adjust treated fractions or trial size")
            out.append((nc, nt))
        return tuple(out)

    def treated_rates(self) -> tuple[float, ...]:
        return tuple(
            _logistic(_logit(r) + self.within_log_or) for r in self.control_rates
        )

    def to_dict(self) -> dict:
        return {
            "kind": "simpson",
            "control_rates": list(self.control_rates),
            "treated_fractions": list(self.treated_fractions),
            "within_log_or": self.within_log_or,
            "trial_size": self.trial_size,
            "prior": self.prior.to_dict(),
        }


def simpson_spec_from_dict(payload: dict) -> SimpsonSpec:
    return SimpsonSpec(
        control_rates=tuple(payload.get("control_rates", (0.05, 0.30))),
        treated_fractions=tuple(payload.get("treated_fractions", (0.9, 0.1))),
        within_log_or=float(payload.get("within_log_or", 0.4)),
        trial_size=int(payload.get("trial_size", 4000)),
        prior=PriorConfig(**payload.get("prior", {})),
    )


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def analytic_pooled_log_or(spec: SimpsonSpec) -> float:
    """Log odds ratio after collapsing the trials, at expected counts."""
    sizes = spec.arm_sizes()
    treated = spec.treated_rates()
    nc = sum(s[0] for s in sizes)
    nt = sum(s[1] for s in sizes)
    pc = sum(s[0] * r for s, r in zip(sizes, spec.control_rates)) / nc
    pt = sum(s[1] * r for s, r in zip(sizes, treated)) / nt
    return _logit(pt) - _logit(pc)


def simpson_manifest(spec: SimpsonSpec) -> dict:
    pooled = analytic_pooled_log_or(spec)
    return {
        "control_rates": list(spec.control_rates),
        "treated_rates": list(spec.treated_rates()),
        "treated_fractions": list(spec.treated_fractions),
        "arm_sizes": [list(p) for p in spec.arm_sizes()],
        "trial_size": spec.trial_size,
        "within_log_or": spec.within_log_or,
        "analytic_pooled_log_or": pooled,
        "sign_reversed": (pooled < 0.0) != (spec.within_log_or < 0.0),
    }


def generate_simpson(spec: SimpsonSpec, seed=0):
    """Generate one reversal dataset; returns (dataset, manifest)."""
    manifest = simpson_manifest(spec)
    if not manifest["sign_reversed"]:
        raise DataError(
            "scenario does not reverse sign when pooled; adjust rates or fractions"
        )
    schema = CovariateSchema(covariates=(), issues=("event",))
    rng = np.random.default_rng(seed)
    trial_parts, treat_parts, prob_parts = [], [], []
    treated = spec.treated_rates()
    for t, (nc, nt) in enumerate(spec.arm_sizes()):
        trial_parts.append(np.full(nc + nt, t, dtype=np.int64))
        treat_parts.append(np.concatenate([np.zeros(nc, np.int64), np.ones(nt, np.int64)]))
        prob_parts.append(
            np.concatenate([np.full(nc, spec.control_rates[t]), np.full(nt, treated[t])])
        )
    trial_index = np.concatenate(trial_parts)
    treatment = np.concatenate(treat_parts)
    probs = np.concatenate(prob_parts)
    outcomes = (rng.random(probs.size) < probs).astype(np.int64)[:, None]
    dataset = SafetyDataset(
        schema=schema,
        trial_ids=tuple(str(t + 1) for t in range(spec.n_trials)),
        trial_index=trial_index,
        treatment=treatment,
        levels=np.zeros((probs.size, 0), dtype=np.int64),
        outcomes=outcomes,
    )
    manifest = dict(manifest)
    manifest["fingerprint"] = dataset_fingerprint(dataset)
    return dataset, manifest


@dataclass(eq=False)
class SimpsonReport:
    """Sign behavior of pooled versus meta-analytic fits per replication."""

    reps: int
    completed: int
    successes: int
    rate: float
    manifest: dict
    rows: list
    failures: list

    def to_dict(self) -> dict:
        return {
            "reps": self.reps,
            "completed": self.completed,
            "successes": self.successes,
            "rate": self.rate,
            "manifest": self.manifest,
            "rows": self.rows,
            "failures": self.failures,
        }


def _simpson_rep(payload):
    spec, seed, rep, method = payload
    try:
        data, _ = generate_simpson(spec, np.random.SeedSequence((seed, rep)))
        pooled = fit_dataset(data, "pooled", method=method, prior=spec.prior)
        ma = fit_dataset(data, "meta_analytic", method=method, prior=spec.prior)
        pooled_row = pooled.summary.row("treat_effect[event]")
        ma_row = ma.summary.row("treat_effect[event]")
        return "ok", {
            "pooled_mean": pooled_row["mean"],
            "pooled_z": pooled_row["z"],
            "ma_mean": ma_row["mean"],
            "ma_z": ma_row["z"],
        }
    except (MblrError, np.linalg.LinAlgError) as exc:
        return "fail", f"{type(exc).__name__}: {exc}"


def run_simpson(spec: SimpsonSpec, reps: int = 100, seed: int = 0, method: str = "laplace") -> SimpsonReport:
    """Check that the pooled fit flips sign while the meta-analytic one
    recovers the within-trial direction."""
    results = parallel_map(_simpson_rep, [(spec, seed, r, method) for r in range(reps)])
    failures = [
        {"rep": r, "message": msg} for r, (status, msg) in enumerate(results) if status == "fail"
    ]
    rows = [res for status, res in results if status == "ok"]
    if len(failures) > FAILURE_BUDGET * reps:
        raise NumericalError(f"{len(failures)} of {reps} replications failed; aborting the study")
    if not rows:
        raise NumericalError("no replication completed")
    sign = 1.0 if spec.within_log_or > 0 else -1.0
    successes = sum(
        1 for row in rows if sign * row["pooled_mean"] < 0.0 and sign * row["ma_mean"] > 0.0
    )
    return SimpsonReport(
        reps=reps,
        completed=len(rows),
        successes=successes,
        rate=successes / len(rows),
        manifest=simpson_manifest(spec),
        rows=rows,
        failures=failures,
    )


# -- borrowing study ------------------------------------------------------


@dataclass(frozen=True)
class BorrowingConfig:
    """Joint versus single-issue fits on one focal (usually rare) issue."""

    sim: SimSpec
    focus_issue: str
    reps: int = 100
    seed: int = 0
    method: str = "laplace"

    def __post_init__(self) -> None:
        if self.focus_issue not in self.sim.schema.issues:
            raise DataError(f"unknown focus issue {self.focus_issue!r}")
        if self.method not in METHODS:
            raise DataError(f"unknown method {self.method!r}")
        if self.reps < 1:
            raise DataError("reps must be positive")


@dataclass(eq=False)
class BorrowingReport:
    reps: int
    completed: int
    successes: int
    rate: float
    focus_issue: str
    shrinkage: list
    example_table: dict
    failures: list

    def to_dict(self) -> dict:
        return {
            "reps": self.reps,
            "completed": self.completed,
            "successes": self.successes,
            "rate": self.rate,
            "focus_issue": self.focus_issue,
            "shrinkage": self.shrinkage,
            "example_table": self.example_table,
            "failures": self.failures,
        }


def _borrowing_rep(payload):
    config, rep = payload
    try:
        data = generate_dataset(config.sim, np.random.SeedSequence((config.seed, rep)))
        joint = fit_dataset(data, config.sim.variant, method=config.method, prior=config.sim.prior)
        independent = {}
        for issue in config.sim.schema.issues:
            sub = single_issue_dataset(data, issue)
            independent[issue] = fit_dataset(
                sub, config.sim.variant, method=config.method, prior=config.sim.prior
            ).summary
        table = shrinkage_table(independent, joint.summary)
        return "ok", table
    except (MblrError, np.linalg.LinAlgError) as exc:
        return "fail", f"{type(exc).__name__}: {exc}"


def run_borrowing(config: BorrowingConfig) -> BorrowingReport:
    """Measure how much the joint fit pulls the focal issue's treatment
    effect toward the other issues' evidence."""
    results = parallel_map(_borrowing_rep, [(config, r) for r in range(config.reps)])
    failures = [
        {"rep": r, "message": msg} for r, (status, msg) in enumerate(results) if status == "fail"
    ]
    tables = [res for status, res in results if status == "ok"]
    if len(failures) > FAILURE_BUDGET * config.reps:
        raise NumericalError(
            f"{len(failures)} of {config.reps} replications failed; aborting the study"
        )
    if not tables:
        raise NumericalError("no replication completed")
    shrinkage = [table.row(config.focus_issue)["shrinkage"] for table in tables]
    successes = sum(1 for s in shrinkage if s > 0.0)
    return BorrowingReport(
        reps=config.reps,
        completed=len(tables),
        successes=successes,
        rate=successes / len(tables),
        focus_issue=config.focus_issue,
        shrinkage=shrinkage,
        example_table=tables[0].to_dict(),
        failures=failures,
    )


# -- scenario registry ----------------------------------------------------


def load_scenario(name_or_path) -> dict:
    """Load a packaged scenario by name, or any scenario JSON by path."""
    text_path = Path(str(name_or_path))
    if text_path.suffix == ".json" or text_path.exists():
        if not text_path.exists():
            raise UsageError(f"scenario file {name_or_path} does not exist")
        return read_json(text_path)
    name = str(name_or_path)
    if name in SCENARIOS:
        text = resources.files("mblr").joinpath(f"scenarios/{name}.json").read_text()
        return json.loads(text)
    raise UsageError(f"unknown scenario {name!r}; packaged scenarios: {', '.join(SCENARIOS)}")


def load_sim_spec(name_or_path) -> SimSpec:
    payload = load_scenario(name_or_path)
    if payload.get("kind") != "simulation":
        raise UsageError(f"scenario {name_or_path} is not a simulation scenario")
    return sim_spec_from_dict(payload)


def load_simpson_spec(name_or_path) -> SimpsonSpec:
    payload = load_scenario(name_or_path)
    if payload.get("kind") != "simpson":
        raise UsageError(f"scenario {name_or_path} is not a reversal scenario")
    return simpson_spec_from_dict(payload)
