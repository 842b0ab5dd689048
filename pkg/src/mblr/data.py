"""Dataset schema, CSV loading, validation, and design-matrix construction.

The on-disk format is a patient-level CSV with columns
``trial, treat, <covariate...>, y_<issue>...`` plus a JSON schema file that
declares the covariates (name and levels) and the safety issues. Covariates
are categorical and expand to one indicator column per level, so a row's
indicator block for each covariate contains exactly one 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .util import read_json, write_json

RESERVED_COLUMNS = ("trial", "treat")
OUTCOME_PREFIX = "y_"


@dataclass(frozen=True)
class Covariate:
    """A categorical covariate with a fixed, ordered set of levels."""

    name: str
    levels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise DataError("covariate name must be non-empty")
        if self.name in RESERVED_COLUMNS or self.name.startswith(OUTCOME_PREFIX):
            raise DataError(f"covariate name {self.name!r} collides with a reserved column")
        if len(self.levels) < 2:
            raise DataError(f"covariate {self.name!r} needs at least 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise DataError(f"covariate {self.name!r} has duplicate levels")


@dataclass(frozen=True)
class CovariateSchema:
    """Declares the covariates and the safety issues of a dataset."""

    covariates: tuple[Covariate, ...]
    issues: tuple[str, ...]

    def __post_init__(self) -> None:
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate names in schema")
        if not self.issues:
            raise DataError("schema declares no issues")
        if len(set(self.issues)) != len(self.issues):
            raise DataError("duplicate issue names in schema")

    @property
    def n_issues(self) -> int:
        return len(self.issues)

    @property
    def n_levels_total(self) -> int:
        """Total indicator columns across covariates."""
        return sum(len(c.levels) for c in self.covariates)

    @property
    def covariate_levels(self) -> tuple[int, ...]:
        return tuple(len(c.levels) for c in self.covariates)

    @property
    def column_names(self) -> tuple[str, ...]:
        """Indicator column names, ``covariate=level`` in schema order."""
        return tuple(f"{c.name}={lv}" for c in self.covariates for lv in c.levels)

    def to_dict(self) -> dict:
        return {
            "covariates": [{"name": c.name, "levels": list(c.levels)} for c in self.covariates],
            "issues": list(self.issues),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CovariateSchema":
        try:
            covs = tuple(
                Covariate(entry["name"], tuple(entry["levels"]))
                for entry in payload.get("covariates", [])
            )
            issues = tuple(payload["issues"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema: {exc}") from exc
        return cls(covs, issues)


@dataclass(frozen=True, eq=False)
class SafetyDataset:
    """Patient-level safety data across one or more trials.

    Arrays are aligned by row: ``trial_index`` holds positions into
    ``trial_ids``, ``levels`` holds per-covariate level indexes, and
    ``outcomes`` holds one 0/1 column per issue.
    """

    schema: CovariateSchema
    trial_ids: tuple[str, ...]
    trial_index: np.ndarray
    treatment: np.ndarray
    levels: np.ndarray
    outcomes: np.ndarray

    @property
    def n_records(self) -> int:
        return int(self.trial_index.shape[0])

    @property
    def n_trials(self) -> int:
        return len(self.trial_ids)

    def equals(self, other: "SafetyDataset") -> bool:
        return (
            self.schema == other.schema
            and self.trial_ids == other.trial_ids
            and np.array_equal(self.trial_index, other.trial_index)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.levels, other.levels)
            and np.array_equal(self.outcomes, other.outcomes)
        )


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Numeric views used by the model: indicators, treatment, outcomes."""

    X: np.ndarray
    treatment: np.ndarray
    trial_index: np.ndarray
    Y: np.ndarray
    column_names: tuple[str, ...]
    n_trials: int

    @property
    def n_records(self) -> int:
        return int(self.X.shape[0])


@dataclass(frozen=True)
class ValidationReport:
    """Structural errors plus analyst-facing warnings and count tables."""

    errors: tuple[str, ...]
    warnings: tuple[str, ...]
    trial_arm_counts: dict
    issue_event_counts: dict

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "errors": list(self.errors),
            "warnings": list(self.warnings),
            "trial_arm_counts": {k: list(v) for k, v in self.trial_arm_counts.items()},
            "issue_event_counts": {k: list(v) for k, v in self.issue_event_counts.items()},
        }


def load_schema(path) -> CovariateSchema:
    """Read a schema JSON file."""
    return CovariateSchema.from_dict(read_json(path))


def save_schema(schema: CovariateSchema, path) -> None:
    write_json(path, schema.to_dict())


def _parse_binary(value: str, column: str, row: int) -> int:
    if value not in ("0", "1"):
        raise DataError(f"row {row}: column {column!r} must be 0 or 1, got {value!r}")
    return int(value)


def load_dataset(data_path, schema) -> SafetyDataset:
    """Load a patient-level CSV against a schema (object or path).

    Errors name the offending data row (1-based, excluding the header).
    """
    if not isinstance(schema, CovariateSchema):
        schema = load_schema(schema)
    expected = list(RESERVED_COLUMNS) + [c.name for c in schema.covariates]
    expected += [OUTCOME_PREFIX + issue for issue in schema.issues]

    with open(data_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty data file") from None
        if header != expected:
            missing = [c for c in expected if c not in header]
            extra = [c for c in header if c not in expected]
            raise DataError(
                "header mismatch: "
                f"missing {missing!r}, unexpected {extra!r}, expected order {expected!r}"
            )
        rows = list(reader)

    if not rows:
        raise DataError("data file has a header but no rows")

    n = len(rows)
    n_cov = len(schema.covariates)
    trial_ids: list[str] = []
    trial_pos: dict[str, int] = {}
    trial_index = np.zeros(n, dtype=np.int64)
    treatment = np.zeros(n, dtype=np.int64)
    levels = np.zeros((n, n_cov), dtype=np.int64)
    outcomes = np.zeros((n, schema.n_issues), dtype=np.int64)

    level_lookup = [{lv: i for i, lv in enumerate(c.levels)} for c in schema.covariates]
    for r, row in enumerate(rows, start=1):
        if len(row) != len(expected):
            raise DataError(f"row {r}: expected {len(expected)} fields, got {len(row)}")
        trial = row[0]
        if trial not in trial_pos:
            trial_pos[trial] = len(trial_ids)
            trial_ids.append(trial)
        trial_index[r - 1] = trial_pos[trial]
        treatment[r - 1] = _parse_binary(row[1], "treat", r)
        for j in range(n_cov):
            value = row[2 + j]
            if value not in level_lookup[j]:
                raise DataError(
                    f"row {r}: unknown level {value!r} for covariate "
                    f"{schema.covariates[j].name!r}"
                )
            levels[r - 1, j] = level_lookup[j][value]
        for k in range(schema.n_issues):
            outcomes[r - 1, k] = _parse_binary(
                row[2 + n_cov + k], OUTCOME_PREFIX + schema.issues[k], r
            )

    return SafetyDataset(
        schema=schema,
        trial_ids=tuple(trial_ids),
        trial_index=trial_index,
        treatment=treatment,
        levels=levels,
        outcomes=outcomes,
    )


def save_dataset(dataset: SafetyDataset, data_path) -> None:
    """Write the CSV form; loading it back yields an identical dataset."""
    schema = dataset.schema
    header = list(RESERVED_COLUMNS) + [c.name for c in schema.covariates]
    header += [OUTCOME_PREFIX + issue for issue in schema.issues]
    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n_records):
            row = [dataset.trial_ids[dataset.trial_index[i]], str(int(dataset.treatment[i]))]
            for j, cov in enumerate(schema.covariates):
                row.append(cov.levels[dataset.levels[i, j]])
            row.extend(str(int(v)) for v in dataset.outcomes[i])
            writer.writerow(row)


def validate_dataset(dataset: SafetyDataset) -> ValidationReport:
    """Check structural invariants and collect analyst warnings.

    Loader-produced datasets pass the structural checks by construction;
    they matter for programmatically built datasets.
    """
    errors: list[str] = []
    warnings: list[str] = []
    schema = dataset.schema
    n = dataset.n_records

    if n == 0:
        errors.append("dataset has no records")
    for name, arr, width in (
        ("trial_index", dataset.trial_index, None),
        ("treatment", dataset.treatment, None),
        ("levels", dataset.levels, len(schema.covariates)),
        ("outcomes", dataset.outcomes, schema.n_issues),
    ):
        if arr.shape[0] != n:
            errors.append(f"{name} has {arr.shape[0]} rows, expected {n}")
        if width is not None and (arr.ndim != 2 or arr.shape[1] != width):
            errors.append(f"{name} has shape {arr.shape}, expected ({n}, {width})")
    if n and not np.isin(dataset.treatment, (0, 1)).all():
        errors.append("treatment contains values outside {0, 1}")
    if n and not np.isin(dataset.outcomes, (0, 1)).all():
        errors.append("outcomes contain values outside {0, 1}")
    if n and (dataset.trial_index.min() < 0 or dataset.trial_index.max() >= dataset.n_trials):
        errors.append("trial_index out of range")
    if n and dataset.levels.size:
        for j, cov in enumerate(schema.covariates):
            col = dataset.levels[:, j]
            if col.min() < 0 or col.max() >= len(cov.levels):
                errors.append(f"level index out of range for covariate {cov.name!r}")

    trial_arm_counts: dict = {}
    issue_event_counts: dict = {}
    if not errors:
        for t, trial in enumerate(dataset.trial_ids):
            mask = dataset.trial_index == t
            treated = int(dataset.treatment[mask].sum())
            control = int(mask.sum()) - treated
            trial_arm_counts[trial] = (control, treated)
            if control == 0 or treated == 0:
                warnings.append(f"trial {trial!r} has a single arm")
        control_mask = dataset.treatment == 0
        for k, issue in enumerate(schema.issues):
            col = dataset.outcomes[:, k]
            counts = (int(col[control_mask].sum()), int(col[~control_mask].sum()))
            issue_event_counts[issue] = counts
            if sum(counts) == 0:
                warnings.append(f"issue {issue!r} has zero events in all arms")

    return ValidationReport(
        errors=tuple(errors),
        warnings=tuple(warnings),
        trial_arm_counts=trial_arm_counts,
        issue_event_counts=issue_event_counts,
    )


def build_design(dataset: SafetyDataset) -> DesignMatrix:
    """Expand covariates to indicators and assemble model inputs.

    Each covariate contributes one column per level; the block for a row
    sums to 1 by construction.
    """
    report = validate_dataset(dataset)
    if not report.ok:
        raise DataError("; ".join(report.errors))
    schema = dataset.schema
    n = dataset.n_records
    X = np.zeros((n, schema.n_levels_total), dtype=np.float64)
    offset = 0
    for j, cov in enumerate(schema.covariates):
        X[np.arange(n), offset + dataset.levels[:, j]] = 1.0
        offset += len(cov.levels)
    return DesignMatrix(
        X=X,
        treatment=dataset.treatment.astype(np.float64),
        trial_index=dataset.trial_index.copy(),
        Y=dataset.outcomes.astype(np.float64),
        column_names=schema.column_names,
        n_trials=dataset.n_trials,
    )


def single_issue_dataset(dataset: SafetyDataset, issue: str) -> SafetyDataset:
    """Restrict the outcome columns to one issue, keeping all rows."""
    if issue not in dataset.schema.issues:
        raise DataError(f"unknown issue {issue!r}")
    k = dataset.schema.issues.index(issue)
    schema = CovariateSchema(dataset.schema.covariates, (issue,))
    return SafetyDataset(
        schema=schema,
        trial_ids=dataset.trial_ids,
        trial_index=dataset.trial_index,
        treatment=dataset.treatment,
        levels=dataset.levels,
        outcomes=dataset.outcomes[:, k : k + 1],
    )
