"""Schema, dataset loading, validation, and design-matrix construction."""

import numpy as np
import pytest

from mblr.data import (
    Covariate,
    CovariateSchema,
    SafetyDataset,
    build_design,
    load_dataset,
    load_schema,
    save_dataset,
    save_schema,
    single_issue_dataset,
    validate_dataset,
)
from mblr.errors import DataError

from conftest import make_dataset


def test_schema_rejects_duplicate_issues():
    with pytest.raises(DataError):
        CovariateSchema(covariates=(), issues=("a", "a"))


def test_schema_rejects_single_level_covariate():
    with pytest.raises(DataError):
        Covariate("sex", ("only",))


def test_schema_rejects_reserved_covariate_name():
    with pytest.raises(DataError):
        Covariate("trial", ("a", "b"))


def test_schema_column_names_order():
    schema = CovariateSchema(
        covariates=(Covariate("sex", ("f", "m")), Covariate("age", ("a", "b", "c"))),
        issues=("x",),
    )
    assert schema.column_names == ("sex=f", "sex=m", "age=a", "age=b", "age=c")
    assert schema.covariate_levels == (2, 3)
    assert schema.n_levels_total == 5


def test_schema_round_trip(tmp_path):
    schema = CovariateSchema(
        covariates=(Covariate("sex", ("f", "m")),), issues=("rash", "fever")
    )
    path = tmp_path / "schema.json"
    save_schema(schema, path)
    assert load_schema(path) == schema


def test_dataset_round_trip(tmp_path):
    ds = make_dataset(seed=10)
    path = tmp_path / "data.csv"
    save_dataset(ds, path)
    loaded = load_dataset(path, ds.schema)
    assert loaded.equals(ds)


def test_load_dataset_rejects_header_mismatch(tmp_path):
    ds = make_dataset(seed=10)
    path = tmp_path / "data.csv"
    save_dataset(ds, path)
    text = path.read_text().splitlines()
    text[0] = text[0].replace("treat", "arm")
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(DataError, match="header mismatch"):
        load_dataset(path, ds.schema)


def test_load_dataset_rejects_bad_binary(tmp_path):
    ds = make_dataset(seed=10)
    path = tmp_path / "data.csv"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    first = lines[1].split(",")
    first[1] = "2"
    lines[1] = ",".join(first)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="row 1"):
        load_dataset(path, ds.schema)


def test_load_dataset_rejects_unknown_level(tmp_path):
    ds = make_dataset(seed=10)
    path = tmp_path / "data.csv"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    first = lines[1].split(",")
    first[2] = "zz"
    lines[1] = ",".join(first)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="unknown level"):
        load_dataset(path, ds.schema)


def test_validate_clean_dataset():
    ds = make_dataset(seed=11)
    report = validate_dataset(ds)
    assert report.ok
    assert set(report.trial_arm_counts) == set(ds.trial_ids)
    counts = report.trial_arm_counts[ds.trial_ids[0]]
    mask = ds.trial_index == 0
    assert counts[1] == int(ds.treatment[mask].sum())
    assert counts[0] + counts[1] == int(mask.sum())


def test_validate_flags_out_of_range_treatment():
    ds = make_dataset(seed=11)
    bad = SafetyDataset(
        schema=ds.schema,
        trial_ids=ds.trial_ids,
        trial_index=ds.trial_index,
        treatment=ds.treatment + 5,
        levels=ds.levels,
        outcomes=ds.outcomes,
    )
    report = validate_dataset(bad)
    assert not report.ok
    assert any("treatment" in e for e in report.errors)


def test_validate_warns_on_zero_event_issue():
    ds = make_dataset(seed=11)
    silent = SafetyDataset(
        schema=ds.schema,
        trial_ids=ds.trial_ids,
        trial_index=ds.trial_index,
        treatment=ds.treatment,
        levels=ds.levels,
        outcomes=np.zeros_like(ds.outcomes),
    )
    report = validate_dataset(silent)
    assert report.ok
    assert any("zero events" in w for w in report.warnings)


def test_build_design_one_hot_blocks_sum_to_one():
    ds = make_dataset(seed=12, covariates=(("sex", ("f", "m")), ("age", ("a", "b", "c"))))
    design = build_design(ds)
    assert design.X.shape == (ds.n_records, 5)
    # each covariate's block carries exactly one indicator per record
    np.testing.assert_array_equal(design.X[:, 0:2].sum(axis=1), np.ones(ds.n_records))
    np.testing.assert_array_equal(design.X[:, 2:5].sum(axis=1), np.ones(ds.n_records))
    row = 7
    assert design.X[row, ds.levels[row, 0]] == 1.0
    assert design.X[row, 2 + ds.levels[row, 1]] == 1.0


def test_build_design_rejects_invalid():
    ds = make_dataset(seed=12)
    bad = SafetyDataset(
        schema=ds.schema,
        trial_ids=ds.trial_ids,
        trial_index=ds.trial_index,
        treatment=ds.treatment,
        levels=ds.levels,
        outcomes=ds.outcomes[:, :1],
    )
    with pytest.raises(DataError):
        build_design(bad)


def test_single_issue_dataset_keeps_rows():
    ds = make_dataset(seed=13, n_issues=3)
    issue = ds.schema.issues[1]
    sub = single_issue_dataset(ds, issue)
    assert sub.schema.issues == (issue,)
    assert sub.n_records == ds.n_records
    np.testing.assert_array_equal(sub.outcomes[:, 0], ds.outcomes[:, 1])
    with pytest.raises(DataError):
        single_issue_dataset(ds, "nope")
