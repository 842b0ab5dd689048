"""Command line interface.

Subcommands: validate, fit, simulate, type1, simpson, compare. Every run
that writes artifacts also writes a ``run.json`` manifest with the
resolved configuration, the seed, and a fingerprint, so identical
invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_dataset, load_schema, save_dataset, validate_dataset
from .errors import DataError, MblrError, UsageError
from .fitting import dataset_fingerprint, fit_dataset
from .laplace import default_grid
from .mcmc import McmcConfig
from .model import PriorConfig, model_spec_for, param_layout
from .report import compare_estimates, emit_report
from .simulate import (
    BorrowingConfig,
    Type1Config,
    generate_dataset,
    load_scenario,
    load_sim_spec,
    load_simpson_spec,
    run_borrowing,
    run_simpson,
    run_type1,
    sim_spec_from_dict,
)
from .summary import load_summary_json, save_summary_csv, save_summary_json
from .util import fingerprint, write_json

MODEL_NAMES = {"mblr": "pooled", "ma-mblr": "meta_analytic"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_location_prior(value: str) -> tuple[str, float]:
    if value == "flat":
        return "flat", 10.0
    if value == "normal":
        return "normal", 10.0
    if value.startswith("normal:"):
        try:
            sd = float(value.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad location prior {value!r}") from None
        return "normal", sd
    raise UsageError(f"bad location prior {value!r}; expected flat or normal[:<sd>]")


def _prior_from_args(args) -> PriorConfig:
    kind, sd = _parse_location_prior(args.location_prior)
    return PriorConfig(
        d=args.d,
        location_prior=kind,
        location_prior_sd=sd,
        sum_to_zero=args.sum_to_zero == "on",
    )


def _mcmc_from_args(args) -> McmcConfig:
    return McmcConfig(
        chains=args.chains,
        warmup=args.warmup,
        samples=args.samples,
        seed=args.seed,
        thin=args.thin,
    )


def _versions() -> dict:
    return {
        "mblr": __version__,
        "numpy": np.__version__,
        "python": ".".join(str(v) for v in sys.version_info[:3]),
    }


def _write_run_manifest(out_dir: Path, command: str, config: dict, seed: int, fp: str) -> None:
    write_json(
        out_dir / "run.json",
        {
            "command": command,
            "config": config,
            "seed": seed,
            "fingerprint": fp,
            "versions": _versions(),
        },
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="mblr", description="Multi-trial Bayesian safety signal models")
    parser.add_argument("--version", action="version", version=f"mblr {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("validate", help="check a dataset against its schema")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", default=None, help="directory for the validation report")

    p = sub.add_parser("fit", help="fit one model to one dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--model", choices=sorted(MODEL_NAMES), default="mblr")
    p.add_argument("--method", choices=("laplace", "grid", "mcmc"), default="laplace")
    p.add_argument("--d", type=float, default=3.0, help="upper bound for sd priors")
    p.add_argument("--location-prior", default="normal", help="flat or normal[:<sd>]")
    p.add_argument("--sum-to-zero", choices=("on", "off"), default="on")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=2000)
    p.add_argument("--samples", type=int, default=4000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--grid-points", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="csv,json", help="comma list from {csv,json}")

    p = sub.add_parser("simulate", help="generate a synthetic dataset from a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("type1", help="null rejection-rate study")
    p.add_argument("--scenario", default="null_small")
    p.add_argument("--methods", default="laplace")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--level", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simpson", help="aggregation-reversal study")
    p.add_argument("--scenario", default="simpson_default")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("laplace", "grid", "mcmc"), default="laplace")
    p.add_argument("--out", required=True)

    p = sub.add_parser("borrow", help="joint-versus-independent borrowing study")
    p.add_argument("--scenario", default="borrowing_rare")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("laplace", "grid", "mcmc"), default="laplace")
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", help="compare two summary JSON files")
    p.add_argument("--a", required=True, help="first summary (JSON)")
    p.add_argument("--b", required=True, help="second summary (JSON)")
    p.add_argument("--prefix", default="compare")
    p.add_argument("--format", default="csv,json,svg")
    p.add_argument("--out", required=True)
    return parser


def _cmd_validate(args) -> int:
    schema = load_schema(args.schema)
    dataset = load_dataset(args.data, schema)
    report = validate_dataset(dataset)
    for err in report.errors:
        print(f"error: {err}")
    for warning in report.warnings:
        print(f"warning: {warning}")
    for trial, (control, treated) in report.trial_arm_counts.items():
        print(f"trial {trial}: {control} control, {treated} treated")
    for issue, (control, treated) in report.issue_event_counts.items():
        print(f"issue {issue}: {control} control events, {treated} treated events")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "validation.json", report.to_dict())
        print(f"wrote {out / 'validation.json'}")
    if not report.ok:
        raise DataError("; ".join(report.errors))
    print("ok")
    return 0


def _cmd_fit(args) -> int:
    variant = MODEL_NAMES[args.model]
    if args.method == "grid" and variant != "pooled":
        raise UsageError("grid integration supports --model mblr only")
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    for f in formats:
        if f not in ("csv", "json"):
            raise UsageError(f"unknown format {f!r}")
    schema = load_schema(args.schema)
    dataset = load_dataset(args.data, schema)
    prior = _prior_from_args(args)
    mcmc = _mcmc_from_args(args) if args.method == "mcmc" else None
    grid = None
    if args.method == "grid":
        spec = model_spec_for(dataset, variant, prior)
        grid = default_grid(param_layout(spec), args.grid_points)
    output = fit_dataset(dataset, variant, method=args.method, prior=prior, mcmc=mcmc, grid=grid)
    out = _out_dir(args)
    written = []
    if "csv" in formats:
        save_summary_csv(output.summary, out / "summary.csv")
        written.append(out / "summary.csv")
    if "json" in formats:
        save_summary_json(output.summary, out / "summary.json")
        written.append(out / "summary.json")
    config = {
        "data": str(args.data),
        "schema": str(args.schema),
        "model": args.model,
        "method": args.method,
        "prior": prior.to_dict(),
        "mcmc": mcmc.to_dict() if mcmc else None,
        "grid_points": args.grid_points if args.method == "grid" else None,
        "format": formats,
    }
    _write_run_manifest(out, "fit", config, args.seed, output.summary.fingerprint)
    print(f"fitted {variant} via {args.method}: {len(output.summary)} parameters")
    if args.method == "mcmc":
        diag = output.fit.diagnostics
        print(
            f"diagnostics: max rhat {float(np.nanmax(diag.rhat)):.3f}, "
            f"min ess {float(np.nanmin(diag.ess)):.0f}, ok={diag.ok}"
        )
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_simulate(args) -> int:
    sim = load_sim_spec(args.scenario)
    dataset = generate_dataset(sim, np.random.SeedSequence((args.seed, 0)))
    out = _out_dir(args)
    write_json(out / "schema.json", dataset.schema.to_dict())
    save_dataset(dataset, out / "data.csv")
    fp = dataset_fingerprint(dataset)
    _write_run_manifest(
        out, "simulate", {"scenario": str(args.scenario), "spec": sim.to_dict()}, args.seed, fp
    )
    print(f"wrote {out / 'data.csv'} ({dataset.n_records} records, fingerprint {fp})")
    return 0


def _cmd_type1(args) -> int:
    sim = load_sim_spec(args.scenario)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    config = Type1Config(
        sim=sim,
        methods=methods,
        reps=args.reps,
        level=args.level,
        seed=args.seed,
        mcmc=_mcmc_from_args(args) if "mcmc" in methods else None,
    )
    report = run_type1(config)
    out = _out_dir(args)
    write_json(out / "type1.json", report.to_dict())
    fp = fingerprint({"scenario": sim.to_dict(), "reps": args.reps, "level": args.level, "seed": args.seed, "methods": list(methods)})
    _write_run_manifest(
        out,
        "type1",
        {"scenario": str(args.scenario), "methods": list(methods), "reps": args.reps, "level": args.level},
        args.seed,
        fp,
    )
    for method, stats in report.per_method.items():
        print(
            f"{method}: rate {stats['rate']:.4f} "
            f"({stats['rejections']}/{stats['decisions']}, mc se {stats['mc_se']:.4f})"
        )
    print(f"wrote {out / 'type1.json'}")
    return 0


def _cmd_simpson(args) -> int:
    spec = load_simpson_spec(args.scenario)
    report = run_simpson(spec, reps=args.reps, seed=args.seed, method=args.method)
    out = _out_dir(args)
    write_json(out / "simpson.json", report.to_dict())
    fp = fingerprint({"scenario": spec.to_dict(), "reps": args.reps, "seed": args.seed})
    _write_run_manifest(
        out, "simpson", {"scenario": str(args.scenario), "reps": args.reps, "method": args.method}, args.seed, fp
    )
    m = report.manifest
    print(
        f"within-trial log OR {m['within_log_or']:+.3f}, "
        f"pooled analytic {m['analytic_pooled_log_or']:+.3f}"
    )
    print(f"sign recovered in {report.successes}/{report.completed} replications")
    print(f"wrote {out / 'simpson.json'}")
    return 0


def _cmd_borrow(args) -> int:
    payload = load_scenario(args.scenario)
    if payload.get("kind") != "simulation" or "focus_issue" not in payload:
        raise UsageError(f"scenario {args.scenario} is not a borrowing scenario")
    sim = sim_spec_from_dict(payload)
    config = BorrowingConfig(
        sim=sim,
        focus_issue=payload["focus_issue"],
        reps=args.reps,
        seed=args.seed,
        method=args.method,
    )
    report = run_borrowing(config)
    out = _out_dir(args)
    write_json(out / "borrow.json", report.to_dict())
    fp = fingerprint({"scenario": sim.to_dict(), "reps": args.reps, "seed": args.seed})
    _write_run_manifest(
        out, "borrow", {"scenario": str(args.scenario), "reps": args.reps, "method": args.method}, args.seed, fp
    )
    print(
        f"shrinkage toward the other issues was positive for {report.focus_issue!r} "
        f"in {report.successes}/{report.completed} replications"
    )
    print(f"wrote {out / 'borrow.json'}")
    return 0


def _cmd_compare(args) -> int:
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    for f in formats:
        if f not in ("csv", "json", "svg"):
            raise UsageError(f"unknown format {f!r}")
    a = load_summary_json(args.a)
    b = load_summary_json(args.b)
    report = compare_estimates(a, b)
    out = _out_dir(args)
    written = emit_report(report, out, prefix=args.prefix, formats=tuple(formats))
    fp = fingerprint({"a": a.fingerprint, "b": b.fingerprint, "formats": formats})
    _write_run_manifest(
        out, "compare", {"a": str(args.a), "b": str(args.b), "format": formats}, 0, fp
    )
    agg = report.aggregates
    print(
        f"matched {agg['n_matched']} parameters"
        + (" (restricted to shared blocks)" if report.restricted else "")
    )
    print(
        f"pearson(mean) {agg['pearson_mean']:.4f}, pearson(z) {agg['pearson_z']:.4f}, "
        f"sd ratio mean {agg['sd_ratio_mean']:.4f}"
    )
    for path in written:
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "type1": _cmd_type1,
    "simpson": _cmd_simpson,
    "borrow": _cmd_borrow,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


def entry_point(argv=None) -> int:
    """Console entry point mapping error classes to exit codes."""
    try:
        return main(argv)
    except UsageError as exc:
        print(f"ERROR[UsageError]: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"ERROR[DataError]: {exc}", file=sys.stderr)
        return 2
    except MblrError as exc:
        print(f"ERROR[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(entry_point())
