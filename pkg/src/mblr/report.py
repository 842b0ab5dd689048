"""Cross-method comparison reports, scatter plots, and shrinkage tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import DataError
from .model import SHARED_LOCATION_BLOCKS
from .summary import PosteriorSummary, infer_variant
from .util import write_json


def _block_of(name: str) -> str:
    return name.split("[", 1)[0]


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < 2:
        raise DataError("need at least 2 matched values for a correlation")
    if np.array_equal(x, y):
        return 1.0
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return math.nan
    return float(xc @ yc) / denom


@dataclass(eq=False)
class ComparisonReport:
    """Parameterwise comparison of two summaries matched by name."""

    method_a: str
    method_b: str
    variant_a: str
    variant_b: str
    names: tuple[str, ...]
    mean_a: np.ndarray
    mean_b: np.ndarray
    sd_a: np.ndarray
    sd_b: np.ndarray
    z_a: np.ndarray
    z_b: np.ndarray
    unmatched_a: tuple[str, ...]
    unmatched_b: tuple[str, ...]
    restricted: bool
    aggregates: dict = field(default_factory=dict)

    def subset(self, names) -> "ComparisonReport":
        """Restrict the report to a subset of matched names."""
        wanted = [n for n in self.names if n in set(names)]
        idx = [self.names.index(n) for n in wanted]
        return _build_report(
            self.method_a,
            self.method_b,
            self.variant_a,
            self.variant_b,
            tuple(wanted),
            self.mean_a[idx],
            self.mean_b[idx],
            self.sd_a[idx],
            self.sd_b[idx],
            self.z_a[idx],
            self.z_b[idx],
            self.unmatched_a,
            self.unmatched_b,
            self.restricted,
        )

    def to_dict(self) -> dict:
        return {
            "method_a": self.method_a,
            "method_b": self.method_b,
            "variant_a": self.variant_a,
            "variant_b": self.variant_b,
            "restricted": self.restricted,
            "aggregates": self.aggregates,
            "names": list(self.names),
            "mean_a": [float(x) for x in self.mean_a],
            "mean_b": [float(x) for x in self.mean_b],
            "sd_a": [float(x) for x in self.sd_a],
            "sd_b": [float(x) for x in self.sd_b],
            "z_a": [float(x) for x in self.z_a],
            "z_b": [float(x) for x in self.z_b],
            "unmatched_a": list(self.unmatched_a),
            "unmatched_b": list(self.unmatched_b),
        }


def _build_report(
    method_a,
    method_b,
    variant_a,
    variant_b,
    names,
    mean_a,
    mean_b,
    sd_a,
    sd_b,
    z_a,
    z_b,
    unmatched_a,
    unmatched_b,
    restricted,
) -> ComparisonReport:
    mean_a = np.asarray(mean_a, dtype=np.float64)
    mean_b = np.asarray(mean_b, dtype=np.float64)
    sd_a = np.asarray(sd_a, dtype=np.float64)
    sd_b = np.asarray(sd_b, dtype=np.float64)
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        sd_ratio = sd_b / sd_a
        z_ratio = z_b / z_a
    finite_sd = np.isfinite(sd_ratio)
    finite_z2 = np.isfinite(z_a) & np.isfinite(z_b)
    finite_zr = np.isfinite(z_ratio)
    aggregates = {
        "n_matched": len(names),
        "pearson_mean": _pearson(mean_a, mean_b),
        "pearson_z": _pearson(z_a[finite_z2], z_b[finite_z2]) if finite_z2.sum() >= 2 else math.nan,
        "sd_ratio_mean": float(sd_ratio[finite_sd].mean()) if finite_sd.any() else math.nan,
        "sd_ratio_median": float(np.median(sd_ratio[finite_sd])) if finite_sd.any() else math.nan,
        "z_ratio_mean": float(z_ratio[finite_zr].mean()) if finite_zr.any() else math.nan,
    }
    return ComparisonReport(
        method_a=method_a,
        method_b=method_b,
        variant_a=variant_a,
        variant_b=variant_b,
        names=tuple(names),
        mean_a=mean_a,
        mean_b=mean_b,
        sd_a=sd_a,
        sd_b=sd_b,
        z_a=z_a,
        z_b=z_b,
        unmatched_a=tuple(unmatched_a),
        unmatched_b=tuple(unmatched_b),
        restricted=restricted,
        aggregates=aggregates,
    )


def compare_estimates(a: PosteriorSummary, b: PosteriorSummary) -> ComparisonReport:
    """Match two summaries by exact parameter name and compare them.

    When the two summaries come from different model variants, only the
    blocks with identical meaning in both (covariate effects, interaction
    effects, and per-issue treatment effects) are compared; everything
    else lands in the unmatched lists.
    """
    variant_a = a.variant or infer_variant(a.names)
    variant_b = b.variant or infer_variant(b.names)
    restricted = variant_a != variant_b
    in_b = set(b.names)
    matched = [n for n in a.names if n in in_b]
    if restricted:
        matched = [n for n in matched if _block_of(n) in SHARED_LOCATION_BLOCKS]
    if len(matched) < 2:
        raise DataError("fewer than 2 parameters matched between the two summaries")
    keep = set(matched)
    unmatched_a = tuple(n for n in a.names if n not in keep)
    unmatched_b = tuple(n for n in b.names if n not in keep)
    rows_a = [a.row(n) for n in matched]
    rows_b = [b.row(n) for n in matched]
    return _build_report(
        a.method,
        b.method,
        variant_a,
        variant_b,
        tuple(matched),
        [r["mean"] for r in rows_a],
        [r["mean"] for r in rows_b],
        [r["sd"] for r in rows_a],
        [r["sd"] for r in rows_b],
        [r["z"] for r in rows_a],
        [r["z"] for r in rows_b],
        unmatched_a,
        unmatched_b,
        restricted,
    )


def write_scatter_svg(x, y, labels, path, title: str, xlabel: str, ylabel: str) -> None:
    """Hand-rolled scatter plot with an identity reference line.

    The plot carries one line with id ``identity-line`` and one circle of
    class ``point`` per finite (x, y) pair, each holding a <title> with the
    parameter name.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    finite = np.isfinite(x) & np.isfinite(y)
    xs, ys = x[finite], y[finite]
    names = [lab for lab, ok in zip(labels, finite) if ok]
    size, margin = 480.0, 50.0
    span = size - 2 * margin
    if xs.size:
        lo = float(min(xs.min(), ys.min()))
        hi = float(max(xs.max(), ys.max()))
    else:
        lo, hi = 0.0, 1.0
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def sx(v: float) -> float:
        return margin + (v - lo) / (hi - lo) * span

    def sy(v: float) -> float:
        return size - margin - (v - lo) / (hi - lo) * span

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 480 480" width="480" height="480">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="480" height="480" fill="white"/>',
        f'<line x1="{margin:.2f}" y1="{size - margin:.2f}" x2="{size - margin:.2f}" '
        f'y2="{size - margin:.2f}" stroke="black" stroke-width="1"/>',
        f'<line x1="{margin:.2f}" y1="{margin:.2f}" x2="{margin:.2f}" '
        f'y2="{size - margin:.2f}" stroke="black" stroke-width="1"/>',
        f'<line id="identity-line" x1="{sx(lo):.2f}" y1="{sy(lo):.2f}" x2="{sx(hi):.2f}" '
        f'y2="{sy(hi):.2f}" stroke="gray" stroke-dasharray="4 3" stroke-width="1"/>',
        f'<text x="{size / 2:.2f}" y="{size - 12:.2f}" text-anchor="middle" '
        f'font-size="13">{escape(xlabel)}</text>',
        f'<text x="14" y="{size / 2:.2f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {size / 2:.2f})">{escape(ylabel)}</text>',
    ]
    for xv, yv, name in zip(xs, ys, names):
        parts.append(
            f'<circle class="point" cx="{sx(float(xv)):.2f}" cy="{sy(float(yv)):.2f}" r="3.5" '
            f'fill="steelblue" fill-opacity="0.75"><title>{escape(name)}</title></circle>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def emit_report(report: ComparisonReport, out_dir, prefix: str = "compare", formats=("csv", "json", "svg")):
    """Write the comparison as CSV/JSON tables and scatter plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if "csv" in formats:
        path = out / f"{prefix}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "mean_a", "mean_b", "sd_a", "sd_b", "z_a", "z_b"])
            for i, name in enumerate(report.names):
                writer.writerow(
                    [
                        name,
                        repr(float(report.mean_a[i])),
                        repr(float(report.mean_b[i])),
                        repr(float(report.sd_a[i])),
                        repr(float(report.sd_b[i])),
                        repr(float(report.z_a[i])),
                        repr(float(report.z_b[i])),
                    ]
                )
        written.append(path)
    if "json" in formats:
        path = out / f"{prefix}.json"
        write_json(path, report.to_dict())
        written.append(path)
    if "svg" in formats:
        path = out / f"{prefix}_means.svg"
        write_scatter_svg(
            report.mean_a,
            report.mean_b,
            report.names,
            path,
            title=f"posterior means: {report.method_a} vs {report.method_b}",
            xlabel=f"mean ({report.method_a})",
            ylabel=f"mean ({report.method_b})",
        )
        written.append(path)
        path = out / f"{prefix}_z.svg"
        write_scatter_svg(
            report.z_a,
            report.z_b,
            report.names,
            path,
            title=f"z scores: {report.method_a} vs {report.method_b}",
            xlabel=f"z ({report.method_a})",
            ylabel=f"z ({report.method_b})",
        )
        written.append(path)
    return written


@dataclass(eq=False)
class ShrinkageTable:
    """Joint-versus-independent treatment estimates per issue.

    ``shrinkage`` is the signed movement of the joint estimate from the
    independent one toward the leave-one-out mean of the other issues'
    independent estimates: positive values mean the joint fit borrowed
    strength in the expected direction.
    """

    rows: list[dict]

    def row(self, issue: str) -> dict:
        for row in self.rows:
            if row["issue"] == issue:
                return row
        raise DataError(f"no shrinkage row for issue {issue!r}")

    def to_dict(self) -> dict:
        return {"rows": self.rows}


def shrinkage_table(
    independent: dict[str, PosteriorSummary],
    joint: PosteriorSummary,
    block: str = "treat_effect",
) -> ShrinkageTable:
    """Quantify borrowing for each issue's treatment effect.

    ``independent`` maps issue label to the summary of a single-issue fit;
    ``joint`` is the all-issue fit. Requires at least two issues.
    """
    issues = list(independent)
    if len(issues) < 2:
        raise DataError("shrinkage needs at least two issues")
    indep_mean = {}
    rows = []
    for issue in issues:
        name = f"{block}[{issue}]"
        if not independent[issue].has(name):
            raise DataError(f"independent summary for {issue!r} lacks {name}")
        indep_mean[issue] = independent[issue].row(name)["mean"]
    for issue in issues:
        name = f"{block}[{issue}]"
        joint_row = joint.row(name)
        indep_row = independent[issue].row(name)
        others = [indep_mean[o] for o in issues if o != issue]
        reference = sum(others) / len(others)
        direction = math.copysign(1.0, indep_mean[issue] - reference)
        shrink = (indep_mean[issue] - joint_row["mean"]) * direction
        rows.append(
            {
                "issue": issue,
                "independent_mean": indep_row["mean"],
                "independent_sd": indep_row["sd"],
                "joint_mean": joint_row["mean"],
                "joint_sd": joint_row["sd"],
                "reference": reference,
                "shrinkage": shrink,
            }
        )
    return ShrinkageTable(rows=rows)
