"""Posterior summaries and their CSV/JSON round-trip formats."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .util import read_json, write_json

# Two-sided 90% normal critical value, fixed so intervals and tests agree
# across machines.
Z90 = 1.6449

CSV_HEADER = ("name", "mean", "sd", "z", "lo90", "hi90")


def infer_variant(names) -> str:
    """Guess the model variant from parameter names."""
    for name in names:
        if name.startswith("trial_intercept["):
            return "meta_analytic"
    return "pooled"


@dataclass(eq=False)
class PosteriorSummary:
    """Per-parameter posterior location, spread, and 90% interval.

    ``z`` is mean/sd, with nan for degenerate (zero spread) rows. The
    fingerprint ties a summary back to the dataset and configuration that
    produced it; ``metadata`` carries method-specific extras.
    """

    names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    z: np.ndarray
    lo90: np.ndarray
    hi90: np.ndarray
    method: str
    variant: str
    fingerprint: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.names = tuple(self.names)
        n = len(self.names)
        for attr in ("mean", "sd", "z", "lo90", "hi90"):
            arr = np.asarray(getattr(self, attr), dtype=np.float64)
            if arr.shape != (n,):
                raise DataError(f"summary column {attr} has wrong length")
            setattr(self, attr, arr)
        self._pos = {name: i for i, name in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def has(self, name: str) -> bool:
        return name in self._pos

    def row(self, name: str) -> dict:
        if name not in self._pos:
            raise DataError(f"no summary row for {name!r}")
        i = self._pos[name]
        return {
            "name": name,
            "mean": float(self.mean[i]),
            "sd": float(self.sd[i]),
            "z": float(self.z[i]),
            "lo90": float(self.lo90[i]),
            "hi90": float(self.hi90[i]),
        }

    def block_names(self, block: str) -> list[str]:
        prefix = block + "["
        return [n for n in self.names if n == block or n.startswith(prefix)]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "variant": self.variant,
            "fingerprint": self.fingerprint,
            "names": list(self.names),
            "mean": [float(x) for x in self.mean],
            "sd": [float(x) for x in self.sd],
            "z": [float(x) for x in self.z],
            "lo90": [float(x) for x in self.lo90],
            "hi90": [float(x) for x in self.hi90],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PosteriorSummary":
        try:
            return cls(
                names=tuple(payload["names"]),
                mean=payload["mean"],
                sd=payload["sd"],
                z=payload["z"],
                lo90=payload["lo90"],
                hi90=payload["hi90"],
                method=payload["method"],
                variant=payload["variant"],
                fingerprint=payload.get("fingerprint", ""),
                metadata=payload.get("metadata", {}),
            )
        except KeyError as exc:
            raise DataError(f"summary payload is missing field {exc.args[0]!r}") from None


def make_summary(
    names,
    mean,
    sd,
    method: str,
    variant: str,
    fingerprint: str = "",
    metadata: dict | None = None,
    lo90=None,
    hi90=None,
) -> PosteriorSummary:
    """Assemble a summary, deriving z and symmetric intervals when absent."""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    meta = dict(metadata) if metadata else {}
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0.0, mean / sd, math.nan)
    degenerate = [names[i] for i in np.flatnonzero(~(sd > 0.0))]
    if degenerate:
        meta["degenerate"] = degenerate
    if lo90 is None:
        lo90 = mean - Z90 * sd
    if hi90 is None:
        hi90 = mean + Z90 * sd
    return PosteriorSummary(
        names=tuple(names),
        mean=mean,
        sd=sd,
        z=z,
        lo90=np.asarray(lo90, dtype=np.float64),
        hi90=np.asarray(hi90, dtype=np.float64),
        method=method,
        variant=variant,
        fingerprint=fingerprint,
        metadata=meta,
    )


def save_summary_csv(summary: PosteriorSummary, path) -> None:
    """Write the six-column summary table; values use repr formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i, name in enumerate(summary.names):
            writer.writerow(
                [
                    name,
                    repr(float(summary.mean[i])),
                    repr(float(summary.sd[i])),
                    repr(float(summary.z[i])),
                    repr(float(summary.lo90[i])),
                    repr(float(summary.hi90[i])),
                ]
            )


def load_summary_csv(path, method: str = "unknown", variant: str | None = None) -> PosteriorSummary:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"summary file {path} is empty") from None
        if tuple(header) != CSV_HEADER:
            raise DataError(f"unexpected summary header {header!r} in {path}")
        names: list[str] = []
        cols: list[list[float]] = [[], [], [], [], []]
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise DataError(f"line {line_no} of {path} has {len(row)} fields, expected 6")
            names.append(row[0])
            for j in range(5):
                try:
                    cols[j].append(float(row[j + 1]))
                except ValueError:
                    raise DataError(f"line {line_no} of {path}: bad number {row[j + 1]!r}") from None
    return PosteriorSummary(
        names=tuple(names),
        mean=cols[0],
        sd=cols[1],
        z=cols[2],
        lo90=cols[3],
        hi90=cols[4],
        method=method,
        variant=variant if variant is not None else infer_variant(names),
    )


def save_summary_json(summary: PosteriorSummary, path) -> None:
    write_json(path, summary.to_dict())


def load_summary_json(path) -> PosteriorSummary:
    return PosteriorSummary.from_dict(read_json(path))
