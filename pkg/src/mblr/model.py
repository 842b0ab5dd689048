"""Model core: parameter layout, posterior evaluation, and derivatives.

Two variants of a multi-issue logistic regression share one machinery:

* ``pooled``: one intercept and one treatment effect per issue, all trials
  pooled,
* ``meta_analytic``: trial-specific intercepts and treatment effects that
  are partially pooled toward per-issue means.

Covariate effects and treatment-by-covariate interactions are shared across
trials in both variants and are themselves partially pooled across issues
through hyper-means with a common spread. All standard deviations carry
uniform priors on (0, d) and are optimized or sampled on an unconstrained
logit scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DesignMatrix, SafetyDataset
from .errors import DataError

VARIANTS = ("pooled", "meta_analytic")

_HALF_LN_2PI = 0.5 * math.log(2.0 * math.pi)

SD_SCALAR_BLOCKS = ("sd_cov_effect", "sd_treat_effect", "sd_treat_cov_effect", "sd_mean")

# Location blocks shared by name between the two variants.
SHARED_LOCATION_BLOCKS = ("cov_effect", "treat_cov_effect", "treat_effect")


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class PriorConfig:
    """Hierarchical prior settings.

    ``d`` bounds every standard deviation's uniform prior. The location
    prior applies to the unshrunk locations (per-issue intercepts in the
    pooled variant, intercept means in the meta-analytic one, and the grand
    treatment mean): either ``flat`` or a diffuse normal with
    ``location_prior_sd``. ``sum_to_zero`` constrains the hyper-means of
    each covariate's levels to sum to zero, removing the indicator-coding
    redundancy at the hyper-mean level.
    """

    d: float = 3.0
    location_prior: str = "normal"
    location_prior_sd: float = 10.0
    sum_to_zero: bool = True

    def __post_init__(self) -> None:
        if not (self.d > 0.0 and math.isfinite(self.d)):
            raise DataError("prior bound d must be positive and finite")
        if self.location_prior not in ("normal", "flat"):
            raise DataError(f"unknown location prior {self.location_prior!r}")
        if not (self.location_prior_sd > 0.0 and math.isfinite(self.location_prior_sd)):
            raise DataError("location prior sd must be positive and finite")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "location_prior": self.location_prior,
            "location_prior_sd": self.location_prior_sd,
            "sum_to_zero": self.sum_to_zero,
        }


@dataclass(frozen=True)
class ModelSpec:
    """Variant, dimensions, and prior for one model.

    ``covariate_levels`` holds the number of levels per covariate; the
    total indicator count is their sum. Labels are optional and only affect
    exported parameter names.
    """

    variant: str
    n_issues: int
    n_trials: int = 1
    covariate_levels: tuple[int, ...] = ()
    prior: PriorConfig = PriorConfig()
    issue_labels: tuple[str, ...] | None = None
    trial_labels: tuple[str, ...] | None = None
    column_labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        for field in ("covariate_levels", "issue_labels", "trial_labels", "column_labels"):
            value = getattr(self, field)
            if value is not None and not isinstance(value, tuple):
                object.__setattr__(self, field, tuple(value))
        if self.variant not in VARIANTS:
            raise DataError(f"unknown variant {self.variant!r}")
        if self.n_issues < 1:
            raise DataError("need at least one issue")
        if self.n_trials < 1:
            raise DataError("need at least one trial")
        if any(m < 2 for m in self.covariate_levels):
            raise DataError("each covariate needs at least 2 levels")
        for label_set, count, what in (
            (self.issue_labels, self.n_issues, "issue"),
            (self.trial_labels, self.n_trials, "trial"),
            (self.column_labels, sum(self.covariate_levels), "column"),
        ):
            if label_set is not None and len(label_set) != count:
                raise DataError(f"{what} labels do not match dimensions")

    @property
    def n_columns(self) -> int:
        return sum(self.covariate_levels)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "n_issues": self.n_issues,
            "n_trials": self.n_trials,
            "covariate_levels": list(self.covariate_levels),
            "prior": self.prior.to_dict(),
        }


class ParameterLayout:
    """Canonical coordinate order, names, and constraint structure.

    Pooled block order: intercept, cov_effect, treat_effect,
    treat_cov_effect, cov_mean, treat_mean, treat_cov_mean, then the four
    sd scalars. The meta-analytic layout prepends trial_intercept and
    trial_treat_effect, replaces intercept with intercept_mean, and appends
    per-issue sd_trial_intercept and sd_trial_treat blocks.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.variant = spec.variant
        self.n_issues = spec.n_issues
        self.n_trials = spec.n_trials
        self.covariate_levels = spec.covariate_levels
        self.n_columns = spec.n_columns
        self.prior = spec.prior

        K, L, G = spec.n_issues, spec.n_trials, spec.n_columns
        issues = spec.issue_labels or tuple(str(k) for k in range(K))
        trials = spec.trial_labels or tuple(str(x) for x in range(L))
        cols = spec.column_labels or tuple(str(g) for g in range(G))
        self.issue_labels = tuple(issues)
        self.trial_labels = tuple(trials)
        self.column_labels = tuple(cols)

        cov_names = [f"cov_effect[{i}][{c}]" for i in issues for c in cols]
        tcov_names = [f"treat_cov_effect[{i}][{c}]" for i in issues for c in cols]
        treat_names = [f"treat_effect[{i}]" for i in issues]
        blocks: list[tuple[str, int, list[str]]] = []
        if spec.variant == "meta_analytic":
            blocks.append(
                ("trial_intercept", K * L, [f"trial_intercept[{i}][{t}]" for i in issues for t in trials])
            )
            blocks.append(
                ("trial_treat_effect", K * L, [f"trial_treat_effect[{i}][{t}]" for i in issues for t in trials])
            )
            blocks.append(("intercept_mean", K, [f"intercept_mean[{i}]" for i in issues]))
            blocks.append(("treat_effect", K, treat_names))
            blocks.append(("cov_effect", K * G, cov_names))
        else:
            blocks.append(("intercept", K, [f"intercept[{i}]" for i in issues]))
            blocks.append(("cov_effect", K * G, cov_names))
            blocks.append(("treat_effect", K, treat_names))
        blocks.append(("treat_cov_effect", K * G, tcov_names))
        blocks.append(("cov_mean", G, [f"cov_mean[{c}]" for c in cols]))
        blocks.append(("treat_mean", 1, ["treat_mean"]))
        blocks.append(("treat_cov_mean", G, [f"treat_cov_mean[{c}]" for c in cols]))
        for name in SD_SCALAR_BLOCKS:
            blocks.append((name, 1, [name]))
        if spec.variant == "meta_analytic":
            blocks.append(("sd_trial_intercept", K, [f"sd_trial_intercept[{i}]" for i in issues]))
            blocks.append(("sd_trial_treat", K, [f"sd_trial_treat[{i}]" for i in issues]))

        self._slices: dict[str, slice] = {}
        names: list[str] = []
        offset = 0
        for name, size, block_names in blocks:
            self._slices[name] = slice(offset, offset + size)
            names.extend(block_names)
            offset += size
        self.size = offset
        self.names = tuple(names)
        self._index = {name: i for i, name in enumerate(self.names)}

        self.is_sd = np.zeros(self.size, dtype=bool)
        for name in SD_SCALAR_BLOCKS + ("sd_trial_intercept", "sd_trial_treat"):
            if name in self._slices:
                self.is_sd[self._slices[name]] = True
        self.sd_indices = np.flatnonzero(self.is_sd)

        # Sum-to-zero: within each covariate, the last level's hyper-mean is
        # reconstructed as the negative sum of the block's other levels.
        self.reconstructions: list[tuple[int, np.ndarray]] = []
        self.free_mask = np.ones(self.size, dtype=bool)
        if spec.prior.sum_to_zero:
            for base in ("cov_mean", "treat_cov_mean"):
                start = self._slices[base].start
                off = 0
                for m in spec.covariate_levels:
                    target = start + off + m - 1
                    sources = np.arange(start + off, start + off + m - 1)
                    self.reconstructions.append((target, sources))
                    self.free_mask[target] = False
                    off += m

    def sl(self, block: str) -> slice:
        return self._slices[block]

    def has_block(self, block: str) -> bool:
        return block in self._slices

    def index(self, name: str) -> int:
        if name not in self._index:
            raise DataError(f"unknown parameter name {name!r}")
        return self._index[name]

    def block_of(self, coord: int) -> str:
        for name, sl in self._slices.items():
            if sl.start <= coord < sl.stop:
                return name
        raise IndexError(coord)

    def apply_constraint(self, values: np.ndarray) -> np.ndarray:
        """Return a copy with reconstructed hyper-mean slots overwritten."""
        v = np.array(values, dtype=np.float64, copy=True)
        for target, sources in self.reconstructions:
            v[target] = -v[sources].sum()
        return v

    def pullback_grad(self, g: np.ndarray) -> np.ndarray:
        """Chain-rule a used-vector gradient onto the stored coordinates."""
        for target, sources in self.reconstructions:
            g[sources] -= g[target]
            g[target] = 0.0
        return g

    def pullback_hess(self, H: np.ndarray) -> np.ndarray:
        for target, sources in self.reconstructions:
            H[:, sources] -= H[:, target : target + 1]
            H[:, target] = 0.0
        for target, sources in self.reconstructions:
            H[sources, :] -= H[target : target + 1, :]
            H[target, :] = 0.0
        return H


def param_layout(spec: ModelSpec) -> ParameterLayout:
    """Build the canonical layout for a model spec."""
    return ParameterLayout(spec)


@dataclass(eq=False)
class ParameterSet:
    """A parameter vector plus its layout and scale tag."""

    layout: ParameterLayout
    values: np.ndarray
    scale: str = "constrained"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise DataError(
                f"parameter vector has shape {self.values.shape}, expected ({self.layout.size},)"
            )
        if self.scale not in ("constrained", "unconstrained"):
            raise DataError(f"unknown scale tag {self.scale!r}")

    def block(self, name: str) -> np.ndarray:
        return self.values[self.layout.sl(name)]

    def get(self, name: str) -> float:
        return float(self.values[self.layout.index(name)])

    def set(self, name: str, value: float) -> None:
        self.values[self.layout.index(name)] = value

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.layout, self.values.copy(), self.scale)


def initial_parameters(layout: ParameterLayout) -> ParameterSet:
    """All locations zero, all standard deviations at d/2."""
    v = np.zeros(layout.size)
    v[layout.sd_indices] = layout.prior.d / 2.0
    return ParameterSet(layout, v, "constrained")


def to_unconstrained(theta: ParameterSet) -> ParameterSet:
    """Map standard deviations through the inverse of d * logistic."""
    layout = theta.layout
    if theta.scale != "constrained":
        raise DataError("to_unconstrained expects a constrained parameter set")
    v = theta.values.copy()
    s = v[layout.sd_indices]
    d = layout.prior.d
    if np.any(s <= 0.0) or np.any(s >= d):
        raise ValueError("standard deviations must lie strictly inside (0, d)")
    v[layout.sd_indices] = np.log(s / (d - s))
    return ParameterSet(layout, v, "unconstrained")


def from_unconstrained(u: ParameterSet) -> ParameterSet:
    """Inverse transform; also refreshes reconstructed hyper-mean slots."""
    layout = u.layout
    if u.scale != "unconstrained":
        raise DataError("from_unconstrained expects an unconstrained parameter set")
    v = u.values.copy()
    v[layout.sd_indices] = layout.prior.d * _expit(v[layout.sd_indices])
    v = layout.apply_constraint(v)
    return ParameterSet(layout, v, "constrained")


def log_jacobian(u: ParameterSet) -> float:
    """Log absolute Jacobian of the sd transform, summed over sd coordinates."""
    layout = u.layout
    s = _expit(u.values[layout.sd_indices])
    with np.errstate(divide="ignore"):
        terms = np.log(layout.prior.d * s * (1.0 - s))
    return float(terms.sum())


@dataclass(frozen=True, eq=False)
class _NormalFamily:
    # One group of normal prior terms x_i ~ N(m_i, s^2) sharing a single sd.
    # m_idx is None for zero-mean terms; s_idx < 0 means a fixed sd.
    x_idx: np.ndarray
    m_idx: np.ndarray | None
    s_idx: int
    s_fixed: float = 0.0


def _build_families(layout: ParameterLayout) -> list[_NormalFamily]:
    spec = layout.spec
    K, L, G = layout.n_issues, layout.n_trials, layout.n_columns
    fams: list[_NormalFamily] = []

    def idx(block: str) -> np.ndarray:
        sl = layout.sl(block)
        return np.arange(sl.start, sl.stop)

    if G > 0:
        fams.append(
            _NormalFamily(idx("cov_effect"), np.tile(idx("cov_mean"), K), layout.index("sd_cov_effect"))
        )
        fams.append(
            _NormalFamily(
                idx("treat_cov_effect"),
                np.tile(idx("treat_cov_mean"), K),
                layout.index("sd_treat_cov_effect"),
            )
        )
    fams.append(
        _NormalFamily(
            idx("treat_effect"),
            np.full(K, layout.index("treat_mean")),
            layout.index("sd_treat_effect"),
        )
    )
    if G > 0:
        for base in ("cov_mean", "treat_cov_mean"):
            free = np.array([i for i in idx(base) if layout.free_mask[i]], dtype=np.int64)
            fams.append(_NormalFamily(free, None, layout.index("sd_mean")))
    if spec.variant == "meta_analytic":
        for k in range(K):
            rows = idx("trial_intercept")[k * L : (k + 1) * L]
            fams.append(
                _NormalFamily(
                    rows,
                    np.full(L, layout.sl("intercept_mean").start + k),
                    layout.sl("sd_trial_intercept").start + k,
                )
            )
            rows = idx("trial_treat_effect")[k * L : (k + 1) * L]
            fams.append(
                _NormalFamily(
                    rows,
                    np.full(L, layout.sl("treat_effect").start + k),
                    layout.sl("sd_trial_treat").start + k,
                )
            )
    if layout.prior.location_prior == "normal":
        loc_block = "intercept" if spec.variant == "pooled" else "intercept_mean"
        coords = np.concatenate([idx(loc_block), [layout.index("treat_mean")]])
        fams.append(_NormalFamily(coords, None, -1, layout.prior.location_prior_sd))
    return fams


class Transform:
    """Free unconstrained coordinates <-> full constrained vectors.

    ``fixed`` pins named coordinates at given values; pinned coordinates
    and reconstructed hyper-mean slots are excluded from the free set.
    """

    def __init__(self, layout: ParameterLayout, fixed: dict[str, float] | None = None):
        self.layout = layout
        self.d = layout.prior.d
        base = np.zeros(layout.size)
        fixed_mask = np.zeros(layout.size, dtype=bool)
        self.fixed = dict(fixed) if fixed else {}
        for name, value in self.fixed.items():
            i = layout.index(name)
            if not layout.free_mask[i]:
                raise DataError(f"cannot pin reconstructed coordinate {name!r}")
            if not math.isfinite(value):
                raise DataError(f"pinned value for {name!r} must be finite")
            if layout.is_sd[i] and not (0.0 < value < self.d):
                raise DataError(f"pinned sd {name!r} must lie inside (0, {self.d})")
            base[i] = value
            fixed_mask[i] = True
        self.base = base
        self.free_idx = np.flatnonzero(layout.free_mask & ~fixed_mask)
        self.is_sd_free = layout.is_sd[self.free_idx]
        self.n_free = int(self.free_idx.size)

    def theta(self, u: np.ndarray) -> np.ndarray:
        v = self.base.copy()
        x = np.asarray(u, dtype=np.float64)
        vals = np.where(self.is_sd_free, self.d * _expit(x), x)
        v[self.free_idx] = vals
        return self.layout.apply_constraint(v)

    def u_from(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)[self.free_idx]
        s = v[self.is_sd_free]
        if s.size and (np.any(s <= 0.0) or np.any(s >= self.d)):
            raise ValueError("standard deviations must lie strictly inside (0, d)")
        out = v.copy()
        out[self.is_sd_free] = np.log(s / (self.d - s))
        return out

    def log_jacobian(self, u: np.ndarray) -> float:
        s = _expit(np.asarray(u)[self.is_sd_free])
        if s.size == 0:
            return 0.0
        with np.errstate(divide="ignore"):
            terms = np.log(self.d * s * (1.0 - s))
        return float(terms.sum())

    def jac_diag(self, u: np.ndarray) -> np.ndarray:
        out = np.ones(self.n_free)
        s = _expit(np.asarray(u)[self.is_sd_free])
        out[self.is_sd_free] = self.d * s * (1.0 - s)
        return out

    def grad_log_jacobian(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_free)
        s = _expit(np.asarray(u)[self.is_sd_free])
        out[self.is_sd_free] = 1.0 - 2.0 * s
        return out

    def hess_log_jacobian_diag(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_free)
        s = _expit(np.asarray(u)[self.is_sd_free])
        out[self.is_sd_free] = -2.0 * s * (1.0 - s)
        return out

    def full_jacobian(self, u: np.ndarray) -> np.ndarray:
        """d(theta_full)/d(u_free), including reconstruction rows."""
        J = np.zeros((self.layout.size, self.n_free))
        J[self.free_idx, np.arange(self.n_free)] = self.jac_diag(u)
        for target, sources in self.layout.reconstructions:
            J[target, :] = -J[sources, :].sum(axis=0)
        return J


def _eta(layout: ParameterLayout, values: np.ndarray, X: np.ndarray, T: np.ndarray, trial_index: np.ndarray) -> np.ndarray:
    K, G = layout.n_issues, layout.n_columns
    ag = values[layout.sl("cov_effect")].reshape(K, G)
    bg = values[layout.sl("treat_cov_effect")].reshape(K, G)
    if layout.variant == "pooled":
        base = np.broadcast_to(values[layout.sl("intercept")], (X.shape[0], K))
        tbase = np.broadcast_to(values[layout.sl("treat_effect")], (X.shape[0], K))
    else:
        L = layout.n_trials
        a0 = values[layout.sl("trial_intercept")].reshape(K, L)
        t0 = values[layout.sl("trial_treat_effect")].reshape(K, L)
        base = a0[:, trial_index].T
        tbase = t0[:, trial_index].T
    return base + X @ ag.T + T[:, None] * (tbase + X @ bg.T)


class Model:
    """Posterior evaluation engine binding a spec to a design matrix."""

    def __init__(self, spec: ModelSpec, design: DesignMatrix):
        if design.X.shape[1] != spec.n_columns:
            raise DataError(
                f"design has {design.X.shape[1]} indicator columns, spec expects {spec.n_columns}"
            )
        if design.Y.shape[1] != spec.n_issues:
            raise DataError(
                f"design has {design.Y.shape[1]} outcome columns, spec expects {spec.n_issues}"
            )
        if spec.variant == "meta_analytic":
            if design.n_trials != spec.n_trials:
                raise DataError(
                    f"design has {design.n_trials} trials, spec expects {spec.n_trials}"
                )
        self.spec = spec
        self.design = design
        self.layout = param_layout(spec)
        self.X = np.asarray(design.X, dtype=np.float64)
        self.T = np.asarray(design.treatment, dtype=np.float64)
        self.Y = np.asarray(design.Y, dtype=np.float64)
        self.trial_index = np.asarray(design.trial_index, dtype=np.int64)
        self._families = _build_families(self.layout)
        self._Z = None
        self._issue_coords = None

    # -- likelihood ------------------------------------------------------

    def _values(self, theta) -> np.ndarray:
        if isinstance(theta, ParameterSet):
            if theta.scale != "constrained":
                raise DataError("expected a constrained parameter set")
            return theta.values
        return np.asarray(theta, dtype=np.float64)

    def linear_predictor(self, theta) -> np.ndarray:
        return _eta(self.layout, self._values(theta), self.X, self.T, self.trial_index)

    def log_likelihood(self, theta) -> float:
        eta = self.linear_predictor(theta)
        return float(np.sum(self.Y * eta) - np.sum(np.logaddexp(0.0, eta)))

    def _grad_log_likelihood(self, values: np.ndarray) -> np.ndarray:
        layout = self.layout
        K, L, G = layout.n_issues, layout.n_trials, layout.n_columns
        eta = _eta(layout, values, self.X, self.T, self.trial_index)
        resid = self.Y - _expit(eta)
        g = np.zeros(layout.size)
        g[layout.sl("cov_effect")] = (resid.T @ self.X).ravel()
        g[layout.sl("treat_cov_effect")] = ((self.T[:, None] * resid).T @ self.X).ravel()
        if layout.variant == "pooled":
            g[layout.sl("intercept")] = resid.sum(axis=0)
            g[layout.sl("treat_effect")] = resid.T @ self.T
        else:
            buf = np.zeros((L, K))
            np.add.at(buf, self.trial_index, resid)
            g[layout.sl("trial_intercept")] = buf.T.ravel()
            buf = np.zeros((L, K))
            np.add.at(buf, self.trial_index, self.T[:, None] * resid)
            g[layout.sl("trial_treat_effect")] = buf.T.ravel()
        return g

    def _likelihood_features(self):
        # Per-issue feature matrix and coordinate map for the Hessian. The
        # features are shared across issues; only the coordinates differ.
        if self._Z is not None:
            return self._Z, self._issue_coords
        layout = self.layout
        K, L, G = layout.n_issues, layout.n_trials, layout.n_columns
        n = self.X.shape[0]
        ones = np.ones((n, 1))
        if layout.variant == "pooled":
            Z = np.hstack([ones, self.X, self.T[:, None], self.T[:, None] * self.X])
            coords = []
            for k in range(K):
                parts = [
                    np.array([layout.sl("intercept").start + k]),
                    np.arange(layout.sl("cov_effect").start + k * G, layout.sl("cov_effect").start + (k + 1) * G),
                    np.array([layout.sl("treat_effect").start + k]),
                    np.arange(
                        layout.sl("treat_cov_effect").start + k * G,
                        layout.sl("treat_cov_effect").start + (k + 1) * G,
                    ),
                ]
                coords.append(np.concatenate(parts))
        else:
            E = np.zeros((n, L))
            E[np.arange(n), self.trial_index] = 1.0
            Z = np.hstack([E, self.X, self.T[:, None] * E, self.T[:, None] * self.X])
            coords = []
            for k in range(K):
                parts = [
                    np.arange(layout.sl("trial_intercept").start + k * L, layout.sl("trial_intercept").start + (k + 1) * L),
                    np.arange(layout.sl("cov_effect").start + k * G, layout.sl("cov_effect").start + (k + 1) * G),
                    np.arange(
                        layout.sl("trial_treat_effect").start + k * L,
                        layout.sl("trial_treat_effect").start + (k + 1) * L,
                    ),
                    np.arange(
                        layout.sl("treat_cov_effect").start + k * G,
                        layout.sl("treat_cov_effect").start + (k + 1) * G,
                    ),
                ]
                coords.append(np.concatenate(parts))
        self._Z = Z
        self._issue_coords = coords
        return Z, coords

    def _hess_log_likelihood(self, values: np.ndarray) -> np.ndarray:
        layout = self.layout
        eta = _eta(layout, values, self.X, self.T, self.trial_index)
        p = _expit(eta)
        W = p * (1.0 - p)
        Z, coords = self._likelihood_features()
        H = np.zeros((layout.size, layout.size))
        for k in range(layout.n_issues):
            Hk = -(Z * W[:, k : k + 1]).T @ Z
            ix = np.ix_(coords[k], coords[k])
            H[ix] += Hk
        return H

    # -- prior -----------------------------------------------------------

    def _interior(self, values: np.ndarray) -> bool:
        s = values[self.layout.sd_indices]
        d = self.layout.prior.d
        return bool(np.all(np.isfinite(values)) and np.all(s > 0.0) and np.all(s < d))

    def realized_sds(self, values: np.ndarray) -> dict[int, float]:
        """Observed spread of each hierarchical block around its mean.

        Returns ``{sd coordinate index: root mean square deviation}`` for
        every estimated sd, computed from a full constrained vector. Useful
        for initializing the sd coordinates near values the locations
        actually support.
        """
        ss: dict[int, float] = {}
        count: dict[int, int] = {}
        for fam in self._families:
            if fam.s_idx < 0:
                continue
            x = values[fam.x_idx]
            m = values[fam.m_idx] if fam.m_idx is not None else 0.0
            delta = x - m
            ss[fam.s_idx] = ss.get(fam.s_idx, 0.0) + float(delta @ delta)
            count[fam.s_idx] = count.get(fam.s_idx, 0) + int(x.size)
        return {i: math.sqrt(ss[i] / count[i]) for i in ss}

    def log_prior(self, theta) -> float:
        v = self.layout.apply_constraint(self._values(theta))
        if not self._interior(v):
            return -math.inf
        total = 0.0
        for fam in self._families:
            x = v[fam.x_idx]
            m = v[fam.m_idx] if fam.m_idx is not None else 0.0
            sd = v[fam.s_idx] if fam.s_idx >= 0 else fam.s_fixed
            delta = x - m
            total += -x.size * (math.log(sd) + _HALF_LN_2PI) - float(delta @ delta) / (2.0 * sd * sd)
        return total

    def _grad_log_prior(self, v: np.ndarray) -> np.ndarray:
        g = np.zeros(self.layout.size)
        for fam in self._families:
            x = v[fam.x_idx]
            m = v[fam.m_idx] if fam.m_idx is not None else 0.0
            sd = v[fam.s_idx] if fam.s_idx >= 0 else fam.s_fixed
            delta = x - m
            w = delta / (sd * sd)
            np.subtract.at(g, fam.x_idx, w)
            if fam.m_idx is not None:
                np.add.at(g, fam.m_idx, w)
            if fam.s_idx >= 0:
                g[fam.s_idx] += -x.size / sd + float(delta @ delta) / sd**3
        return g

    def _hess_log_prior(self, v: np.ndarray) -> np.ndarray:
        D = self.layout.size
        H = np.zeros((D, D))
        for fam in self._families:
            x = v[fam.x_idx]
            m = v[fam.m_idx] if fam.m_idx is not None else 0.0
            sd = v[fam.s_idx] if fam.s_idx >= 0 else fam.s_fixed
            delta = x - m
            inv2 = 1.0 / (sd * sd)
            np.add.at(H, (fam.x_idx, fam.x_idx), -inv2)
            if fam.m_idx is not None:
                np.add.at(H, (fam.x_idx, fam.m_idx), inv2)
                np.add.at(H, (fam.m_idx, fam.x_idx), inv2)
                np.add.at(H, (fam.m_idx, fam.m_idx), -inv2)
            if fam.s_idx >= 0:
                s_arr = np.full(fam.x_idx.size, fam.s_idx)
                SS = float(delta @ delta)
                H[fam.s_idx, fam.s_idx] += x.size * inv2 - 3.0 * SS / sd**4
                cross = 2.0 * delta / sd**3
                np.add.at(H, (fam.x_idx, s_arr), cross)
                np.add.at(H, (s_arr, fam.x_idx), cross)
                if fam.m_idx is not None:
                    np.add.at(H, (fam.m_idx, s_arr), -cross)
                    np.add.at(H, (s_arr, fam.m_idx), -cross)
        return H

    # -- posterior -------------------------------------------------------

    def log_posterior(self, theta) -> float:
        lp = self.log_prior(theta)
        if lp == -math.inf:
            return -math.inf
        return lp + self.log_likelihood(theta)

    def grad_log_posterior(self, theta) -> np.ndarray:
        v = self.layout.apply_constraint(self._values(theta))
        if not self._interior(v):
            raise ValueError("gradient requires parameters strictly inside the sd support")
        g = self._grad_log_likelihood(v) + self._grad_log_prior(v)
        return self.layout.pullback_grad(g)

    def hessian_log_posterior(self, theta) -> np.ndarray:
        v = self.layout.apply_constraint(self._values(theta))
        if not self._interior(v):
            raise ValueError("Hessian requires parameters strictly inside the sd support")
        H = self._hess_log_likelihood(v) + self._hess_log_prior(v)
        return self.layout.pullback_hess(H)

    # -- unconstrained-scale objective (posterior density of u) -----------

    def objective(self, tr: Transform, u: np.ndarray) -> float:
        lp = self.log_posterior(tr.theta(u))
        if lp == -math.inf:
            return -math.inf
        return lp + tr.log_jacobian(u)

    def objective_grad(self, tr: Transform, u: np.ndarray) -> np.ndarray:
        g = self.grad_log_posterior(tr.theta(u))
        return g[tr.free_idx] * tr.jac_diag(u) + tr.grad_log_jacobian(u)

    def objective_hess(self, tr: Transform, u: np.ndarray) -> np.ndarray:
        theta = tr.theta(u)
        g = self.grad_log_posterior(theta)
        H = self.hessian_log_posterior(theta)
        jd = tr.jac_diag(u)
        Hf = H[np.ix_(tr.free_idx, tr.free_idx)] * np.outer(jd, jd)
        s = _expit(np.asarray(u)[tr.is_sd_free])
        f2 = np.zeros(tr.n_free)
        f2[tr.is_sd_free] = tr.d * s * (1.0 - s) * (1.0 - 2.0 * s)
        diag = f2 * g[tr.free_idx] + tr.hess_log_jacobian_diag(u)
        Hf[np.arange(tr.n_free), np.arange(tr.n_free)] += diag
        return Hf


# -- functional wrappers over Model -------------------------------------


def log_likelihood(spec: ModelSpec, design: DesignMatrix, theta: ParameterSet) -> float:
    return Model(spec, design).log_likelihood(theta)


def log_prior(spec: ModelSpec, design: DesignMatrix, theta: ParameterSet) -> float:
    return Model(spec, design).log_prior(theta)


def log_posterior(spec: ModelSpec, design: DesignMatrix, theta: ParameterSet) -> float:
    return Model(spec, design).log_posterior(theta)


def grad_log_posterior(spec: ModelSpec, design: DesignMatrix, theta: ParameterSet) -> np.ndarray:
    return Model(spec, design).grad_log_posterior(theta)


def hessian_log_posterior(spec: ModelSpec, design: DesignMatrix, theta: ParameterSet) -> np.ndarray:
    return Model(spec, design).hessian_log_posterior(theta)


def predict_prob(theta: ParameterSet, levels, treatment, trial=None) -> np.ndarray:
    """Per-issue event probabilities for one patient profile.

    ``levels`` holds one level index per covariate. Under the meta-analytic
    variant a known trial (index or label) is required.
    """
    layout = theta.layout
    x = np.zeros(layout.n_columns)
    if len(levels) != len(layout.covariate_levels):
        raise DataError(
            f"expected {len(layout.covariate_levels)} covariate levels, got {len(levels)}"
        )
    offset = 0
    for j, m in enumerate(layout.covariate_levels):
        lv = int(levels[j])
        if not 0 <= lv < m:
            raise DataError(f"level index {lv} out of range for covariate {j}")
        x[offset + lv] = 1.0
        offset += m
    if layout.variant == "meta_analytic":
        if trial is None:
            raise DataError("the meta-analytic variant needs a trial for prediction")
        if isinstance(trial, str):
            if trial not in layout.trial_labels:
                raise DataError(f"unknown trial id {trial!r}")
            t_idx = layout.trial_labels.index(trial)
        else:
            t_idx = int(trial)
            if not 0 <= t_idx < layout.n_trials:
                raise DataError(f"trial index {t_idx} out of range")
    else:
        t_idx = 0
    eta = _eta(
        layout,
        layout.apply_constraint(theta.values),
        x[None, :],
        np.array([float(treatment)]),
        np.array([t_idx]),
    )
    return _expit(eta[0])


def model_spec_for(dataset: SafetyDataset, variant: str, prior: PriorConfig | None = None) -> ModelSpec:
    """Derive a labeled spec from a dataset's schema and trial structure."""
    prior = prior if prior is not None else PriorConfig()
    schema = dataset.schema
    if variant == "meta_analytic":
        trial_set = set(dataset.trial_ids)
        for cov in schema.covariates:
            if set(cov.levels) == trial_set:
                raise DataError(
                    f"covariate {cov.name!r} duplicates the trial structure; trial "
                    "membership is modeled directly under the meta-analytic variant"
                )
    return ModelSpec(
        variant=variant,
        n_issues=schema.n_issues,
        n_trials=dataset.n_trials,
        covariate_levels=schema.covariate_levels,
        prior=prior,
        issue_labels=schema.issues,
        trial_labels=dataset.trial_ids,
        column_labels=schema.column_names,
    )
