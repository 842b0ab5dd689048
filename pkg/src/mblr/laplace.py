"""Posterior mode finding, Laplace covariance, and grid integration.

All optimization happens on the unconstrained scale, targeting the log
posterior density of the transformed vector (log posterior plus the log
Jacobian of the sd transform), so results agree with the sampler in
mcmc.py which targets the same density.

When the data carry no evidence of spread within a hierarchical block,
that block's sd coordinate has no interior stationary point: the density
increases without bound as the sd approaches zero with the block's
effects pinned to their mean (complete shrinkage). The mode finder puts
a floor on the unconstrained sd coordinates and reports any coordinate
resting on the floor as a boundary collapse, so a run on such data still
terminates at a well-defined point with all remaining coordinates
stationary.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError, UsageError
from .model import Model, ParameterSet, Transform, initial_parameters
from .summary import PosteriorSummary, make_summary

SEPARATION_BOUND = 15.0
SD_FLOOR_FRACTION = 1e-4
U_FLOOR = math.log(SD_FLOOR_FRACTION / (1.0 - SD_FLOOR_FRACTION))
STEP_CAP = 2.0
SD_STEP_CAP = 0.25


@dataclass
class MapOptions:
    """Newton optimizer settings; ``fixed`` pins named coordinates."""

    max_iter: int = 200
    tol: float = 1e-6
    init: ParameterSet | None = None
    fixed: dict[str, float] = field(default_factory=dict)


@dataclass(eq=False)
class MapResult:
    theta: ParameterSet
    u: np.ndarray
    transform: Transform
    objective: float
    grad_norm: float
    n_iter: int
    converged: bool
    warnings: list[str]
    collapsed: tuple[str, ...] = ()


def _ascent_direction(A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Modified Newton direction for maximization, A = -Hessian.

    Eigenvalues of A are replaced by max(|eig|, floor), which keeps the
    direction an ascent direction even in regions of positive curvature
    and reduces to the exact Newton step where A is positive definite.
    """
    lam, V = np.linalg.eigh(A)
    lam_abs = np.abs(lam)
    # the floor only guards against eigensolver roundoff; curvature spans
    # many orders of magnitude here (wall zones are stiff, location priors
    # are soft) and a floor tied closely to lam_max would crush legitimate
    # soft directions
    floor = max(1e-14 * float(lam_abs.max(initial=0.0)), 1e-12)
    lam_safe = np.maximum(lam_abs, floor)
    return V @ ((V.T @ g) / lam_safe)


def _clamp_floor(u: np.ndarray, is_sd: np.ndarray) -> np.ndarray:
    out = u.copy()
    low = is_sd & (out < U_FLOOR)
    out[low] = U_FLOOR
    return out


def _projected_grad_norm(g: np.ndarray, at_wall: np.ndarray) -> float:
    """Stationarity measure honoring the sd floor.

    A coordinate resting on the floor only counts when its gradient
    points back into the interior; a negative gradient there is the
    blocked collapse direction, not lack of convergence.
    """
    if g.size == 0:
        return 0.0
    kkt = g.copy()
    kkt[at_wall] = np.maximum(kkt[at_wall], 0.0)
    return float(np.max(np.abs(kkt)))


def _staged_start(model: Model, opts: MapOptions) -> ParameterSet:
    """Location-only presolve used when no explicit start is given.

    From the all-zero start every hierarchical block sits exactly on its
    mean, so every sd coordinate initially looks like a collapse
    direction and can reach the floor before the effects have moved.
    The presolve fits the locations with every sd pinned near the prior
    bound, where shrinkage is weakest, so the blocks spread as far as the
    data support. Each sd then starts at the realized spread of its own
    block, placing it inside its interior basin whenever one exists.
    """
    layout = model.layout
    d = layout.prior.d
    start = initial_parameters(layout)
    if all(layout.names[i] in opts.fixed for i in layout.sd_indices):
        return start
    fixed = dict(opts.fixed)
    for i in layout.sd_indices:
        fixed.setdefault(layout.names[i], 0.9 * d)
    inner = MapOptions(max_iter=opts.max_iter, tol=1e-4, init=start, fixed=fixed)
    try:
        pre = find_map(model, inner)
    except NumericalError:
        return start
    values = pre.theta.values.copy()
    spreads = model.realized_sds(values)
    for i in layout.sd_indices:
        if layout.names[i] in opts.fixed:
            continue
        values[i] = min(max(spreads.get(int(i), d / 2.0), 0.05 * d), 0.9 * d)
    return ParameterSet(layout, values, "constrained")


def find_map(model: Model, options: MapOptions | None = None) -> MapResult:
    """Newton ascent with step halving on the unconstrained posterior.

    Unconstrained sd coordinates are kept above U_FLOOR (sd of roughly
    1e-4 of the prior upper bound). Coordinates that finish on the floor
    with an inward-pointing gradient are reported in ``collapsed``:
    the data favor complete shrinkage of that block and the sd estimate
    should be read as zero.
    """
    opts = options or MapOptions()
    layout = model.layout
    tr = Transform(layout, opts.fixed)
    if opts.init is not None:
        start = opts.init
    else:
        start = _staged_start(model, opts)
    is_sd = tr.is_sd_free
    u = _clamp_floor(tr.u_from(start.values), is_sd)
    f = model.objective(tr, u)
    if not math.isfinite(f):
        raise NumericalError("initial point has zero posterior density")

    def _grad_norm_at(v: np.ndarray) -> float:
        g_v = model.objective_grad(tr, v)
        return _projected_grad_norm(g_v, is_sd & (v <= U_FLOOR + 1e-12))

    def _search(direction: np.ndarray) -> bool:
        nonlocal u, f
        if not np.any(direction):
            return False
        t = 1.0
        for k in range(40):
            u_new = _clamp_floor(u + t * direction, is_sd)
            f_new = model.objective(tr, u_new)
            if f_new > f:
                u = u_new
                f = f_new
                return True
            if k == 0 and f_new >= f - 1e-11 * max(1.0, abs(f)):
                # inside a completely shrunk block the stiff directions
                # carry curvature of order 1/sd^2, so the last Newton
                # corrections gain less than float resolution in the
                # objective while still fixing the gradient at first
                # order; accept those on strict gradient-norm decrease
                if _grad_norm_at(u_new) < 0.9 * _grad_norm_at(u):
                    u = u_new
                    f = max(f_new, f)
                    return True
            t *= 0.5
        return False

    def _newton_direction(idx: np.ndarray) -> np.ndarray:
        g_loc = model.objective_grad(tr, u)
        H = model.objective_hess(tr, u)
        A = -0.5 * (H + H.T)
        step = np.zeros_like(u)
        if idx.size:
            step[idx] = _ascent_direction(A[np.ix_(idx, idx)], g_loc[idx])
        return step

    def _capped(step: np.ndarray, cap: float) -> np.ndarray:
        widest = float(np.max(np.abs(step))) if step.size else 0.0
        if widest > cap:
            step = step * (cap / widest)
        return step

    converged = False
    grad_norm = math.inf
    g = np.zeros_like(u)
    it = 0
    for it in range(1, opts.max_iter + 1):
        g = model.objective_grad(tr, u)
        at_wall = is_sd & (u <= U_FLOOR + 1e-12)
        grad_norm = _projected_grad_norm(g, at_wall)
        if grad_norm < opts.tol:
            converged = True
            it -= 1
            break
        moving = ~at_wall | (g > 0.0)
        step = _newton_direction(np.flatnonzero(moving))
        sd_want = float(np.max(np.abs(step[is_sd]))) if is_sd.any() else 0.0
        if sd_want <= SD_STEP_CAP:
            improved = _search(_capped(step, STEP_CAP))
        else:
            # The joint step wants a long sd move. Between an interior
            # mode and the complete-shrinkage spike the density dips, and
            # a long accepted sd move could jump that barrier into the
            # wrong basin. Move the locations at full Newton speed, then
            # the sd block in a short step along its own Newton direction.
            improved = _search(_capped(_newton_direction(np.flatnonzero(~is_sd)), STEP_CAP))
            g = model.objective_grad(tr, u)
            at_wall = is_sd & (u <= U_FLOOR + 1e-12)
            sd_moving = is_sd & (~at_wall | (g > 0.0))
            sd_step = _newton_direction(np.flatnonzero(sd_moving))
            improved = _search(_capped(sd_step, SD_STEP_CAP)) or improved
        if not improved:
            # short steepest-ascent rescue, then give up
            g = model.objective_grad(tr, u)
            at_wall = is_sd & (u <= U_FLOOR + 1e-12)
            fallback = np.where(~at_wall | (g > 0.0), g, 0.0)
            improved = _search(_capped(fallback, SD_STEP_CAP))
        if not improved:
            break
    else:
        it = opts.max_iter

    at_wall = is_sd & (u <= U_FLOOR + 1e-12)
    if not converged:
        g = model.objective_grad(tr, u)
        grad_norm = _projected_grad_norm(g, at_wall)
        converged = grad_norm < opts.tol

    collapsed = tuple(
        layout.names[tr.free_idx[i]]
        for i in np.flatnonzero(at_wall & (g <= 0.0))
    )
    theta = ParameterSet(layout, tr.theta(u), "constrained")
    warnings: list[str] = []
    loc = theta.values[~layout.is_sd]
    loc_names = [n for n, s in zip(layout.names, layout.is_sd) if not s]
    for name, value in zip(loc_names, loc):
        if abs(value) > SEPARATION_BOUND:
            warnings.append(
                f"{name} = {value:.2f} is extreme; possible separation in the data"
            )
    for name in collapsed:
        warnings.append(
            f"{name} collapsed to the boundary; the block is completely shrunk"
            " and the sd estimate is zero"
        )
    if not converged:
        warnings.append(f"optimizer stopped with gradient norm {grad_norm:.3g}")
    return MapResult(
        theta=theta,
        u=u,
        transform=tr,
        objective=f,
        grad_norm=grad_norm,
        n_iter=it,
        converged=converged,
        warnings=warnings,
        collapsed=collapsed,
    )


def _chol_jitter(A: np.ndarray) -> np.ndarray:
    """Cholesky with up to three escalating diagonal jitters."""
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    base = 1e-8 * max(float(np.max(np.diag(A))), 1.0)
    for eps in (0.0, base, 10.0 * base, 100.0 * base):
        try:
            return np.linalg.cholesky(A + eps * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("negative Hessian at the mode is not positive definite")


def _factor_neg_hessian(model: Model, result: MapResult):
    """Cholesky factor of the kept block of the negative objective Hessian.

    Coordinates that collapsed to the sd floor are excluded from the
    factorization: the density is not locally Gaussian along them, and
    the reported posterior treats those sds as exactly zero. Returns the
    factor together with the kept free-coordinate positions.
    """
    H = model.objective_hess(result.transform, result.u)
    A = -0.5 * (H + H.T)
    free_pos = {int(idx): pos for pos, idx in enumerate(result.transform.free_idx)}
    drop = {free_pos[model.layout.index(name)] for name in result.collapsed}
    keep = np.array([i for i in range(A.shape[0]) if i not in drop], dtype=int)
    L = _chol_jitter(A[np.ix_(keep, keep)])
    return L, keep


@dataclass(eq=False)
class LaplaceFit:
    """MAP mode plus Gaussian covariance on both scales."""

    map_result: MapResult
    cov_u: np.ndarray
    cov: np.ndarray
    summary: PosteriorSummary


def laplace_covariance(model: Model, result: MapResult):
    """Covariance of the Laplace approximation.

    Returns the free-coordinate covariance on the unconstrained scale and
    the full constrained covariance obtained by pushing it through the
    transform Jacobian at the mode.
    """
    L, keep = _factor_neg_hessian(model, result)
    n_free = result.u.size
    cov_u = np.zeros((n_free, n_free))
    if keep.size:
        inv_l = np.linalg.inv(L)
        block = inv_l.T @ inv_l
        cov_u[np.ix_(keep, keep)] = 0.5 * (block + block.T)
    J = result.transform.full_jacobian(result.u)
    cov = J @ cov_u @ J.T
    return cov_u, 0.5 * (cov + cov.T)


def fit_laplace(
    model: Model,
    options: MapOptions | None = None,
    fingerprint: str = "",
    metadata: dict | None = None,
) -> LaplaceFit:
    result = find_map(model, options)
    if not result.converged:
        raise NumericalError(
            "MAP optimization did not converge: " + "; ".join(result.warnings)
        )
    cov_u, cov = laplace_covariance(model, result)
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    values = result.theta.values.copy()
    for name in result.collapsed:
        values[model.layout.index(name)] = 0.0
    meta = {
        "n_iter": result.n_iter,
        "grad_norm": result.grad_norm,
        "warnings": result.warnings,
        "collapsed": list(result.collapsed),
    }
    if metadata:
        meta.update(metadata)
    summary = make_summary(
        model.layout.names,
        values,
        sd,
        method="laplace",
        variant=model.layout.variant,
        fingerprint=fingerprint,
        metadata=meta,
    )
    return LaplaceFit(map_result=result, cov_u=cov_u, cov=cov, summary=summary)


@dataclass(frozen=True)
class GridSpec:
    """Per-sd grid points for integrating out the variance components."""

    points: dict[str, tuple[float, ...]]

    def __post_init__(self) -> None:
        for name, values in self.points.items():
            if len(values) < 1:
                raise DataError(f"grid for {name!r} needs at least one point")
            if any(not (v > 0.0 and math.isfinite(v)) for v in values):
                raise DataError(f"grid points for {name!r} must be positive and finite")


def default_grid(layout, n_points: int = 5) -> GridSpec:
    """Geometric grids over (0.05, 0.9 d) for every sd coordinate."""
    d = layout.prior.d
    pts = tuple(float(x) for x in np.geomspace(0.05, 0.9 * d, n_points))
    names = [layout.names[i] for i in layout.sd_indices]
    return GridSpec(points={name: pts for name in names})


@dataclass(eq=False)
class GridFit:
    """Mixture-of-Laplace posterior over a grid of sd values."""

    grid_names: tuple[str, ...]
    grid_points: tuple[tuple[float, ...], ...]
    weights: np.ndarray
    dropped: list[dict]
    summary: PosteriorSummary


def fit_grid(
    model: Model,
    grid: GridSpec | None = None,
    fingerprint: str = "",
    metadata: dict | None = None,
) -> GridFit:
    """Integrate the posterior over a grid of sd values.

    Each grid point pins the sd coordinates, finds the conditional mode of
    the location parameters, and contributes a Laplace evidence weight.
    The reported posterior is the weight-mixture of the conditional
    Gaussians. Supported for the pooled variant only.
    """
    layout = model.layout
    if layout.variant != "pooled":
        raise UsageError("grid integration supports the pooled variant only")
    spec = grid if grid is not None else default_grid(layout)
    names = tuple(sorted(spec.points, key=layout.index))
    covered = {layout.index(n) for n in names}
    missing = [layout.names[i] for i in layout.sd_indices if i not in covered]
    if missing:
        raise DataError(f"grid does not cover sd coordinates: {missing}")

    combos = list(itertools.product(*(spec.points[n] for n in names)))
    log_weights: list[float] = []
    modes: list[np.ndarray] = []
    variances: list[np.ndarray] = []
    kept: list[tuple[float, ...]] = []
    dropped: list[dict] = []
    warm: ParameterSet | None = None
    for combo in combos:
        fixed = dict(zip(names, combo))
        opts = MapOptions(fixed=fixed, init=warm)
        try:
            result = find_map(model, opts)
        except NumericalError as exc:
            dropped.append({"point": list(combo), "note": str(exc)})
            continue
        if not result.converged:
            dropped.append({"point": list(combo), "note": "conditional mode not found"})
            continue
        warm = result.theta
        try:
            L, _ = _factor_neg_hessian(model, result)
        except NumericalError as exc:
            dropped.append({"point": list(combo), "note": str(exc)})
            continue
        n_free = L.shape[0]
        logdet = 2.0 * float(np.sum(np.log(np.diag(L)))) if n_free else 0.0
        log_weights.append(result.objective + 0.5 * n_free * math.log(2.0 * math.pi) - 0.5 * logdet)
        inv_l = np.linalg.inv(L) if n_free else np.zeros((0, 0))
        cov_u = inv_l.T @ inv_l
        J = result.transform.full_jacobian(result.u)
        cov = J @ cov_u @ J.T
        modes.append(result.theta.values)
        variances.append(np.clip(np.diag(cov), 0.0, None))
        kept.append(combo)

    if not log_weights:
        raise NumericalError("no grid point produced a usable conditional mode")

    lw = np.asarray(log_weights)
    lw -= np.logaddexp.reduce(lw)
    w = np.exp(lw)
    w /= w.sum()

    M = np.asarray(modes)
    V = np.asarray(variances)
    mean = w @ M
    second = w @ (V + M * M)
    var = np.clip(second - mean * mean, 0.0, None)
    sd = np.sqrt(var)

    meta = {
        "grid_names": list(names),
        "grid_points": [list(c) for c in kept],
        "grid_weights": [float(x) for x in w],
        "dropped": dropped,
    }
    if metadata:
        meta.update(metadata)
    summary = make_summary(
        layout.names,
        mean,
        sd,
        method="grid",
        variant=layout.variant,
        fingerprint=fingerprint,
        metadata=meta,
    )
    return GridFit(
        grid_names=names,
        grid_points=tuple(kept),
        weights=w,
        dropped=dropped,
        summary=summary,
    )
