"""Pointwise profile least squares, threshold contours and the two-step slope estimator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _sweep
from .core import (
    Dataset,
    DegenerateWindowError,
    LocalFit,
    ModelSpec,
    SingularFitError,
    ValidationError,
    kink_design,
)
from .kernel import WeightVector, bandwidth, local_weights

__all__ = [
    "CoefficientEstimate",
    "ProfileCurve",
    "ThresholdContour",
    "estimate_contour",
    "grid_search",
    "interior_mask",
    "leave_one_out_thresholds",
    "local_fit",
    "min_support",
    "naive_grid_search",
    "profile_ssr",
    "second_step_beta",
]

PIVOT_TOL = _sweep.PIVOT_TOL


@dataclass(frozen=True)
class ProfileCurve:
    grid: np.ndarray
    ssr: np.ndarray
    argmin_index: int


@dataclass(frozen=True, eq=False)
class ThresholdContour:
    """Estimated kink location on a grid of shifter values.

    ``gamma_hat`` and ``loo_gamma`` hold ``nan`` where the local fit is missing
    (too little kernel mass or no full-rank candidate).
    """

    query_points: np.ndarray
    gamma_hat: np.ndarray
    bandwidth: float
    interior_mask: np.ndarray
    effective_mass: np.ndarray
    gamma_grid: np.ndarray
    query_levels: np.ndarray | None = None
    loo_gamma: np.ndarray | None = None

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.gamma_hat)


@dataclass(frozen=True, eq=False)
class CoefficientEstimate:
    """Second-step slope estimates.

    ``beta_c`` follows the dataset's covariate order (intercept included);
    ``beta_v`` holds control-function coefficients when the dataset carries
    first-stage residuals.
    """

    beta_g: float
    beta_x: float
    beta_c: np.ndarray
    beta_v: np.ndarray | None
    n_used: int
    names: tuple
    standard_errors: np.ndarray | None = None
    n_boundary: int = 0
    used_mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def coefficients(self) -> np.ndarray:
        parts = [[self.beta_g, self.beta_x], self.beta_c]
        if self.beta_v is not None:
            parts.append(self.beta_v)
        return np.concatenate(parts)


def min_support(p: int) -> float:
    """Smallest kernel mass accepted for a local fit with ``p`` covariates."""
    return float(p + 3)


def _check_rank(R, query_point=None, gamma=None):
    d = np.abs(np.diag(R))
    if d.size == 0 or not np.all(d * d > PIVOT_TOL):
        raise SingularFitError(
            f"rank-deficient design (m={query_point}, gamma={gamma})",
            query_point=query_point,
            gamma=gamma,
        )


def _wls(Z, y, w, query_point=None, gamma=None):
    """Weighted least squares with a Jacobi-scaled pivoted QR rank check."""
    keep = w > 0
    sw = np.sqrt(w[keep])
    A = Z[keep] * sw[:, None]
    rhs = y[keep] * sw
    scale = np.sqrt(np.einsum("ij,ij->j", A, A))
    if A.shape[0] < A.shape[1] or np.any(scale == 0):
        raise SingularFitError(
            f"rank-deficient design (m={query_point}, gamma={gamma})",
            query_point=query_point,
            gamma=gamma,
        )
    Q, R, perm = scipy.linalg.qr(A / scale, mode="economic", pivoting=True)
    _check_rank(R, query_point, gamma)
    sol = scipy.linalg.solve_triangular(R, Q.T @ rhs)
    coef = np.empty_like(sol)
    coef[perm] = sol
    coef /= scale
    resid = y - Z @ coef
    return coef, float(np.sum(w * resid * resid))


def profile_ssr(dataset: Dataset, weights: WeightVector, gamma: float):
    """Weighted least squares of the outcome on the kink design at ``gamma``.

    Returns
    -------
    coefficients : ndarray
        ``(beta_g, beta_x, beta_c...)``.
    ssr : float
        Attained weighted sum of squared residuals under the normalized weights.
    """
    w = np.asarray(weights.weights, dtype=np.float64)
    w = w / w.sum()
    Z = kink_design(dataset.running, gamma, dataset.covariates)
    return _wls(Z, dataset.outcome, w, weights.query_point, gamma)


def _bins(running, grid):
    return np.searchsorted(grid, running, side="right").astype(np.int64)


def _as_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValidationError("gamma grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("gamma grid must be strictly increasing")
    return np.ascontiguousarray(grid)


def grid_search(dataset: Dataset, weights: WeightVector, grid):
    """Minimize the profile SSR over a grid of kink locations.

    The curve comes from the binned sufficient-statistics sweep; the returned
    :class:`LocalFit` is recomputed with :func:`profile_ssr` at the minimizer.
    Ties go to the smallest candidate.
    """
    grid = _as_grid(grid)
    w = np.ascontiguousarray(weights.weights, dtype=np.float64)
    ssr = np.empty(grid.size)
    _sweep.profile_weights(
        np.ascontiguousarray(dataset.running),
        np.ascontiguousarray(dataset.outcome),
        np.ascontiguousarray(dataset.covariates),
        _bins(dataset.running, grid),
        w / w.sum(),
        grid,
        ssr,
    )
    if not np.isfinite(ssr).any():
        raise DegenerateWindowError(
            f"no full-rank candidate at m={weights.query_point}", query_point=weights.query_point
        )
    k = int(np.argmin(ssr))
    coef, s = profile_ssr(dataset, weights, grid[k])
    fit = LocalFit(
        gamma=float(grid[k]),
        beta_g=float(coef[0]),
        beta_x=float(coef[1]),
        beta_c=coef[2:],
        ssr=s,
        query_point=weights.query_point,
        effective_mass=weights.total_mass,
    )
    return ProfileCurve(grid=grid, ssr=ssr, argmin_index=k), fit


def naive_grid_search(dataset: Dataset, weights: WeightVector, grid) -> ProfileCurve:
    """Reference profile: an independent weighted least squares refit per candidate."""
    grid = _as_grid(grid)
    ssr = np.full(grid.size, np.inf)
    for k, gam in enumerate(grid):
        try:
            ssr[k] = profile_ssr(dataset, weights, gam)[1]
        except SingularFitError:
            pass
    return ProfileCurve(grid=grid, ssr=ssr, argmin_index=int(np.argmin(ssr)))


def local_fit(dataset: Dataset, spec: ModelSpec, m: float, bw: float | None = None) -> LocalFit:
    """Pointwise fit at shifter value ``m`` using the spec's grid and bandwidth."""
    b = bandwidth(dataset.n, spec.bandwidth) if bw is None else bw
    weights = local_weights(dataset.shifter, m, b)
    if weights.total_mass < min_support(dataset.p):
        raise DegenerateWindowError(
            f"kernel mass {weights.total_mass:.3g} at m={m} below {min_support(dataset.p)}",
            query_point=m,
        )
    grid = spec.gamma_grid.resolve(dataset.running)
    return grid_search(dataset, weights, grid)[1]


def interior_mask(shifter, quantiles=(0.01, 0.99)) -> np.ndarray:
    """1 where the shifter lies inside the given empirical quantile range."""
    shifter = np.asarray(shifter, dtype=np.float64)
    lo, hi = np.quantile(shifter, quantiles)
    return ((shifter >= lo) & (shifter <= hi)).astype(np.int8)


class _Sorted:
    """Dataset arrays sorted by the shifter, ready for the compiled sweep."""

    def __init__(self, dataset: Dataset, grid: np.ndarray):
        self.order = np.argsort(dataset.shifter, kind="stable")
        o = self.order
        self.g = np.ascontiguousarray(dataset.running[o])
        self.y = np.ascontiguousarray(dataset.outcome[o])
        self.X = np.ascontiguousarray(dataset.covariates[o])
        self.m = np.ascontiguousarray(dataset.shifter[o])
        self.grid = grid
        self.bin_idx = _bins(self.g, grid)

    def sweep(self, queries, skips, bw, min_mass):
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        arg = np.empty(queries.size, dtype=np.int64)
        mass = np.empty(queries.size)
        _sweep.sweep_queries(
            self.g, self.y, self.X, self.m, self.bin_idx, self.grid,
            queries, np.ascontiguousarray(skips, dtype=np.int64), bw, min_mass, arg, mass,
        )
        gamma = np.where(arg >= 0, self.grid[np.maximum(arg, 0)], np.nan)
        return gamma, mass


def _setup(dataset: Dataset, spec: ModelSpec):
    problems = spec.problems()
    if problems:
        raise ValidationError("; ".join(problems))
    bw = bandwidth(dataset.n, spec.bandwidth)
    grid = _as_grid(spec.gamma_grid.resolve(dataset.running))
    return bw, grid


def leave_one_out_thresholds(dataset: Dataset, spec: ModelSpec, *, _prepared=None) -> np.ndarray:
    """Kink estimate at each ``m_i`` with observation ``i`` left out.

    Returns an array in the dataset's row order with ``nan`` where the local
    fit is missing.
    """
    bw, grid = _setup(dataset, spec)
    prep = _prepared or _Sorted(dataset, grid)
    n = dataset.n
    gamma_sorted, _ = prep.sweep(prep.m, np.arange(n), bw, min_support(dataset.p))
    out = np.empty(n)
    out[prep.order] = gamma_sorted
    return out


def estimate_contour(dataset: Dataset, spec: ModelSpec, *, leave_one_out: bool = False) -> ThresholdContour:
    """Estimate the kink location at every point of the spec's query grid."""
    bw, grid = _setup(dataset, spec)
    prep = _Sorted(dataset, grid)
    queries = spec.query_grid.resolve(dataset.shifter)
    levels = spec.query_grid.levels() if spec.query_grid.scale == "quantile" else None
    gamma_hat, mass = prep.sweep(queries, np.full(queries.size, -1), bw, min_support(dataset.p))
    loo = leave_one_out_thresholds(dataset, spec, _prepared=prep) if leave_one_out else None
    return ThresholdContour(
        query_points=np.asarray(queries, dtype=np.float64),
        gamma_hat=gamma_hat,
        bandwidth=bw,
        interior_mask=interior_mask(dataset.shifter, spec.interior_quantiles),
        effective_mass=mass,
        gamma_grid=grid,
        query_levels=levels,
        loo_gamma=loo,
    )


def second_step_design(dataset: Dataset, loo_gamma, interior) -> tuple[np.ndarray, np.ndarray]:
    """Design ``z_i(gamma_{-i}(m_i))`` and the mask of rows entering the second step."""
    loo_gamma = np.asarray(loo_gamma, dtype=np.float64)
    used = (np.asarray(interior) == 1) & np.isfinite(loo_gamma)
    Z = kink_design(dataset.running[used], loo_gamma[used], dataset.covariates[used])
    return Z, used


def second_step_beta(dataset: Dataset, loo_gamma, interior, gamma_grid=None) -> CoefficientEstimate:
    """OLS of the outcome on the kink design evaluated at leave-one-out kinks.

    Only rows with ``interior == 1`` and a non-missing leave-one-out kink enter.
    When ``gamma_grid`` is given, rows whose kink sits on the grid's end points
    are counted in ``n_boundary`` (they are kept).
    """
    Z, used = second_step_design(dataset, loo_gamma, interior)
    k = Z.shape[1]
    if used.sum() < k:
        raise SingularFitError(f"{int(used.sum())} usable rows for {k} coefficients")
    coef, _ = _wls(Z, dataset.outcome[used], np.ones(int(used.sum())))
    n_boundary = 0
    if gamma_grid is not None and len(gamma_grid):
        lg = np.asarray(loo_gamma)[used]
        n_boundary = int(np.sum((lg == gamma_grid[0]) | (lg == gamma_grid[-1])))
    return _coefficient_estimate(dataset, coef, int(used.sum()), n_boundary, used)


def _coefficient_estimate(dataset, coef, n_used, n_boundary=0, used=None, se=None):
    e = dataset.n_controls
    p = dataset.p
    beta_c = coef[2 : 2 + p - e]
    beta_v = coef[2 + p - e :] if e else None
    names = ("beta_g", "beta_x") + tuple(dataset.covariate_names)
    return CoefficientEstimate(
        beta_g=float(coef[0]),
        beta_x=float(coef[1]),
        beta_c=beta_c,
        beta_v=beta_v,
        n_used=n_used,
        names=names,
        standard_errors=se,
        n_boundary=n_boundary,
        used_mask=used,
    )
