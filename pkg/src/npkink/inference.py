"""Control-function correction and wild-bootstrap inference for the slope coefficients."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from numba import njit, prange
from scipy import stats

from .core import RUNNING, Dataset, SingularFitError, ValidationError, as_names
from .estimator import PIVOT_TOL, CoefficientEstimate, second_step_design

__all__ = [
    "BootstrapResult",
    "ControlFunctionResult",
    "OLSFactor",
    "control_function",
    "rademacher",
    "significance_stars",
    "wild_bootstrap",
]


class OLSFactor:
    """Column-scaled pivoted QR of a fixed design, reusable across right-hand sides."""

    def __init__(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        n, k = Z.shape
        self.scale = np.sqrt(np.einsum("ij,ij->j", Z, Z))
        if n < k or np.any(self.scale == 0):
            raise SingularFitError(f"rank-deficient design ({n} rows, {k} columns)")
        self.Q, self.R, self.perm = scipy.linalg.qr(Z / self.scale, mode="economic", pivoting=True)
        d = np.abs(np.diag(self.R))
        if not np.all(d * d > PIVOT_TOL):
            raise SingularFitError("rank-deficient design")

    def solve(self, y):
        y = np.asarray(y, dtype=np.float64)
        sol = scipy.linalg.solve_triangular(self.R, self.Q.T @ y)
        out = np.empty_like(sol)
        out[self.perm] = sol
        return out / (self.scale if sol.ndim == 1 else self.scale[:, None])

    def solve_draws(self, fitted, resid, eps):
        """Solve for ``fitted + resid * eps[b]`` per row ``b`` of ``eps``.

        Each draw goes through the same fixed-order loops, so a replicate does
        not depend on how draws are batched or on the thread count.
        """
        out = np.empty((eps.shape[0], self.R.shape[0]))
        _solve_draws(np.ascontiguousarray(self.Q.T), self.R, fitted, resid, eps, out)
        sol = np.empty_like(out)
        sol[:, self.perm] = out
        return sol / self.scale


@njit(cache=True, parallel=True)
def _solve_draws(Qt, R, fitted, resid, eps, out):
    k, n = Qt.shape
    for b in prange(eps.shape[0]):
        c = np.zeros(k)
        for j in range(k):
            acc = 0.0
            for i in range(n):
                acc += Qt[j, i] * (fitted[i] + resid[i] * eps[b, i])
            c[j] = acc
        for j in range(k - 1, -1, -1):
            acc = c[j]
            for l in range(j + 1, k):
                acc -= R[j, l] * out[b, l]
            out[b, j] = acc / R[j, j]


_ZERO_RESID = 1e-10


@dataclass(frozen=True, eq=False)
class ControlFunctionResult:
    residuals: np.ndarray
    first_stage_coefficients: np.ndarray
    augmented: Dataset
    instrument_design: np.ndarray


def _with_intercept(W):
    W = np.asarray(W, dtype=np.float64)
    if W.ndim == 1:
        W = W[:, None]
    has_const = any(np.all(W[:, j] == W[0, j]) and W[0, j] != 0 for j in range(W.shape[1]))
    return W if has_const else np.column_stack([np.ones(W.shape[0]), W])


def control_function(dataset: Dataset, endogenous=(), instruments=None) -> ControlFunctionResult:
    """Regress each endogenous column on the instruments and append the residuals.

    ``endogenous`` names ``"running"`` and/or covariates. An intercept is added
    to the first stage unless the instruments already carry a constant column.
    The kink basis keeps using the original columns; the residuals enter as
    extra covariates, after any existing ones. A residual column that is zero
    up to rounding (perfect first stage) is reported but not appended.
    """
    endogenous = as_names(endogenous)
    if not endogenous:
        return ControlFunctionResult(
            residuals=np.empty((dataset.n, 0)),
            first_stage_coefficients=np.empty((0, 0)),
            augmented=dataset,
            instrument_design=np.empty((dataset.n, 0)),
        )
    W = dataset.instruments if instruments is None else instruments
    if W is None:
        raise ValidationError("control function needs instruments")
    W1 = _with_intercept(W)
    if W1.shape[0] != dataset.n:
        raise ValidationError(f"instruments have {W1.shape[0]} rows, expected {dataset.n}")
    if W1.shape[1] - 1 < len(endogenous):
        raise ValidationError(
            f"{len(endogenous)} endogenous columns need at least as many instruments"
        )
    try:
        factor = OLSFactor(W1)
    except SingularFitError as exc:
        raise SingularFitError(f"first stage: {exc}") from None
    cols = []
    for name in endogenous:
        try:
            cols.append(dataset.column(name))
        except KeyError:
            raise ValidationError(f"endogenous column {name!r} not found") from None
    E = np.column_stack(cols)
    eta = factor.solve(E)
    resid = E - W1 @ eta
    # a perfect first stage leaves nothing to control for; a zero column would
    # only make the augmented design singular
    scale = np.sqrt(np.einsum("ij,ij->j", E, E))
    zero = np.sqrt(np.einsum("ij,ij->j", resid, resid)) <= _ZERO_RESID * np.maximum(scale, 1.0)
    resid[:, zero] = 0.0
    names = tuple(f"vhat_{'g' if c == RUNNING else c}" for c in endogenous)
    keep = ~zero
    augmented = replace(
        dataset,
        covariates=np.column_stack([dataset.covariates, resid[:, keep]]),
        covariate_names=dataset.covariate_names + tuple(nm for nm, k in zip(names, keep) if k),
        n_controls=dataset.n_controls + int(keep.sum()),
    )
    return ControlFunctionResult(
        residuals=resid,
        first_stage_coefficients=eta,
        augmented=augmented,
        instrument_design=W1,
    )


def rademacher(seed: int, draw: int, n: int) -> np.ndarray:
    """Multipliers in {-1, +1} for one bootstrap draw.

    A Philox counter-based stream keyed by ``(seed, draw)``, so any draw can be
    regenerated independently of the others.
    """
    key = np.array([seed, draw], dtype=np.uint64)
    bits = np.random.Generator(np.random.Philox(key=key)).integers(0, 2, size=n, dtype=np.int8)
    return 2.0 * bits - 1.0


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    replicates: np.ndarray
    standard_errors: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    seed: int
    n_draws: int
    alpha: float


def wild_bootstrap(
    dataset: Dataset,
    loo_gamma,
    interior_mask,
    beta_star: CoefficientEstimate,
    B: int = 999,
    alpha: float = 0.05,
    seed: int = 0,
    chunk: int = 64,
) -> BootstrapResult:
    """Wild bootstrap of the second-step coefficients with Rademacher multipliers.

    The design ``z_i(gamma_{-i}(m_i))`` is held fixed and only the second-step
    least squares is redone, so the kink is never re-estimated.
    """
    if B < 2:
        raise ValidationError(f"need B >= 2 bootstrap draws, got {B}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    if seed < 0:
        raise ValidationError("seed must be non-negative")
    Z, used = second_step_design(dataset, loo_gamma, interior_mask)
    y = dataset.outcome[used]
    factor = OLSFactor(Z)
    beta = beta_star.coefficients
    fitted = Z @ beta
    resid = y - fitted
    # residuals at rounding level carry no signal
    resid[np.abs(resid) <= 16 * np.finfo(float).eps * (np.abs(y) + np.abs(Z) @ np.abs(beta))] = 0.0
    reps = np.empty((B, beta.size))
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        E = np.stack([rademacher(seed, b, y.size) for b in range(start, stop)])
        reps[start:stop] = factor.solve_draws(fitted, resid, E)
    # shifting by one replicate leaves the sd unchanged and makes identical draws give exactly 0
    se = (reps - reps[0]).std(axis=0, ddof=1)
    lo, hi = np.quantile(reps, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    return BootstrapResult(
        replicates=reps,
        standard_errors=se,
        ci_lower=lo,
        ci_upper=hi,
        seed=int(seed),
        n_draws=int(B),
        alpha=float(alpha),
    )


def significance_stars(coef, se) -> list[str]:
    """``*``/``**``/``***`` at the 10/5/1% levels, two-sided normal approximation."""
    coef = np.atleast_1d(np.asarray(coef, dtype=np.float64))
    se = np.atleast_1d(np.asarray(se, dtype=np.float64))
    out = []
    for c, s in zip(coef, se):
        if not s > 0:
            out.append("")
            continue
        p = 2.0 * stats.norm.sf(abs(c / s))
        out.append("***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else "")
    return out
