"""Dense reference computations built without the library's solvers."""

from __future__ import annotations

import numpy as np


def normal_equations_wls(Z, y, w):
    """Weighted least squares through the normal equations, solved in long double."""
    Z = np.asarray(Z, dtype=np.longdouble)
    y = np.asarray(y, dtype=np.longdouble)
    w = np.asarray(w, dtype=np.longdouble)
    w = w / w.sum()
    A = (Z * w[:, None]).T @ Z
    b = (Z * w[:, None]).T @ y
    coef = np.linalg.solve(A.astype(np.float64), b.astype(np.float64))
    # one step of iterative refinement in extended precision
    r = b - A @ coef.astype(np.longdouble)
    coef = coef + np.linalg.solve(A.astype(np.float64), r.astype(np.float64))
    resid = y - Z @ coef.astype(np.longdouble)
    return coef.astype(np.float64), float(np.sum(w * resid * resid))


def sandwich_se(Z, y):
    """Heteroskedasticity-robust (HC0) standard errors of OLS."""
    Z = np.asarray(Z, dtype=np.float64)
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    u = y - Z @ coef
    bread = np.linalg.inv(Z.T @ Z)
    meat = (Z * (u * u)[:, None]).T @ Z
    return np.sqrt(np.diag(bread @ meat @ bread))
