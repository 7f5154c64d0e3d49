"""Compiled kernels for the profile SSR sweep over the kink grid.

For a fixed query point the weighted cross products of the kink design split
into a part that does not depend on the candidate kink (``X'WX``, ``X'W pi``,
``pi'W pi``) and one-sided moments of ``g`` below and above the candidate.
Observations are binned by their position in the (sorted) kink grid, so every
candidate's moments follow from prefix and suffix sums over bins. Per query the
cost is one pass over the kernel window plus ``O(K p^3)`` for ``K`` candidates.

Bin layout per observation, with weight ``w`` and ``d = g - c`` for the bin
center ``c``::

    0 w   1 w d   2 w d^2   3 w pi   4 w d pi   5.. w x_j   5+p.. w d x_j
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

PIVOT_TOL = 1e-10
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TRUNC = 6.0


@njit(cache=True, inline="always")
def _add(bins, k, c, w, g, y, xrow, XtWX, XtWy, scal):
    p = xrow.shape[0]
    dg = g - c
    bins[k, 0] += w
    wd = w * dg
    bins[k, 1] += wd
    bins[k, 2] += wd * dg
    bins[k, 3] += w * y
    bins[k, 4] += wd * y
    for j in range(p):
        bins[k, 5 + j] += w * xrow[j]
        bins[k, 5 + p + j] += wd * xrow[j]
        XtWy[j] += w * xrow[j] * y
        for l in range(j + 1):
            XtWX[j, l] += w * xrow[j] * xrow[l]
    scal[0] += w * y * y
    scal[1] += w


@njit(cache=True, inline="always")
def _center(grid, k):
    K = grid.shape[0]
    return grid[k] if k < K else grid[K - 1]


@njit(cache=True, inline="always")
def _shift(S, delta, p):
    # re-center one-sided moments from c to c - delta
    S[2] += 2.0 * delta * S[1] + delta * delta * S[0]
    S[1] += delta * S[0]
    S[4] += delta * S[3]
    for j in range(p):
        S[5 + p + j] += delta * S[5 + j]


@njit(cache=True)
def _chol_quad(A, b, d, piv, tol):
    """Return ``b' A^{-1} b`` via Jacobi-scaled, diagonally pivoted Cholesky.

    ``A`` and ``b`` are overwritten. Returns ``nan`` when the smallest pivot of
    the scaled matrix falls below ``tol``.
    """
    for i in range(d):
        if not A[i, i] > 0.0:
            return np.nan
    for i in range(d):
        s_i = math.sqrt(A[i, i])
        b[i] /= s_i
        for j in range(d):
            A[i, j] /= s_i
            A[j, i] /= s_i
    for i in range(d):
        piv[i] = i
    for k in range(d):
        best = k
        for i in range(k + 1, d):
            if A[i, i] > A[best, best]:
                best = i
        if best != k:
            for j in range(d):
                t = A[k, j]
                A[k, j] = A[best, j]
                A[best, j] = t
            for j in range(d):
                t = A[j, k]
                A[j, k] = A[j, best]
                A[j, best] = t
            t = b[k]
            b[k] = b[best]
            b[best] = t
        if not A[k, k] > tol:
            return np.nan
        lkk = math.sqrt(A[k, k])
        A[k, k] = lkk
        for i in range(k + 1, d):
            A[i, k] /= lkk
            A[k, i] = A[i, k]
        # full trailing update keeps the block symmetric for later row/column swaps
        for j in range(k + 1, d):
            for i in range(k + 1, d):
                A[i, j] -= A[i, k] * A[j, k]
    quad = 0.0
    for i in range(d):
        acc = b[i]
        for j in range(i):
            acc -= A[i, j] * b[j]
        b[i] = acc / A[i, i]
        quad += b[i] * b[i]
    return quad


@njit(cache=True)
def _ssr_from_bins(bins, XtWX, XtWy, yy, grid, mass, ssr_out):
    # bin k holds rows with grid[k-1] <= g < grid[k], centered at grid[k]
    # (the last bin at grid[K-1]); one-sided moments are carried between
    # neighbouring candidates by re-centering, where all terms share a sign
    K = grid.shape[0]
    p = XtWX.shape[0]
    q = bins.shape[1]
    d = p + 2
    right = np.empty((K, q))
    R = bins[K].copy()
    right[K - 1] = R
    for k in range(K - 2, -1, -1):
        for f in range(q):
            R[f] += bins[k + 1, f]
        _shift(R, grid[k + 1] - grid[k], p)
        right[k] = R
    L = np.zeros(q)
    A = np.empty((d, d))
    b = np.empty(d)
    piv = np.empty(d, dtype=np.int64)
    for k in range(K):
        if k > 0:
            _shift(L, grid[k - 1] - grid[k], p)
        for f in range(q):
            L[f] += bins[k, f]
        R = right[k]
        A[:, :] = 0.0
        A[0, 0] = L[2]
        A[1, 1] = R[2]
        b[0] = L[4]
        b[1] = R[4]
        for j in range(p):
            a0 = L[5 + p + j]
            a1 = R[5 + p + j]
            A[0, 2 + j] = a0
            A[2 + j, 0] = a0
            A[1, 2 + j] = a1
            A[2 + j, 1] = a1
            b[2 + j] = XtWy[j]
            for l in range(j + 1):
                A[2 + j, 2 + l] = XtWX[j, l]
                A[2 + l, 2 + j] = XtWX[j, l]
        quad = _chol_quad(A, b, d, piv, PIVOT_TOL)
        if np.isnan(quad):
            ssr_out[k] = np.inf
        else:
            ssr_out[k] = max(yy - quad, 0.0) / mass


@njit(cache=True)
def profile_weights(g, y, X, bin_idx, weights, grid, ssr_out):
    """Profile SSR on ``grid`` for explicit (unnormalized) weights; returns mass."""
    n, p = X.shape
    K = grid.shape[0]
    bins = np.zeros((K + 1, 5 + 2 * p))
    XtWX = np.zeros((p, p))
    XtWy = np.zeros(p)
    scal = np.zeros(2)
    for i in range(n):
        w = weights[i]
        if w != 0.0:
            _add(bins, bin_idx[i], _center(grid, bin_idx[i]), w, g[i], y[i], X[i], XtWX, XtWy, scal)
    mass = scal[1]
    if mass > 0.0:
        _ssr_from_bins(bins, XtWX, XtWy, scal[0], grid, mass, ssr_out)
    else:
        ssr_out[:] = np.inf
    return mass


@njit(cache=True)
def profile_kernel(g, y, X, m, bin_idx, grid, mq, bw, skip, min_mass, ssr_out):
    """Profile SSR at query ``mq`` with Gaussian weights in ``m``.

    Arrays must be sorted by ``m``. Row ``skip`` (``-1`` for none) is left out.
    Returns the kernel mass; when it is below ``min_mass`` every SSR is ``inf``.
    """
    n, p = X.shape
    K = grid.shape[0]
    lo = np.searchsorted(m, mq - _TRUNC * bw, side="left")
    hi = np.searchsorted(m, mq + _TRUNC * bw, side="right")
    bins = np.zeros((K + 1, 5 + 2 * p))
    XtWX = np.zeros((p, p))
    XtWy = np.zeros(p)
    scal = np.zeros(2)
    for i in range(lo, hi):
        if i == skip:
            continue
        t = (m[i] - mq) / bw
        if abs(t) > _TRUNC:
            continue
        w = _INV_SQRT_2PI * math.exp(-0.5 * t * t)
        _add(bins, bin_idx[i], _center(grid, bin_idx[i]), w, g[i], y[i], X[i], XtWX, XtWy, scal)
    mass = scal[1]
    if mass > 0.0 and mass >= min_mass:
        _ssr_from_bins(bins, XtWX, XtWy, scal[0], grid, mass, ssr_out)
    else:
        ssr_out[:] = np.inf
    return mass


@njit(cache=True, parallel=True)
def sweep_queries(g, y, X, m, bin_idx, grid, queries, skips, bw, min_mass, arg_out, mass_out):
    """Argmin grid index per query (``-1`` when none is usable).

    Each query is independent, so the result does not depend on scheduling.
    """
    nq = queries.shape[0]
    K = grid.shape[0]
    for j in prange(nq):
        ssr = np.empty(K)
        mass_out[j] = profile_kernel(g, y, X, m, bin_idx, grid, queries[j], bw, skips[j], min_mass, ssr)
        best = -1
        val = np.inf
        for k in range(K):
            if ssr[k] < val:
                val = ssr[k]
                best = k
        arg_out[j] = best
