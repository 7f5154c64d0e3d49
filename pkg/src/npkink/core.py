"""Data types shared by the estimator, inference, simulation and pipeline layers.

The model is the regression kink with a shifter-dependent kink location::

    pi_i = beta_g * (g_i - gamma(m_i))_- + beta_x * (g_i - gamma(m_i))_+ + x_i' beta_c + u_i

``g`` is the running variable, ``m`` the threshold shifter and ``x`` a covariate
matrix that carries the intercept as an explicit constant column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

__all__ = [
    "DEFAULT_GAMMA_GRID",
    "DEFAULT_QUERY_GRID",
    "Dataset",
    "DegenerateWindowError",
    "Grid",
    "KinkBasis",
    "LocalFit",
    "ModelSpec",
    "NpkinkError",
    "SingularFitError",
    "ValidationError",
    "kink_basis",
    "kink_design",
    "validate",
]

RUNNING = "running"


class NpkinkError(Exception):
    """Base class for library errors."""


class ValidationError(NpkinkError, ValueError):
    """Inputs violate a documented precondition."""


class SingularFitError(NpkinkError, np.linalg.LinAlgError):
    """A least squares design is rank deficient."""

    def __init__(self, message, query_point=None, gamma=None):
        super().__init__(message)
        self.query_point = query_point
        self.gamma = gamma


class DegenerateWindowError(NpkinkError):
    """A kernel window carries no usable mass."""

    def __init__(self, message, query_point=None):
        super().__init__(message)
        self.query_point = query_point


def _frozen(a, ndim):
    arr = np.array(a, dtype=np.float64, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr[:, None]
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented observations.

    Parameters
    ----------
    outcome, running, shifter : array_like, shape (n,)
        Outcome ``pi``, running variable ``g`` and threshold shifter ``m``.
    covariates : array_like, shape (n, p)
        Covariates ``x`` including one constant (intercept) column. Control
        function residuals, when present, are the last ``n_controls`` columns.
    instruments : array_like, shape (n, q), optional
    export_flag : array_like of {0, 1}, shape (n,), optional
    covariate_names, instrument_names : sequence of str, optional
    n_controls : int
        Number of trailing covariate columns that are first-stage residuals.

    Arrays are copied and made read-only on construction; use
    :func:`dataclasses.replace` to derive modified datasets.
    """

    outcome: np.ndarray
    running: np.ndarray
    shifter: np.ndarray
    covariates: np.ndarray
    instruments: np.ndarray | None = None
    export_flag: np.ndarray | None = None
    covariate_names: tuple = ()
    instrument_names: tuple = ()
    n_controls: int = 0

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "outcome", _frozen(self.outcome, 1))
        set_(self, "running", _frozen(self.running, 1))
        set_(self, "shifter", _frozen(self.shifter, 1))
        set_(self, "covariates", _frozen(self.covariates, 2))
        if self.instruments is not None:
            set_(self, "instruments", _frozen(self.instruments, 2))
        if self.export_flag is not None:
            set_(self, "export_flag", _frozen(self.export_flag, 1))
        p = self.covariates.shape[1]
        names = tuple(self.covariate_names) or tuple(
            "const" if i == 0 else f"x{i}" for i in range(p)
        )
        if len(names) != p:
            raise ValidationError(f"{len(names)} covariate names for {p} columns")
        set_(self, "covariate_names", names)
        if self.instruments is not None:
            q = self.instruments.shape[1]
            inames = tuple(self.instrument_names) or tuple(f"w{i + 1}" for i in range(q))
            if len(inames) != q:
                raise ValidationError(f"{len(inames)} instrument names for {q} columns")
            set_(self, "instrument_names", inames)

    @property
    def n(self) -> int:
        return int(self.outcome.shape[0])

    @property
    def p(self) -> int:
        return int(self.covariates.shape[1])

    def subset(self, mask) -> Dataset:
        """Rows selected by a boolean mask or index array."""
        idx = np.asarray(mask)
        return replace(
            self,
            outcome=self.outcome[idx],
            running=self.running[idx],
            shifter=self.shifter[idx],
            covariates=self.covariates[idx],
            instruments=None if self.instruments is None else self.instruments[idx],
            export_flag=None if self.export_flag is None else self.export_flag[idx],
        )

    def column(self, name: str) -> np.ndarray:
        """Look up the running variable (``"running"``) or a covariate by name."""
        if name == RUNNING:
            return self.running
        try:
            return self.covariates[:, self.covariate_names.index(name)]
        except ValueError:
            raise KeyError(name) from None


@dataclass(frozen=True)
class KinkBasis:
    """Regressors ``((g - gamma)_-, (g - gamma)_+, x)`` for one observation."""

    neg: float
    pos: float
    covs: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate(([self.neg, self.pos], self.covs))


def kink_basis(g: float, gamma: float, covs) -> KinkBasis:
    """Split ``g - gamma`` into its negative and positive parts.

    >>> kink_basis(2.0, 1.0, [1.0])
    KinkBasis(neg=0.0, pos=1.0, covs=array([1.]))
    """
    covs = np.asarray(covs, dtype=np.float64).reshape(-1)
    if not (math.isfinite(g) and math.isfinite(gamma) and np.isfinite(covs).all()):
        raise ValidationError("kink_basis requires finite inputs")
    d = float(g) - float(gamma)
    return KinkBasis(neg=min(d, 0.0), pos=max(d, 0.0), covs=covs)


def kink_design(running, gamma, covariates) -> np.ndarray:
    """Stack kink bases row-wise; ``gamma`` may be a scalar or per-row array."""
    d = np.asarray(running, dtype=np.float64) - np.asarray(gamma, dtype=np.float64)
    covariates = np.asarray(covariates, dtype=np.float64)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    return np.column_stack([np.minimum(d, 0.0), np.maximum(d, 0.0), covariates])


@dataclass(frozen=True)
class Grid:
    """Equally spaced grid ``lo..hi`` with ``count`` points.

    With ``scale="quantile"`` the end points are probability levels and are
    mapped through the empirical quantiles of the variable the grid is applied
    to; with ``scale="value"`` they are used as is. ``points`` overrides both.
    """

    lo: float = 0.0
    hi: float = 1.0
    count: int = 2
    scale: str = "value"
    points: tuple | None = None

    @classmethod
    def explicit(cls, points) -> Grid:
        pts = tuple(float(v) for v in np.asarray(points, dtype=np.float64).reshape(-1))
        lo, hi = (pts[0], pts[-1]) if pts else (0.0, 0.0)
        return cls(lo=lo, hi=hi, count=len(pts), scale="value", points=pts)

    @classmethod
    def parse(cls, text: str, default: Grid, scale: str = "value") -> Grid:
        """Parse ``"lo:hi:count"`` or ``"auto"``."""
        if text in (None, "", "auto"):
            return default
        try:
            lo, hi, count = text.split(":")
            return cls(float(lo), float(hi), int(count), scale)
        except ValueError:
            raise ValidationError(f"grid must be 'lo:hi:count' or 'auto', got {text!r}") from None

    def levels(self) -> np.ndarray:
        if self.points is not None:
            return np.asarray(self.points, dtype=np.float64)
        return np.linspace(self.lo, self.hi, self.count)

    def resolve(self, values=None) -> np.ndarray:
        lv = self.levels()
        if self.scale == "quantile":
            if values is None:
                raise ValidationError("quantile grid needs the data it refers to")
            return np.quantile(np.asarray(values, dtype=np.float64), lv)
        return lv

    def problems(self, name: str) -> list[str]:
        out = []
        if self.scale not in ("value", "quantile"):
            out.append(f"{name}: unknown scale {self.scale!r}")
        if self.points is None and self.count < 2:
            out.append(f"{name}: grid count must be >= 2")
        if self.scale == "quantile" and not (0.0 <= self.lo <= self.hi <= 1.0):
            out.append(f"{name}: quantile levels must lie in [0, 1]")
        if self.points is not None and np.any(np.diff(self.levels()) <= 0):
            out.append(f"{name}: explicit grid must be strictly increasing")
        return out


DEFAULT_GAMMA_GRID = Grid(0.02, 0.98, 401, "quantile")
DEFAULT_QUERY_GRID = Grid(0.15, 0.85, 71, "quantile")


@dataclass(frozen=True)
class ModelSpec:
    """Estimation settings.

    ``bandwidth`` is ``"rule_of_thumb"`` (``n**(-1/5)``), ``"undersmooth"``
    (``n**(-1/3.5)``) or a positive float. ``endogenous_columns`` names columns
    to be replaced by control functions: ``"running"`` for ``g`` or a covariate
    name.
    """

    kernel: str = "gaussian"
    bandwidth: str | float = "rule_of_thumb"
    gamma_grid: Grid = DEFAULT_GAMMA_GRID
    query_grid: Grid = DEFAULT_QUERY_GRID
    interior_quantiles: tuple = (0.01, 0.99)
    endogenous_columns: tuple = field(default_factory=tuple)

    def problems(self) -> list[str]:
        out = []
        if self.kernel != "gaussian":
            out.append(f"kernel: only 'gaussian' is supported, got {self.kernel!r}")
        bw = self.bandwidth
        if isinstance(bw, str):
            if bw not in ("rule_of_thumb", "undersmooth"):
                out.append(f"bandwidth: unknown rule {bw!r}")
        elif not (float(bw) > 0 and math.isfinite(float(bw))):
            out.append("bandwidth: fixed value must be positive")
        out += self.gamma_grid.problems("gamma_grid")
        out += self.query_grid.problems("query_grid")
        lo, hi = self.interior_quantiles
        if not (0.0 <= lo < hi <= 1.0):
            out.append("interior_quantiles: need 0 <= lo < hi <= 1")
        return out


@dataclass(frozen=True)
class LocalFit:
    """Pointwise estimate at one query point of the shifter."""

    gamma: float
    beta_g: float
    beta_x: float
    beta_c: np.ndarray
    ssr: float
    query_point: float
    effective_mass: float

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate(([self.beta_g, self.beta_x], self.beta_c))


def _nonfinite(name, col, out, limit=5):
    bad = np.flatnonzero(~np.isfinite(col))
    for i in bad[:limit]:
        out.append(f"non-finite value in row {int(i)}, column {name!r}")
    if bad.size > limit:
        out.append(f"{bad.size - limit} more non-finite values in column {name!r}")


def validate(dataset: Dataset, spec: ModelSpec | None = None) -> list[str]:
    """Check dataset invariants and dataset/spec consistency.

    Returns a list of human-readable diagnostics; empty means valid. Never raises
    on bad data.
    """
    out: list[str] = []
    n = dataset.n
    if n < 1:
        out.append("dataset has no rows")
    cols = {"outcome": dataset.outcome, "running": dataset.running, "shifter": dataset.shifter}
    for name, col in cols.items():
        if col.ndim != 1 or col.shape[0] != n:
            out.append(f"column {name!r} has length {col.shape[0]}, expected {n}")
        else:
            _nonfinite(name, col, out)
    X = dataset.covariates
    if X.shape[0] != n:
        out.append(f"covariates have {X.shape[0]} rows, expected {n}")
    else:
        for j, name in enumerate(dataset.covariate_names):
            _nonfinite(name, X[:, j], out)
        if n >= 1 and np.isfinite(X).all():
            const = [j for j in range(X.shape[1]) if np.all(X[:, j] == X[0, j]) and X[0, j] != 0]
            if n > 1 and len(const) != 1:
                out.append(f"covariates must contain exactly one constant column, found {len(const)}")
            for j, name in enumerate(dataset.covariate_names):
                if n > 1 and np.array_equal(X[:, j], dataset.shifter):
                    out.append(
                        f"covariate {name!r} duplicates the threshold shifter; kink location "
                        "and covariate effect may be poorly separated"
                    )
    if dataset.instruments is not None:
        W = dataset.instruments
        if W.shape[0] != n:
            out.append(f"instruments have {W.shape[0]} rows, expected {n}")
        else:
            for j, name in enumerate(dataset.instrument_names):
                _nonfinite(name, W[:, j], out)
    if dataset.export_flag is not None:
        f = dataset.export_flag
        if f.shape[0] != n:
            out.append(f"export_flag has length {f.shape[0]}, expected {n}")
        elif not np.isin(f, (0.0, 1.0)).all():
            out.append("export_flag must contain only 0 and 1")
    if spec is not None:
        out += spec.problems()
        endo = tuple(spec.endogenous_columns)
        for name in endo:
            if name != RUNNING and name not in dataset.covariate_names:
                out.append(f"endogenous column {name!r} not found")
        if endo:
            q = 0 if dataset.instruments is None else dataset.instruments.shape[1]
            if q == 0:
                out.append(
                    f"{len(endo)} endogenous column(s) declared but no instruments supplied"
                )
            elif q < len(endo):
                out.append(f"{len(endo)} endogenous columns need at least as many instruments, got {q}")
    return out


def as_names(values: Sequence[str] | str | None) -> tuple:
    if values is None:
        return ()
    if isinstance(values, str):
        return tuple(v.strip() for v in values.split(",") if v.strip())
    return tuple(values)
