"""CSV ingestion, sample cleaning and the exporter-share heatmap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from .core import Dataset, ValidationError
from .estimator import ThresholdContour

__all__ = [
    "CleaningReport",
    "CleaningSpec",
    "HeatmapGrid",
    "LoadError",
    "Schema",
    "build_dataset",
    "clean",
    "heatmap",
    "load_csv",
    "read_table",
]


class LoadError(ValidationError):
    """A CSV file does not match its schema.

    ``row`` is the 1-based data row (header excluded), ``column`` the column
    name; either may be ``None``.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class Schema:
    """Mapping from CSV columns to dataset roles.

    A constant ``const`` column is prepended to the covariates unless
    ``intercept`` is False (then one of the listed covariates must be constant).
    """

    outcome: str = "outcome"
    running: str = "running"
    shifter: str = "shifter"
    covariates: tuple = ()
    instruments: tuple = ()
    export_flag: str | None = None
    delimiter: str = ","
    intercept: bool = True
    extra: tuple = ()

    def columns(self) -> list[str]:
        cols = [self.outcome, self.running, self.shifter, *self.covariates, *self.instruments]
        if self.export_flag:
            cols.append(self.export_flag)
        cols += [c for c in self.extra if c not in cols]
        return list(dict.fromkeys(cols))


def read_table(path, schema: Schema) -> pd.DataFrame:
    """Read the schema's columns from a CSV file as float64.

    Raises :class:`LoadError` for a missing column or a cell that is empty,
    unparseable or non-finite, naming the data row and the column.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(
            path,
            sep=schema.delimiter,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError:
        raise LoadError(f"{path}: file is empty") from None
    missing = [c for c in schema.columns() if c not in raw.columns]
    if missing:
        raise LoadError(f"{path}: missing column(s) {', '.join(map(repr, missing))}", column=missing[0])
    out = {}
    for col in schema.columns():
        text = raw[col].str.strip()
        vals = _parse_floats(text.to_numpy(dtype=str))
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            i = int(bad[0])
            raise LoadError(
                f"{path}: row {i + 1}, column {col!r}: cannot use value {text.iloc[i]!r}",
                row=i + 1,
                column=col,
            )
        out[col] = vals
    return pd.DataFrame(out)


def _parse_floats(cells) -> np.ndarray:
    # correctly rounded, so values written with repr load back bit for bit
    try:
        return cells.astype(np.float64)
    except ValueError:
        out = np.empty(cells.size)
        for i, c in enumerate(cells):
            try:
                out[i] = float(c)
            except ValueError:
                out[i] = np.nan
        return out


def build_dataset(frame: pd.DataFrame, schema: Schema) -> Dataset:
    """Assemble a :class:`Dataset` from a numeric frame."""
    n = len(frame)
    if n == 0:
        raise ValidationError("dataset has no rows")
    cov_names = list(schema.covariates)
    X = [frame[c].to_numpy(dtype=np.float64) for c in cov_names]
    if schema.intercept:
        X.insert(0, np.ones(n))
        cov_names.insert(0, "const")
    if not X:
        raise ValidationError("no covariates and no intercept")
    inst = None
    if schema.instruments:
        inst = np.column_stack([frame[c].to_numpy(dtype=np.float64) for c in schema.instruments])
    flag = None
    if schema.export_flag:
        flag = frame[schema.export_flag].to_numpy(dtype=np.float64)
    return Dataset(
        outcome=frame[schema.outcome].to_numpy(dtype=np.float64),
        running=frame[schema.running].to_numpy(dtype=np.float64),
        shifter=frame[schema.shifter].to_numpy(dtype=np.float64),
        covariates=np.column_stack(X),
        instruments=inst,
        export_flag=flag,
        covariate_names=tuple(cov_names),
        instrument_names=tuple(schema.instruments),
    )


def load_csv(path, schema: Schema) -> Dataset:
    """Read and assemble a dataset in one step."""
    return build_dataset(read_table(path, schema), schema)


@dataclass(frozen=True)
class CleaningSpec:
    """Sample restrictions and transforms, applied in this order.

    1. drop rows with a non-positive value in any ``require_positive`` column,
       then rows with a negative value in any ``require_nonnegative`` column;
    2. drop the top ``trim_upper_fraction`` of rows by ``trim_column``;
    3. standardize ``standardize`` columns (mean 0, sample sd 1);
    4. map ``quantile_transform`` columns to average rank / n.
    """

    require_positive: tuple = ()
    require_nonnegative: tuple = ()
    trim_upper_fraction: float = 0.15
    trim_column: str = "outcome"
    standardize: tuple = ()
    quantile_transform: tuple = ()

    def problems(self) -> list[str]:
        out = []
        if not (0.0 <= self.trim_upper_fraction < 1.0):
            out.append(f"trim_upper_fraction must lie in [0, 1), got {self.trim_upper_fraction}")
        both = set(self.standardize) & set(self.quantile_transform)
        if both:
            out.append(f"columns both standardized and quantile-transformed: {sorted(both)}")
        return out


@dataclass
class CleaningReport:
    n_input: int
    n_output: int
    dropped_positive: dict = field(default_factory=dict)
    dropped_nonnegative: dict = field(default_factory=dict)
    zeros_kept: dict = field(default_factory=dict)
    dropped_trim: int = 0
    trim_cutoff: float | None = None

    def to_json(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_output": self.n_output,
            "dropped_positive": self.dropped_positive,
            "dropped_nonnegative": self.dropped_nonnegative,
            "zeros_kept": self.zeros_kept,
            "dropped_trim": self.dropped_trim,
            "trim_cutoff": self.trim_cutoff,
        }


def _trim_count(n: int, frac: float) -> int:
    # tolerance guards against products like 100 * 0.29 = 28.999...
    return int(math.floor(n * frac + 1e-9))


def quantile_ranks(x) -> np.ndarray:
    """Average ranks divided by n, so values lie in (0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    return stats.rankdata(x, method="average") / x.size


def _dataset_frame(d: Dataset) -> pd.DataFrame:
    cols = {"outcome": d.outcome, "running": d.running, "shifter": d.shifter}
    for j, name in enumerate(d.covariate_names):
        cols[name] = d.covariates[:, j]
    if d.instruments is not None:
        for j, name in enumerate(d.instrument_names):
            cols[name] = d.instruments[:, j]
    if d.export_flag is not None:
        cols["export_flag"] = d.export_flag
    return pd.DataFrame(cols)


def _frame_dataset(f: pd.DataFrame, d: Dataset) -> Dataset:
    return Dataset(
        outcome=f["outcome"].to_numpy(),
        running=f["running"].to_numpy(),
        shifter=f["shifter"].to_numpy(),
        covariates=f[list(d.covariate_names)].to_numpy(),
        instruments=None if d.instruments is None else f[list(d.instrument_names)].to_numpy(),
        export_flag=None if d.export_flag is None else f["export_flag"].to_numpy(),
        covariate_names=d.covariate_names,
        instrument_names=d.instrument_names,
        n_controls=d.n_controls,
    )


def clean(data, spec: CleaningSpec):
    """Apply :class:`CleaningSpec` to a DataFrame or a :class:`Dataset`.

    For a dataset, columns are addressed as ``outcome``, ``running``,
    ``shifter``, covariate and instrument names. Returns the cleaned object
    of the same type and a :class:`CleaningReport`.
    """
    problems = spec.problems()
    if problems:
        raise ValidationError("; ".join(problems))
    is_dataset = isinstance(data, Dataset)
    frame = _dataset_frame(data) if is_dataset else data.reset_index(drop=True).copy()
    names = (
        *spec.require_positive,
        *spec.require_nonnegative,
        *spec.standardize,
        *spec.quantile_transform,
    )
    if spec.trim_upper_fraction > 0:
        names += (spec.trim_column,)
    unknown = [c for c in dict.fromkeys(names) if c not in frame.columns]
    if unknown:
        raise ValidationError(f"cleaning refers to unknown column(s) {unknown}")
    report = CleaningReport(n_input=len(frame), n_output=0)
    keep = np.ones(len(frame), dtype=bool)
    for c in spec.require_positive:
        bad = keep & ~(frame[c].to_numpy() > 0)
        report.dropped_positive[c] = int(bad.sum())
        keep &= ~bad
    for c in spec.require_nonnegative:
        v = frame[c].to_numpy()
        bad = keep & ~(v >= 0)
        report.dropped_nonnegative[c] = int(bad.sum())
        keep &= ~bad
        report.zeros_kept[c] = int((keep & (v == 0)).sum())
    frame = frame[keep].reset_index(drop=True)
    k = _trim_count(len(frame), spec.trim_upper_fraction)
    if k > 0:
        v = frame[spec.trim_column].to_numpy()
        cutoff = float(np.sort(v)[::-1][k - 1])
        drop = v >= cutoff
        report.dropped_trim = int(drop.sum())
        report.trim_cutoff = cutoff
        frame = frame[~drop].reset_index(drop=True)
    if len(frame) == 0:
        raise ValidationError("cleaning dropped every row")
    for c in spec.standardize:
        v = frame[c].to_numpy(dtype=np.float64)
        sd = v.std(ddof=1) if v.size > 1 else 0.0
        if not sd > 0:
            raise ValidationError(f"cannot standardize constant column {c!r}")
        frame[c] = (v - v.mean()) / sd
    for c in spec.quantile_transform:
        frame[c] = quantile_ranks(frame[c].to_numpy())
    report.n_output = len(frame)
    return (_frame_dataset(frame, data) if is_dataset else frame), report


@dataclass(frozen=True, eq=False)
class HeatmapGrid:
    """Exporter share on a decile grid of ``(m, g)``.

    Row ``i`` is the ``i``-th decile cell of the shifter, column ``j`` the
    ``j``-th decile cell of the running variable. ``cell_fractions`` is ``nan``
    for empty cells. The overlay gives each non-missing contour point in the
    same percentile coordinates, and ``decile_overlay`` the average g
    percentile of the contour within each shifter decile.
    """

    cell_fractions: np.ndarray
    counts: np.ndarray
    m_edges: np.ndarray
    g_edges: np.ndarray
    overlay_m_percentile: np.ndarray
    overlay_g_percentile: np.ndarray
    overlay_gamma: np.ndarray
    decile_overlay: np.ndarray


def _ecdf(sample, x):
    s = np.sort(np.asarray(sample, dtype=np.float64))
    return 100.0 * np.searchsorted(s, x, side="right") / s.size


def decile_edges(x) -> np.ndarray:
    return np.percentile(np.asarray(x, dtype=np.float64), np.arange(10, 100, 10))


def heatmap(dataset: Dataset, contour: ThresholdContour, m_edges=None, g_edges=None) -> HeatmapGrid:
    """Share of exporters per (shifter decile, running-variable decile) cell.

    Edges default to the empirical 10th..90th percentiles; a value equal to an
    edge goes to the lower cell.
    """
    if dataset.export_flag is None:
        raise ValidationError("heatmap needs an export flag column")
    m, g, flag = dataset.shifter, dataset.running, dataset.export_flag
    me = decile_edges(m) if m_edges is None else np.asarray(m_edges, dtype=np.float64)
    ge = decile_edges(g) if g_edges is None else np.asarray(g_edges, dtype=np.float64)
    for name, e in (("m_edges", me), ("g_edges", ge)):
        if e.shape != (9,) or np.any(np.diff(e) < 0):
            raise ValidationError(f"{name} must be 9 non-decreasing values")
    im = np.searchsorted(me, m, side="left")
    ig = np.searchsorted(ge, g, side="left")
    counts = np.zeros((10, 10), dtype=np.int64)
    hits = np.zeros((10, 10))
    np.add.at(counts, (im, ig), 1)
    np.add.at(hits, (im, ig), flag)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    ok = ~contour.missing
    qp = np.asarray(contour.query_points)[ok]
    gh = np.asarray(contour.gamma_hat)[ok]
    m_pct = _ecdf(m, qp)
    g_pct = _ecdf(g, gh)
    cell = np.searchsorted(me, qp, side="left")
    per_decile = np.full(10, np.nan)
    for i in range(10):
        sel = cell == i
        if sel.any():
            per_decile[i] = g_pct[sel].mean()
    return HeatmapGrid(
        cell_fractions=frac,
        counts=counts,
        m_edges=me,
        g_edges=ge,
        overlay_m_percentile=m_pct,
        overlay_g_percentile=g_pct,
        overlay_gamma=gh,
        decile_overlay=per_decile,
    )
