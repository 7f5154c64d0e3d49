"""Monte Carlo designs with a cubic kink contour, signal-to-noise ratios and summary tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from .core import Dataset, Grid, ModelSpec, NpkinkError, RUNNING, ValidationError
from .fitting import fit

__all__ = [
    "DgpSpec",
    "SimCell",
    "SimulationReport",
    "TARGET_M",
    "generate",
    "run_monte_carlo",
    "snr",
    "true_threshold",
]

KINDS = ("exogenous", "endogenous")
TARGET_M = (0.0, 0.25, 0.5)
# query points for every replication: [-1, 1] in steps of 0.05 (contains TARGET_M)
CONTOUR_M = np.round(np.linspace(-1.0, 1.0, 41), 12)
REFERENCE = (1000, 4.0)


def _column_mean(G) -> np.ndarray:
    """Mean over finite entries per column; nan where a column has none."""
    G = np.asarray(G, dtype=np.float64).reshape(-1, CONTOUR_M.size)
    ok = np.isfinite(G)
    valid = ok.sum(axis=0)
    return np.where(valid > 0, np.where(ok, G, 0.0).sum(axis=0) / np.maximum(valid, 1), np.nan)


def true_threshold(m):
    """Kink location ``(m + 1)**3 / 8``."""
    m = np.asarray(m, dtype=np.float64)
    out = (m + 1.0) ** 3 / 8.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DgpSpec:
    """One simulation design.

    ``exogenous``: ``g, m, x, u`` independent standard normal and the error is
    ``noise_scale * u``. ``endogenous``: ``g = v + w`` with instrument ``w`` and
    error ``noise_scale * (eps + v)``. Covariates are ``[1, x]`` with
    coefficients ``beta_c0``.
    """

    kind: str = "exogenous"
    beta_g0: float = 1.0
    beta_x0: float = 0.0
    beta_c0: tuple = (0.0, 0.0)
    noise_scale: float = 0.5
    n: int = 500
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if self.kind not in KINDS:
            out.append(f"kind must be one of {KINDS}, got {self.kind!r}")
        if int(self.n) < 1:
            out.append("n must be >= 1")
        if not (self.noise_scale >= 0 and math.isfinite(self.noise_scale)):
            out.append("noise_scale must be finite and non-negative")
        if len(self.beta_c0) != 2:
            out.append("beta_c0 needs two entries (intercept, slope on x)")
        return out

    @property
    def running_sd(self) -> float:
        return math.sqrt(2.0) if self.kind == "endogenous" else 1.0

    @property
    def noise_variance(self) -> float:
        k = 2.0 if self.kind == "endogenous" else 1.0
        return k * self.noise_scale**2


def _rng(seed: int, kind: str, n: int, replication: int) -> np.random.Generator:
    # beta does not enter the stream, so designs that differ only in beta share draws
    return np.random.default_rng(np.random.SeedSequence([seed, KINDS.index(kind), n, replication]))


def generate(spec: DgpSpec, replication: int = 0) -> Dataset:
    """Draw one dataset; deterministic in ``(spec.seed, kind, n, replication)``."""
    problems = spec.problems()
    if problems:
        raise ValidationError("; ".join(problems))
    n = int(spec.n)
    rng = _rng(spec.seed, spec.kind, n, replication)
    if spec.kind == "exogenous":
        g, m, x, u = rng.standard_normal((4, n))
        err = spec.noise_scale * u
        inst = None
    else:
        m, x, eps, v, w = rng.standard_normal((5, n))
        g = v + w
        err = spec.noise_scale * (eps + v)
        inst = w[:, None]
    d = g - true_threshold(m)
    c0, c1 = spec.beta_c0
    y = spec.beta_g0 * np.minimum(d, 0.0) + spec.beta_x0 * np.maximum(d, 0.0) + c0 + c1 * x + err
    return Dataset(
        outcome=y,
        running=g,
        shifter=m,
        covariates=np.column_stack([np.ones(n), x]),
        instruments=inst,
        covariate_names=("const", "x"),
        instrument_names=("w",) if inst is not None else (),
    )


def _neg_part_moments(c, s):
    """First two moments of ``min(g - c, 0)`` for ``g ~ N(0, s^2)``."""
    a = c / s
    Phi = stats.norm.cdf(a)
    phi = stats.norm.pdf(a)
    m1 = -(c * Phi + s * phi)
    m2 = (c * c + s * s) * Phi + c * s * phi
    return m1, m2


def snr(spec: DgpSpec, m: float | None = None) -> float:
    """Signal-to-noise ratio ``beta_g0**2 Var((g - gamma0(m))_-) / Var(error)``.

    With ``m`` given the variance is conditional on the shifter; otherwise it
    is taken over the joint distribution of ``(g, m)`` by quadrature over the
    standard normal shifter.
    """
    s = spec.running_sd
    if m is not None:
        m1, m2 = _neg_part_moments(true_threshold(m), s)
        var = m2 - m1 * m1
    else:
        def moment(k):
            f = lambda t: _neg_part_moments(true_threshold(t), s)[k] * stats.norm.pdf(t)
            return integrate.quad(f, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)[0]

        e1, e2 = moment(0), moment(1)
        var = e2 - e1 * e1
    noise = spec.noise_variance
    if noise <= 0:
        return math.inf
    return float(spec.beta_g0**2 * var / noise)


@dataclass(frozen=True)
class SimCell:
    kind: str
    n: int
    beta_g0: float
    target: str
    statistic: str
    value: float
    mc_se: float
    n_valid: int


def _target_name(m: float) -> str:
    return f"gamma({m:g})"


def _summaries(kind, n, beta, target, err):
    err = np.asarray(err, dtype=np.float64)
    err = err[np.isfinite(err)]
    R = err.size
    if R == 0:
        return [
            SimCell(kind, n, beta, target, s, math.nan, math.nan, 0) for s in ("bias", "rmse")
        ]
    bias = float(err.mean())
    sd = float(err.std(ddof=1)) if R > 1 else math.nan
    mse = float(np.mean(err * err))
    rmse = math.sqrt(mse)
    sq_sd = float((err * err).std(ddof=1)) if R > 1 else math.nan
    rmse_se = sq_sd / math.sqrt(R) / (2.0 * rmse) if rmse > 0 else math.nan
    return [
        SimCell(kind, n, beta, target, "bias", bias, sd / math.sqrt(R), R),
        SimCell(kind, n, beta, target, "rmse", rmse, rmse_se, R),
    ]


@dataclass(eq=False)
class SimulationReport:
    """Aggregated Monte Carlo results.

    ``estimates`` maps ``(kind, n, beta_g0)`` to per-replication arrays:
    ``beta_g`` (shape ``R``), ``gamma`` (``R x len(contour_m)``) and, when
    bootstrapped, ``covered`` (``R``, 1.0/0.0, ``nan`` on failure).
    """

    cells: list
    snr: dict
    histogram: dict | None
    n_replications: int
    failures: dict
    contour_m: np.ndarray
    estimates: dict = field(repr=False, default_factory=dict)
    seed: int = 0

    def cell(self, kind, n, beta_g0, target, statistic) -> SimCell:
        for c in self.cells:
            if (c.kind, c.n, c.beta_g0, c.target, c.statistic) == (kind, n, float(beta_g0), target, statistic):
                return c
        raise KeyError((kind, n, beta_g0, target, statistic))

    def average_contour(self, kind, n, beta_g0) -> np.ndarray:
        return _column_mean(self.estimates[(kind, n, float(beta_g0))]["gamma"])

    # serialization -------------------------------------------------------

    def cell_rows(self):
        yield ["kind", "n", "beta_g0", "target", "statistic", "value", "mc_se", "n_valid"]
        for c in self.cells:
            yield [c.kind, c.n, _fmt(c.beta_g0), c.target, c.statistic, _fmt(c.value), _fmt(c.mc_se), c.n_valid]

    def table_rows(self, kind, target):
        """Table layout: one row per (statistic, n), one column per beta."""
        betas = sorted({c.beta_g0 for c in self.cells if c.kind == kind and c.target == target})
        ns = sorted({c.n for c in self.cells if c.kind == kind and c.target == target})
        yield ["statistic", "n"] + [_fmt(b) for b in betas]
        m = None if target == "beta_g" else float(target[6:-1])
        yield ["snr", ""] + [_fmt(self.snr.get((kind, b, "global" if m is None else m), math.nan)) for b in betas]
        for stat in ("bias", "rmse", "coverage"):
            for n in ns:
                vals = []
                for b in betas:
                    try:
                        vals.append(_fmt(self.cell(kind, n, b, target, stat).value))
                    except KeyError:
                        vals.append(None)
                if any(v is not None for v in vals):
                    yield [stat, n] + ["" if v is None else v for v in vals]

    def histogram_rows(self):
        yield ["bin_left", "bin_right", "count"]
        if self.histogram:
            e, c = self.histogram["edges"], self.histogram["counts"]
            for i in range(len(c)):
                yield [_fmt(e[i]), _fmt(e[i + 1]), int(c[i])]

    def contour_rows(self):
        keys = sorted(self.estimates)
        yield ["kind", "n", "beta_g0", "m", "gamma_true", "gamma_mean", "n_valid"]
        for k in keys:
            G = self.estimates[k]["gamma"]
            valid = np.isfinite(G).sum(axis=0)
            mean = _column_mean(G)
            for j, m in enumerate(self.contour_m):
                yield [k[0], k[1], _fmt(k[2]), _fmt(m), _fmt(true_threshold(m)), _fmt(mean[j]), int(valid[j])]

    def to_json(self) -> dict:
        return {
            "n_replications": self.n_replications,
            "seed": self.seed,
            "cells": [c.__dict__ for c in self.cells],
            "snr": [
                {"kind": k, "beta_g0": b, "m": m, "value": v} for (k, b, m), v in sorted(self.snr.items(), key=str)
            ],
            "failures": [{"kind": k, "n": n, "beta_g0": b, "count": c} for (k, n, b), c in sorted(self.failures.items())],
            "histogram": None
            if not self.histogram
            else {
                "design": list(self.histogram["design"]),
                "edges": list(map(float, self.histogram["edges"])),
                "counts": list(map(int, self.histogram["counts"])),
            },
        }

    def write(self, out_dir) -> list[Path]:
        """Write the cells, the per-kind tables, the histogram, the average contours and a JSON summary."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [_write_csv(out / "cells.csv", self.cell_rows())]
        for kind in sorted({c.kind for c in self.cells}):
            written.append(_write_csv(out / f"table_beta_{kind}.csv", self.table_rows(kind, "beta_g")))
            rows = [r for m in TARGET_M for r in _tag(m, self.table_rows(kind, _target_name(m)))]
            written.append(_write_csv(out / f"table_gamma_{kind}.csv", _dedupe_header(rows)))
        written.append(_write_csv(out / "histogram.csv", self.histogram_rows()))
        written.append(_write_csv(out / "contour_average.csv", self.contour_rows()))
        path = out / "report.json"
        path.write_text(json.dumps(_clean_json(self.to_json()), indent=2, sort_keys=True) + "\n")
        written.append(path)
        return written


def _tag(m, rows):
    rows = list(rows)
    yield ["m"] + rows[0]
    for r in rows[1:]:
        yield [_fmt(m)] + r


def _dedupe_header(rows):
    seen = False
    for r in rows:
        if r[0] == "m":
            if seen:
                continue
            seen = True
        yield r


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def _clean_json(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_json(v) for v in obj]
    return obj


def _write_csv(path: Path, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in rows:
            w.writerow(r)
    return path


def default_designs(kinds=KINDS, ns=(100, 200, 500), betas=(1.0, 2.0, 3.0, 4.0)) -> list[DgpSpec]:
    return [DgpSpec(kind=k, beta_g0=float(b), n=int(n)) for k in kinds for n in ns for b in betas]


def run_monte_carlo(
    designs,
    spec: ModelSpec | None = None,
    replications: int = 200,
    seed: int = 0,
    *,
    control_function: bool = True,
    bootstrap: int = 0,
    alpha: float = 0.05,
    histogram_bins: int = 30,
) -> SimulationReport:
    """Replicate every design and aggregate bias and RMSE.

    Each replication fits the contour on ``[-1, 1]`` (steps of 0.05), the
    leave-one-out kinks and the second step; endogenous designs add the
    control function for ``g`` unless ``control_function`` is False. The
    spec's query grid is replaced; everything else is used as given (the
    default spec here uses the undersmoothing bandwidth). With ``bootstrap``
    draws the coverage of the percentile interval for ``beta_g0`` is recorded.
    Failed replications are excluded and counted per design.
    """
    if int(replications) < 1:
        raise ValidationError("replications must be >= 1")
    spec = spec or ModelSpec(bandwidth="undersmooth")
    designs = list(designs)
    for d in designs:
        problems = d.problems()
        if problems:
            raise ValidationError("; ".join(problems))
    base = replace(spec, query_grid=Grid.explicit(CONTOUR_M))
    targets = [int(np.flatnonzero(np.isclose(CONTOUR_M, m))[0]) for m in TARGET_M]
    cells, failures, estimates, snrs = [], {}, {}, {}
    for d in designs:
        key = (d.kind, int(d.n), float(d.beta_g0))
        endo = (RUNNING,) if d.kind == "endogenous" and control_function else ()
        mspec = replace(base, endogenous_columns=endo)
        R = int(replications)
        beta_hat = np.full(R, np.nan)
        gam = np.full((R, CONTOUR_M.size), np.nan)
        covered = np.full(R, np.nan)
        fails = 0
        for r in range(R):
            data = generate(replace(d, seed=seed), replication=r)
            try:
                res = fit(data, mspec, bootstrap=bootstrap, alpha=alpha, seed=_boot_seed(seed, r))
            except NpkinkError:
                fails += 1
                continue
            beta_hat[r] = res.estimate.beta_g
            gam[r] = res.contour.gamma_hat
            if res.bootstrap is not None:
                lo, hi = res.bootstrap.ci_lower[0], res.bootstrap.ci_upper[0]
                covered[r] = float(lo <= d.beta_g0 <= hi)
        failures[key] = fails
        estimates[key] = {"beta_g": beta_hat, "gamma": gam}
        cells += _summaries(*key, "beta_g", beta_hat - d.beta_g0)
        if bootstrap:
            estimates[key]["covered"] = covered
            cv = covered[np.isfinite(covered)]
            p = float(cv.mean()) if cv.size else math.nan
            se = math.sqrt(p * (1 - p) / cv.size) if cv.size else math.nan
            cells.append(SimCell(*key, "beta_g", "coverage", p, se, int(cv.size)))
        for m, j in zip(TARGET_M, targets):
            cells += _summaries(*key, _target_name(m), gam[:, j] - true_threshold(m))
        for m in (None,) + TARGET_M:
            snrs[(d.kind, float(d.beta_g0), "global" if m is None else m)] = snr(d, m)
    hist = None
    ref = [k for k in estimates if (k[1], k[2]) == REFERENCE]
    if ref:
        k = sorted(ref)[0]
        dev = estimates[k]["beta_g"] - k[2]
        dev = dev[np.isfinite(dev)]
        if dev.size:
            counts, edges = np.histogram(dev, bins=histogram_bins)
            hist = {"design": k, "edges": edges, "counts": counts, "values": dev}
    return SimulationReport(
        cells=cells,
        snr=snrs,
        histogram=hist,
        n_replications=int(replications),
        failures=failures,
        contour_m=CONTOUR_M.copy(),
        estimates=estimates,
        seed=int(seed),
    )


def _boot_seed(seed: int, replication: int) -> int:
    return int(np.random.SeedSequence([seed, replication, 0xB007]).generate_state(1)[0])


def ks_normal(values) -> float:
    """KS p-value of standardized draws (sample mean and sd) against the standard normal."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    z = (v - v.mean()) / v.std(ddof=1)
    return float(stats.kstest(z, "norm").pvalue)
