"""Command-line interface.

Every option can also come from an environment variable ``NPKINK_<OPTION>``
(upper case, dashes as underscores) or from a JSON config file passed with
``--config``; a run manifest written by any command is a valid config file.
Precedence: command line, environment, config file, built-in default.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    DEFAULT_GAMMA_GRID,
    DEFAULT_QUERY_GRID,
    RUNNING,
    DegenerateWindowError,
    Grid,
    ModelSpec,
    NpkinkError,
    SingularFitError,
    ValidationError,
    as_names,
)
from .estimator import estimate_contour
from .fitting import fit
from .inference import significance_stars
from .pipeline import CleaningSpec, Schema, build_dataset, clean, heatmap, read_table
from .simulation import KINDS, DgpSpec, run_monte_carlo, snr

ENV_PREFIX = "NPKINK_"
EXIT_OK, EXIT_VALIDATION, EXIT_DEGENERATE, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("fit", "bootstrap", "simulate", "heatmap", "snr")


def _fmt(x) -> str:
    """17 significant digits, exact round trip for float64."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else format(x, ".17g")


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _names(text):
    return as_names(list(text) if isinstance(text, (list, tuple)) else text)


def _bool(text):
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _threads(text):
    if text in (None, "auto"):
        return "auto"
    n = int(text)
    if n < 1:
        raise ValidationError("--threads must be >= 1 or 'auto'")
    return n


# (dest, converter, default, commands, help)
OPTIONS = [
    ("input", str, None, "fit bootstrap heatmap", "input CSV file"),
    ("output_dir", str, "npkink-out", "*", "directory for output files"),
    ("delimiter", str, ",", "fit bootstrap heatmap", "CSV delimiter"),
    ("outcome_col", str, "outcome", "fit bootstrap heatmap", "outcome column"),
    ("running_col", str, "running", "fit bootstrap heatmap", "running variable column"),
    ("shifter_col", str, "shifter", "fit bootstrap heatmap", "threshold shifter column"),
    ("covariate_cols", _names, (), "fit bootstrap heatmap", "comma-separated covariates (a constant is added)"),
    ("instrument_cols", _names, (), "fit bootstrap heatmap", "comma-separated instruments"),
    ("endogenous_cols", _names, (), "fit bootstrap heatmap", "endogenous columns; 'running' for the running variable"),
    ("export_flag_col", str, None, "fit bootstrap heatmap", "0/1 exporter column"),
    ("model", int, 1, "fit bootstrap heatmap", "1 exogenous, 2 control function for g, 3 for g and one covariate"),
    ("trim", float, 0.0, "fit bootstrap heatmap", "drop this top fraction of rows by outcome"),
    ("positive_cols", _names, (), "fit bootstrap heatmap", "drop rows where these are not > 0"),
    ("nonnegative_cols", _names, (), "fit bootstrap heatmap", "drop rows where these are < 0"),
    ("standardize_cols", _names, (), "fit bootstrap heatmap", "standardize to mean 0, sd 1"),
    ("quantile_cols", _names, (), "fit bootstrap heatmap", "replace by average rank / n"),
    ("bandwidth", str, None, "fit bootstrap heatmap simulate", "rot, under or a positive number"),
    ("gamma_grid", str, "auto", "fit bootstrap heatmap simulate", "lo:hi:count or auto"),
    ("gamma_grid_scale", str, "value", "fit bootstrap heatmap simulate", "value or quantile (for lo:hi:count)"),
    ("query_grid", str, "auto", "fit bootstrap heatmap", "lo:hi:count or auto"),
    ("query_grid_scale", str, "quantile", "fit bootstrap heatmap", "value or quantile (for lo:hi:count)"),
    ("interior", _floats, (0.01, 0.99), "fit bootstrap simulate", "lo,hi quantiles of the shifter for the second step"),
    ("bootstrap", int, None, "fit bootstrap simulate", "wild bootstrap draws (0 = none)"),
    ("alpha", float, 0.05, "fit bootstrap simulate", "percentile interval level"),
    ("seed", int, 0, "fit bootstrap simulate", "random seed"),
    ("replications", int, 200, "simulate", "Monte Carlo replications per design"),
    ("kinds", _names, KINDS, "simulate snr", "exogenous,endogenous"),
    ("ns", _ints, (100, 200, 500), "simulate", "sample sizes"),
    ("betas", _floats, (1.0, 2.0, 3.0, 4.0), "simulate snr", "kink effects beta_g0"),
    ("no_control_function", _bool, False, "simulate", "skip the control function for endogenous designs"),
    ("m", _floats, (0.0, 0.25, 0.5), "snr", "shifter values for the conditional ratio"),
    ("noise_scale", float, 0.5, "simulate snr", "error scale"),
    ("threads", _threads, "auto", "*", "worker threads (n or auto)"),
]
_FLAGS = {"no_control_function"}


def _applies(cmd, where):
    return where == "*" or cmd in where.split()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npkink", description="Regression kink with a shifter-dependent kink location."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fit": "estimate the kink contour and slope coefficients",
        "bootstrap": "fit with wild-bootstrap standard errors (default 999 draws)",
        "simulate": "Monte Carlo tables for the cubic-contour designs",
        "heatmap": "exporter share on a decile grid with the contour overlay",
        "snr": "signal-to-noise ratios of the simulation designs",
    }
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=helps[cmd], description=helps[cmd])
        p.add_argument("--config", help="JSON config or run manifest")
        p.add_argument("-q", "--quiet", action="store_true")
        for dest, _, default, where, help_ in OPTIONS:
            if not _applies(cmd, where):
                continue
            flag = "--" + dest.replace("_", "-")
            if dest in _FLAGS:
                p.add_argument(flag, dest=dest, action="store_const", const=True, default=None, help=help_)
            else:
                p.add_argument(flag, dest=dest, default=None, help=f"{help_} (default: {default})")
    return parser


def resolve(args: argparse.Namespace, environ=None) -> dict:
    """Merge command line, environment, config file and defaults."""
    environ = os.environ if environ is None else environ
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {args.config}: {exc}") from None
        cfg = cfg.get("config", cfg)
        if cfg.get("command", args.command) != args.command:
            raise ValidationError(f"config is for command {cfg['command']!r}, not {args.command!r}")
    out = {"command": args.command}
    for dest, conv, default, where, _ in OPTIONS:
        if not _applies(args.command, where):
            continue
        val = getattr(args, dest, None)
        if val is None:
            val = environ.get(ENV_PREFIX + dest.upper())
        if val is None:
            val = cfg.get(dest)
        if val is None:
            out[dest] = default
            continue
        try:
            out[dest] = conv(val)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"option --{dest.replace('_', '-')}: {exc}") from None
    if args.command == "bootstrap" and out.get("bootstrap") is None:
        out["bootstrap"] = 999
    if out.get("bootstrap") is None and "bootstrap" in out:
        out["bootstrap"] = 0
    if out.get("bandwidth") is None and "bandwidth" in out:
        out["bandwidth"] = "under" if args.command == "simulate" else "rot"
    return out


def _bandwidth(text):
    if text in ("rot", "rule_of_thumb"):
        return "rule_of_thumb"
    if text in ("under", "undersmooth"):
        return "undersmooth"
    try:
        b = float(text)
    except ValueError:
        raise ValidationError(f"--bandwidth must be rot, under or a number, got {text!r}") from None
    if not (b > 0 and math.isfinite(b)):
        raise ValidationError("--bandwidth must be positive")
    return b


def _endogenous(cfg) -> tuple:
    model, endo = cfg["model"], tuple(cfg["endogenous_cols"])
    if model not in (1, 2, 3):
        raise ValidationError(f"--model must be 1, 2 or 3, got {model}")
    if model == 1:
        return endo
    others = tuple(c for c in endo if c != RUNNING)
    if model == 2:
        if others:
            raise ValidationError("--model 2 treats only the running variable as endogenous")
        return (RUNNING,)
    if len(others) != 1:
        raise ValidationError("--model 3 needs exactly one endogenous covariate in --endogenous-cols")
    return (RUNNING,) + others


def model_spec(cfg, endogenous=()) -> ModelSpec:
    interior = tuple(cfg.get("interior", (0.01, 0.99)))
    if len(interior) != 2:
        raise ValidationError("--interior needs two values lo,hi")
    spec = ModelSpec(
        bandwidth=_bandwidth(cfg["bandwidth"]),
        gamma_grid=Grid.parse(cfg["gamma_grid"], DEFAULT_GAMMA_GRID, cfg["gamma_grid_scale"]),
        query_grid=Grid.parse(cfg.get("query_grid", "auto"), DEFAULT_QUERY_GRID, cfg.get("query_grid_scale", "quantile")),
        interior_quantiles=interior,
        endogenous_columns=tuple(endogenous),
    )
    problems = spec.problems()
    if problems:
        raise ValidationError("; ".join(problems))
    return spec


def _schema(cfg, need_flag=False) -> Schema:
    if not cfg.get("input"):
        raise ValidationError("--input is required")
    flag = cfg.get("export_flag_col")
    if need_flag and not flag:
        raise ValidationError("--export-flag-col is required for the heatmap")
    extra = tuple(cfg["positive_cols"]) + tuple(cfg["nonnegative_cols"])
    return Schema(
        outcome=cfg["outcome_col"],
        running=cfg["running_col"],
        shifter=cfg["shifter_col"],
        covariates=tuple(cfg["covariate_cols"]),
        instruments=tuple(cfg["instrument_cols"]),
        export_flag=flag,
        delimiter=cfg["delimiter"],
        extra=extra,
    )


def _load(cfg, need_flag=False):
    schema = _schema(cfg, need_flag)
    frame = read_table(cfg["input"], schema)
    cs = CleaningSpec(
        require_positive=tuple(cfg["positive_cols"]),
        require_nonnegative=tuple(cfg["nonnegative_cols"]),
        trim_upper_fraction=cfg["trim"],
        trim_column=schema.outcome,
        standardize=tuple(cfg["standardize_cols"]),
        quantile_transform=tuple(cfg["quantile_cols"]),
    )
    frame, report = clean(frame, cs)
    return build_dataset(frame, schema), report


def _set_threads(requested):
    import numba

    top = int(numba.config.NUMBA_NUM_THREADS)
    n = top if requested == "auto" else max(1, min(int(requested), top))
    numba.set_num_threads(n)
    return n


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _grid_json(grid: Grid, values):
    return {"lo": grid.lo, "hi": grid.hi, "count": int(len(values)), "scale": grid.scale, "values": values}


def _contour_rows(contour, shifter):
    levels = contour.query_levels
    if levels is None:
        s = np.sort(shifter)
        levels = np.searchsorted(s, contour.query_points, side="right") / s.size
    for q, m, g, w, miss in zip(levels, contour.query_points, contour.gamma_hat, contour.effective_mass, contour.missing):
        yield [_fmt(q), _fmt(m), _fmt(g), _fmt(w), int(miss)]


CONTOUR_HEADER = ["m_quantile", "m", "gamma_hat", "effective_mass", "missing_flag"]


def cmd_fit(cfg, out: Path) -> list[Path]:
    data, report = _load(cfg)
    spec = model_spec(cfg, _endogenous(cfg))
    res = fit(data, spec, bootstrap=cfg["bootstrap"], alpha=cfg["alpha"], seed=cfg["seed"])
    est, c = res.estimate, res.contour
    files = [_write_csv(out / "contour.csv", CONTOUR_HEADER, _contour_rows(c, data.shifter))]
    used = est.used_mask
    files.append(
        _write_csv(
            out / "loo_gamma.csv",
            ["row", "m", "g", "loo_gamma", "interior", "used"],
            (
                [i + 1, _fmt(data.shifter[i]), _fmt(data.running[i]), _fmt(c.loo_gamma[i]), int(c.interior_mask[i]), int(used[i])]
                for i in range(data.n)
            ),
        )
    )
    coef = est.coefficients
    names = list(est.names)
    doc = {
        "names": names,
        "coefficients": dict(zip(names, coef)),
        "n": data.n,
        "n_used": est.n_used,
        "n_boundary": est.n_boundary,
        "bandwidth": c.bandwidth,
        "gamma_grid": _grid_json(spec.gamma_grid, c.gamma_grid),
        "query_grid": _grid_json(spec.query_grid, c.query_points),
        "interior_quantiles": list(spec.interior_quantiles),
        "endogenous_columns": list(spec.endogenous_columns),
        "n_missing_contour": int(c.missing.sum()),
        "cleaning": report.to_json(),
    }
    if res.control.first_stage_coefficients.size:
        inst = ["const"] + list(data.instrument_names) if res.control.instrument_design.shape[1] > len(data.instrument_names) else list(data.instrument_names)
        doc["first_stage"] = {
            f"vhat_{'g' if e == RUNNING else e}": dict(zip(inst, res.control.first_stage_coefficients[:, j]))
            for j, e in enumerate(spec.endogenous_columns)
        }
    if res.bootstrap is not None:
        b = res.bootstrap
        doc["bootstrap"] = {
            "draws": b.n_draws,
            "seed": b.seed,
            "alpha": b.alpha,
            "standard_errors": dict(zip(names, b.standard_errors)),
            "ci_lower": dict(zip(names, b.ci_lower)),
            "ci_upper": dict(zip(names, b.ci_upper)),
            "stars": dict(zip(names, significance_stars(coef, b.standard_errors))),
        }
        files.append(
            _write_csv(out / "bootstrap_replicates.csv", names, ([_fmt(v) for v in row] for row in b.replicates))
        )
    files.append(_write_json(out / "coefficients.json", doc))
    if not cfg.get("quiet"):
        se = res.bootstrap.standard_errors if res.bootstrap is not None else [math.nan] * coef.size
        stars = significance_stars(coef, se) if res.bootstrap is not None else [""] * coef.size
        for nm, v, s, st in zip(names, coef, se, stars):
            if nm == "const":
                continue
            print(f"{nm:>12s} {v: .4f}" + (f" ({s:.4f}){st}" if res.bootstrap is not None else ""))
        print(f"n_used={est.n_used} bandwidth={c.bandwidth:.4g} missing_contour_points={int(c.missing.sum())}")
    return files


def cmd_simulate(cfg, out: Path) -> list[Path]:
    spec = model_spec({**cfg, "query_grid": "auto"})
    kinds = tuple(cfg["kinds"])
    for k in kinds:
        if k not in KINDS:
            raise ValidationError(f"unknown kind {k!r}")
    designs = [
        DgpSpec(kind=k, beta_g0=float(b), n=int(n), noise_scale=cfg["noise_scale"])
        for k in kinds
        for n in cfg["ns"]
        for b in cfg["betas"]
    ]
    rep = run_monte_carlo(
        designs,
        spec,
        replications=cfg["replications"],
        seed=cfg["seed"],
        control_function=not cfg["no_control_function"],
        bootstrap=cfg["bootstrap"],
        alpha=cfg["alpha"],
    )
    files = rep.write(out)
    if not cfg.get("quiet"):
        for c in rep.cells:
            print(f"{c.kind:>10s} n={c.n:<5d} beta={c.beta_g0:g} {c.target:>12s} {c.statistic:>8s} {c.value: .4f} (mc se {c.mc_se:.4f})")
        fails = sum(rep.failures.values())
        if fails:
            print(f"failed replications: {fails}")
    return files


def cmd_snr(cfg, out: Path) -> list[Path]:
    rows = []
    for k in cfg["kinds"]:
        if k not in KINDS:
            raise ValidationError(f"unknown kind {k!r}")
        for b in cfg["betas"]:
            d = DgpSpec(kind=k, beta_g0=float(b), noise_scale=cfg["noise_scale"])
            rows.append([k, _fmt(b), "global", _fmt(snr(d))])
            for m in cfg["m"]:
                rows.append([k, _fmt(b), _fmt(m), _fmt(snr(d, m))])
    if not cfg.get("quiet"):
        for r in rows:
            print(f"{r[0]:>10s} beta={r[1]:<4s} m={r[2]:<7s} snr={float(r[3]):.4f}")
    return [_write_csv(out / "snr.csv", ["kind", "beta_g0", "m", "snr"], rows)]


def cmd_heatmap(cfg, out: Path) -> list[Path]:
    data, _ = _load(cfg, need_flag=True)
    spec = model_spec(cfg, _endogenous(cfg))
    from .inference import control_function

    aug = control_function(data, spec.endogenous_columns).augmented
    contour = estimate_contour(aug, spec)
    hm = heatmap(aug, contour)
    me = np.concatenate(([-np.inf], hm.m_edges, [np.inf]))
    ge = np.concatenate(([-np.inf], hm.g_edges, [np.inf]))
    cells = (
        [i + 1, j + 1, _fmt(me[i]), _fmt(me[i + 1]), _fmt(ge[j]), _fmt(ge[j + 1]), int(hm.counts[i, j]),
         "NA" if hm.counts[i, j] == 0 else _fmt(hm.cell_fractions[i, j])]
        for i in range(10)
        for j in range(10)
    )
    files = [
        _write_csv(
            out / "heatmap_cells.csv",
            ["m_decile", "g_decile", "m_lo", "m_hi", "g_lo", "g_hi", "count", "export_fraction"],
            cells,
        ),
        _write_csv(
            out / "heatmap_overlay.csv",
            ["m_percentile", "g_percentile", "gamma_hat"],
            ([_fmt(a), _fmt(b), _fmt(c)] for a, b, c in zip(hm.overlay_m_percentile, hm.overlay_g_percentile, hm.overlay_gamma)),
        ),
        _write_csv(out / "contour.csv", CONTOUR_HEADER, _contour_rows(contour, aug.shifter)),
    ]
    if not cfg.get("quiet"):
        for i in range(9, -1, -1):
            print(" ".join("  .  " if hm.counts[j, i] == 0 else f"{hm.cell_fractions[j, i]:.2f} " for j in range(10)))
    return files


HANDLERS = {"fit": cmd_fit, "bootstrap": cmd_fit, "simulate": cmd_simulate, "snr": cmd_snr, "heatmap": cmd_heatmap}


def _manifest(cfg, files, threads):
    import numba
    import scipy

    man = {
        "config": cfg,
        "library_version": __version__,
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__},
        "threads_used": threads,
        "outputs": {p.name: _sha256(p) for p in files},
    }
    if cfg.get("input"):
        man["input_sha256"] = _sha256(cfg["input"])
    return man


def run(argv=None, environ=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    out = None
    try:
        cfg = resolve(args, environ)
        cfg["quiet"] = bool(args.quiet)
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        if cfg.get("input"):
            cfg["input"] = str(Path(cfg["input"]).resolve())
        threads = _set_threads(cfg["threads"])
        files = HANDLERS[args.command](cfg, out)
        stored = {k: v for k, v in cfg.items() if k not in ("quiet", "output_dir")}
        _write_json(out / "manifest.json", _manifest(stored, files, threads))
        return EXIT_OK
    except (DegenerateWindowError, SingularFitError) as exc:
        return _fail(out, exc, EXIT_DEGENERATE)
    except ValidationError as exc:
        return _fail(out, exc, EXIT_VALIDATION)
    except OSError as exc:
        return _fail(out, exc, EXIT_IO)
    except NpkinkError as exc:
        return _fail(out, exc, EXIT_DEGENERATE)


def _fail(out, exc, code) -> int:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("query_point", "gamma", "row", "column"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    print(f"npkink: error: {exc}", file=sys.stderr)
    if out is not None:
        try:
            _write_json(Path(out) / "error.json", rec)
        except OSError:
            pass
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
