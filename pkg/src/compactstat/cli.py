"""Command-line entry point: ``compactstat {simulate,detrend,variogram,backfit}``.

Every command writes plot-ready CSV/JSON into ``--output-dir`` together with
``config.json``, which records every effective parameter and the argument
vector that reproduces the run. Exit status is 0 on success, 1 on a data or
model error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backfit import BackfitSpec, run_backfit
from .detrend import fit_loess, fit_polynomial
from .geodata import (
    DEFAULT_LATTICE, AnisotropyTransform, DataError, DrivingDirection, Lattice,
    apply_anisotropy, load_dataset, write_dataset,
)
from .simfield import FieldSpec, TestBedSpec, generate_testbed, semivariogram_band
from .variogram import VariogramConfig, default_max_lag, empirical_semivariogram, subsample
from .varmodel import SphericalParams, fit_cressie_wls

log = logging.getLogger("compactstat")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {v}")
    return v


def _lattice(text):
    try:
        return Lattice.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _levels(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("levels must be comma-separated fractions") from None
    if not all(0 < v < 1 for v in vals):
        raise argparse.ArgumentTypeError("levels must lie in (0, 1)")
    return vals


def _floats(n):
    def parse(text):
        try:
            vals = [float(v) for v in text.split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError("expected comma-separated numbers") from None
        if n is not None and len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
        return vals
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compactstat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_input=True):
        if needs_input:
            sp.add_argument("--input", required=True, help="input CSV")
        sp.add_argument("--output-dir", required=True, type=Path)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--verbose", action="store_true")

    s = sub.add_parser("simulate", help="generate a synthetic two-pass test bed")
    common(s, needs_input=False)
    s.add_argument("--nugget", type=_nonneg_float, default=1.0)
    s.add_argument("--psill", type=_nonneg_float, default=13.0)
    s.add_argument("--range", type=_positive_float, default=8.0)
    s.add_argument("--rho", type=_positive_float, default=5.0)
    s.add_argument("--site", type=_floats(4), default=[25.0, 45.0, 0.0, 20.0],
                   help="XMIN,XMAX,YMIN,YMAX")
    s.add_argument("--lane-width", type=_positive_float, default=2.0)
    s.add_argument("--spacing", type=_positive_float, default=0.1,
                   help="sample spacing along a lane (m)")
    s.add_argument("--lane-error-sd", type=_nonneg_float, default=1.5)
    s.add_argument("--noise-sd", type=_nonneg_float, default=1.0,
                   help="sensor noise sd for both passes")
    s.add_argument("--trend", type=_floats(None), default=None,
                   help="polynomial trend coefficients on site-normalized coordinates")

    d = sub.add_parser("detrend", help="remove a polynomial or loess trend")
    common(d)
    d.add_argument("--method", choices=["poly", "loess"], default="poly")
    d.add_argument("--degree", type=_positive_int, default=None,
                   help="polynomial degree (default 5) or loess local degree (default 2)")
    d.add_argument("--span", type=_positive_float, default=0.5)
    d.add_argument("--robust-iters", type=int, default=2)
    d.add_argument("--driving", choices=["x", "y"], default="x")

    v = sub.add_parser("variogram", help="directional empirical semivariograms")
    common(v)
    v.add_argument("--direction", action="append", choices=["x", "y", "omni"])
    v.add_argument("--bins", type=_positive_int, default=20)
    v.add_argument("--max-lag", type=_positive_float, default=None)
    v.add_argument("--angle-tol", type=_positive_float, default=22.5)
    v.add_argument("--subsample", type=_positive_int, default=None)
    v.add_argument("--rho", type=_positive_float, default=1.0,
                   help="stretch y by rho before computing lags")
    v.add_argument("--fit", choices=["spherical"], default=None)
    v.add_argument("--band", action="store_true",
                   help="simulated confidence band around the fitted model (needs --fit)")
    v.add_argument("--reps", type=_positive_int, default=200)
    v.add_argument("--levels", type=_levels, default=[0.95, 0.75])
    v.add_argument("--workers", type=_positive_int, default=1)

    b = sub.add_parser("backfit", help="sequential spatial backfitting of both passes")
    b.add_argument("--input", nargs=2, required=True, metavar=("X_CSV", "Y_CSV"),
                   help="x-driving and y-driving CSVs")
    common(b, needs_input=False)
    b.add_argument("--c", type=float, default=1.0)
    b.add_argument("--rho", type=_positive_float, default=5.0)
    b.add_argument("--lattice", type=_lattice, default=DEFAULT_LATTICE,
                   help="NX,NY,XMIN,XMAX,YMIN,YMAX")
    b.add_argument("--degree", type=_positive_int, default=5)
    b.add_argument("--bins", type=_positive_int, default=20)
    b.add_argument("--angle-tol", type=_positive_float, default=22.5)
    b.add_argument("--max-lag-x", type=_positive_float, default=None)
    b.add_argument("--max-lag-y", type=_positive_float, default=None)
    b.add_argument("--subsample", type=_positive_int, default=4500)
    b.add_argument("--max-iters", type=_positive_int, default=50)
    b.add_argument("--tol", type=_positive_float, default=1e-3)
    b.add_argument("--workers", type=_positive_int, default=1)
    return p


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, Lattice):
        return ",".join(str(x) for x in (v.nx, v.ny, v.x_min, v.x_max, v.y_min, v.y_max))
    return v


def _argv_for(args) -> list[str]:
    """Flag vector that reproduces ``args`` with all defaults made explicit."""
    out = [args.command]
    for k, v in sorted(vars(args).items()):
        if k in ("command", "verbose") or v is None or v is False:
            continue
        flag = "--" + k.replace("_", "-")
        if v is True:
            out.append(flag)
        elif k == "direction":
            for item in v:
                out += [flag, item]
        elif k == "input" and isinstance(v, list):
            out += [flag, *v]
        elif isinstance(v, list):
            out += [flag, ",".join(repr(x) for x in v)]
        else:
            out += [flag, str(_jsonable(v))]
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _echo_config(args, extra=None):
    params = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "verbose"}
    cfg = {"command": args.command, "version": __version__, "params": params,
           "argv": _argv_for(args)}
    if extra:
        cfg.update(extra)
    _write_json(args.output_dir / "config.json", cfg)


def _read_table(path):
    """Columns of a headered CSV as float arrays keyed by header name."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError("empty dataset")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite values")
    return {h: data[:, i] for i, h in enumerate(header)}


def cmd_simulate(args):
    x0, x1, y0, y1 = args.site
    bed = TestBedSpec(x0, x1, y0, y1, args.lane_width, args.spacing, args.lane_error_sd, args.seed)
    half = 0.5 * max(x1 - x0, y1 - y0)
    field = FieldSpec(
        SphericalParams(args.nugget, args.psill, args.range), AnisotropyTransform(args.rho),
        trend_coeffs=args.trend, trend_center=(0.5 * (x0 + x1), 0.5 * (y0 + y1)),
        trend_scale=half, noise_sd_x=args.noise_sd, noise_sd_y=args.noise_sd,
    )
    ds_x, ds_y, truth = generate_testbed(bed, field)
    write_dataset(ds_x, args.output_dir / "xdrive.csv")
    write_dataset(ds_y, args.output_dir / "ydrive.csv")
    (args.output_dir / "truth.json").write_text(truth.to_json() + "\n", encoding="utf-8")
    _echo_config(args)


def cmd_detrend(args):
    ds = load_dataset(args.input, DrivingDirection(args.driving))
    if args.method == "poly":
        args.degree = args.degree or 5
        model, res = fit_polynomial(ds, args.degree)
    else:
        args.degree = args.degree or 2
        if args.degree not in (1, 2):
            raise DataError("loess degree must be 1 or 2")
        model, res = fit_loess(ds, args.span, args.degree, args.robust_iters)
    with (args.output_dir / "residuals.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "residual", "lane"])
        for x, y, r, lane in zip(ds.x, ds.y, res.values, ds.lane):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(r)), int(lane)])
    (args.output_dir / "trend.json").write_text(model.to_json() + "\n", encoding="utf-8")
    _echo_config(args)


def cmd_variogram(args):
    if args.band and not args.fit:
        raise argparse.ArgumentTypeError("--band requires --fit spherical")
    tab = _read_table(args.input)
    col = "residual" if "residual" in tab else "ks"
    if col not in tab or "x" not in tab or "y" not in tab:
        raise DataError("input needs columns x, y and residual (or ks)")
    pts = np.column_stack([tab["x"], tab["y"]])
    vals = tab[col]
    if args.subsample:
        _, idx = subsample(np.arange(len(vals)), args.subsample, args.seed)
        pts, vals = pts[idx], vals[idx]
    pts = apply_anisotropy(pts, args.rho)
    args.direction = args.direction or ["omni"]
    if args.max_lag is None:
        args.max_lag = default_max_lag(pts)
    fits = {}
    for direction in args.direction:
        cfg = VariogramConfig(args.max_lag, args.bins, direction, args.angle_tol,
                              args.subsample, args.seed)
        emp = empirical_semivariogram(pts, vals, cfg, workers=args.workers)
        emp.write_csv(args.output_dir / f"semivariogram_{direction}.csv")
        if args.fit:
            fit = fit_cressie_wls(emp)
            fits[direction] = fit.to_dict()
            _write_json(args.output_dir / f"fit_{direction}.json", fit.to_dict())
            if args.band:
                bands = semivariogram_band(pts, FieldSpec(fit.params), cfg, args.reps,
                                           args.levels, args.seed)
                with (args.output_dir / f"band_{direction}.csv").open(
                        "w", newline="", encoding="utf-8") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["lag", "mean", "lower", "upper", "level"])
                    for band in bands:
                        for row in band.rows():
                            w.writerow([repr(v) for v in row])
    _echo_config(args, {"value_column": col})


def cmd_backfit(args):
    ds_x = load_dataset(args.input[0], DrivingDirection.X)
    ds_y = load_dataset(args.input[1], DrivingDirection.Y)
    spec = BackfitSpec(
        c=args.c, rho=args.rho, lattice=args.lattice, poly_degree=args.degree,
        max_outer_iters=args.max_iters, tol=args.tol, n_bins=args.bins,
        angle_tol=args.angle_tol, max_lag_x=args.max_lag_x, max_lag_y=args.max_lag_y,
        subsample_size=args.subsample, seed=args.seed, workers=args.workers,
    )
    res = run_backfit(ds_x, ds_y, spec)
    d = res.to_dict()
    d["spec"].pop("workers", None)
    _write_json(args.output_dir / "backfit.json", d)
    res.write_alpha_csv(args.output_dir / "alpha.csv")
    res.semivariograms["x"].write_csv(args.output_dir / "semivariogram_x.csv")
    res.semivariograms["y"].write_csv(args.output_dir / "semivariogram_y.csv")
    _echo_config(args)


COMMANDS = {
    "simulate": cmd_simulate,
    "detrend": cmd_detrend,
    "variogram": cmd_variogram,
    "backfit": cmd_backfit,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"compactstat: cannot create output directory: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"compactstat {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"compactstat {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
