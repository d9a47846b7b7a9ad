"""Command-line front end.

Subcommands: coeffs | detect | verify | region | raster | sweep | list-maps.
All structured results are JSON with the full run configuration embedded,
so re-running an embedded configuration reproduces the artifact byte for
byte.  Exit codes: 0 success (an empty detection is a success), 1
verification failure, 2 usage or configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .coeffs import (MixingCoefficients, MixingParams, build_coefficients,
                     feedback_weights, mixing_weights, nyquist_gain,
                     nyquist_gain_closed_form)
from .control import (CycleRecord, DetectionSettings, default_gammas,
                      detect_cycles_sweep, newton_refine, verify_cycle)
from .errors import CycleKitError, ParameterError, RefinementError
from .maps import builtin, iterate, list_builtin
from .numerics import RealPoly
from .output import (dump_json, jsonify, write_curve_csv, write_json,
                     write_matrix_csv, write_orbit_svg, write_raster_pgm,
                     write_raster_svg, write_table_csv)
from .stability import (TransferFunction, boundary_curve, curve_is_simple,
                        multiplier_bounds, real_crossing_min, real_part_min,
                        region_area, region_length, spectral_radius_raster,
                        typically_real)


def _parse_params(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ParameterError(f"--param expects KEY=VALUE, got {pair!r}")
        key, val = pair.split("=", 1)
        out[key] = float(val)
    return out


def _parse_range(spec: str) -> list[float]:
    """Parse 'a:b:step' (inclusive ends within half a step) or 'v1,v2,...'."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ParameterError(f"range {spec!r} must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ParameterError("range step must be positive")
        n = int(np.floor((stop - start) / step + 0.5)) + 1
        return [round(start + k * step, 12) for k in range(n)]
    return [float(v) for v in spec.split(",")]


def _config_dict(args, skip=("func",)) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in skip}
    cfg["version"] = __version__
    return cfg


def _emit(args, payload: dict) -> None:
    if getattr(args, "out", None):
        write_json(args.out, payload)
    else:
        sys.stdout.write(dump_json(payload))


def _mixing_params(args, gamma: float | None = None) -> MixingParams:
    g = args.gamma if gamma is None else gamma
    return MixingParams(depth=args.depth, period=args.period,
                        sigma=args.sigma, tau=args.tau, gamma=g or 0.0,
                        enforce_range=not args.free_range)


def _settings(args) -> DetectionSettings:
    return DetectionSettings(
        warmup=args.warmup, tol_converge=args.tol_converge,
        tol_verify=args.tol_verify, max_iter=args.max_iter,
        refine=not args.no_refine)


def _record_payload(rec: CycleRecord) -> dict:
    return {
        "points": rec.points,
        "residual": rec.residual,
        "minimal_period": rec.minimal_period,
        "period": rec.period,
        "gamma": rec.gamma,
        "multipliers": None if rec.multipliers is None else list(rec.multipliers),
        "open_loop_unstable": rec.open_loop_unstable,
        "closed_loop_margin": rec.closed_loop_margin,
        "reconverged": rec.reconverged,
        "verified": rec.verified,
    }


# --- subcommands ------------------------------------------------------------

def cmd_coeffs(args) -> int:
    params = _mixing_params(args)
    a = mixing_weights(params)
    feedback_rules = {}
    for t_rule, label in ((1, "period_1"), (2, "period_2"), (max(3, params.period), "period_gt2")):
        rule_params = MixingParams(params.depth, t_rule, params.sigma, params.tau,
                                   enforce_range=params.enforce_range)
        try:
            feedback_rules[label] = feedback_weights(a, rule_params)
        except ParameterError as exc:
            feedback_rules[label] = str(exc)
    coeffs = build_coefficients(params)
    try:
        closed = nyquist_gain_closed_form(params)
    except ParameterError:
        closed = None
    payload = {
        "config": _config_dict(args),
        "weights": a,
        "feedback": coeffs.feedback,
        "feedback_rules": feedback_rules,
        "nyquist_gain": nyquist_gain(a),
        "nyquist_gain_closed_form": closed,
    }
    if args.format == "csv":
        header = ["j", "weight", "feedback"]
        rows = [[j + 1, float(a[j]), float(coeffs.feedback[j])]
                for j in range(params.depth)]
        if args.out:
            write_table_csv(args.out, header, rows, config=_config_dict(args))
        else:
            sys.stdout.write(",".join(header) + "\n")
            for row in rows:
                sys.stdout.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                          for v in row) + "\n")
        return 0
    _emit(args, payload)
    return 0


def _gamma_grid(args) -> list[float]:
    if args.sweep_gamma:
        return default_gammas(max(args.period, 3))
    if args.gamma is not None:
        return [args.gamma]
    return default_gammas(args.period)


def cmd_detect(args) -> int:
    system = builtin(args.map, **_parse_params(args.param))
    gammas = _gamma_grid(args)
    params = _mixing_params(args, gamma=gammas[0])
    records, diag = detect_cycles_sweep(
        system, params, gammas, restarts=args.restarts, seed=args.seed,
        settings=_settings(args), stop_on_success=args.first_success)
    payload = {
        "config": _config_dict(args),
        "map": {"name": system.name, "dim": system.dim, "params": system.params},
        "mixing": {"depth": params.depth, "period": params.period,
                   "sigma": params.sigma, "tau": params.tau},
        "cycles": [_record_payload(r) for r in records],
        "diagnostics": diag,
    }
    _emit(args, payload)
    if args.svg:
        rng = np.random.default_rng(args.seed)
        traj = None
        for _ in range(16):
            x0 = rng.uniform(system.domain[:, 0], system.domain[:, 1])
            try:
                traj = iterate(system, x0, 4200)[200:]
                break
            except CycleKitError:
                continue
        if traj is not None:
            write_orbit_svg(args.svg, traj, [r.points for r in records])
    return 0


def cmd_verify(args) -> int:
    try:
        with open(args.cycle_file) as fh:
            doc = json.load(fh)
        name = doc["map"]["name"]
        system = builtin(name, **doc["map"].get("params", {}))
        mixing = doc["mixing"]
        cycles = doc["cycles"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"malformed cycle file: {exc}\n")
        return 2
    all_ok = True
    results = []
    for entry in cycles:
        points = np.asarray(entry["points"], dtype=float)
        if points.ndim != 2 or points.shape[1] != system.dim:
            sys.stderr.write("cycle dimension does not match the map\n")
            return 2
        params = MixingParams(depth=int(mixing["depth"]), period=points.shape[0],
                              sigma=float(mixing.get("sigma", 1.0)),
                              tau=float(mixing.get("tau", 1.0)),
                              gamma=float(entry.get("gamma", 0.0)))
        coeffs = build_coefficients(params)
        from .control import cycle_residual, minimal_period
        rec = CycleRecord(points=points,
                          residual=cycle_residual(system, points),
                          minimal_period=minimal_period(points, args.tol_verify),
                          gamma=params.gamma)
        if not args.no_refine and rec.residual < 0.1:
            try:
                rec = newton_refine(system, rec)
            except RefinementError:
                pass
        rec = verify_cycle(system, rec, coeffs, args.tol_verify)
        all_ok &= rec.verified
        results.append(_record_payload(rec))
    payload = {"config": _config_dict(args), "map": doc["map"],
               "cycles": results, "all_verified": all_ok}
    _emit(args, payload)
    return 0 if all_ok else 1


def _transfer(args) -> TransferFunction:
    params = _mixing_params(args)
    coeffs = build_coefficients(params)
    return TransferFunction.from_coefficients(coeffs)


def cmd_region(args) -> int:
    tf = _transfer(args)
    i_val = real_crossing_min(tf)
    j_val = real_part_min(tf)
    real_bound, disk_bound = multiplier_bounds(i_val, j_val)
    length = region_length(tf, window=(args.length_window, 1.0))
    area, area_err = region_area(
        tf, window=((args.window[0], args.window[1]), (args.window[2], args.window[3])),
        shape=(args.resolution[0], args.resolution[1]))
    curve = boundary_curve(tf, resolution=args.curve_resolution)
    payload = {
        "config": _config_dict(args),
        "i_value": i_val,
        "j_value": j_val,
        "real_bound": real_bound,
        "disk_bound": disk_bound,
        "length": length,
        "area": area,
        "area_error": area_err,
        "typically_real": typically_real(tf),
        "boundary_simple": curve_is_simple(curve),
    }
    _emit(args, payload)
    if args.curve_csv:
        write_curve_csv(args.curve_csv, curve.t, curve.points,
                        config=_config_dict(args))
    return 0


def cmd_raster(args) -> int:
    tf = _transfer(args)
    window = ((args.window[0], args.window[1]), (args.window[2], args.window[3]))
    shape = (args.resolution[0], args.resolution[1])
    matrix = spectral_radius_raster(tf, window=window, shape=shape)
    finite = np.where(np.isfinite(matrix), matrix, np.inf)
    row, col = np.unravel_index(int(np.argmin(finite)), matrix.shape)
    (x0, x1), (y0, y1) = window
    nx, ny = shape
    payload = {
        "config": _config_dict(args),
        "window": [x0, x1, y0, y1],
        "shape": [nx, ny],
        "min_value": float(matrix[row, col]),
        "min_pixel": [int(col), int(row)],
        "min_location": [float(x0 + (col + 0.5) * (x1 - x0) / nx),
                         float(y0 + (row + 0.5) * (y1 - y0) / ny)],
        "stable_fraction": float(np.mean(matrix < 1.0)),
        "nan_pixels": int(np.sum(~np.isfinite(matrix))),
    }
    _emit(args, payload)
    if args.csv:
        write_matrix_csv(args.csv, matrix, config=_config_dict(args))
    if args.pgm:
        write_raster_pgm(args.pgm, matrix)
    if args.svg:
        write_raster_svg(args.svg, matrix, window)
    return 0


def cmd_sweep(args) -> int:
    ns = [int(v) for v in _parse_range(args.n_range)]
    gammas = _parse_range(args.gamma_range)
    sigmas = _parse_range(args.sigma_range)
    header = ["depth", "period", "gamma", "sigma", "tau",
              "nyquist_gain", "i_value", "j_value", "real_bound", "disk_bound"]
    detection = args.map is not None
    if detection:
        header += ["cycles_found", "best_residual"]
        system = builtin(args.map, **_parse_params(args.param))
    rows = []
    for n in ns:
        for sigma in sigmas:
            for gamma in gammas:
                tau = sigma if args.tau is None else args.tau
                try:
                    params = MixingParams(depth=n, period=args.period,
                                          sigma=sigma, tau=tau, gamma=gamma,
                                          enforce_range=not args.free_range)
                    coeffs = build_coefficients(params)
                    tf = TransferFunction.from_coefficients(coeffs)
                except (ParameterError, CycleKitError) as exc:
                    rows.append([n, args.period, gamma, sigma, tau,
                                 f"error: {exc}", "", "", "", ""]
                                + ([""] * 2 if detection else []))
                    continue
                i_val = real_crossing_min(tf)
                j_val = real_part_min(tf)
                real_bound, disk_bound = multiplier_bounds(i_val, j_val)
                row = [n, args.period, gamma, sigma, tau,
                       nyquist_gain(coeffs.weights), i_val, j_val,
                       real_bound, disk_bound]
                if detection:
                    records, _ = detect_cycles_sweep(
                        system, params, [gamma], restarts=args.restarts,
                        seed=args.seed, settings=_settings(args))
                    row.append(len(records))
                    row.append(min((r.residual for r in records), default=""))
                rows.append(row)
    if args.csv:
        write_table_csv(args.csv, header, rows, config=_config_dict(args))
    else:
        sys.stdout.write(",".join(header) + "\n")
        for row in rows:
            sys.stdout.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                      for v in row) + "\n")
    return 0


def cmd_list_maps(args) -> int:
    payload = {"config": _config_dict(args), "maps": {}}
    for name in list_builtin():
        system = builtin(name)
        payload["maps"][name] = {
            "dim": system.dim,
            "params": system.params,
            "domain": system.domain,
        }
    _emit(args, payload)
    return 0


# --- parser -----------------------------------------------------------------

def _add_mixing_args(sp, with_gamma=True):
    sp.add_argument("-N", "--depth", type=int, required=True,
                    help="number of past states mixed per channel")
    sp.add_argument("-T", "--period", type=int, required=True,
                    help="cycle length targeted by the loop")
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--tau", type=float, default=None)
    if with_gamma:
        sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--free-range", action="store_true",
                    help="allow sigma/tau outside the strict range for sweeps")


def _add_detect_args(sp):
    sp.add_argument("--restarts", type=int, default=64)
    sp.add_argument("--warmup", type=int, default=100)
    sp.add_argument("--max-iter", type=int, default=200_000)
    sp.add_argument("--tol-converge", type=float, default=1e-9)
    sp.add_argument("--tol-verify", type=float, default=1e-8)
    sp.add_argument("--no-refine", action="store_true",
                    help="skip Newton polishing of detected cycles")
    sp.add_argument("--param", action="append", metavar="KEY=VALUE",
                    help="override a map constant (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyclekit",
        description="Find, stabilize, and verify unstable cycles of discrete maps.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("coeffs", help="mixing coefficients for (N, T, sigma, tau)")
    _add_mixing_args(sp)
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_coeffs)

    sp = sub.add_parser("detect", help="detect cycles of a built-in map")
    sp.add_argument("map", choices=list_builtin())
    _add_mixing_args(sp)
    sp.add_argument("--sweep-gamma", action="store_true",
                    help="sweep gamma over 0.1..0.9 instead of a single value")
    sp.add_argument("--first-success", action="store_true",
                    help="stop the gamma sweep at the first verified cycle")
    sp.add_argument("--mu", type=float, default=None,
                    help="shorthand for --param mu=... (logistic)")
    _add_detect_args(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="write the JSON report here instead of stdout")
    sp.add_argument("--svg", help="write an orbit scatter plot (SVG)")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("verify", help="re-verify cycles from a JSON report")
    sp.add_argument("cycle_file")
    sp.add_argument("--tol-verify", type=float, default=1e-8)
    sp.add_argument("--no-refine", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("region", help="admissible-region metrics and boundary curve")
    _add_mixing_args(sp)
    sp.add_argument("--curve-csv", help="write the boundary curve as CSV")
    sp.add_argument("--curve-resolution", type=float, default=0.02)
    sp.add_argument("--length-window", type=float, default=-1e4,
                    help="left edge of the real-axis scan")
    sp.add_argument("--window", type=float, nargs=4, metavar=("X0", "X1", "Y0", "Y1"),
                    default=[-25.0, 1.0, -13.0, 13.0])
    sp.add_argument("--resolution", type=int, nargs=2, metavar=("NX", "NY"),
                    default=[200, 200])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_region)

    sp = sub.add_parser("raster", help="spectral-radius raster over the multiplier plane")
    _add_mixing_args(sp)
    sp.add_argument("--window", type=float, nargs=4, metavar=("X0", "X1", "Y0", "Y1"),
                    default=[-25.0, 1.0, -13.0, 13.0])
    sp.add_argument("--resolution", type=int, nargs=2, metavar=("NX", "NY"),
                    default=[400, 400])
    sp.add_argument("--csv")
    sp.add_argument("--pgm")
    sp.add_argument("--svg")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_raster)

    sp = sub.add_parser("sweep", help="grid sweep of metrics or detection success")
    sp.add_argument("map", nargs="?", choices=list_builtin(),
                    help="if given, run detection per grid cell")
    sp.add_argument("-T", "--period", type=int, required=True)
    sp.add_argument("--n-range", default="1:10:1", help="depth grid, a:b:step or list")
    sp.add_argument("--gamma-range", default="0:0:1")
    sp.add_argument("--sigma-range", default="1:1:1")
    sp.add_argument("--tau", type=float, default=None,
                    help="fixed tau (defaults to tau=sigma)")
    sp.add_argument("--free-range", action="store_true")
    _add_detect_args(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("list-maps", help="registered maps and their constants")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_list_maps)

    return parser


def _apply_config_file(args) -> None:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        for key, value in overrides.items():
            if hasattr(args, key):
                setattr(args, key, value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        if getattr(args, "mu", None) is not None:
            args.param = (args.param or []) + [f"mu={args.mu}"]
        if getattr(args, "tau", None) is None and hasattr(args, "sigma"):
            args.tau = args.sigma
        return args.func(args)
    except ParameterError as exc:
        sys.stderr.write(f"parameter error: {exc}\n")
        return 2
    except CycleKitError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return 3
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
