"""Command-line entry point: ``ramansplit <subcommand> --config FILE ...``.

Exit codes: 0 success, 2 config or usage error, 3 solver error,
4 fit did not converge (or was unidentifiable).
"""
from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fitting import (FitConvergenceError, FitDataset, FitError, FitProblem, FitResult,
                      fit_double_lorentzian, fit_model, fit_power_law)
from .io import (ConfigError, RunManifest, SpectrumParseError, drives_from_config,
                 emit_results, file_digest, load_config, load_measured_spectrum, now,
                 parse_quantity, parse_rabi, read_spectrum_csv, scheme_from_config,
                 worker_count, write_map2d)
from .liouville import (Observables, SolverError, assemble_liouvillian, observables,
                        steady_state)
from .model import TWO_PI, build_hamiltonian, build_jump_operators
from .scan import ScanConfig, map2d, normalize_fluorescence, scan_excitation, scan_stokes

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_FIT = 0, 2, 3, 4
DEFAULT_OUT = "ramansplit-out"


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser, drives: bool = True):
    p.add_argument("--config", required=True,
                   help="config JSON path or bundled name (fig1.json, dbt_pdcb.json)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads for grid solves (env RAMAN_WORKERS overrides)")
    p.add_argument("--out", default=None, help=f"output directory (default {DEFAULT_OUT})")
    if not drives:
        return
    g = p.add_argument_group("drive overrides (Hz, unit suffixes or rate shorthand)")
    g.add_argument("--omega-exc-hz", "--exc-rabi-hz", "--exc-rabi", dest="omega_exc",
                   help="excitation Rabi amplitude: 6.75e9, 6.75GHz, 2gw, 2sqrt(ge*gw)")
    g.add_argument("--omega-stk-hz", "--stk-rabi-hz", "--stk-rabi", dest="omega_stk",
                   help="Stokes Rabi amplitude: 6.75e9, 5gv, ...")
    g.add_argument("--delta-exc-hz", dest="delta_exc", help="excitation detuning from nu_gw")
    g.add_argument("--delta-stk-hz", dest="delta_stk", help="Stokes detuning from nu_vw")
    g.add_argument("--nu-stk-hz", dest="nu_stk", help="absolute Stokes frequency")


def _grid(p: argparse.ArgumentParser, what: str):
    p.add_argument("--from", dest="start", help=f"{what} grid start (Hz)")
    p.add_argument("--to", dest="stop", help=f"{what} grid stop (Hz)")
    p.add_argument("--points", type=int, default=None, help="grid points")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ramansplit",
        description="Steady-state spectra of a laser-driven four-level molecule "
                    "with a Raman (Stokes) coupling.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("steady", help="observables at a single drive setting")
    _common(p)

    p = sub.add_parser("scan-exc", help="sweep the excitation detuning")
    _common(p)
    _grid(p, "excitation detuning")

    p = sub.add_parser("scan-stk", help="sweep the Stokes frequency")
    _common(p)
    _grid(p, "Stokes detuning from nu_vw")

    p = sub.add_parser("map2d", help="grid over two of omega_exc, omega_stk, delta_exc")
    _common(p)
    for ax, var, lo, hi in (("x", "omega_exc", "0", "25sqrt(1.5ge*gw)"),
                            ("y", "omega_stk", "0", "10gv")):
        p.add_argument(f"--{ax}", dest=f"{ax}_var", default=var, help=f"{ax} variable ({var})")
        p.add_argument(f"--{ax}-from", dest=f"{ax}_from", default=lo, help=f"({lo})")
        p.add_argument(f"--{ax}-to", dest=f"{ax}_to", default=hi, help=f"({hi})")
        p.add_argument(f"--{ax}-points", dest=f"{ax}_points", type=int, default=50)
    p.add_argument("--layers", default="rho_vv,coh_gv_sq",
                   help="comma-separated observables written as CSV layers")

    p = sub.add_parser("fit", help="fit the model to measured excitation spectra")
    _common(p)
    p.add_argument("--data", nargs="+", required=True, help="measured spectrum CSV files")
    p.add_argument("--powers", help="comma-separated Stokes powers, one per file (e.g. 0.33mW)")
    p.add_argument("--r-inf", help="saturation count rate; without it a free amplitude is fitted")
    p.add_argument("--free", default="omega_stk,beta_G", help="free physical parameters")
    p.add_argument("--baseline", default="constant", choices=("none", "constant", "linear"))
    p.add_argument("--power-calibration", action="store_true",
                   help="tie omega_stk = c*sqrt(P) across datasets")
    p.add_argument("--max-iter", type=int, default=200)

    p = sub.add_parser("fit-lorentz2", help="fit a sum of two Lorentzians")
    _common(p, drives=False)
    p.add_argument("--data", required=True,
                   help="measured spectrum CSV or a scan CSV written by scan-exc")
    p.add_argument("--column", default="rho_ee", help="column used from scan CSVs")

    p = sub.add_parser("calibrate-power", help="fit omega = c*sqrt(P)")
    _common(p, drives=False)
    p.add_argument("--powers", help="comma-separated powers (W, or with mW/uW suffix)")
    p.add_argument("--omegas", help="comma-separated Rabi amplitudes (Hz or shorthand)")
    p.add_argument("--fit-report", help="fit.json from `fit` (uses its omega_stk and powers)")
    p.add_argument("--free-exponent", action="store_true", help="also fit the exponent")

    p = sub.add_parser("validate-config", help="check a config and print the level scheme")
    p.add_argument("--config", required=True)
    return ap


# ---------------------------------------------------------------------------
# helpers

def _setup(args):
    doc = load_config(args.config)
    scheme = scheme_from_config(doc)
    over = {}
    for key, attr in (("omega_exc_hz", "omega_exc"), ("omega_stk_hz", "omega_stk"),
                      ("delta_exc_hz", "delta_exc"), ("delta_stk_hz", "delta_stk"),
                      ("nu_stk_hz", "nu_stk")):
        val = getattr(args, attr, None)
        if val is not None:
            over[key] = val
    drives = drives_from_config(doc, scheme, **over)
    return doc, scheme, drives


def _hz(text, what: str) -> float:
    try:
        return parse_quantity(text, "hz")
    except ValueError as exc:
        raise UsageError(f"{what}: {exc}") from None


def _scan_range(args, doc):
    block = doc.get("scan", {})
    start = args.start if args.start is not None else block.get("from_hz")
    stop = args.stop if args.stop is not None else block.get("to_hz")
    points = args.points if args.points is not None else block.get("points")
    if start is None or stop is None or points is None:
        raise UsageError("grid needs --from/--to/--points or a 'scan' block in the config")
    return _hz(start, "--from"), _hz(stop, "--to"), int(points)


def _manifest(args, argv, doc, workers, inputs=None):
    inputs = dict(inputs or {})
    if Path(args.config).exists():
        inputs[str(args.config)] = file_digest(args.config)
    return RunManifest(args.command, doc, inputs, list(argv), workers)


def _out_dir(args) -> Path:
    return Path(args.out or DEFAULT_OUT)


def _csv_list(text, parse, what):
    try:
        return [parse(t.strip()) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"{what}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands

def cmd_steady(args, argv):
    doc, scheme, drives = _setup(args)
    t0 = now()
    L = assemble_liouvillian(build_hamiltonian(scheme, drives), build_jump_operators(scheme))
    rho = steady_state(L, check_degeneracy=False)
    obs = observables(rho, scheme)
    values = {k: float(v) for k, v in obs.as_dict().items()}
    for k, v in values.items():
        print(f"{k} = {v:.10g}")
    if args.out:
        workers = worker_count(args.workers)
        m = _manifest(args, argv, doc, workers)
        m.wall_clock_s = now() - t0
        out = _out_dir(args)
        out.mkdir(parents=True, exist_ok=True)
        (out / "steady.json").write_text(json.dumps(
            {"observables": values, "drives": drives.__dict__,
             "detunings": drives.detunings(scheme)}, indent=2, sort_keys=True))
        m.outputs = ["steady.json"]
        (out / "manifest.json").write_text(m.to_json())
    return EXIT_OK


def cmd_scan(args, argv):
    doc, scheme, drives = _setup(args)
    workers = worker_count(args.workers)
    start, stop, points = _scan_range(args, doc)
    t0 = now()
    try:
        if args.command == "scan-exc":
            cfg = ScanConfig("delta_exc", TWO_PI * start, TWO_PI * stop, points, drives)
        else:
            nu_vw = scheme.transition("nu_vw")
            cfg = ScanConfig("nu_stk", nu_vw + start, nu_vw + stop, points, drives)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.command == "scan-exc":
        spec, stem = scan_excitation(scheme, cfg, workers), "scan_exc"
    else:
        spec, stem = scan_stokes(scheme, cfg, workers), "scan_stk"
    m = _manifest(args, argv, doc, workers)
    m.wall_clock_s = now() - t0
    out = _out_dir(args)
    emit_results(out, m, spectra={stem: spec})
    rho_ee = spec.observables.rho_ee
    print(f"{points} points -> {out / (stem + '.csv')}; rho_ee range "
          f"[{rho_ee.min():.4g}, {rho_ee.max():.4g}]")
    return EXIT_OK


def _axis(scheme, drives, var, lo, hi, n, flag):
    if var == "delta_exc":
        a, b = TWO_PI * _hz(lo, flag), TWO_PI * _hz(hi, flag)
    else:
        try:
            a, b = parse_rabi(lo, scheme), parse_rabi(hi, scheme)
        except ValueError as exc:
            raise UsageError(f"{flag}: {exc}") from None
    try:
        return ScanConfig(var, a, b, n, drives)
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def cmd_map2d(args, argv):
    doc, scheme, drives = _setup(args)
    workers = worker_count(args.workers)
    cx = _axis(scheme, drives, args.x_var, args.x_from, args.x_to, args.x_points, "--x")
    cy = _axis(scheme, drives, args.y_var, args.y_from, args.y_to, args.y_points, "--y")
    layers = [s.strip() for s in args.layers.split(",") if s.strip()]
    unknown = set(layers) - set(Observables.names())
    if unknown:
        raise UsageError(f"unknown layers {sorted(unknown)}")
    t0 = now()
    try:
        m2 = map2d(scheme, cx, cy, workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    man = _manifest(args, argv, doc, workers)
    man.wall_clock_s = now() - t0
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    written = write_map2d(m2, out, "map2d", layers)
    man.outputs = sorted(p.name for p in written)
    (out / "manifest.json").write_text(man.to_json())
    print(f"{args.y_points}x{args.x_points} map -> {out}; max rho_vv "
          f"{float(np.max(m2.observables.rho_vv)):.4g}")
    return EXIT_OK


def _dataset_from_file(path, scheme, drives, r_inf):
    ms = load_measured_spectrum(path)
    x = ms.abscissa if ms.kind == "detuning" else TWO_PI * (ms.abscissa - scheme.transition("nu_gw"))
    y, sigma = ms.counts, ms.uncertainty
    if r_inf is not None:
        y = normalize_fluorescence(y, r_inf)
        sigma = None if sigma is None else sigma / r_inf
    return x, np.asarray(y, dtype=float), sigma


def cmd_fit(args, argv):
    doc, scheme, drives = _setup(args)
    workers = worker_count(args.workers)
    r_inf = None if args.r_inf is None else parse_quantity(args.r_inf)
    powers = [None] * len(args.data)
    if args.powers:
        powers = _csv_list(args.powers, lambda t: parse_quantity(t, "w"), "--powers")
        if len(powers) != len(args.data):
            raise UsageError(f"--powers lists {len(powers)} values for {len(args.data)} files")
    datasets, inputs = [], {}
    for path, power in zip(args.data, powers):
        x, y, sigma = _dataset_from_file(path, scheme, drives, r_inf)
        datasets.append(FitDataset(x, y, drives, sigma, power, label=str(path)))
        inputs[str(path)] = file_digest(path)
    free = tuple(s.strip() for s in args.free.split(",") if s.strip())
    try:
        problem = FitProblem(scheme, datasets, free, baseline_mode=args.baseline,
                             free_amplitude=r_inf is None,
                             power_calibration=args.power_calibration,
                             max_iter=args.max_iter, workers=workers)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    t0 = now()
    extra = {"powers_w": powers, "data": list(map(str, args.data))}
    code = EXIT_OK
    try:
        result = fit_model(problem)
    except FitConvergenceError as exc:
        print(f"fit did not converge: {exc}; best-so-far written", file=sys.stderr)
        result, code = exc.result, EXIT_FIT
    man = _manifest(args, argv, doc, workers, inputs)
    man.wall_clock_s = now() - t0
    out = _out_dir(args)
    emit_results(out, man, fits={"fit": (result, doc, extra)})
    _print_fit(result)
    return code


def _print_fit(result: FitResult):
    for n, v, u in zip(result.names, result.values, result.uncertainties):
        print(f"{n} = {v:.8g} +/- {u:.3g}")
    print(f"rss = {result.rss:.6g} after {result.iterations} iterations ({result.message})")


def cmd_lorentz2(args, argv):
    doc = load_config(args.config)
    path = Path(args.data)
    try:
        first = path.read_text().split("\n", 1)[0]
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    if first.startswith("swept_value"):
        x, cols = read_spectrum_csv(path)
        if args.column not in cols:
            raise UsageError(f"{path}: no column {args.column!r}")
        y = cols[args.column]
    else:
        ms = load_measured_spectrum(path)
        x, y = ms.abscissa, ms.counts
    t0 = now()
    code = EXIT_OK
    try:
        result = fit_double_lorentzian(x, y)
    except FitConvergenceError as exc:
        result, code = exc.result, EXIT_FIT
    man = _manifest(args, argv, doc, worker_count(args.workers), {str(path): file_digest(path)})
    man.wall_clock_s = now() - t0
    emit_results(_out_dir(args), man, fits={"lorentz2": (result, doc, {"data": str(path)})})
    _print_fit(result)
    return code


def cmd_calibrate(args, argv):
    doc = load_config(args.config)
    scheme = scheme_from_config(doc)
    inputs = {}
    if args.fit_report:
        rep = json.loads(Path(args.fit_report).read_text())
        params = rep["parameters"]
        powers = rep.get("powers_w") or []
        omegas = [params[f"omega_stk[{k}]"] for k in range(len(powers))
                  if f"omega_stk[{k}]" in params]
        if not powers or len(omegas) != len(powers) or any(p is None for p in powers):
            raise UsageError(f"{args.fit_report}: needs per-dataset omega_stk and powers")
        inputs[str(args.fit_report)] = file_digest(args.fit_report)
    else:
        if not (args.powers and args.omegas):
            raise UsageError("give --powers and --omegas, or --fit-report")
        powers = _csv_list(args.powers, lambda t: parse_quantity(t, "w"), "--powers")
        omegas = _csv_list(args.omegas, lambda t: parse_rabi(t, scheme), "--omegas")
        if len(powers) != len(omegas):
            raise UsageError("--powers and --omegas differ in length")
    try:
        cal = fit_power_law(powers, omegas, free_exponent=args.free_exponent)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    doc_out = dict(cal.__dict__)
    doc_out.update(powers_w=list(powers), omegas=list(map(float, omegas)),
                   coefficient_units="rad/s/W^exponent")
    man = _manifest(args, argv, doc, worker_count(args.workers), inputs)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "calibration.json").write_text(json.dumps(doc_out, indent=2, sort_keys=True))
    man.outputs = ["calibration.json"]
    (out / "manifest.json").write_text(man.to_json())
    print(f"omega = {cal.coefficient:.6g} * P^{cal.exponent:.4f}  (R^2 = {cal.r_squared:.6f})")
    return EXIT_OK


def cmd_validate(args, argv):
    doc = load_config(args.config)
    scheme = scheme_from_config(doc)
    drives = drives_from_config(doc, scheme)
    print(f"config {doc.get('_source')}: OK")
    print("levels: " + ", ".join(scheme.levels))
    for lv in scheme.levels:
        root, ne, ns = scheme.frame(lv)
        print(f"  frame {lv}: root {root}, exc photons {ne}, stk photons {ns}")
    for d in scheme.decays:
        print(f"  decay {d.from_level}->{d.to_level}: {d.rate / TWO_PI:.6g} Hz")
    for c in scheme.couplings:
        print(f"  drive {c.lower}-{c.upper} ({c.laser}) x{c.rabi_scale:g}")
    det = drives.detunings(scheme)
    print("drives: omega_exc/2pi = {:.6g} Hz, omega_stk/2pi = {:.6g} Hz".format(
        drives.omega_exc / TWO_PI, drives.omega_stk / TWO_PI))
    print("  " + ", ".join(f"{k}/2pi = {v / TWO_PI:.6g} Hz" for k, v in det.items()))
    return EXIT_OK


COMMANDS = {
    "steady": cmd_steady,
    "scan-exc": cmd_scan,
    "scan-stk": cmd_scan,
    "map2d": cmd_map2d,
    "fit": cmd_fit,
    "fit-lorentz2": cmd_lorentz2,
    "calibrate-power": cmd_calibrate,
    "validate-config": cmd_validate,
}


# argparse only treats plain "-12" or "-1.5" as negative numbers
_NEGATIVE = re.compile(r"^-(\d|\.\d)")


def _attach_negative_values(argv: list[str]) -> list[str]:
    out: list[str] = []
    for tok in argv:
        if out and _NEGATIVE.match(tok) and out[-1].startswith("--") and "=" not in out[-1]:
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_attach_negative_values(argv))
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, argv)
    except (ConfigError, SpectrumParseError, UsageError) as exc:
        print(f"ramansplit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"ramansplit {args.command}: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FitError as exc:
        print(f"ramansplit {args.command}: fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"ramansplit {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
