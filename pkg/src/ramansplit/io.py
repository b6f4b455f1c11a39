"""Config files, quantity parsing, measured spectra and result files.

Config documents are JSON. Keys ending in ``_hz`` hold ordinary
frequencies and are converted to rad/s (times 2*pi) where the model wants
angular units; transition frequencies stay in Hz.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from . import __version__
from .liouville import Observables
from .model import (TWO_PI, DriveCoupling, DrivePair, ExtraLevelConfig, LevelScheme,
                    SchemeError, SidebandConfig, extend_model, four_level_scheme)
from .scan import Map2D, Spectrum


class ConfigError(ValueError):
    pass


class SpectrumParseError(ValueError):
    pass


BUNDLED = ("fig1.json", "dbt_pdcb.json")

_UNITS = {
    "": 1.0,
    "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9, "thz": 1e12,
    "w": 1.0, "mw": 1e-3, "uw": 1e-6, "nw": 1e-9,
    "s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12,
}
_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUANTITY = re.compile(rf"^\s*({_NUMBER})\s*([a-zA-Z]*)\s*$")
_RATE_REL = re.compile(rf"^\s*({_NUMBER})?\s*\*?\s*g([a-zA-Z])\s*$")
_RATE_SQRT = re.compile(
    rf"^\s*({_NUMBER})?\s*\*?\s*sqrt\(\s*({_NUMBER})?\s*\*?\s*g([a-zA-Z])\s*\*\s*g([a-zA-Z])\s*\)\s*$")


def parse_quantity(text, unit_kind: str | None = None) -> float:
    """Parse ``"40e9"``, ``"40GHz"``, ``"1.2mW"`` ... into SI units.

    ``unit_kind`` ("hz", "w" or "s") restricts which suffixes are legal.
    """
    if isinstance(text, (int, float)):
        return float(text)
    m = _QUANTITY.match(str(text))
    if not m:
        raise ValueError(f"cannot parse number {text!r}")
    unit = m.group(2).lower()
    if unit not in _UNITS:
        raise ValueError(f"unknown unit {m.group(2)!r} in {text!r}")
    if unit and unit_kind and not unit.endswith(unit_kind):
        raise ValueError(f"unit {m.group(2)!r} in {text!r} is not a {unit_kind} unit")
    return float(m.group(1)) * _UNITS[unit]


def decay_totals(scheme: LevelScheme) -> dict[str, float]:
    """Total outgoing population decay rate per level (rad/s)."""
    out = {lv: 0.0 for lv in scheme.levels}
    for c in scheme.decays:
        out[c.from_level] += c.rate
    return out


def parse_rabi(text, scheme: LevelScheme) -> float:
    """Rabi amplitude in rad/s from Hz (``6.75e9``, ``6.75GHz``) or rate shorthand.

    Shorthand is relative to total decay rates: ``5gv`` = 5*Gamma_v,
    ``2gw`` = 2*Gamma_w, ``2sqrt(ge*gw)`` = 2*sqrt(Gamma_e*Gamma_w),
    ``sqrt(1.5ge*gw)``.
    """
    if isinstance(text, (int, float)):
        return TWO_PI * float(text)
    rates = decay_totals(scheme)

    def rate(label):
        if label not in rates:
            raise ValueError(f"no level {label!r} for rate shorthand in {text!r}")
        return rates[label]

    s = str(text)
    m = _RATE_REL.match(s)
    if m:
        return float(m.group(1) or 1.0) * rate(m.group(2))
    m = _RATE_SQRT.match(s)
    if m:
        outer, inner = float(m.group(1) or 1.0), float(m.group(2) or 1.0)
        return outer * math.sqrt(inner * rate(m.group(3)) * rate(m.group(4)))
    return TWO_PI * parse_quantity(s, "hz")


def load_config(path_or_name) -> dict:
    """Read a config document; bare bundled names (``fig1.json``) are resolved too."""
    p = Path(path_or_name)
    if not p.exists() and p.name in BUNDLED and len(p.parts) == 1:
        text = resources.files("ramansplit.data").joinpath(p.name).read_text()
        source = f"bundled:{p.name}"
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"{p}: {exc.strerror}") from None
        source = str(p)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be an object")
    doc.setdefault("_source", source)
    return doc


def _need(doc: Mapping, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"missing key {key!r} in {where}")
    return doc[key]


def scheme_from_config(doc: Mapping) -> LevelScheme:
    """Build the (possibly extended) level scheme a config describes."""
    try:
        levels = list(_need(doc, "levels", "config"))
        tr = _need(doc, "transitions_hz", "config")
        dec = _need(doc, "decays_hz", "config")
        cpl = doc.get("couplings", {})
        deph = {k: TWO_PI * float(v) for k, v in doc.get("pure_dephasing_hz", {}).items()}
        unknown = set(levels) - {"g", "v", "e", "w", "G", "E", "x"}
        if unknown:
            raise ConfigError(f"unknown levels {sorted(unknown)}")
        base = four_level_scheme(
            float(_need(tr, "nu_gw", "transitions_hz")),
            float(_need(tr, "nu_vw", "transitions_hz")),
            float(_need(tr, "nu_ge", "transitions_hz")),
            TWO_PI * float(_need(dec, "e", "decays_hz")),
            TWO_PI * float(_need(dec, "v", "decays_hz")),
            TWO_PI * float(_need(dec, "w", "decays_hz")),
            beta_g=float(cpl.get("beta_g", 1.0)),
            branching_w_to_g=float(doc.get("branching_w_to_g", 0.0)),
            pure_dephasing=deph,
            name=str(doc.get("name", "")),
        )
        scheme = base
        if "G" in levels or "E" in levels or "x" in levels:
            gw = float(dec["w"])
            side = SidebandConfig(
                nu_Ge=float(_need(tr, "nu_Ge", "transitions_hz")),
                nu_gE=float(_need(tr, "nu_gE", "transitions_hz")),
                beta_G=float(cpl.get("beta_G", 0.0)),
                beta_E=float(cpl.get("beta_E", 0.0)),
                gamma_G=TWO_PI * float(dec.get("G", gw)),
                gamma_E=TWO_PI * float(dec.get("E", gw)),
            )
            extra = None
            if "x" in levels:
                extra = ExtraLevelConfig(
                    nu_gx=float(_need(tr, "nu_gx", "transitions_hz")),
                    beta_x=float(cpl.get("beta_x", 0.0)),
                    gamma_x=TWO_PI * float(dec.get("x", gw)),
                )
            scheme = extend_model(base, side, extra)
        if list(scheme.levels) != levels:
            raise ConfigError(f"levels {levels} must be listed as {list(scheme.levels)}")
        extra_c = [DriveCoupling(c["lower"], c["upper"], c["laser"], float(c.get("rabi_scale", 1.0)))
                   for c in doc.get("extra_couplings", [])]
        if extra_c:
            scheme = LevelScheme(scheme.levels, scheme.level_freqs_hz, scheme.decays,
                                 scheme.couplings + tuple(extra_c), scheme.transitions_hz,
                                 scheme.pure_dephasing, scheme.name)
        return scheme
    except ConfigError:
        raise
    except SchemeError as exc:
        raise ConfigError(str(exc)) from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def drives_from_config(doc: Mapping, scheme: LevelScheme, **overrides) -> DrivePair:
    """Drive settings from the ``drives`` block; ``overrides`` use the same keys."""
    block = dict(doc.get("drives", {}))
    block.update({k: v for k, v in overrides.items() if v is not None})
    try:
        d_exc = TWO_PI * parse_quantity(block.get("delta_exc_hz", 0.0), "hz")
        d_stk = TWO_PI * parse_quantity(block.get("delta_stk_hz", 0.0), "hz")
        w_exc = parse_rabi(block.get("omega_exc_hz", 0.0), scheme)
        w_stk = parse_rabi(block.get("omega_stk_hz", 0.0), scheme)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dp = DrivePair.from_detunings(scheme, d_exc, d_stk, w_exc, w_stk)
    if "nu_stk_hz" in block:
        dp = DrivePair(dp.nu_exc, parse_quantity(block["nu_stk_hz"], "hz"), w_exc, w_stk)
    return dp


# ---------------------------------------------------------------------------
# CSV / JSON output

CSV_COLUMNS = ("swept_value",) + Observables.names()


def format_float(x: float) -> str:
    """17 significant digits, round-trip exact."""
    return f"{float(x):.17g}"


def write_spectrum_csv(spectrum: Spectrum, path) -> Path:
    path = Path(path)
    obs = spectrum.observables.as_dict()
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for i, v in enumerate(spectrum.values):
                w.writerow([format_float(v)] + [format_float(obs[k][i]) for k in Observables.names()])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def read_spectrum_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    return data[:, 0], {h: data[:, i] for i, h in enumerate(header) if i}


def _config_meta(cfg) -> dict:
    return {
        "swept_variable": cfg.swept_variable,
        "start": cfg.start,
        "stop": cfg.stop,
        "count": cfg.count,
        "units": "Hz" if cfg.swept_variable == "nu_stk" else "rad/s",
        "drives": {"nu_exc_hz": cfg.drives.nu_exc, "nu_stk_hz": cfg.drives.nu_stk,
                   "omega_exc": cfg.drives.omega_exc, "omega_stk": cfg.drives.omega_stk},
    }


def write_map2d(m: Map2D, out_dir, stem: str = "map2d",
                layers: Iterable[str] = ("rho_vv", "coh_gv_sq")) -> list[Path]:
    """One CSV per observable layer (rows = y grid, columns = x grid) plus a JSON sidecar."""
    out_dir = Path(out_dir)
    written = []
    obs = m.observables.as_dict()
    layers = list(layers)
    for name in layers:
        p = out_dir / f"{stem}_{name}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y\\x"] + [format_float(x) for x in m.x_values])
            for y, row in zip(m.y_values, obs[name]):
                w.writerow([format_float(y)] + [format_float(v) for v in row])
        written.append(p)
    side = out_dir / f"{stem}.json"
    side.write_text(json.dumps({
        "x": _config_meta(m.x_config),
        "y": _config_meta(m.y_config),
        "layers": {name: f"{stem}_{name}.csv" for name in layers},
        "shape": [len(m.y_values), len(m.x_values)],
    }, indent=2, sort_keys=True))
    written.append(side)
    return written


def write_fit_report(result, path, config: Mapping | None = None, extra: Mapping | None = None) -> Path:
    doc = result.as_dict()
    doc["config"] = dict(config or {})
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))
    return Path(path)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# measured spectra

@dataclass
class MeasuredSpectrum:
    """Measured counts versus laser frequency or detuning.

    ``abscissa`` is in rad/s when ``kind == "detuning"`` and in Hz when
    ``kind == "frequency"``.
    """

    abscissa: np.ndarray
    counts: np.ndarray
    uncertainty: np.ndarray | None
    kind: str
    units: tuple[str, ...] = ()


_UNITS_HEADER = re.compile(r"^#\s*units\s*:\s*(.+)$", re.IGNORECASE)


def load_measured_spectrum(path) -> MeasuredSpectrum:
    """Parse a CSV whose first line is ``# units: hz, counts_per_s`` or ``# units: detuning_hz, ...``."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise SpectrumParseError(f"{path}: {exc.strerror}") from None
    units = None
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _UNITS_HEADER.match(line)
            if m and units is None:
                units = tuple(u.strip().lower() for u in m.group(1).split(","))
            continue
        if units is None:
            raise SpectrumParseError(f"{path}:{lineno}: data before '# units:' header")
        parts = [p.strip() for p in line.split(",")]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise SpectrumParseError(f"{path}:{lineno}: non-numeric value in {raw!r}") from None
        if len(vals) not in (2, 3):
            raise SpectrumParseError(f"{path}:{lineno}: expected 2 or 3 columns, got {len(vals)}")
        if any(math.isnan(v) for v in vals):
            raise SpectrumParseError(f"{path}:{lineno}: NaN value")
        if vals[1] < 0:
            raise SpectrumParseError(f"{path}:{lineno}: negative count rate {vals[1]}")
        rows.append((lineno, vals))
    if units is None:
        raise SpectrumParseError(f"{path}: missing '# units:' header")
    if units[0] not in ("hz", "detuning_hz"):
        raise SpectrumParseError(f"{path}:1: abscissa unit must be 'hz' or 'detuning_hz', got {units[0]!r}")
    if len(units) < 2 or units[1] != "counts_per_s":
        raise SpectrumParseError(f"{path}:1: second column unit must be 'counts_per_s'")
    if not rows:
        raise SpectrumParseError(f"{path}: no data rows")
    ncols = {len(v) for _, v in rows}
    if len(ncols) != 1:
        raise SpectrumParseError(f"{path}: inconsistent column count")
    for (l0, a), (l1, b) in zip(rows, rows[1:]):
        if b[0] == a[0]:
            raise SpectrumParseError(f"{path}:{l1}: duplicated abscissa {b[0]!r} (also on line {l0})")
        if b[0] < a[0]:
            raise SpectrumParseError(f"{path}:{l1}: abscissa not increasing ({b[0]!r} after {a[0]!r})")
    data = np.array([v for _, v in rows])
    x = data[:, 0]
    kind = "detuning" if units[0] == "detuning_hz" else "frequency"
    if kind == "detuning":
        x = TWO_PI * x
    unc = data[:, 2] if data.shape[1] == 3 else None
    return MeasuredSpectrum(x, data[:, 1], unc, kind, units)


def write_measured_spectrum(spec: MeasuredSpectrum, path) -> Path:
    head = "detuning_hz" if spec.kind == "detuning" else "hz"
    x = spec.abscissa / TWO_PI if spec.kind == "detuning" else spec.abscissa
    lines = [f"# units: {head}, counts_per_s" + (", counts_per_s" if spec.uncertainty is not None else "")]
    for i in range(len(x)):
        row = [format_float(x[i]), format_float(spec.counts[i])]
        if spec.uncertainty is not None:
            row.append(format_float(spec.uncertainty[i]))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


# ---------------------------------------------------------------------------
# run manifest

@dataclass
class RunManifest:
    subcommand: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    argv: list[str] = field(default_factory=list)
    workers: int = 1
    version: str = __version__
    wall_clock_s: float = 0.0
    outputs: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True, default=_jsonable)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


def file_digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def emit_results(out_dir, manifest: RunManifest, spectra: Mapping[str, Spectrum] = (),
                 maps: Mapping[str, Map2D] = (), fits: Mapping[str, Any] = ()) -> list[Path]:
    """Write every result file plus ``manifest.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from exc
    written: list[Path] = []
    for stem, sp in dict(spectra).items():
        written.append(write_spectrum_csv(sp, out_dir / f"{stem}.csv"))
    for stem, m in dict(maps).items():
        written.extend(write_map2d(m, out_dir, stem))
    for stem, fit in dict(fits).items():
        result, cfg, extra = fit if isinstance(fit, tuple) else (fit, manifest.config, None)
        written.append(write_fit_report(result, out_dir / f"{stem}.json", cfg, extra))
    manifest.outputs = sorted(p.name for p in written)
    mpath = out_dir / "manifest.json"
    mpath.write_text(manifest.to_json())
    return written + [mpath]


def worker_count(flag: int | None) -> int:
    """``RAMAN_WORKERS`` if set (it overrides the flag), else the CLI flag, else 1."""
    env = os.environ.get("RAMAN_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"RAMAN_WORKERS must be an integer, got {env!r}") from None
    return max(1, flag or 1)


def now() -> float:
    return time.perf_counter()
