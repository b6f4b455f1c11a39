"""Spectra and parameter maps from independent steady-state solves."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .liouville import (Observables, SolverError, commutator_superop, dissipator_superop,
                        observables, steady_states)
from .model import TWO_PI, DrivePair, LevelScheme, build_hamiltonians, build_jump_operators

SWEEPABLE = ("delta_exc", "nu_stk", "omega_exc", "omega_stk")

# grid points per batched LAPACK call
CHUNK = 64


@dataclass(frozen=True)
class ScanConfig:
    """Linear grid over one drive parameter; everything else is taken from ``drives``.

    ``delta_exc`` and the Rabi amplitudes are in rad/s, ``nu_stk`` in Hz.
    """

    swept_variable: str
    start: float
    stop: float
    count: int
    drives: DrivePair

    def __post_init__(self):
        if self.swept_variable not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.swept_variable!r}; choose from {SWEEPABLE}")
        if self.count < 2:
            raise ValueError(f"grid count must be >= 2, got {self.count}")
        if not self.start < self.stop:
            raise ValueError(f"grid start {self.start} must be < stop {self.stop}")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count)


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    observables: Observables
    config: ScanConfig

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Map2D:
    """Observables on a ``(len(y_values), len(x_values))`` grid."""

    x_values: np.ndarray
    y_values: np.ndarray
    observables: Observables
    x_config: ScanConfig
    y_config: ScanConfig


def drive_at(scheme: LevelScheme, base: DrivePair, variable: str, value: float) -> DrivePair:
    if variable == "delta_exc":
        return replace(base, nu_exc=scheme.transition("nu_gw") + value / TWO_PI)
    if variable == "nu_stk":
        return replace(base, nu_stk=value)
    if variable == "omega_exc":
        return replace(base, omega_exc=value)
    if variable == "omega_stk":
        return replace(base, omega_stk=value)
    raise ValueError(f"cannot sweep {variable!r}; choose from {SWEEPABLE}")


def solve_drives(scheme: LevelScheme, drives, workers: int = 1) -> Observables:
    """Steady-state observables for each DrivePair in ``drives`` (same order)."""
    drives = list(drives)
    n = len(drives)
    d = scheme.dim
    D = dissipator_superop(build_jump_operators(scheme), d)
    rhos = np.empty((n, d, d), dtype=complex)

    def run(lo: int, hi: int):
        H = build_hamiltonians(scheme, drives[lo:hi])
        try:
            L = commutator_superop(H, np.repeat(D[None], hi - lo, axis=0))
            rhos[lo:hi] = steady_states(L, overwrite=True)
        except SolverError as exc:
            k = lo + (exc.index or 0)
            raise type(exc)(f"grid index {k}: {exc}", index=k) from None

    bounds = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    if workers <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            run(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(run, lo, hi) for lo, hi in bounds]:
                fut.result()
    return observables(rhos, scheme)


def sweep(scheme: LevelScheme, base: DrivePair, variable: str, values,
          workers: int = 1) -> Observables:
    """Observables along arbitrary (not necessarily linear) values of one variable."""
    values = np.asarray(values, dtype=float)
    return solve_drives(scheme, (drive_at(scheme, base, variable, v) for v in values), workers)


def _run_scan(scheme, config, expected, workers):
    if config.swept_variable != expected:
        raise ValueError(f"config sweeps {config.swept_variable!r}, expected {expected!r}")
    values = config.values
    return Spectrum(values, sweep(scheme, config.drives, expected, values, workers), config)


def scan_excitation(scheme: LevelScheme, config: ScanConfig, workers: int = 1) -> Spectrum:
    """Sweep the excitation detuning with the Stokes laser frequency held fixed."""
    return _run_scan(scheme, config, "delta_exc", workers)


def scan_stokes(scheme: LevelScheme, config: ScanConfig, workers: int = 1) -> Spectrum:
    """Sweep the Stokes laser frequency (Hz); Stokes-side detunings follow it."""
    return _run_scan(scheme, config, "nu_stk", workers)


def map2d(scheme: LevelScheme, config_x: ScanConfig, config_y: ScanConfig,
          workers: int = 1) -> Map2D:
    allowed = ("omega_exc", "omega_stk", "delta_exc")
    vx, vy = config_x.swept_variable, config_y.swept_variable
    if vx not in allowed or vy not in allowed or vx == vy:
        raise ValueError(f"map2d needs two distinct variables from {allowed}, got {vx!r}, {vy!r}")
    xs, ys = config_x.values, config_y.values
    base = config_x.drives
    grid = [drive_at(scheme, drive_at(scheme, base, vy, y), vx, x) for y in ys for x in xs]
    obs = solve_drives(scheme, grid, workers)
    shaped = Observables(**{k: v.reshape(len(ys), len(xs)) for k, v in obs.as_dict().items()})
    return Map2D(xs, ys, shaped, config_x, config_y)


def normalize_fluorescence(r_fluo, r_inf: float):
    """rho_ee estimate ``r_fluo / r_inf`` from count rates (counts/s)."""
    if not r_inf > 0:
        raise ValueError(f"saturation count rate must be > 0, got {r_inf}")
    r = np.asarray(r_fluo, dtype=float)
    if np.any(r < 0):
        raise ValueError("fluorescence count rates must be >= 0")
    out = r / r_inf
    if np.any(out > 0.5):
        warnings.warn("rho_ee estimate exceeds the two-level ceiling of 0.5", stacklevel=2)
    return float(out) if out.ndim == 0 else out
