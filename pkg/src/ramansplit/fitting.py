"""Least-squares fits of the steady-state model and of reference lineshapes.

The optimizer is a bounded Levenberg-Marquardt loop with Marquardt
diagonal scaling and central finite-difference Jacobians. Parameters that
sit on a bound with the gradient pointing outward are frozen for the step.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .model import BETA_EDGES, DrivePair, LevelScheme
from .scan import Spectrum, sweep

REL_STEP = 1e-6
ABS_FLOOR = 1e-12


class FitError(RuntimeError):
    pass


class FitConvergenceError(FitError):
    """Iteration limit reached; ``result`` carries the best point found."""

    def __init__(self, message: str, result: "FitResult"):
        super().__init__(message)
        self.result = result


class UnidentifiableParameterError(FitError):
    def __init__(self, message: str, parameter: str, direction: dict[str, float]):
        super().__init__(message)
        self.parameter = parameter
        self.direction = direction


@dataclass
class FitResult:
    names: tuple[str, ...]
    values: np.ndarray
    uncertainties: np.ndarray
    rss: float
    iterations: int
    converged: bool
    cost_history: list[float] = field(default_factory=list)
    dataset_rss: list[float] = field(default_factory=list)
    message: str = ""

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.uncertainties[self.names.index(name)])

    def as_dict(self) -> dict:
        return {
            "parameters": {n: float(v) for n, v in zip(self.names, self.values)},
            "uncertainties": {n: float(u) for n, u in zip(self.names, self.uncertainties)},
            "residual_sum_of_squares": float(self.rss),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "dataset_residuals": [float(r) for r in self.dataset_rss],
            "message": self.message,
        }


# ---------------------------------------------------------------------------
# generic machinery

def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray] | None, x: np.ndarray,
                rel_step: float = REL_STEP, typical: np.ndarray | None = None,
                lower=None, upper=None,
                columns: Callable[[np.ndarray, np.ndarray, float], np.ndarray] | None = None
                ) -> np.ndarray:
    """Central-difference Jacobian, step ``max(rel_step*max(|x|, typical), 1e-12)``.

    Near a bound the stencil is shifted inward so both evaluations stay
    feasible. ``columns(j, x_plus, x_minus, h)`` may compute column ``j``
    itself, which lets structured problems skip unaffected residual blocks.
    """
    x = np.asarray(x, dtype=float)
    typ = np.zeros_like(x) if typical is None else np.asarray(typical, dtype=float)
    lo = np.full_like(x, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full_like(x, np.inf) if upper is None else np.asarray(upper, dtype=float)
    steps = np.maximum(rel_step * np.maximum(np.abs(x), typ), ABS_FLOOR)
    cols = []
    for j, h in enumerate(steps):
        c = min(max(x[j], lo[j] + h), hi[j] - h)
        xp, xm = x.copy(), x.copy()
        xp[j] = c + h
        xm[j] = c - h
        if columns is not None:
            cols.append(columns(j, xp, xm, h))
        else:
            cols.append((fun(xp) - fun(xm)) / (2 * h))
    return np.column_stack(cols)


def _covariance(J: np.ndarray, rss: float, n_free: int):
    m = J.shape[0]
    s2 = rss / (m - n_free) if m > n_free else np.inf
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    tol = s[0] * max(J.shape) * np.finfo(float).eps if s.size else 0.0
    good = s > tol
    var = (Vt[good].T ** 2) @ (1 / s[good] ** 2) * s2
    # directions in the numerical null space carry no information
    null = Vt[~good]
    if null.size:
        var = np.where(np.any(np.abs(null) > 1e-3, axis=0), np.inf, var)
    return np.sqrt(var)


def levenberg_marquardt(residual: Callable[[np.ndarray], np.ndarray],
                        jacobian: Callable[[np.ndarray], np.ndarray],
                        x0, lower, upper, max_iter: int = 200, ftol: float = 1e-10,
                        xtol: float = 1e-10, gtol: float = 1e-12):
    """Minimize ``0.5*|residual(x)|^2`` inside the box ``[lower, upper]``.

    Returns ``(x, r, J, history, iterations, converged, message)``.
    ``history`` lists the cost after every accepted step; it never increases.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    r = residual(x)
    cost = 0.5 * float(r @ r)
    history = [cost]
    J = jacobian(x)
    lam = 1e-3
    stalls = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        at_lo = (x <= lower) & (g > 0)
        at_hi = (x >= upper) & (g < 0)
        free = ~(at_lo | at_hi)
        A = J.T @ J
        dg = np.diag(A).copy()
        dg[dg <= 0] = max(dg.max(), 1.0) * 1e-30 if dg.size else 1.0
        if not np.any(free) or np.max(np.abs(g[free]) / np.sqrt(dg[free])) <= gtol * math.sqrt(2 * cost + 1e-300):
            return x, r, J, history, it - 1, True, "gradient below tolerance"
        idx = np.flatnonzero(free)
        Af = A[np.ix_(idx, idx)]
        while True:
            M = Af + lam * np.diag(dg[idx])
            try:
                step = np.linalg.solve(M, -g[idx])
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(M, -g[idx], rcond=None)[0]
            xn = x.copy()
            xn[idx] += step
            xn = np.clip(xn, lower, upper)
            rn = residual(xn)
            cn = 0.5 * float(rn @ rn)
            if np.isfinite(cn) and cn < cost:
                lam = max(lam / 3, 1e-15)
                break
            lam *= 4
            if lam > 1e20:
                return x, r, J, history, it, True, "no further decrease possible"
        dx = np.abs(xn - x)
        small_step = np.all(dx <= xtol * (np.abs(x) + xtol))
        # a heavily damped step can be small by accident; demand two in a row
        stalls = stalls + 1 if (cost - cn) <= ftol * cost else 0
        small_drop = stalls >= 2
        x, r, cost = xn, rn, cn
        history.append(cost)
        J = jacobian(x)
        if small_step or small_drop:
            return x, r, J, history, it, True, "small step" if small_step else "small cost decrease"
    return x, r, J, history, max_iter, False, f"no convergence after {max_iter} iterations"


def _finish(names, x, r, J, history, iterations, converged, message, check_rank,
            dataset_rss=(), to_user=None):
    n_free = len(x)
    rss = float(r @ r)
    if check_rank and J.size:
        norms = np.linalg.norm(J, axis=0)
        Jn = J / np.where(norms > 0, norms, 1.0)
        _, s, Vt = np.linalg.svd(Jn, full_matrices=False)
        if norms.min() == 0 or s[-1] < 1e-8 * s[0]:
            v = Vt[-1] if norms.min() > 0 else (norms == 0).astype(float)
            k = int(np.argmax(np.abs(v)))
            direction = {n: float(c) for n, c in zip(names, v) if abs(c) > 1e-3}
            raise UnidentifiableParameterError(
                f"unidentifiable parameter {names[k]!r}: Jacobian null direction {direction}",
                names[k], direction)
    unc = _covariance(J, rss, n_free)
    values = x.copy()
    if to_user is not None:
        values, unc = to_user(values, unc)
    result = FitResult(tuple(names), values, unc, rss, iterations, converged,
                       list(history), list(dataset_rss), message)
    if not converged:
        raise FitConvergenceError(message, result)
    return result


# ---------------------------------------------------------------------------
# physical model fits

@dataclass
class FitDataset:
    """One measured excitation spectrum with its fixed laser context.

    ``x`` are excitation detunings (rad/s); ``drives`` fixes the Stokes
    frequency and Rabi amplitudes (its ``omega_stk`` is overwritten when
    fitted). ``power`` is the Stokes power used by the sqrt(P) constraint.
    """

    x: np.ndarray
    y: np.ndarray
    drives: DrivePair
    sigma: np.ndarray | None = None
    power: float | None = None
    label: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("dataset x and y must be 1-D arrays of equal length")
        if self.sigma is not None:
            self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.y.shape)
            if np.any(self.sigma <= 0):
                raise ValueError("sigma must be > 0")


BASELINE_MODES = ("none", "constant", "linear")
PHYSICAL = ("omega_stk", "omega_exc") + tuple(BETA_EDGES)


@dataclass
class FitProblem:
    """Shared-parameter fit of steady-state rho_ee spectra.

    ``free_parameters`` name physical quantities; ``omega_stk`` becomes one
    parameter per dataset (``omega_stk[k]``) unless ``power_calibration`` ties
    them to ``omega_stk = c_stk * sqrt(power)``. Baselines and the optional
    amplitude are added according to ``baseline_mode``/``free_amplitude``.
    """

    scheme: LevelScheme
    datasets: Sequence[FitDataset]
    free_parameters: tuple[str, ...] = ("omega_stk", "beta_G")
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    baseline_mode: str = "constant"
    free_amplitude: bool = False
    power_calibration: bool = False
    initial: Mapping[str, float] = field(default_factory=dict)
    max_iter: int = 200
    workers: int = 1

    def __post_init__(self):
        self.datasets = list(self.datasets)
        if not self.datasets:
            raise ValueError("a fit needs at least one dataset")
        if self.baseline_mode not in BASELINE_MODES:
            raise ValueError(f"baseline_mode must be one of {BASELINE_MODES}")
        for p in self.free_parameters:
            if p not in PHYSICAL:
                raise ValueError(f"unknown free parameter {p!r}; choose from {PHYSICAL}")
            if p in BETA_EDGES:
                self.scheme.with_couplings(**{p: 0.0})  # raises if absent
        if self.power_calibration:
            if any(ds.power is None or ds.power <= 0 for ds in self.datasets):
                raise ValueError("power_calibration needs a positive power on every dataset")
        for name, (lo, hi) in self.bounds.items():
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds for {name!r} must be finite with lower < upper")
            # baseline offsets and slopes may be negative; physical quantities may not
            if lo < 0 and not name.startswith(("baseline[", "slope[")):
                raise ValueError(f"bounds for {name!r} must have lower >= 0")


# default upper bounds: Stokes Rabi amplitude in units of Gamma_v, and the
# overlap ratios (transitions are weaker than the common-mode line)
OMEGA_STK_MAX = 5.0
BETA_MAX = 1.5


class _Objective:
    """Residual vector of a FitProblem with per-dataset caching."""

    def __init__(self, problem: FitProblem):
        self.p = problem
        ds = problem.datasets
        gamma_max = max(c.rate for c in problem.scheme.decays)
        # default Stokes range covers the Autler-Townes regime without
        # reaching the far basin where a strong sideband mimics the dip
        omega_max = OMEGA_STK_MAX * sum(c.rate for c in problem.scheme.decays
                                        if c.from_level == "v")
        self.names: list[str] = []
        self.deps: list[set[int]] = []       # datasets touched by each parameter
        self.kind: list[tuple] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        all_ds = set(range(len(ds)))

        def add(name, deps, kind, bounds):
            lo, hi = problem.bounds.get(name, bounds)
            self.names.append(name)
            self.deps.append(deps)
            self.kind.append(kind)
            self.lower.append(lo)
            self.upper.append(hi)

        for p in problem.free_parameters:
            if p == "omega_stk" and problem.power_calibration:
                pmax = max(d.power for d in ds)
                add("c_stk", all_ds, ("c_stk",), (0.0, omega_max / math.sqrt(pmax)))
            elif p == "omega_stk":
                for k in range(len(ds)):
                    add(f"omega_stk[{k}]", {k}, ("omega_stk", k), (0.0, omega_max))
            elif p == "omega_exc":
                add("omega_exc", all_ds, ("omega_exc",), (0.0, 20 * gamma_max))
            else:
                add(p, all_ds, ("beta", p), (0.0, BETA_MAX))
        if problem.free_amplitude:
            add("amplitude", all_ds, ("amplitude",), (0.0, 1e3 * max(np.max(np.abs(d.y)) for d in ds) + 1.0))
        ymax = max(np.max(np.abs(d.y)) for d in ds) or 1.0
        if problem.baseline_mode in ("constant", "linear"):
            for k in range(len(ds)):
                add(f"baseline[{k}]", {k}, ("baseline", k), (-ymax, ymax))
        if problem.baseline_mode == "linear":
            for k in range(len(ds)):
                add(f"slope[{k}]", {k}, ("slope", k), (-ymax, ymax))
        self.lower = np.array(self.lower)
        self.upper = np.array(self.upper)
        self.typical = np.where(np.isfinite(self.upper - self.lower),
                                1e-3 * (self.upper - self.lower), 0.0)
        self._xc = [(d.x - d.x.mean()) / (np.ptp(d.x) or 1.0) for d in ds]
        self._cache: OrderedDict = OrderedDict()
        self.evaluations = 0

    # physical state of dataset k implied by parameter vector theta
    def _physics(self, theta, k):
        ds = self.p.datasets[k]
        drives = ds.drives
        betas = {}
        omega_stk, omega_exc = drives.omega_stk, drives.omega_exc
        for val, kind in zip(theta, self.kind):
            if kind[0] == "c_stk":
                omega_stk = val * math.sqrt(ds.power)
            elif kind[0] == "omega_stk" and kind[1] == k:
                omega_stk = val
            elif kind[0] == "omega_exc":
                omega_exc = val
            elif kind[0] == "beta":
                betas[kind[1]] = val
        return omega_stk, omega_exc, tuple(sorted(betas.items()))

    def rho_ee(self, theta, k):
        key = (k,) + self._physics(theta, k)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        omega_stk, omega_exc, betas = key[1:]
        ds = self.p.datasets[k]
        scheme = self.p.scheme.with_couplings(**dict(betas)) if betas else self.p.scheme
        base = DrivePair(ds.drives.nu_exc, ds.drives.nu_stk, omega_exc, omega_stk)
        out = sweep(scheme, base, "delta_exc", ds.x, self.p.workers).rho_ee
        self.evaluations += 1
        self._cache[key] = out
        if len(self._cache) > 64:
            self._cache.popitem(last=False)
        return out

    def model(self, theta, k):
        y = self.rho_ee(theta, k)
        for val, kind in zip(theta, self.kind):
            if kind[0] == "amplitude":
                y = val * y
        for val, kind in zip(theta, self.kind):
            if kind[0] == "baseline" and kind[1] == k:
                y = y + val
            elif kind[0] == "slope" and kind[1] == k:
                y = y + val * self._xc[k]
        return y

    def block(self, theta, k):
        ds = self.p.datasets[k]
        r = self.model(theta, k) - ds.y
        return r if ds.sigma is None else r / ds.sigma

    def residual(self, theta):
        return np.concatenate([self.block(theta, k) for k in range(len(self.p.datasets))])

    def jacobian(self, theta, rel_step=REL_STEP):
        sizes = [len(d.x) for d in self.p.datasets]
        offsets = np.concatenate([[0], np.cumsum(sizes)])

        def column(j, tp, tm, h):
            col = np.zeros(offsets[-1])
            for k in self.deps[j]:
                col[offsets[k]:offsets[k + 1]] = (self.block(tp, k) - self.block(tm, k)) / (2 * h)
            return col

        return fd_jacobian(None, theta, rel_step, self.typical, self.lower, self.upper, column)


def _initial_guess(obj: _Objective) -> np.ndarray:
    p = obj.p
    scheme = p.scheme
    rate = {c.from_level: 0.0 for c in scheme.decays}
    for c in scheme.decays:
        rate[c.from_level] += c.rate
    gv, gw = rate["v"], rate["w"]
    theta = np.zeros(len(obj.names))
    omega_guess = []
    for k, ds in enumerate(p.datasets):
        # weak-probe dip: rho_ee(raman) / rho_ee(no stokes) ~ 1 / (1 + W^2/(Gv Gw))
        ref = DrivePair(ds.drives.nu_exc, ds.drives.nu_stk, ds.drives.omega_exc, 0.0)
        dstk = ds.drives.delta_stk(scheme)
        i0 = int(np.argmin(np.abs(ds.x - dstk)))
        if p.free_amplitude:
            # compare shapes, not absolute levels
            rho_ref = sweep(scheme, ref, "delta_exc", ds.x).rho_ee
            rho0 = rho_ref[i0] * np.max(ds.y) / max(np.max(rho_ref), 1e-300)
        else:
            rho0 = sweep(scheme, ref, "delta_exc", ds.x[i0:i0 + 1]).rho_ee[0]
        ratio = ds.y[i0] / rho0 if rho0 > 0 else 1.0
        f = float(np.clip(1.0 - ratio, 0.01, 0.99))
        omega_guess.append(math.sqrt(gv * gw * f / (1 - f)))
    for j, (name, kind) in enumerate(zip(obj.names, obj.kind)):
        if name in p.initial:
            theta[j] = p.initial[name]
        elif kind[0] == "omega_stk":
            theta[j] = omega_guess[kind[1]]
        elif kind[0] == "c_stk":
            theta[j] = np.median([w / math.sqrt(d.power) for w, d in zip(omega_guess, p.datasets)])
        elif kind[0] == "omega_exc":
            theta[j] = p.datasets[0].drives.omega_exc
        elif kind[0] == "beta":
            theta[j] = 1.0
        elif kind[0] == "amplitude":
            theta[j] = 1.0
    theta = np.clip(theta, obj.lower, obj.upper)
    free_beta = [j for j, kind in enumerate(obj.kind)
                 if kind[0] == "beta" and obj.names[j] not in p.initial]
    if not free_beta:
        return _fit_linear(obj, theta)
    # beta = 1 first; a few weaker overlaps are screened to dodge the
    # sideband-dominated basin, keeping whichever start has the lowest cost
    best, best_cost = None, np.inf
    for beta in BETA_SCREEN:
        trial = theta.copy()
        trial[free_beta] = np.clip(beta, obj.lower[free_beta], obj.upper[free_beta])
        trial = _fit_linear(obj, trial)
        cost = float(np.sum(obj.residual(trial) ** 2))
        if cost < best_cost:
            best, best_cost = trial, cost
    return best


BETA_SCREEN = (1.0, 0.3, 0.1, 0.03)


def _fit_linear(obj: _Objective, theta: np.ndarray) -> np.ndarray:
    # amplitude, baselines and slopes enter linearly: solve them jointly
    # in closed form for the given physical parameters
    theta = theta.copy()
    lin = [j for j, kind in enumerate(obj.kind)
           if kind[0] in ("amplitude", "baseline", "slope") and obj.names[j] not in obj.p.initial]
    if not lin:
        return theta
    theta[lin] = 0.0
    blocks_A, blocks_r = [], []
    for k, ds in enumerate(obj.p.datasets):
        base = obj.model(theta, k)
        rho = obj.rho_ee(theta, k)
        cols = []
        for j in lin:
            kind = obj.kind[j]
            if kind[0] == "amplitude":
                cols.append(rho)
            elif kind[1] != k:
                cols.append(np.zeros_like(rho))
            else:
                cols.append(np.ones_like(rho) if kind[0] == "baseline" else obj._xc[k])
        A = np.column_stack(cols)
        r = ds.y - base
        if ds.sigma is not None:
            A, r = A / ds.sigma[:, None], r / ds.sigma
        blocks_A.append(A)
        blocks_r.append(r)
    theta[lin] = np.linalg.lstsq(np.vstack(blocks_A), np.concatenate(blocks_r), rcond=None)[0]
    return np.clip(theta, obj.lower, obj.upper)


def fit_model(problem: FitProblem, x0: Mapping[str, float] | None = None,
              check_identifiability: bool = True) -> FitResult:
    """Fit the steady-state rho_ee model to one or more excitation spectra."""
    obj = _Objective(problem)
    theta0 = _initial_guess(obj)
    for name, val in (x0 or {}).items():
        theta0[obj.names.index(name)] = val
    out = levenberg_marquardt(obj.residual, obj.jacobian, theta0, obj.lower, obj.upper,
                              max_iter=problem.max_iter)
    x = out[0]
    per_ds = [float(np.sum(obj.block(x, k) ** 2)) for k in range(len(problem.datasets))]
    return _finish(obj.names, *out, check_rank=check_identifiability, dataset_rss=per_ds)


def model_jacobian(problem: FitProblem, theta: Mapping[str, float],
                   rel_step: float = REL_STEP) -> tuple[list[str], np.ndarray]:
    """Finite-difference residual Jacobian of ``problem`` at named parameters."""
    obj = _Objective(problem)
    vec = np.array([theta[n] for n in obj.names], dtype=float)
    return list(obj.names), obj.jacobian(vec, rel_step)


# ---------------------------------------------------------------------------
# reference lineshapes

def lorentzian(x, center, fwhm):
    """Peak-normalized Lorentzian (value 1 at ``center``)."""
    hw2 = (0.5 * fwhm) ** 2
    return hw2 / ((np.asarray(x) - center) ** 2 + hw2)


def double_lorentzian(x, a1, x1, g1, a2, x2, g2, offset):
    return a1 * lorentzian(x, x1, g1) + a2 * lorentzian(x, x2, g2) + offset


LORENTZ_NAMES = ("a1", "x1", "gamma1", "a2", "x2", "gamma2", "offset")


def _lorentz_init(x, y):
    offset = float(np.min(y))
    h = y - offset
    peaks = [i for i in range(1, len(y) - 1) if h[i] >= h[i - 1] and h[i] > h[i + 1]]
    half = h.max() / 2
    above = np.flatnonzero(h >= half)
    width = max(x[above[-1]] - x[above[0]], 3 * np.median(np.diff(x)))
    if len(peaks) >= 2:
        p1, p2 = sorted(sorted(peaks, key=lambda i: h[i])[-2:])
        gap = abs(x[p2] - x[p1])
        g = max(min(width, gap), 3 * np.median(np.diff(x)))
        return [h[p1], x[p1], g, h[p2], x[p2], g, offset]
    # one maximum: split it symmetrically
    c = x[int(np.argmax(h))]
    return [h.max() / 2, c - width / 4, width / 2, h.max() / 2, c + width / 4, width / 2, offset]


def fit_double_lorentzian(spectrum, y=None, max_iter: int = 400) -> FitResult:
    """Fit ``a1 L(x1, gamma1) + a2 L(x2, gamma2) + offset``.

    ``spectrum`` is a :class:`Spectrum` (its rho_ee is used) or an abscissa
    array with ``y`` given separately.
    """
    if isinstance(spectrum, Spectrum):
        x, y = spectrum.values, spectrum.observables.rho_ee
    else:
        x = spectrum
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 7:
        raise ValueError("double-Lorentzian fit needs at least 7 points")
    # dimensionless units keep the finite-difference steps meaningful
    xs = float(np.max(np.abs(x))) or 1.0
    ys = float(np.max(np.abs(y))) or 1.0
    u, v = x / xs, y / ys
    span = u.max() - u.min()
    du = np.min(np.diff(u))
    p0 = np.array(_lorentz_init(u, v), dtype=float)
    lower = np.array([0, u.min() - span, du / 10, 0, u.min() - span, du / 10, -2.0])
    upper = np.array([10, u.max() + span, 4 * span, 10, u.max() + span, 4 * span, 2.0])
    p0 = np.clip(p0, lower, upper)

    def res(p):
        return double_lorentzian(u, *p) - v

    def jac(p):
        return fd_jacobian(res, p, typical=np.full(len(p), 1e-3), lower=lower, upper=upper)

    out = levenberg_marquardt(res, jac, p0, lower, upper, max_iter=max_iter)
    scale = np.array([ys, xs, xs, ys, xs, xs, ys])

    def to_user(vals, unc):
        return vals * scale, unc * scale

    x_fit, r, J, hist, it, conv, msg = out
    result = _finish(LORENTZ_NAMES, x_fit, r * ys, J * ys, [c * ys * ys for c in hist], it, conv,
                     msg, check_rank=False, to_user=to_user)
    return result


@dataclass(frozen=True)
class PowerCalibration:
    """Rabi amplitude versus power, ``omega = coefficient * P**exponent``."""

    coefficient: float
    exponent: float
    rss: float
    r_squared: float
    coefficient_err: float = 0.0
    exponent_err: float = 0.0

    def omega(self, power):
        return self.coefficient * np.asarray(power, dtype=float) ** self.exponent


def fit_power_law(powers, omegas, free_exponent: bool = False) -> PowerCalibration:
    """Least-squares ``omega = c*sqrt(P)``, or ``c*P**alpha`` with ``free_exponent``."""
    P = np.asarray(powers, dtype=float)
    W = np.asarray(omegas, dtype=float)
    if P.shape != W.shape or P.size < 2:
        raise ValueError("need at least two (power, omega) points")
    if np.any(P <= 0):
        raise ValueError("powers must be > 0")
    if np.all(W == 0):
        raise ValueError("all Rabi amplitudes are zero; nothing to calibrate")
    sst = float(np.sum((W - W.mean()) ** 2))
    if not free_exponent:
        s = np.sqrt(P)
        c = float(s @ W / (s @ s))
        resid = W - c * s
        rss = float(resid @ resid)
        dof = max(P.size - 1, 1)
        c_err = math.sqrt(rss / dof / float(s @ s))
        r2 = 1 - rss / sst if sst > 0 else 1.0
        return PowerCalibration(c, 0.5, rss, r2, c_err, 0.0)

    pos = W > 0
    if pos.sum() >= 2:
        alpha0, logc = np.polyfit(np.log(P[pos]), np.log(W[pos]), 1)
    else:
        alpha0, logc = 0.5, math.log(float(np.max(W)) / math.sqrt(float(np.max(P))))
    # omega = k * (P/pref)**alpha keeps both parameters O(1)
    pref = float(np.max(P))
    scale_w = float(np.max(np.abs(W)))
    k0 = math.exp(logc) * pref ** alpha0 / scale_w

    def res(p):
        return p[0] * (P / pref) ** p[1] - W / scale_w

    def jac(p):
        return fd_jacobian(res, p, typical=np.array([1.0, 1.0]))

    out = levenberg_marquardt(res, jac, [k0, alpha0], [0.0, -10.0], [1e6, 10.0], ftol=1e-15,
                              xtol=1e-15, gtol=1e-15)
    p, r, J = out[0], out[1], out[2]
    unc = _covariance(J, float(r @ r), 2)
    rss = float(r @ r) * scale_w ** 2
    r2 = 1 - rss / sst if sst > 0 else 1.0
    # c = k * scale_w / pref**alpha
    conv = scale_w / pref ** p[1]
    c = p[0] * conv
    c_err = math.hypot(unc[0] * conv, c * math.log(pref) * unc[1]) if np.all(np.isfinite(unc)) else math.inf
    return PowerCalibration(float(c), float(p[1]), rss, r2, float(c_err), float(unc[1]))
