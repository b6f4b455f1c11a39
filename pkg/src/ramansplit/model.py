"""Level schemes, rotating-frame Hamiltonians and jump operators.

Units
-----
Rates, Rabi amplitudes and detunings are angular frequencies (rad/s).
Transition and laser frequencies are ordinary frequencies (Hz); they only
enter through differences, ``2*pi*(E_i - frame_i)``.

Basis order is ``g, v, e, w`` for the four-level scheme; the extended
scheme appends ``G, E, x``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

EXC = "exc"
STK = "stk"
LASERS = (EXC, STK)

BASE_LEVELS = ("g", "v", "e", "w")
EXTENDED_LEVELS = ("G", "E", "x")


class SchemeError(ValueError):
    """Invalid level scheme (bad labels, negative rates, ...)."""


class FrameError(SchemeError):
    """The driven couplings do not admit a consistent rotating frame."""

    def __init__(self, message: str, cycle: Sequence[str] = ()):
        super().__init__(message)
        self.cycle = tuple(cycle)


@dataclass(frozen=True)
class DecayChannel:
    from_level: str
    to_level: str
    rate: float

    def __post_init__(self):
        if self.from_level == self.to_level:
            raise SchemeError(f"decay {self.from_level}->{self.to_level}: from == to")
        if not self.rate >= 0:
            raise SchemeError(
                f"decay {self.from_level}->{self.to_level}: rate {self.rate} < 0")


@dataclass(frozen=True)
class DriveCoupling:
    """Laser coupling between ``lower`` and ``upper`` with Rabi scale factor.

    The upper level rotates at the lower level's frame plus the laser
    frequency.
    """

    lower: str
    upper: str
    laser: str
    rabi_scale: float = 1.0

    def __post_init__(self):
        if self.laser not in LASERS:
            raise SchemeError(f"unknown laser {self.laser!r}, expected one of {LASERS}")
        if self.lower == self.upper:
            raise SchemeError(f"coupling {self.lower}-{self.upper}: levels must differ")
        if not self.rabi_scale >= 0:
            raise SchemeError(
                f"coupling {self.lower}-{self.upper}: rabi_scale {self.rabi_scale} < 0")


def _freeze(mapping: Mapping | None) -> Mapping:
    return MappingProxyType(dict(mapping or {}))


@dataclass(frozen=True)
class LevelScheme:
    """A driven, damped multi-level system.

    Parameters
    ----------
    levels
        Ordered level labels. ``g, v, e, w`` must be present.
    level_freqs_hz
        Bare energy of every level relative to ``g`` (Hz).
    decays
        Population decay channels (rates in rad/s).
    couplings
        Laser couplings.
    transitions_hz
        The named transition frequencies the level energies came from
        (``nu_gw``, ``nu_vw``, ``nu_ge``, ...). Used for detuning bookkeeping.
    pure_dephasing
        Optional per-level dephasing rates (rad/s); a rate ``gamma`` adds the
        jump operator ``|i><i|`` so coherences with ``i`` decay at ``gamma/2``.
    """

    levels: tuple[str, ...]
    level_freqs_hz: Mapping[str, float]
    decays: tuple[DecayChannel, ...]
    couplings: tuple[DriveCoupling, ...]
    transitions_hz: Mapping[str, float] = field(default_factory=dict)
    pure_dephasing: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "decays", tuple(self.decays))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        object.__setattr__(self, "level_freqs_hz", _freeze(self.level_freqs_hz))
        object.__setattr__(self, "transitions_hz", _freeze(self.transitions_hz))
        object.__setattr__(self, "pure_dephasing", _freeze(self.pure_dephasing))
        self._validate()
        object.__setattr__(self, "_frame", _assign_frame(self))

    def _validate(self):
        if len(set(self.levels)) != len(self.levels):
            raise SchemeError(f"duplicate level labels in {self.levels}")
        missing = [lv for lv in BASE_LEVELS if lv not in self.levels]
        if missing:
            raise SchemeError(f"base levels missing: {missing}")
        known = set(self.levels)
        for lv in self.levels:
            if lv not in self.level_freqs_hz:
                raise SchemeError(f"no energy given for level {lv!r}")
        for d in self.decays:
            for lv in (d.from_level, d.to_level):
                if lv not in known:
                    raise SchemeError(f"decay references unknown level {lv!r}")
        for c in self.couplings:
            for lv in (c.lower, c.upper):
                if lv not in known:
                    raise SchemeError(f"coupling references unknown level {lv!r}")
        for lv, rate in self.pure_dephasing.items():
            if lv not in known:
                raise SchemeError(f"dephasing references unknown level {lv!r}")
            if not rate >= 0:
                raise SchemeError(f"dephasing rate of {lv!r} is negative")

    @property
    def dim(self) -> int:
        return len(self.levels)

    def index(self, level: str) -> int:
        try:
            return self.levels.index(level)
        except ValueError:
            raise KeyError(f"level {level!r} not in scheme {self.levels}") from None

    def frame(self, level: str) -> tuple[str, int, int]:
        """(root level, #exc photons, #stk photons) defining the level's frame."""
        return self._frame[level]

    def transition(self, key: str) -> float:
        try:
            return self.transitions_hz[key]
        except KeyError:
            raise KeyError(f"transition {key!r} not defined for scheme {self.name!r}") from None

    def frame_energies(self, drives: "DrivePair") -> np.ndarray:
        """Diagonal of H/hbar (rad/s) in the rotating frame for ``drives``."""
        return self.frame_energies_batch(np.array([drives.nu_exc]), np.array([drives.nu_stk]))[0]

    def frame_energies_batch(self, nu_exc: np.ndarray, nu_stk: np.ndarray) -> np.ndarray:
        """Rotating-frame diagonals, shape ``(len(nu_exc), dim)``."""
        nu_exc = np.asarray(nu_exc, dtype=float)
        nu_stk = np.asarray(nu_stk, dtype=float)
        out = np.empty(nu_exc.shape + (self.dim,))
        for i, lv in enumerate(self.levels):
            root, n_exc, n_stk = self._frame[lv]
            hz = np.full(nu_exc.shape, self.level_freqs_hz[lv] - self.level_freqs_hz[root])
            if n_exc:
                hz = hz - n_exc * nu_exc
            if n_stk:
                hz = hz - n_stk * nu_stk
            out[..., i] = TWO_PI * hz
        return out

    def with_couplings(self, **scales: float) -> "LevelScheme":
        """Copy with Rabi scale factors replaced, keyed by upper+lower label.

        ``with_couplings(beta_G=0.1)`` is also accepted, see :data:`BETA_EDGES`.
        """
        new = list(self.couplings)
        for key, value in scales.items():
            edge = BETA_EDGES.get(key)
            if edge is None:
                raise KeyError(f"unknown coupling {key!r}; known: {sorted(BETA_EDGES)}")
            hit = False
            for i, c in enumerate(new):
                if (c.lower, c.upper, c.laser) == edge:
                    new[i] = replace(c, rabi_scale=float(value))
                    hit = True
            if not hit:
                raise KeyError(f"coupling {key!r} not present in scheme {self.name!r}")
        return replace(self, couplings=tuple(new))


# named dimensionless Rabi scales -> (lower, upper, laser)
BETA_EDGES = {
    "beta_g": ("g", "e", STK),
    "beta_G": ("G", "e", STK),
    "beta_E": ("g", "E", STK),
    "beta_x": ("g", "x", EXC),
}


def _assign_frame(scheme: LevelScheme) -> dict[str, tuple[str, int, int]]:
    # breadth-first spanning forest over driven edges, rooted at g first
    adj: dict[str, list[tuple[str, int, int, DriveCoupling]]] = {lv: [] for lv in scheme.levels}
    for c in scheme.couplings:
        de = 1 if c.laser == EXC else 0
        ds = 1 if c.laser == STK else 0
        adj[c.lower].append((c.upper, de, ds, c))
        adj[c.upper].append((c.lower, -de, -ds, c))

    frame: dict[str, tuple[str, int, int]] = {}
    parent: dict[str, str | None] = {}
    roots = ["g"] + [lv for lv in scheme.levels if lv != "g"]
    for root in roots:
        if root in frame:
            continue
        frame[root] = (root, 0, 0)
        parent[root] = None
        queue = deque([root])
        while queue:
            a = queue.popleft()
            _, na, sa = frame[a]
            for b, de, ds, _c in adj[a]:
                if b not in frame:
                    frame[b] = (root, na + de, sa + ds)
                    parent[b] = a
                    queue.append(b)

    for c in scheme.couplings:
        ra, na, sa = frame[c.lower]
        rb, nb, sb = frame[c.upper]
        de = 1 if c.laser == EXC else 0
        ds = 1 if c.laser == STK else 0
        if (nb - na, sb - sa) != (de, ds):
            cycle = _cycle_path(parent, c.lower, c.upper)
            raise FrameError(
                "inconsistent rotating frame: drive loop "
                + " -> ".join(cycle)
                + f" accumulates {nb - na - de:+d} exc and {sb - sa - ds:+d} stk photons"
                + f" (closing edge {c.lower}-{c.upper} via {c.laser})",
                cycle,
            )
    return frame


def _cycle_path(parent, a, b):
    def chain(x):
        out = [x]
        while parent[x] is not None:
            x = parent[x]
            out.append(x)
        return out

    ca, cb = chain(a), chain(b)
    common = next(x for x in ca if x in cb)
    up = ca[: ca.index(common) + 1]
    down = cb[: cb.index(common)][::-1]
    return up + down + [a]


@dataclass(frozen=True)
class DrivePair:
    """Laser frequencies (Hz) and Rabi amplitudes (rad/s)."""

    nu_exc: float
    nu_stk: float
    omega_exc: float = 0.0
    omega_stk: float = 0.0

    def __post_init__(self):
        if not (self.omega_exc >= 0 and self.omega_stk >= 0):
            raise SchemeError("Rabi amplitudes must be >= 0")

    @classmethod
    def from_detunings(cls, scheme: LevelScheme, delta_exc: float = 0.0,
                       delta_stk: float = 0.0, omega_exc: float = 0.0,
                       omega_stk: float = 0.0) -> "DrivePair":
        """Place the lasers at ``delta_exc`` from nu_gw and ``delta_stk`` from nu_vw."""
        return cls(
            nu_exc=scheme.transition("nu_gw") + delta_exc / TWO_PI,
            nu_stk=scheme.transition("nu_vw") + delta_stk / TWO_PI,
            omega_exc=omega_exc,
            omega_stk=omega_stk,
        )

    def delta_exc(self, scheme: LevelScheme) -> float:
        return TWO_PI * (self.nu_exc - scheme.transition("nu_gw"))

    def delta_stk(self, scheme: LevelScheme) -> float:
        return TWO_PI * (self.nu_stk - scheme.transition("nu_vw"))

    def delta_ge(self, scheme: LevelScheme) -> float:
        return TWO_PI * (self.nu_stk - scheme.transition("nu_ge"))

    def detunings(self, scheme: LevelScheme) -> dict[str, float]:
        return {
            "delta_exc": self.delta_exc(scheme),
            "delta_stk": self.delta_stk(scheme),
            "delta_ge": self.delta_ge(scheme),
        }

    def rabi(self, laser: str) -> float:
        return self.omega_exc if laser == EXC else self.omega_stk


def build_hamiltonian(scheme: LevelScheme, drives: DrivePair) -> np.ndarray:
    """Rotating-frame H/hbar in rad/s, rows/cols in ``scheme.levels`` order.

    For the four-level scheme this is::

        [[0,        0,           W_ge/2, W_exc/2],
         [0,        D_stk-D_exc, 0,      W_stk/2],
         [W_ge/2,   0,          -D_ge,   0      ],
         [W_exc/2,  W_stk/2,     0,     -D_exc  ]]

    with ``W_ge = beta_g * W_stk``.
    """
    return build_hamiltonians(scheme, [drives])[0]


def build_hamiltonians(scheme: LevelScheme, drives: Sequence[DrivePair]) -> np.ndarray:
    """Stack of :func:`build_hamiltonian` results, shape ``(n, dim, dim)``."""
    nu_exc = np.array([dp.nu_exc for dp in drives], dtype=float)
    nu_stk = np.array([dp.nu_stk for dp in drives], dtype=float)
    rabi = {EXC: np.array([dp.omega_exc for dp in drives], dtype=float),
            STK: np.array([dp.omega_stk for dp in drives], dtype=float)}
    n, d = len(nu_exc), scheme.dim
    H = np.zeros((n, d, d), dtype=complex)
    idx = np.arange(d)
    H[:, idx, idx] = scheme.frame_energies_batch(nu_exc, nu_stk)
    for c in scheme.couplings:
        i, j = scheme.index(c.lower), scheme.index(c.upper)
        half = 0.5 * c.rabi_scale * rabi[c.laser]
        H[:, i, j] += half
        H[:, j, i] += half
    return H


def build_jump_operators(scheme: LevelScheme) -> list[tuple[np.ndarray, float]]:
    """``(|to><from|, rate)`` per decay channel with nonzero rate, then dephasing."""
    d = scheme.dim
    out = []
    for ch in scheme.decays:
        if ch.rate == 0:
            continue
        J = np.zeros((d, d), dtype=complex)
        J[scheme.index(ch.to_level), scheme.index(ch.from_level)] = 1.0
        out.append((J, float(ch.rate)))
    for lv in scheme.levels:
        rate = scheme.pure_dephasing.get(lv, 0.0)
        if rate > 0:
            J = np.zeros((d, d), dtype=complex)
            k = scheme.index(lv)
            J[k, k] = 1.0
            out.append((J, float(rate)))
    return out


def four_level_scheme(nu_gw: float, nu_vw: float, nu_ge: float, gamma_e: float,
                      gamma_v: float, gamma_w: float, beta_g: float = 1.0,
                      branching_w_to_g: float = 0.0,
                      pure_dephasing: Mapping[str, float] | None = None,
                      name: str = "four-level") -> LevelScheme:
    """The g, v, e, w scheme driven by excitation (g-w) and Stokes (v-w, g-e) lasers.

    Frequencies in Hz, rates in rad/s. ``w`` relaxes into ``e`` (a fraction
    ``branching_w_to_g`` goes straight to ``g`` instead).
    """
    if not 0.0 <= branching_w_to_g <= 1.0:
        raise SchemeError(f"branching_w_to_g={branching_w_to_g} outside [0, 1]")
    for label, rate in (("gamma_e", gamma_e), ("gamma_v", gamma_v), ("gamma_w", gamma_w)):
        if not rate >= 0:
            raise SchemeError(f"{label}={rate} < 0")
    transitions = {"nu_gw": nu_gw, "nu_vw": nu_vw, "nu_ge": nu_ge}
    energies = {"g": 0.0, "v": nu_gw - nu_vw, "e": nu_ge, "w": nu_gw}
    decays = [
        DecayChannel("e", "g", gamma_e),
        DecayChannel("v", "g", gamma_v),
        DecayChannel("w", "e", (1.0 - branching_w_to_g) * gamma_w),
    ]
    if branching_w_to_g > 0:
        decays.append(DecayChannel("w", "g", branching_w_to_g * gamma_w))
    couplings = [
        DriveCoupling("g", "e", STK, beta_g),
        DriveCoupling("g", "w", EXC, 1.0),
        DriveCoupling("v", "w", STK, 1.0),
    ]
    return LevelScheme(BASE_LEVELS, energies, decays, couplings, transitions,
                       pure_dephasing or {}, name)


@dataclass(frozen=True)
class SidebandConfig:
    """Discrete stand-ins for the phonon sidebands of g (``G``) and e (``E``).

    ``nu_Ge`` is the G<->e transition frequency (Stokes-driven, G below e),
    ``nu_gE`` the g<->E transition frequency (Stokes-driven). Rates in rad/s.
    """

    nu_Ge: float
    nu_gE: float
    beta_G: float
    beta_E: float
    gamma_G: float
    gamma_E: float


@dataclass(frozen=True)
class ExtraLevelConfig:
    """Additional vibronic level ``x`` near ``w``, excitation-driven from g."""

    nu_gx: float
    beta_x: float
    gamma_x: float


def extend_model(base: LevelScheme, sidebands: SidebandConfig,
                 extra: ExtraLevelConfig | None = None) -> LevelScheme:
    """Append ``G`` (and ``E``), plus ``x`` when ``extra`` is given.

    ``G`` is Stokes-coupled to e and decays to g, ``E`` is Stokes-coupled to g
    and decays to e, ``x`` is excitation-coupled to g and decays to e.
    """
    if base.levels != BASE_LEVELS:
        raise SchemeError(f"extend_model needs the four-level base, got {base.levels}")
    checks = [("beta_G", sidebands.beta_G), ("beta_E", sidebands.beta_E),
              ("gamma_G", sidebands.gamma_G), ("gamma_E", sidebands.gamma_E)]
    if extra is not None:
        checks += [("beta_x", extra.beta_x), ("gamma_x", extra.gamma_x)]
    for label, value in checks:
        if not value >= 0:
            raise SchemeError(f"{label}={value} must be >= 0")

    levels = list(base.levels) + ["G", "E"]
    nu_ge = base.transition("nu_ge")
    energies = dict(base.level_freqs_hz)
    energies["G"] = nu_ge - sidebands.nu_Ge
    energies["E"] = sidebands.nu_gE
    transitions = dict(base.transitions_hz, nu_Ge=sidebands.nu_Ge, nu_gE=sidebands.nu_gE)
    decays = list(base.decays) + [
        DecayChannel("G", "g", sidebands.gamma_G),
        DecayChannel("E", "e", sidebands.gamma_E),
    ]
    couplings = list(base.couplings) + [
        DriveCoupling("G", "e", STK, sidebands.beta_G),
        DriveCoupling("g", "E", STK, sidebands.beta_E),
    ]
    if extra is not None:
        levels.append("x")
        energies["x"] = extra.nu_gx
        transitions["nu_gx"] = extra.nu_gx
        decays.append(DecayChannel("x", "e", extra.gamma_x))
        couplings.append(DriveCoupling("g", "x", EXC, extra.beta_x))
    return LevelScheme(tuple(levels), energies, decays, couplings, transitions,
                       base.pure_dephasing, base.name)
