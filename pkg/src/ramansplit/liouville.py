"""Lindblad superoperators, steady states and time propagation.

Density matrices are vectorized by column stacking,
``vec(rho)[i + d*j] = rho[i, j]``, so that ``vec(A rho B) = (B.T kron A) vec(rho)``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .model import LevelScheme


class SolverError(RuntimeError):
    """Base class for steady-state and propagation failures.

    ``index`` locates the failing item in a batched solve, when known.
    """

    def __init__(self, message: str = "", index: int | None = None):
        super().__init__(message)
        self.index = index


class DegenerateSteadyStateError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


class StiffnessError(SolverError):
    pass


class PhysicalityError(SolverError):
    """A computed density matrix violates positivity beyond roundoff."""


RESIDUAL_TOL = 1e-8
MIN_EIG_TOL = -1e-9
RHO_VV_FLOOR = 1e-15


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def vec_batch(rhos: np.ndarray) -> np.ndarray:
    """:func:`vec` over the last two axes."""
    rhos = np.asarray(rhos)
    return np.swapaxes(rhos, -1, -2).reshape(rhos.shape[:-2] + (-1,))


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec`; broadcasts over leading axes."""
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.shape[-1])))
    return np.swapaxes(v.reshape(v.shape[:-1] + (d, d)), -1, -2)


def trace_functional(d: int) -> np.ndarray:
    """Row vector ``t`` with ``t @ vec(rho) == trace(rho)``."""
    t = np.zeros(d * d)
    t[np.arange(d) * (d + 1)] = 1.0
    return t


@dataclass(frozen=True)
class Liouvillian:
    dim: int
    matrix: np.ndarray

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho), self.dim)


def _commutator_index(d: int):
    # positions of H[i, j] in kron(I, H) and of H[b, a] in kron(H.T, I)
    a, i, j = np.meshgrid(np.arange(d), np.arange(d), np.arange(d), indexing="ij")
    left = ((a * d + i).ravel(), (a * d + j).ravel(), i.ravel(), j.ravel())
    right = ((a * d + i).ravel(), (j * d + i).ravel(), j.ravel(), a.ravel())
    return left, right


def commutator_superop(H: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Superoperator of ``rho -> -i[H, rho]``; broadcasts over leading axes.

    With ``out`` given, the superoperator is added to it in place.
    """
    H = np.asarray(H)
    d = H.shape[-1]
    if out is None:
        out = np.zeros(H.shape[:-2] + (d * d, d * d), dtype=complex)
    (r1, c1, i1, j1), (r2, c2, i2, j2) = _commutator_index(d)
    mH = -1j * H
    out[..., r1, c1] += mH[..., i1, j1]
    out[..., r2, c2] -= mH[..., i2, j2]
    return out


def dissipator_superop(jumps: Sequence[tuple[np.ndarray, float]], d: int) -> np.ndarray:
    eye = np.eye(d)
    D = np.zeros((d * d, d * d), dtype=complex)
    for J, rate in jumps:
        J = np.asarray(J, dtype=complex)
        if J.shape != (d, d):
            raise ValueError(f"jump operator of shape {J.shape} does not match dimension {d}")
        if rate < 0:
            raise ValueError(f"negative jump rate {rate}")
        JdJ = J.conj().T @ J
        D += rate * (np.kron(J.conj(), J) - 0.5 * np.kron(eye, JdJ) - 0.5 * np.kron(JdJ.T, eye))
    return D


def assemble_liouvillian(H: np.ndarray, jumps: Sequence[tuple[np.ndarray, float]]) -> Liouvillian:
    """L(rho) = -i[H, rho] + sum_k rate_k (J rho J^+ - {J^+ J, rho}/2)."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"Hamiltonian must be square, got shape {H.shape}")
    d = H.shape[0]
    return Liouvillian(d, commutator_superop(H, dissipator_superop(jumps, d)))


def _steady_system(L: np.ndarray, overwrite: bool = False):
    # trace-replacement system, rescaled so the trace row is commensurate;
    # returns (A, b, scale, row0) so that L can be rebuilt from A
    n = L.shape[-1]
    d = int(round(np.sqrt(n)))
    scale = np.max(np.abs(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    scale = np.where(scale > 0, scale, 1.0)
    row0 = L[..., 0, :].copy()
    A = L if overwrite else L.copy()
    A /= scale[..., None, None]
    A[..., 0, :] = trace_functional(d)
    b = np.zeros(L.shape[:-2] + (n,), dtype=complex)
    b[..., 0] = 1.0
    return A, b, scale, row0


def _check_rhos(rhos: np.ndarray, A: np.ndarray, scale: np.ndarray,
                row0: np.ndarray) -> np.ndarray:
    """Residual and positivity checks over a stack; returns Hermitized states."""
    x = vec_batch(rhos)
    r = np.einsum("kij,kj->ki", A, x) * scale[:, None]
    r[:, 0] = np.einsum("kj,kj->k", row0, x)
    res = np.linalg.norm(r, axis=-1)
    # max |L_ii| <= ||L||_2: try the cheap bound before an SVD
    lnorm = np.max(np.abs(np.diagonal(A, axis1=-2, axis2=-1)[:, 1:]), axis=-1) * scale
    lnorm = np.maximum(lnorm, np.abs(row0[:, 0]))
    for k in np.flatnonzero(~(res <= RESIDUAL_TOL * lnorm)):
        L = A[k] * scale[k]
        L[0] = row0[k]
        exact = np.linalg.norm(L, 2)
        if not res[k] <= RESIDUAL_TOL * exact:
            raise ConvergenceError(
                f"steady-state residual {res[k]:.3e} exceeds {RESIDUAL_TOL:g}*||L|| = "
                f"{RESIDUAL_TOL * exact:.3e} (batch index {k})", int(k))
    rhos = 0.5 * (rhos + np.conj(np.swapaxes(rhos, -1, -2)))
    wmin = np.linalg.eigvalsh(rhos)[..., 0]
    bad = np.flatnonzero(wmin < MIN_EIG_TOL)
    if bad.size:
        k = int(bad[0])
        raise PhysicalityError(
            f"steady state has eigenvalue {wmin[k]:.3e} < {MIN_EIG_TOL:g} (batch index {k})", k)
    return rhos


def steady_state(L: Liouvillian, check_degeneracy: bool = True) -> np.ndarray:
    """Unique trace-one null vector of ``L`` as a Hermitian density matrix."""
    M = L.matrix
    if check_degeneracy:
        s = np.linalg.svd(M, compute_uv=False)
        tol = max(M.shape) * np.finfo(float).eps * s[0] * 1e3
        nullity = int(np.sum(s <= tol))
        if nullity > 1:
            raise DegenerateSteadyStateError(
                f"degenerate steady state: Liouvillian has {nullity} null vectors")
    try:
        return steady_states(M[None])[0]
    except SolverError as exc:
        raise type(exc)(str(exc).replace(" (batch index 0)", "")) from None


def steady_states(Ls: np.ndarray, overwrite: bool = False) -> np.ndarray:
    """Batched :func:`steady_state` over a stack of superoperator matrices.

    ``overwrite=True`` lets the solver reuse ``Ls`` as scratch space.
    """
    Ls = np.asarray(Ls)
    d = int(round(np.sqrt(Ls.shape[-1])))
    A, b, scale, row0 = _steady_system(Ls, overwrite)
    try:
        x = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise DegenerateSteadyStateError(f"degenerate steady state: {exc}") from None
    return _check_rhos(unvec(x, d), A, scale, row0)


def _rk4_propagator(M: np.ndarray, dt: float) -> np.ndarray:
    # one classical RK4 step of d/dt y = M y, written as a matrix polynomial
    X = dt * M
    eye = np.eye(M.shape[0])
    X2 = X @ X
    return eye + X + X2 / 2 + X2 @ X / 6 + X2 @ X2 / 24


def propagate(rho0: np.ndarray, L: Liouvillian, t_final: float, dt: float | None = None,
              local_tol: float = 1e-10, max_halvings: int = 60) -> np.ndarray:
    """Integrate d rho/dt = L(rho) to ``t_final`` with fixed-step RK4.

    The step starts at ``dt`` (default ``1/||L||``) and is halved until the
    operator-norm difference between one step and two half steps falls
    below ``local_tol``. Because the generator is constant, the step
    propagator is formed once and raised to the step count by repeated
    squaring.
    """
    M = L.matrix
    rho0 = np.asarray(rho0, dtype=complex)
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    if t_final == 0:
        return rho0.copy()
    norm = np.linalg.norm(M, 2)
    if norm == 0:
        return rho0.copy()
    h = t_final if dt is None else min(dt, t_final)
    h = min(h, 1.0 / norm)
    for _ in range(max_halvings):
        P = _rk4_propagator(M, h)
        half = _rk4_propagator(M, h / 2)
        if np.linalg.norm(P - half @ half, 2) < local_tol:
            break
        h /= 2
    else:
        raise StiffnessError(
            f"step underflow: no RK4 step down to {h:.3e} s meets local error {local_tol:g}; "
            "use a smaller system or rescaled units")
    n = int(np.ceil(t_final / h))
    P = _rk4_propagator(M, t_final / n)
    y = vec(rho0)
    while n:
        if n & 1:
            y = P @ y
        n >>= 1
        if n:
            P = P @ P
    return unvec(y, L.dim)


@dataclass(frozen=True)
class Observables:
    """Populations and g-v coherence; fields are floats or equal-shape arrays."""

    rho_gg: np.ndarray
    rho_vv: np.ndarray
    rho_ee: np.ndarray
    rho_ww: np.ndarray
    coh_gv_sq: np.ndarray
    coherence_fraction: np.ndarray

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.names()}

    def __getitem__(self, idx) -> "Observables":
        return Observables(**{k: np.asarray(v)[idx] for k, v in self.as_dict().items()})


def observables(rho: np.ndarray, scheme: LevelScheme) -> Observables:
    """Extract named populations and the g-v coherence from one or many ``rho``."""
    rho = np.asarray(rho)
    ig, iv, ie, iw = (scheme.index(lv) for lv in ("g", "v", "e", "w"))

    def pop(i):
        return np.clip(rho[..., i, i].real, 0.0, 1.0)

    rho_gg, rho_vv = pop(ig), pop(iv)
    coh = np.abs(rho[..., ig, iv]) ** 2
    excess = coh - (rho_gg * rho_vv + 1e-12)
    if np.any(excess > 0):
        raise PhysicalityError(
            f"Cauchy-Schwarz violated: |rho_gv|^2 exceeds rho_gg*rho_vv by {np.max(excess):.3e}")
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(rho_vv < RHO_VV_FLOOR, 0.0, coh / np.where(rho_vv > 0, rho_vv, 1.0))
    frac = np.clip(frac, 0.0, 1.0)
    return Observables(rho_gg, rho_vv, pop(ie), pop(iw), coh, frac)
