import numpy as np
import pytest

from ramansplit.liouville import (ConvergenceError, DegenerateSteadyStateError, PhysicalityError,
                                  StiffnessError, assemble_liouvillian, commutator_superop,
                                  dissipator_superop, observables, propagate, steady_state,
                                  steady_states, trace_functional, unvec, vec, vec_batch)
from ramansplit.model import (DrivePair, build_hamiltonian, build_jump_operators,
                              four_level_scheme)

from conftest import G0, random_case


def rand_matrix(rng, d, hermitian=False):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (A + A.conj().T) / 2 if hermitian else A


def test_vec_roundtrip_and_kron_identity():
    rng = np.random.default_rng(1)
    A, X, B = (rand_matrix(rng, 4) for _ in range(3))
    assert np.array_equal(unvec(vec(X)), X)
    # column stacking: vec(A X B) = (B^T kron A) vec(X)
    assert np.allclose(vec(A @ X @ B), np.kron(B.T, A) @ vec(X))
    stack = np.stack([A, X, B])
    assert np.array_equal(vec_batch(stack)[1], vec(X))
    assert np.array_equal(unvec(vec_batch(stack)), stack)


def test_trace_functional():
    X = rand_matrix(np.random.default_rng(2), 7)
    assert trace_functional(7) @ vec(X) == pytest.approx(np.trace(X))


def test_superoperators_match_direct_formulas():
    rng = np.random.default_rng(3)
    d = 4
    H = rand_matrix(rng, d, hermitian=True)
    rho = rand_matrix(rng, d)
    jumps = [(rand_matrix(rng, d), 0.7), (rand_matrix(rng, d), 2.0)]
    direct_comm = -1j * (H @ rho - rho @ H)
    assert np.allclose(commutator_superop(H) @ vec(rho), vec(direct_comm))
    direct_diss = sum(r * (J @ rho @ J.conj().T
                           - 0.5 * (J.conj().T @ J @ rho + rho @ J.conj().T @ J))
                      for J, r in jumps)
    assert np.allclose(dissipator_superop(jumps, d) @ vec(rho), vec(direct_diss))
    L = assemble_liouvillian(H, jumps)
    assert np.allclose(L(rho), direct_comm + direct_diss)


def test_batched_commutator_matches_single():
    rng = np.random.default_rng(4)
    Hs = np.stack([rand_matrix(rng, 7, True) for _ in range(3)])
    batch = commutator_superop(Hs)
    for k in range(3):
        assert np.array_equal(batch[k], commutator_superop(Hs[k]))


@pytest.mark.parametrize("d", [4, 7])
def test_liouvillian_trace_preserving_with_single_null_vector(d):
    s, dp = random_case(np.random.default_rng(d), d)
    L = assemble_liouvillian(build_hamiltonian(s, dp), build_jump_operators(s))
    M = L.matrix
    assert np.max(np.abs(trace_functional(d) @ M)) <= 1e-12 * np.max(np.abs(M))
    sv = np.linalg.svd(M, compute_uv=False)
    assert sv[-1] < 1e-9 * sv[0] < sv[-2]


def test_degenerate_steady_state_detected():
    # v neither decays nor is driven: population can rest in g or v
    s = four_level_scheme(412e12, 399.8e12, 400e12, G0, 0.0, G0)
    L = assemble_liouvillian(build_hamiltonian(s, DrivePair.from_detunings(s, 0, 0, G0, 0)),
                             build_jump_operators(s))
    with pytest.raises(DegenerateSteadyStateError):
        steady_state(L)


def test_steady_state_uniqueness_check_can_be_skipped_but_still_gated():
    s = four_level_scheme(412e12, 399.8e12, 400e12, G0, 0.0, G0)
    L = assemble_liouvillian(build_hamiltonian(s, DrivePair.from_detunings(s, 0, 0, G0, 0)),
                             build_jump_operators(s))
    with pytest.raises((DegenerateSteadyStateError, ConvergenceError, PhysicalityError)):
        steady_state(L, check_degeneracy=False)


def test_two_level_closed_form():
    ge, gv, gw = 0.05 * G0, G0, 2 * G0
    s = four_level_scheme(412e12, 399.8e12, 400e12, ge, gv, gw, beta_g=0.0)
    for omega in (0.3 * gw, 2 * gw):
        for delta in (-3 * gw, 0.0, 0.4 * gw):
            dp = DrivePair.from_detunings(s, delta, 0.0, omega, 0.0)
            rho = steady_state(assemble_liouvillian(build_hamiltonian(s, dp),
                                                    build_jump_operators(s)))
            den = delta**2 + gw**2 / 4 + omega**2 * (gw + 2 * ge) / (4 * ge)
            assert rho[2, 2].real == pytest.approx(omega**2 * gw / (4 * ge) / den, rel=1e-9)


def test_pure_decay_propagation():
    gv = 3e9
    s = four_level_scheme(412e12, 399.8e12, 400e12, 1e8, gv, 1e9)
    L = assemble_liouvillian(build_hamiltonian(s, DrivePair(412e12, 399.8e12)),
                             build_jump_operators(s))
    rho0 = np.zeros((4, 4), complex)
    rho0[1, 1] = 1
    t = 0.7 / gv
    rho = propagate(rho0, L, t)
    assert rho[1, 1].real == pytest.approx(np.exp(-gv * t), rel=1e-9)
    assert rho[0, 0].real == pytest.approx(1 - np.exp(-gv * t), rel=1e-9)
    rho0 = np.zeros((4, 4), complex)
    rho0[2, 2] = 1
    t = 2.0 / 1e8
    assert propagate(rho0, L, t)[2, 2].real == pytest.approx(np.exp(-1e8 * t), abs=1e-8)


def test_propagate_edge_cases():
    s, dp = random_case(np.random.default_rng(5), 4)
    L = assemble_liouvillian(build_hamiltonian(s, dp), build_jump_operators(s))
    rho0 = np.diag([1, 0, 0, 0]).astype(complex)
    assert np.array_equal(propagate(rho0, L, 0.0), rho0)
    with pytest.raises(ValueError):
        propagate(rho0, L, -1.0)
    with pytest.raises(StiffnessError, match="step underflow"):
        propagate(rho0, L, 1e-6, local_tol=0.0, max_halvings=3)


def test_propagate_trace_preserved():
    s, dp = random_case(np.random.default_rng(6), 7)
    L = assemble_liouvillian(build_hamiltonian(s, dp), build_jump_operators(s))
    rho0 = np.zeros((7, 7), complex)
    rho0[0, 0] = 1
    rho = propagate(rho0, L, 2e-10)
    assert np.trace(rho).real == pytest.approx(1, abs=1e-10)


def test_batched_steady_states_match_single():
    rng = np.random.default_rng(7)
    cases = [random_case(rng, 7) for _ in range(3)]
    Ls = [assemble_liouvillian(build_hamiltonian(s, dp), build_jump_operators(s))
          for s, dp in cases]
    batch = steady_states(np.stack([L.matrix for L in Ls]))
    for k, L in enumerate(Ls):
        assert np.allclose(batch[k], steady_state(L), atol=1e-13)


def test_observables_and_cauchy_schwarz_guard():
    s = four_level_scheme(412e12, 399.8e12, 400e12, 1e8, 1e9, 1e9)
    rho = np.diag([0.6, 0.2, 0.1, 0.1]).astype(complex)
    rho[0, 1] = rho[1, 0] = 0.3
    obs = observables(rho, s)
    assert obs.coh_gv_sq == pytest.approx(0.09)
    assert obs.coherence_fraction == pytest.approx(0.45)
    rho[0, 1] = rho[1, 0] = 0.4  # 0.16 > 0.6 * 0.2
    with pytest.raises(PhysicalityError, match="Cauchy-Schwarz"):
        observables(rho, s)


def test_coherence_fraction_floor():
    s = four_level_scheme(412e12, 399.8e12, 400e12, 1e8, 1e9, 1e9)
    rho = np.diag([1.0, 1e-17, 0, 0]).astype(complex)
    assert observables(rho, s).coherence_fraction == 0.0
