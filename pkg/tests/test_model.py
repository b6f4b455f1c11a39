import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ramansplit.liouville import assemble_liouvillian, observables, steady_state
from ramansplit.model import (BETA_EDGES, TWO_PI, DecayChannel, DriveCoupling, DrivePair,
                              ExtraLevelConfig, FrameError, LevelScheme, SchemeError,
                              SidebandConfig, build_hamiltonian, build_hamiltonians,
                              build_jump_operators, extend_model, four_level_scheme)

from conftest import random_case

NU_GE, NU_VW, NU_GW = 400e12, 399.8e12, 412e12


def base(**kw):
    args = dict(gamma_e=1e8, gamma_v=5e10, gamma_w=1e11)
    args.update(kw)
    return four_level_scheme(NU_GW, NU_VW, NU_GE, **args)


def solve(scheme, drives):
    L = assemble_liouvillian(build_hamiltonian(scheme, drives), build_jump_operators(scheme))
    return steady_state(L)


def test_zero_drive_on_resonance_is_zero_matrix():
    s = base()
    # Delta_ge = 0 needs nu_stk = nu_ge, Delta_stk = 0 needs nu_stk = nu_vw
    s = four_level_scheme(NU_GW, NU_GE, NU_GE, 1e8, 5e10, 1e11)
    H = build_hamiltonian(s, DrivePair(NU_GW, NU_GE))
    assert np.array_equal(H, np.zeros((4, 4)))


@pytest.mark.parametrize("beta_g", [1.0, 0.37])
def test_hamiltonian_matches_four_level_pattern(beta_g):
    s = base(beta_g=beta_g)
    dp = DrivePair.from_detunings(s, 3.1e10, -1.7e10, 2.3e10, 4.1e10)
    d_exc, d_stk, d_ge = dp.delta_exc(s), dp.delta_stk(s), dp.delta_ge(s)
    we, ws = dp.omega_exc, dp.omega_stk
    wge = beta_g * ws
    expected = np.array([
        [0, 0, wge / 2, we / 2],
        [0, d_stk - d_exc, 0, ws / 2],
        [wge / 2, 0, -d_ge, 0],
        [we / 2, ws / 2, 0, -d_exc],
    ], dtype=complex)
    H = build_hamiltonian(s, dp)
    assert np.allclose(H, expected, rtol=1e-9, atol=1e-3)
    # off-diagonals are exact copies of the drive amplitudes
    assert H[0, 3] == we / 2 and H[1, 3] == ws / 2 and H[0, 2] == wge / 2


def test_detuning_bookkeeping():
    s = base()
    dp = DrivePair(NU_GW + 1e9, NU_VW - 2e9)
    assert dp.delta_exc(s) == pytest.approx(TWO_PI * 1e9)
    assert dp.delta_stk(s) == pytest.approx(-TWO_PI * 2e9)
    assert dp.delta_ge(s) == pytest.approx(TWO_PI * (NU_VW - 2e9 - NU_GE))
    back = DrivePair.from_detunings(s, dp.delta_exc(s), dp.delta_stk(s))
    assert back.nu_exc == pytest.approx(dp.nu_exc, rel=1e-15)
    assert back.nu_stk == pytest.approx(dp.nu_stk, rel=1e-15)


def test_bundled_four_level_spot_check(four_level):
    _, s, dp, r = four_level
    H = build_hamiltonian(s, dp)
    assert H[0, 3] == pytest.approx(np.sqrt(r["e"] * r["w"]))
    assert H[0, 2] == pytest.approx(H[1, 3])  # Omega_ge = Omega_stk
    assert H[1, 1] == pytest.approx(0, abs=1e-3)  # Delta_stk = Delta_exc = 0
    assert H[2, 2] == pytest.approx(10 * r["w"], rel=1e-9)  # -Delta_ge


def _conj_transpose_loops(H):
    n = len(H)
    out = np.empty_like(H)
    for i in range(n):
        for j in range(n):
            out[i, j] = complex(H[j, i].real, -H[j, i].imag)
    return out


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.sampled_from([4, 7]), stiff=st.booleans())
def test_hamiltonian_hermitian(seed, d, stiff):
    s, dp = random_case(np.random.default_rng(seed), d, stiff)
    H = build_hamiltonian(s, dp)
    scale = np.max(np.abs(H)) or 1.0
    assert np.max(np.abs(H - _conj_transpose_loops(H))) <= 1e-15 * scale


def test_frame_assignment_deterministic(dbt):
    _, s, dp, _ = dbt
    a = build_hamiltonian(s, dp)
    b = build_hamiltonian(s.with_couplings(beta_G=0.3), dp)
    assert a.tobytes() == b.tobytes()
    batch = build_hamiltonians(s, [dp, dp])
    assert batch[1].tobytes() == a.tobytes()


def test_jump_operators_base():
    s = base()
    jumps = build_jump_operators(s)
    assert len(jumps) == 3
    seen = {(s.levels[np.argmax(np.abs(J).sum(axis=1))], s.levels[np.argmax(np.abs(J).sum(axis=0))]): r
            for J, r in jumps}
    assert seen == {("g", "e"): 1e8, ("g", "v"): 5e10, ("e", "w"): 1e11}
    for J, _ in jumps:
        assert np.count_nonzero(J) == 1


def test_jump_operators_zero_rate_omitted_and_dephasing():
    s = base(gamma_v=0.0, pure_dephasing={"v": 2e9})
    jumps = build_jump_operators(s)
    assert len(jumps) == 3
    J, r = jumps[-1]
    assert r == 2e9 and J[1, 1] == 1


def test_jump_operators_branching():
    s = base(branching_w_to_g=0.25)
    rates = sorted(r for _, r in build_jump_operators(s))
    assert rates == sorted([1e8, 5e10, 0.75e11, 0.25e11])


def test_jump_operators_extended_count(dbt):
    _, s, _, _ = dbt
    assert s.dim == 7
    assert len(build_jump_operators(s)) == sum(1 for c in s.decays if c.rate > 0) == 6


def test_scheme_validation():
    with pytest.raises(SchemeError):
        DecayChannel("e", "e", 1.0)
    with pytest.raises(SchemeError):
        DecayChannel("e", "g", -1.0)
    with pytest.raises(SchemeError):
        DriveCoupling("g", "g", "stk")
    with pytest.raises(SchemeError):
        DriveCoupling("g", "w", "pump")
    with pytest.raises(SchemeError):
        DriveCoupling("g", "w", "exc", -0.1)
    s = base()
    with pytest.raises(SchemeError, match="duplicate"):
        LevelScheme(("g", "v", "e", "w", "g"), s.level_freqs_hz, s.decays, s.couplings)
    with pytest.raises(SchemeError, match="missing"):
        LevelScheme(("g", "v", "e"), s.level_freqs_hz, (), ())
    with pytest.raises(SchemeError, match="unknown level"):
        LevelScheme(s.levels, s.level_freqs_hz, (DecayChannel("q", "g", 1.0),), ())
    with pytest.raises(SchemeError):
        DrivePair(1.0, 1.0, -1.0, 0.0)


def test_inconsistent_drive_loop_names_cycle():
    s = base()
    bad = DriveCoupling("v", "e", "exc")
    with pytest.raises(FrameError) as err:
        LevelScheme(s.levels, s.level_freqs_hz, s.decays, s.couplings + (bad,),
                    s.transitions_hz)
    assert set(err.value.cycle) >= {"v", "e"}
    assert "v" in str(err.value) and "e" in str(err.value)


def test_consistent_duplicate_edge_accepted():
    s = base()
    again = DriveCoupling("g", "w", "exc", 0.5)
    s2 = LevelScheme(s.levels, s.level_freqs_hz, s.decays, s.couplings + (again,),
                     s.transitions_hz)
    dp = DrivePair.from_detunings(s2, 0, 0, 1e9, 1e9)
    assert build_hamiltonian(s2, dp)[0, 3] == pytest.approx(0.75e9)


def test_undriven_level_gets_own_frame():
    s = base()
    s2 = LevelScheme(s.levels, s.level_freqs_hz, s.decays,
                     [c for c in s.couplings if c.upper != "e"], s.transitions_hz)
    assert s2.frame("e") == ("e", 0, 0)
    H = build_hamiltonian(s2, DrivePair(NU_GW + 1e9, NU_VW))
    assert H[2, 2] == 0


def sidebands(beta_G=0.0, beta_E=0.0):
    return SidebandConfig(NU_GE - 300e9, NU_GE + 300e9, beta_G, beta_E, 1e11, 1e11)


def test_extend_model_rejects_negative():
    with pytest.raises(SchemeError):
        extend_model(base(), sidebands(beta_G=-0.1))
    with pytest.raises(SchemeError):
        extend_model(base(), SidebandConfig(NU_GE, NU_GE, 0, 0, -1.0, 1.0))
    with pytest.raises(SchemeError):
        extend_model(base(), sidebands(), ExtraLevelConfig(NU_GW, -1.0, 1.0))
    with pytest.raises(SchemeError):
        extend_model(extend_model(base(), sidebands()), sidebands())


def test_extended_frames_and_couplings():
    s = extend_model(base(), sidebands(0.2, 0.4), ExtraLevelConfig(NU_GW + 60e9, 0.3, 1e11))
    assert s.levels == ("g", "v", "e", "w", "G", "E", "x")
    assert s.frame("G") == ("g", 0, 0)
    assert s.frame("E") == ("g", 0, 1)
    assert s.frame("x") == ("g", 1, 0)
    dp = DrivePair.from_detunings(s, 0, 0, 1e9, 2e9)
    H = build_hamiltonian(s, dp)
    iG, iE, ix, ie = (s.index(lv) for lv in "GExe")
    assert H[iG, ie] == pytest.approx(0.1 * 2e9)
    assert H[0, iE] == pytest.approx(0.2 * 2e9)
    assert H[0, ix] == pytest.approx(0.15 * 1e9)
    # the G-e line is resonant when the Stokes laser sits at nu_Ge
    assert (H[ie, ie] - H[iG, iG]).real == pytest.approx(TWO_PI * (NU_GE - 300e9 - dp.nu_stk),
                                                        rel=1e-9)


def test_zero_betas_reproduce_base_model():
    b = base()
    s = extend_model(b, sidebands(), ExtraLevelConfig(NU_GW + 60e9, 0.0, 1e11))
    for de, ds in [(0, 0), (3e10, -2e10), (-8e10, 1e10)]:
        dp = DrivePair.from_detunings(b, de, ds, 2e9, 4e10)
        r0 = observables(solve(b, dp), b)
        r1 = observables(solve(s, dp), s)
        for k, v in r0.as_dict().items():
            assert abs(getattr(r1, k) - v) <= 1e-10
        rho = solve(s, dp)
        for lv in "GEx":
            assert abs(rho[s.index(lv), s.index(lv)]) <= 1e-12


@pytest.mark.parametrize("key", sorted(BETA_EDGES))
def test_any_zero_beta_decouples(dbt, key):
    _, s, dp, _ = dbt
    s0 = s.with_couplings(**{key: 0.0})
    rho = solve(s0, dp)
    lower, upper, _ = BETA_EDGES[key]
    # the level reached only through this edge stays empty
    target = {"beta_g": None, "beta_G": "G", "beta_E": "E", "beta_x": "x"}[key]
    if target is not None:
        assert abs(rho[s.index(target), s.index(target)]) <= 1e-12


def test_with_couplings_errors():
    with pytest.raises(KeyError):
        base().with_couplings(beta_G=0.1)
    with pytest.raises(KeyError):
        base().with_couplings(beta_q=0.1)


def test_sideband_G_depletes_excited_state():
    b = base()
    s0 = extend_model(b, sidebands())
    s1 = extend_model(b, sidebands(beta_G=0.5))
    nu_Ge = NU_GE - 300e9
    strong = 5 * np.sqrt(1e8 * 1e11)
    dp = DrivePair(NU_GW, nu_Ge, strong, 5e10)
    ee0 = observables(solve(s0, dp), s0).rho_ee
    ee1 = observables(solve(s1, dp), s1).rho_ee
    assert ee1 < ee0


def test_sideband_E_raises_blue_baseline():
    b = base()
    s = extend_model(b, sidebands(beta_E=0.3))
    nus = NU_GE + np.linspace(50e9, 250e9, 9)
    ee = [observables(solve(s, DrivePair(NU_GW + 200e9, nu, 2e9, 5e10)), s).rho_ee for nu in nus]
    assert np.all(np.diff(ee) > 0)
