import numpy as np
import pytest

from ramansplit.io import decay_totals, drives_from_config, load_config, scheme_from_config
from ramansplit.model import (TWO_PI, DrivePair, ExtraLevelConfig, SidebandConfig,
                              extend_model, four_level_scheme)

G0 = TWO_PI * 1e9


@pytest.fixture(scope="session")
def four_level():
    doc = load_config("fig1.json")
    scheme = scheme_from_config(doc)
    return doc, scheme, drives_from_config(doc, scheme), decay_totals(scheme)


@pytest.fixture(scope="session")
def dbt():
    doc = load_config("dbt_pdcb.json")
    scheme = scheme_from_config(doc)
    return doc, scheme, drives_from_config(doc, scheme), decay_totals(scheme)


@pytest.fixture(scope="session")
def dbt_base():
    doc = load_config("dbt_pdcb.json")
    doc["levels"] = ["g", "v", "e", "w"]
    scheme = scheme_from_config(doc)
    return doc, scheme, drives_from_config(doc, scheme), decay_totals(scheme)


def random_case(rng, d, stiff=False):
    """A random valid scheme of dimension 4 or 7 with a random drive."""
    if stiff:
        gw = TWO_PI * 26.1e9 * rng.uniform(0.5, 2)
        gv = gw * rng.uniform(0.3, 1)
        ge = gw * 10 ** rng.uniform(-3.5, -1)
        nu_ge = 402.65e12
        nu_vw = nu_ge - rng.uniform(50, 300) * 1e9
    else:
        ge, gv, gw = G0 * 10 ** rng.uniform(-1, 1, 3)
        nu_ge = 400e12
        nu_vw = nu_ge + rng.uniform(-5, 5) * 1e9
    nu_gw = nu_ge + rng.uniform(5, 15) * 1e12
    s = four_level_scheme(nu_gw, nu_vw, nu_ge, ge, gv, gw, beta_g=rng.uniform(0, 1.5),
                          branching_w_to_g=rng.uniform(0, 0.5))
    if d == 7:
        side = SidebandConfig(nu_ge + rng.uniform(-300, 300) * 1e9,
                              nu_ge + rng.uniform(-300, 300) * 1e9,
                              *rng.uniform(0, 1.5, 2), *(gw * 10 ** rng.uniform(-1, 0.5, 2)))
        extra = ExtraLevelConfig(nu_gw + rng.uniform(-60, 60) * 1e9, rng.uniform(0, 1.5),
                                 gw * 10 ** rng.uniform(-1, 0.5))
        s = extend_model(s, side, extra)
    scale = gw if stiff else G0
    dp = DrivePair.from_detunings(s, *(scale * rng.uniform(-3, 3, 2)),
                                  np.sqrt(ge * gw) * 10 ** rng.uniform(-1, 1.5),
                                  gv * 10 ** rng.uniform(-1, 1))
    return s, dp


# Stokes powers (W) and a calibration putting the highest power at 2 Gamma_v
POWERS = np.array([0.33, 0.82, 1.63, 2.65]) * 1e-3


def synthetic_spectra(scheme, dp, omegas, x, noise=0.0, rng=None):
    """Clean and (optionally) multiplicatively noisy rho_ee spectra, one per Stokes amplitude."""
    from ramansplit.scan import sweep
    from dataclasses import replace
    clean = [sweep(scheme, replace(dp, omega_stk=w), "delta_exc", x).rho_ee for w in omegas]
    if not noise:
        return clean
    return [y * (1 + noise * rng.standard_normal(len(y))) for y in clean]


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
