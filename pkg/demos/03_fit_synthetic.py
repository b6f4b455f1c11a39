"""
Fitting spectra at several Stokes powers
========================================

Generate noisy synthetic spectra, fit the Stokes Rabi amplitude for each
power together with the shared sideband overlap beta_G, then check that
the amplitudes scale like sqrt(P).
"""

import time
from dataclasses import replace

import numpy as np

from ramansplit.fitting import (FitDataset, FitProblem, fit_double_lorentzian, fit_model,
                                fit_power_law)
from ramansplit.io import decay_totals, drives_from_config, load_config, scheme_from_config
from ramansplit.model import TWO_PI
from ramansplit.scan import sweep

doc = load_config("dbt_pdcb.json")
scheme = scheme_from_config(doc)
drives = drives_from_config(doc, scheme)
gv = decay_totals(scheme)["v"]

powers = np.array([0.33, 0.82, 1.63, 2.65]) * 1e-3          # W
c_true = 2 * gv / np.sqrt(powers[-1])
omegas = c_true * np.sqrt(powers)
x = np.linspace(-100e9, 100e9, 121) * TWO_PI

rng = np.random.default_rng(1)
datasets = []
for p, w in zip(powers, omegas):
    y = sweep(scheme, replace(drives, omega_stk=w), "delta_exc", x).rho_ee
    datasets.append(FitDataset(x, y * (1 + 0.01 * rng.standard_normal(len(y))), drives, power=p))

# %%
t0 = time.perf_counter()
res = fit_model(FitProblem(scheme, datasets))
print(f"fit took {time.perf_counter() - t0:.1f} s, {res.iterations} iterations")
for k, w in enumerate(omegas):
    got, err = res[f"omega_stk[{k}]"], res.error(f"omega_stk[{k}]")
    print(f"  P = {powers[k] * 1e3:.2f} mW: Omega_stk = {got / gv:.4f} +/- {err / gv:.4f} Gv"
          f"  (true {w / gv:.4f})")
print(f"  beta_G = {res['beta_G']:.4f} +/- {res.error('beta_G'):.4f}  (true 0.3)")

# %%
fitted = np.array([res[f"omega_stk[{k}]"] for k in range(len(powers))])
cal = fit_power_law(powers, fitted, free_exponent=True)
print(f"Omega = c * P^alpha with alpha = {cal.exponent:.3f} +/- {cal.exponent_err:.3f}")

# %%
# A pair of Lorentzians cannot describe the split line as well.
lor = fit_double_lorentzian(x, datasets[-1].y)
print(f"rss two Lorentzians {lor.rss:.3g} vs model {res.dataset_rss[-1]:.3g}")
