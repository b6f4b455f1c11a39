"""
How much population reaches v?
==============================

Scan both Rabi amplitudes on resonance and look at the vibrational
population rho_vv and at the part of it that is coherent with g.
"""

import numpy as np

from ramansplit.io import decay_totals, drives_from_config, load_config, scheme_from_config
from ramansplit.scan import ScanConfig, map2d, sweep

doc = load_config("dbt_pdcb.json")
doc["levels"] = ["g", "v", "e", "w"]   # the bare four-level model
scheme = scheme_from_config(doc)
drives = drives_from_config(doc, scheme)
r = decay_totals(scheme)
w0 = np.sqrt(1.5 * r["e"] * r["w"])

# %%
# At the experimental excitation strength rho_vv stays tiny whatever the
# Stokes amplitude.
oms = np.linspace(0, 5, 51) * r["v"]
vv = sweep(scheme, drives, "omega_stk", oms).rho_vv
print(f"max rho_vv at Omega_exc = w0: {vv.max():.2e} (Omega_stk = {oms[vv.argmax()] / r['v']:.1f} Gv)")

# %%
# A 50 x 50 map over both amplitudes.
m = map2d(scheme,
          ScanConfig("omega_exc", 0.0, 25 * w0, 50, drives),
          ScanConfig("omega_stk", 0.0, 10 * r["v"], 50, drives))
vv = m.observables.rho_vv
frac = m.observables.coherence_fraction
iy, ix = np.unravel_index(vv.argmax(), vv.shape)
print(f"max rho_vv = {vv.max():.4f} at Omega_exc = {m.x_values[ix] / w0:.1f} w0, "
      f"Omega_stk = {m.y_values[iy] / r['v']:.1f} Gv, coherent fraction {frac[iy, ix]:.2f}")

sel = vv >= 5e-3
print(f"{sel.sum()} cells with rho_vv >= 0.5 %, coherent fraction "
      f"{frac[sel].min():.2f} .. {frac[sel].max():.2f}")

# %%
# The side levels of the full model drain the e shelf, which changes the
# picture noticeably.
full = scheme_from_config(load_config("dbt_pdcb.json"))
mf = map2d(full,
           ScanConfig("omega_exc", 0.0, 25 * w0, 50, drives_from_config(doc, full)),
           ScanConfig("omega_stk", 0.0, 10 * r["v"], 50, drives_from_config(doc, full)))
print(f"seven-level model: max rho_vv = {mf.observables.rho_vv.max():.3f}")
