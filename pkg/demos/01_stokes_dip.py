"""
A dip in the excitation spectrum
================================

A weak laser drives g -> w and we watch the e population, which sets the
fluorescence. A second (Stokes) laser couples v and w. When the two lasers
satisfy the Raman condition the excitation is blocked and a dip opens in
the middle of the line; a strong Stokes field splits it into two peaks.
"""

# %%
# Load the bundled parameter set. Rates are total decay rates in rad/s.
import numpy as np
from dataclasses import replace

from ramansplit.io import decay_totals, drives_from_config, load_config, scheme_from_config
from ramansplit.scan import sweep

doc = load_config("fig1.json")
scheme = scheme_from_config(doc)
drives = drives_from_config(doc, scheme)
rates = decay_totals(scheme)
gv, gw = rates["v"], rates["w"]
print("levels", scheme.levels)
print("Gamma_w / Gamma_v =", gw / gv)

# %%
# Sweep the excitation detuning for a few Stokes amplitudes.
delta = np.linspace(-8, 8, 801) * gw
curves = {}
for k in (0.5, 1, 2, 5):
    curves[k] = sweep(scheme, replace(drives, omega_stk=k * gv), "delta_exc", delta)

print(" Omega_stk/Gv   rho_ee(0)   max rho_ee   argmax/Gw")
for k, obs in curves.items():
    ee = obs.rho_ee
    print(f"{k:12g} {ee[400]:11.4f} {ee.max():12.4f} {delta[ee.argmax()] / gw:+11.2f}")

# %%
# The g-e transition is far detuned but still shifts the Raman line. The
# centre of the two peaks moves by roughly Omega^2 / (4 |Delta_ge|).
ee = curves[5].rho_ee
peaks = [i for i in range(1, len(ee) - 1) if ee[i] > ee[i - 1] and ee[i] >= ee[i + 1]]
centre = delta[peaks].mean()
print("peak centre / Gw:", centre / gw)
print("estimate / Gw   :", (5 * gv) ** 2 / (4 * abs(drives.delta_ge(scheme))) / gw)

# %%
# Plot if matplotlib is around.
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k, obs in curves.items():
        ax.plot(delta / gw, obs.rho_ee, label=f"{k:g}")
    ax.set_xlabel("excitation detuning / Gamma_w")
    ax.set_ylabel("rho_ee")
    ax.legend(title="Omega_stk / Gamma_v")
    fig.tight_layout()
    fig.savefig("stokes_dip.png", dpi=120)
    print("wrote stokes_dip.png")
