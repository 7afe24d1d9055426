# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Link budgets and channel selection
#
# Coincidences fall with the *sum* of both arms' losses while accidentals
# scale with the product of the singles, so CAR degrades quickly once the
# link loss approaches the source's dynamic range. The two presets give
# the two long-fiber rows: 39.7 dB and 66 dB.

# %%
import matplotlib.pyplot as plt
import numpy as np

from entlink.analysis import ChannelScanModel, config_budget, link_budget, scan_wavelength_channels
from entlink.config import PRESETS, load_config

# %%
for name in PRESETS:
    b = config_budget(load_config(name))
    s, i = b["arms"]["signal"], b["arms"]["idler"]
    print(f"{name:>10}: link {b['link_loss_db']:5.1f} dB, singles {s['singles_cps']:9.0f} / {i['singles_cps']:9.0f} cps, "
          f"pairs {b['coincidence_rate']:9.2f} cps, CAR {b['car_aligned']:8.1f}, F <= {b['fidelity_bound']:.3f}")

# %% [markdown]
# Inverting the first row: 132 cps after 39.7 dB needs about 1.23 M pairs/s
# leaving the chip.

# %%
print(132 / 10 ** (-39.7 / 10))
loss = np.linspace(0, 80, 161)
rate = [link_budget(2.8e6, l / 2, l / 2).coincidence_rate for l in loss]
fig, ax = plt.subplots(figsize=(5, 3))
ax.semilogy(loss, rate)
ax.axvline(66, ls=":", color="k")
ax.set_xlabel("total link loss (dB)")
ax.set_ylabel("coincidences (cps)")
plt.show()

# %% [markdown]
# ## Which channel pair?
#
# Close to the pump the pair rate is high, but so is pump leakage through
# the filters. Far away the leakage is suppressed but the phase-matching
# envelope has fallen. CAR peaks in between.

# %%
d = np.arange(1.0, 30.01, 0.5)
rows = scan_wavelength_channels(ChannelScanModel(), d)
fig, ax = plt.subplots(1, 2, figsize=(9, 3))
ax[0].semilogy(d, [r.pair_rate for r in rows], label="pairs")
ax[0].semilogy(d, [r.noise_singles for r in rows], label="noise singles")
ax[0].set_xlabel("detuning (nm)")
ax[0].legend()
ax[1].plot(d, [r.car for r in rows])
ax[1].set_xlabel("detuning (nm)")
ax[1].set_ylabel("CAR")
plt.tight_layout()
plt.show()
print("argmax:", max(rows, key=lambda r: r.car).detuning, "nm")
