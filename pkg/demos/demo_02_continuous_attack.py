"""
=====================================
Listening continuously to the channel
=====================================

Eve couples weakly to the qubit and records a homodyne photocurrent while
it travels.  The probe ``e = cos(theta) X + sin(theta) Z`` decides what Eve
learns and how much Bob is disturbed.
"""

import math
import sys
from pathlib import Path

import numpy as np

from dlca import experiments
from dlca.dynamics import ChannelParams, MeasurementWindow, simulate_trajectory
from dlca.qcore import ALL_STATES, measurement_operator

params = ChannelParams()
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out")
out.mkdir(exist_ok=True)

#####################################################
#
# One trajectory per input state
# -------------------------------
#
# With a sigma_z probe the Z states start with a mean current of
# ``+-2 sqrt(gamma_E)``.  The shot noise in each 10-step bin is much larger, so a
# single bin says little.

e = measurement_operator(math.pi / 2)
for s in ALL_STATES:
    rec = simulate_trajectory(s, params, e, MeasurementWindow.full(params), seed=11 + s.index)
    J = rec.coarse_current
    print(f"{s.name:<5} first 20 bins mean {J[:20].mean():+6.2f}, bin std {J.std():5.2f}, "
          f"final Bloch z {rec.final_state.bloch[2]:+.3f}")

#####################################################
#
# Error rate against probe angle
# ------------------------------
#
# Averaged over trajectories the dynamics is a Lindblad equation, so Bob's
# error rate follows without sampling.

for k in range(8):
    th = k * math.pi / 4
    print(f"theta = {k / 4:.2f}pi  QBER {experiments.deterministic_qber(params, th):.4f}")

print(f"no attack         QBER {experiments.deterministic_qber(params, None):.4f}")
w = MeasurementWindow(0.1, 0.4)
print(f"theta = 1.86pi, listening only on [0.1, 0.5]: QBER {experiments.deterministic_qber(params, 1.86 * math.pi, w):.4f}")

#####################################################
#
# When does Bob notice?
# ---------------------
#
# The map below is the error rate Bob would see had he measured at time t.
# It is written as CSV with a provenance header.

thetas = np.linspace(0, 2 * math.pi, 16, endpoint=False)
times = np.round(np.linspace(0, 3, 13), 3)
M = experiments.qber_heatmap(thetas, times, params)
experiments.write_matrix_csv(out / "qber-map.csv", "theta", thetas, "t", times, M,
                             experiments._meta(params, 0, demo="continuous attack"))
print(f"wrote {out / 'qber-map.csv'}; final-time QBER ranges {M[:, -1].min():.3f}..{M[:, -1].max():.3f}")
