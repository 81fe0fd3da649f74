"""
=============================
Feedback and angle schedules
=============================

Two ways Eve might hide. The current can be fed back onto the qubit
through a Hamiltonian ``f = cos(phi) X + sin(phi) Z``, or the probe
angle can change along the way.  Both are studied on the averaged dynamics.
"""

import math

import numpy as np

from dlca import experiments
from dlca.dynamics import ChannelParams, MeasurementWindow

params = ChannelParams()
theta = 1.86 * math.pi
w = MeasurementWindow(0.1, 0.4)

#####################################################
#
# Feedback
# --------

phis = 2 * math.pi * np.arange(100) / 100
row = experiments.feedback_heatmap([theta], phis, params, w)[0]
q0 = experiments.deterministic_qber(params, theta, w)
j = int(np.argmin(row))
print(f"without feedback QBER {q0:.5f}")
print(f"best feedback angle phi = {phis[j] / math.pi:.2f}pi gives {row[j]:.5f}; worst gives {row.max():.5f}")

#####################################################
#
# Greedy schedules
# ----------------
#
# Every 0.3/gamma_D Eve picks the angle that keeps Bob's error lowest at the
# end of the segment.  The accuracy-driven objectives need an accuracy
# curve; a toy curve peaking at 1.86pi stands in for a trained sweep here.

sched, times, trace = experiments.optimized_angle_traces("min_qber", params, n_grid=32)
print("min_qber angles (pi):", " ".join(f"{t / math.pi:.2f}" for t in sched.thetas), f"final QBER {trace[-1]:.4f}")

grid = 2 * math.pi * np.arange(32) / 32
toy = 0.4 + 0.1 * np.cos(grid - theta)
sched, times, trace = experiments.optimized_angle_traces("min_lambda", params, (grid, toy), n_grid=32)
print("min_lambda angles (pi):", " ".join(f"{t / math.pi:.2f}" for t in sched.thetas), f"final QBER {trace[-1]:.4f}")
print("projective reference at t_f:", f"{experiments.projective_qber_trace([params.t_final])[0]:.4f}")
