"""
==================================
Reading the state off the current
==================================

Eve trains an LSTM to name the prepared state from the recorded photocurrent.  The
exact likelihood of the record under each hypothesis gives the best
accuracy any classifier can reach, which is a useful yardstick for the
network.  Sizes here are small so the script runs in about a minute; the
CLI and the acceptance suite use 20000 training currents.
"""

import math

from dlca import classifier
from dlca.bayes_filter import BayesFilterClassifier
from dlca.datasets import fit_standardizer, generate_dataset, preprocess, split
from dlca.dynamics import ChannelParams, MeasurementWindow

params = ChannelParams()
theta = 1.86 * math.pi
window = MeasurementWindow(0.1, 0.4)

#####################################################
#
# Data
# ----
#
# Labels 0..3 stand for |0>, |1>, |+> and |->.  The standardiser is fitted
# on the training split only, and the time axis is reversed before training.

ds = generate_dataset(6000, params, theta, window, master_seed=3)
train_raw, test_raw = split(ds, 0.8, seed=1)
std = fit_standardizer(train_raw)
train_set, test_set = preprocess(train_raw, std), preprocess(test_raw, std)
print(f"{len(train_set)} training currents of {train_set.seq_len} bins")

#####################################################
#
# Network
# -------

res = classifier.train(train_set, classifier.TrainConfig(epochs=3), standardizer=std)
ev = classifier.evaluate(res.model, test_set)
print(f"LSTM accuracy {ev.accuracy:.3f}, loss {res.losses[:50].mean():.3f} -> {res.losses[-50:].mean():.3f}")
print("confusion (rows truth, columns prediction)")
print(ev.confusion)

#####################################################
#
# Yardstick
# ---------
#
# The filter works on the raw currents, not the standardised ones.

bayes = classifier.evaluate(BayesFilterClassifier(params, theta, window), test_raw)
print(f"Bayes-optimal accuracy {bayes.accuracy:.3f}")
