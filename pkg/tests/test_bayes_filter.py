import math

import numpy as np
import pytest

from dlca.bayes_filter import BayesFilterClassifier
from dlca.classifier import evaluate
from dlca.datasets import generate_dataset
from dlca.dynamics import ChannelParams, MeasurementWindow

P = ChannelParams(t_final=1.0)


def test_posteriors_are_distributions():
    ds = generate_dataset(50, P, 1.3, master_seed=1)
    probs = BayesFilterClassifier(P, 1.3).predict_proba(ds.currents)
    assert probs.shape == (50, 4)
    assert np.allclose(probs.sum(axis=1), 1) and np.all(probs >= 0)


def test_no_measurement_strength_means_no_information():
    p = P.replace(gamma_E=0.0)
    ds = generate_dataset(20, p, 1.3, master_seed=2)
    assert np.allclose(BayesFilterClassifier(p, 1.3).predict_proba(ds.currents), 0.25, atol=1e-12)


def test_sigma_z_probe_resolves_only_the_z_pair():
    ds = generate_dataset(2000, P, math.pi / 2, master_seed=3)
    r = evaluate(BayesFilterClassifier(P, math.pi / 2), ds)
    c = r.confusion
    # Z inputs: the sign of the signal is read correctly most of the time
    assert (c[0, 0] + c[1, 1]) / (c[0, :2].sum() + c[1, :2].sum()) > 0.7
    # X inputs carry no sigma_z signal and are rarely identified
    assert r.per_class_accuracy[2:].mean() < 0.1 < 0.6 < r.per_class_accuracy[:2].mean()


def test_window_and_feedback_are_supported():
    w = MeasurementWindow(0.1, 0.4)
    ds = generate_dataset(400, P, 1.86 * math.pi, w, master_seed=4, phi=0.94 * math.pi)
    clf = BayesFilterClassifier(P, 1.86 * math.pi, w, phi=0.94 * math.pi)
    assert evaluate(clf, ds).accuracy > 0.25 + 4 * math.sqrt(0.25 * 0.75 / 400)


def test_matched_model_beats_mismatched_model():
    ds = generate_dataset(1500, P, 0.3, master_seed=5)
    right = evaluate(BayesFilterClassifier(P, 0.3), ds).accuracy
    wrong = evaluate(BayesFilterClassifier(P, 0.3 + math.pi / 2), ds).accuracy
    assert right > wrong


@pytest.mark.parametrize("bad", [np.zeros(5), np.zeros((2, 3, 4))])
def test_rejects_non_matrix_input(bad):
    with pytest.raises(ValueError):
        BayesFilterClassifier(P, 0.0).log_likelihoods(bad)
