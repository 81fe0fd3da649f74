"""Fast always-on invariant checks, runnable without pytest (``dlca selftest``)."""

from __future__ import annotations

import math
import os
import tempfile
import time
from typing import Callable

import numpy as np

from . import bb84, classifier, datasets, dynamics
from .qcore import (
    ALL_STATES,
    SIGMA_X,
    SIGMA_Z,
    DensityMatrix2,
    PureState,
    dissipator,
    hamiltonian_for,
    innovation,
    measurement_operator,
)


def _random_state(rng) -> np.ndarray:
    v = rng.normal(size=3)
    r = v / np.linalg.norm(v) * rng.uniform(0, 1) ** (1 / 3)
    return DensityMatrix2.from_bloch(r).matrix


def check_closed_forms():
    for x, q0, a, qp in ((0.0, 0.0, 0.75, 0.25), (3.0, 0.24938, None, 0.37469)):
        assert abs(bb84.analytic_qber_no_attack(x) - q0) < 6e-6
        assert abs(bb84.analytic_qber_projective(x) - qp) < 6e-6
        if a is not None:
            assert abs(bb84.analytic_accuracy_projective(x) - a) < 1e-12
    assert abs(bb84.analytic_accuracy_projective(0.3) - (0.625 + math.exp(-0.6) / 8)) < 1e-12


def check_superoperator_traces():
    rng = np.random.default_rng(1)
    for _ in range(50):
        rho = _random_state(rng)
        o = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        assert abs(np.trace(dissipator(o, rho))) < 1e-12
        assert abs(np.trace(innovation(o, rho))) < 1e-12


def check_dark_states():
    p = dynamics.ChannelParams()
    for s in (PureState.PLUS, PureState.MINUS):
        out = dynamics.lindblad_solve(s.density, hamiltonian_for(s, p.omega), [(p.gamma_D, SIGMA_X)], 3.0, p.dt)
        assert np.max(np.abs(out.matrix - s.density.matrix)) < 1e-10


def check_trajectory_invariants():
    p = dynamics.ChannelParams(t_final=0.5)
    res = dynamics.simulate_batch(list(ALL_STATES) * 8, p, measurement_operator(1.3), dynamics.MeasurementWindow.full(p),
                                  list(range(32)))
    for i in range(32):
        res.final_state(i)  # validates Hermiticity, trace and positivity


def check_projective_tstar_independence():
    p = dynamics.ChannelParams(t_final=1.5)
    q = [bb84.run_protocol(4000, p, bb84.Projective(t), master_seed=3).stats.qber for t in (0.0, 0.7, 1.5)]
    ref = bb84.analytic_qber_projective(1.5)
    se = math.sqrt(ref * (1 - ref) / 2000)
    assert all(abs(v - ref) < 4 * se for v in q), q


def check_softmax():
    m = classifier.init_model(0, hidden=8)
    probs, _ = classifier.forward_batch(m, np.random.default_rng(0).normal(size=(16, 12)) * 50)
    assert np.all(np.abs(probs.sum(axis=1) - 1) < 1e-9)
    assert np.all((probs > 0) & (probs < 1))


def check_determinism_and_round_trip():
    p = dynamics.ChannelParams(t_final=0.2)
    a = datasets.generate_dataset(12, p, 1.86 * math.pi, master_seed=7)
    b = datasets.generate_dataset(12, p, 1.86 * math.pi, master_seed=7, chunk=5)
    assert a.equals(b)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ds.dlca")
        datasets.save(a, path)
        assert datasets.load(path).equals(a)


CHECKS: dict[str, Callable[[], None]] = {
    "closed forms": check_closed_forms,
    "D and H are traceless": check_superoperator_traces,
    "dark states are invariant": check_dark_states,
    "trajectory states stay physical": check_trajectory_invariants,
    "projective QBER independent of t*": check_projective_tstar_independence,
    "softmax normalised": check_softmax,
    "determinism and dataset round trip": check_determinism_and_round_trip,
}


def run(out=print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        t = time.perf_counter()
        try:
            fn()
            status = "PASS"
        except Exception as exc:  # report every failure, keep going
            status = f"FAIL ({type(exc).__name__}: {exc})"
            ok = False
        out(f"{status[:4]}  {name}  [{time.perf_counter() - t:.2f}s]{status[4:]}")
    return ok
