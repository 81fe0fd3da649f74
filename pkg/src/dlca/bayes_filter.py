"""Bayes-optimal reference classifier for photocurrents.

The likelihood of a record under each of the four initial states is the
trace of an unnormalised conditional state propagated with the linear
(Zakai-type) form of the stochastic master equation.  Picking the largest
posterior gives the best accuracy any classifier can reach on the same data,
up to the time discretisation of the binned record.  It is a benchmark for
the LSTM, not a replacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    DEFAULT_BIN_FACTOR,
    DISSIPATION_OPERATOR,
    ChannelParams,
    MeasurementWindow,
    _kraus_parts,
    lindblad_solve,
    unraveling,
)
from .qcore import ALL_STATES, feedback_operator, hamiltonian_for, measurement_operator

__all__ = ["BayesFilterClassifier"]


@dataclass
class BayesFilterClassifier:
    """Exact-likelihood classifier for raw (unstandardised, unflipped) currents.

    Works on the binned record: each bin of width ``bin_factor * dt`` is
    treated as one filter step.
    """

    params: ChannelParams
    theta: float
    window: MeasurementWindow | None = None
    bin_factor: int = DEFAULT_BIN_FACTOR
    phi: float | None = None

    def __post_init__(self):
        p = self.params
        self.window = self.window or MeasurementWindow.full(p)
        e = measurement_operator(self.theta)
        f = feedback_operator(self.phi) if self.phi is not None else None
        step = self.bin_factor * p.dt
        self._step = step
        self._start = []
        self._ops = []
        for s in ALL_STATES:
            H = hamiltonian_for(s, p.omega)
            # before the window the state follows the unmonitored channel
            if self.window.t_start > 0:
                rho = lindblad_solve(s.density, H, [(p.gamma_D, DISSIPATION_OPERATOR)],
                                     self.window.t_start, p.dt).matrix
            else:
                rho = s.density.matrix
            self._start.append(np.array(rho))
            M0, M1, extra = _kraus_parts(unraveling(H, p, e, f), step)
            self._ops.append((M0, M1, extra))
        self.info = {}

    def log_likelihoods(self, X: np.ndarray) -> np.ndarray:
        """``(B, 4)`` log-likelihoods, up to a per-sample constant."""
        X = np.asarray(X, dtype=np.float64)
        B, T = X.shape
        scale = math.sqrt(self.params.eta) * self._step
        rho = np.broadcast_to(np.array(self._start)[:, None], (4, B, 2, 2)).copy()
        M0 = np.array([o[0] for o in self._ops])[:, None]
        M1 = np.array([o[1] for o in self._ops])[:, None]
        logw = np.zeros(B)
        for t in range(T):
            dy = (scale * X[:, t])[None, :, None, None]
            M = M0 + M1 * dy
            new = M @ rho @ np.conj(np.swapaxes(M, -1, -2))
            for k, (_, _, extra) in enumerate(self._ops):
                for w, L in extra:
                    new[k] += w * (L @ rho[k] @ L.conj().T)
            tot = np.trace(new, axis1=-2, axis2=-1).real.sum(axis=0)
            logw += np.log(tot)
            rho = new / tot[None, :, None, None]
        L = np.log(np.maximum(np.trace(rho, axis1=-2, axis2=-1).real, 1e-300)).T
        return L + logw[:, None]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        L = self.log_likelihoods(X)
        L = L - L.max(axis=1, keepdims=True)
        w = np.exp(L)
        return w / w.sum(axis=1, keepdims=True)
