"""Time evolution of a qubit travelling through the monitored channel.

Three engines live here:

* :func:`lindblad_solve` / :func:`mean_evolution` -- deterministic RK4
  integration of Lindblad generators (the ensemble average of the
  conditioned dynamics, including the homodyne-feedback master equation).
* :func:`sme_step` / :func:`feedback_sme_step` -- one Euler-Maruyama step of
  the conditioned (diffusive) master equation on a single density matrix.
  These are the readable reference form.
* :func:`simulate_batch` -- the vectorised production integrator.  It works
  in Pauli-transfer coordinates (Bloch vectors) so a step is a handful of
  elementwise array operations; each trajectory owns its own noise stream,
  so a trajectory's record does not depend on which batch it ran in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .qcore import (  # noqa: F401
    ALL_STATES,
    POSITIVITY_TOL,
    SIGMA_X,
    ZERO_OPERATOR,
    DensityMatrix2,
    Operator2,
    PureState,
    anticommutator_like_superop,
    as_matrix,
    commutator,
    dissipator,
    dissipator_superop,
    hamiltonian_for,
    hamiltonian_superop,
    innovation,
    lindblad_superop,
    pauli_transfer,
)

#: channel noise is a bit flip
DISSIPATION_OPERATOR = SIGMA_X
DEFAULT_BIN_FACTOR = 10
STABILITY_LIMIT = 0.01
NOISE_PREFACTORS = ("sqrt_rate", "verbatim")


class DynamicsError(RuntimeError):
    """Numerical failure: step-size guard or positivity violation."""


@dataclass(frozen=True)
class ChannelParams:
    """Rates and integration grid.  Defaults: ``eta = 0.5``,
    ``omega = gamma_E = gamma_D`` and ``gamma_D t_f = 3``, in units where
    ``gamma_D = 1``."""

    gamma_D: float = 1.0
    gamma_E: float = 1.0
    eta: float = 0.5
    omega: float = 1.0
    t_final: float = 3.0
    dt: float = 1e-3

    def __post_init__(self):
        if self.gamma_D < 0 or self.gamma_E < 0:
            raise ValueError("rates must be non-negative")
        if not 0 <= self.eta <= 1:
            raise ValueError(f"eta={self.eta} outside [0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        worst = self.dt * max(self.gamma_D, self.gamma_E, abs(self.omega))
        if worst > STABILITY_LIMIT + 1e-15:
            raise ValueError(
                f"step too large: dt*max(rate)={worst:.3g} > {STABILITY_LIMIT}; "
                f"use dt <= {STABILITY_LIMIT / max(self.gamma_D, self.gamma_E, abs(self.omega)):.3g}")
        _steps(self.t_final, self.dt, "t_final")

    @property
    def n_steps(self) -> int:
        return _steps(self.t_final, self.dt, "t_final")

    def replace(self, **changes) -> "ChannelParams":
        return replace(self, **changes)


def _steps(t: float, dt: float, what: str) -> int:
    n = round(t / dt)
    if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"{what}={t} is not a whole number of steps dt={dt}")
    return int(n)


@dataclass(frozen=True)
class MeasurementWindow:
    """Interval ``[t_start, t_start + delta_t]`` during which Eve listens."""

    t_start: float
    delta_t: float

    def __post_init__(self):
        if self.t_start < 0 or self.delta_t < 0:
            raise ValueError("window start and duration must be non-negative")

    @classmethod
    def full(cls, params: ChannelParams) -> "MeasurementWindow":
        return cls(0.0, params.t_final)

    @property
    def t_end(self) -> float:
        return self.t_start + self.delta_t

    def step_range(self, params: ChannelParams, bin_factor: int = 1) -> tuple[int, int]:
        if self.t_end > params.t_final + 1e-9:
            raise ValueError(f"window ends at {self.t_end} after t_final={params.t_final}")
        k0 = _steps(self.t_start, params.dt, "window start")
        n = _steps(self.delta_t, params.dt, "window duration")
        if n % bin_factor:
            raise ValueError(f"window of {n} steps is not divisible by bin_factor={bin_factor}")
        return k0, k0 + n


# -- seeds and noise ------------------------------------------------------------

def derive_seed(master_seed: int, *index: int) -> int:
    """64-bit seed for stream ``index`` under ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(i) for i in index))
    return int(ss.generate_state(1, np.uint64)[0])


class WienerStream:
    """Seeded source of Wiener increments ``dW ~ N(0, dt)``."""

    def __init__(self, seed: int, dt: float):
        self.seed = int(seed)
        self.dt = dt
        self._rng = np.random.default_rng(self.seed)

    def increments(self, n: int) -> np.ndarray:
        return self._rng.standard_normal(n) * math.sqrt(self.dt)


# -- closed form and deterministic solvers ------------------------------------------

def analytic_dissipative_state(rho0, gamma_D: float, t: float) -> DensityMatrix2:
    """Closed-form bit-flip channel evolution.

    Each element relaxes toward the mean of itself and its transposed partner:
    ``rho_ij(t) = (1+k)/2 rho_ij(0) + (1-k)/2 rho_ji'(0)`` with ``k = exp(-2 gamma_D t)``.
    """
    r = as_matrix(rho0)
    k = math.exp(-2.0 * gamma_D * t)
    a, b = 0.5 * (1 + k), 0.5 * (1 - k)
    out = np.array([
        [a * r[0, 0] + b * r[1, 1], a * r[0, 1] + b * r[1, 0]],
        [b * r[0, 1] + a * r[1, 0], b * r[0, 0] + a * r[1, 1]],
    ])
    return DensityMatrix2(out)


def _rk4_propagator(L: np.ndarray, h: float) -> np.ndarray:
    # one classical RK4 step of the linear ODE v' = L v, as a matrix
    A = h * L
    A2 = A @ A
    A3 = A2 @ A
    return np.eye(L.shape[0]) + A + A2 / 2 + A3 / 6 + (A3 @ A) / 24


def _check_step(L: np.ndarray, dt: float):
    radius = float(np.max(np.abs(np.linalg.eigvals(L)))) if L.size else 0.0
    if dt * radius > 0.5:
        raise DynamicsError(f"step dt={dt} too large for generator spectral radius {radius:.3g}")


def _renorm(v: np.ndarray) -> np.ndarray:
    # v holds row-major vec(rho) in its last axis
    tr = v[..., 0] + v[..., 3]
    return v / tr[..., None]


def propagate(v: np.ndarray, segments, dt: float, checkpoints: Sequence[int] = ()):
    """RK4 propagation of stacked ``vec(rho)`` through piecewise-constant generators.

    ``segments`` is a sequence of ``(generator, n_steps)``.  Returns the final
    vectors and a dict ``{step: vectors}`` for every requested checkpoint.
    """
    v = np.array(v, dtype=complex)
    want = set(int(c) for c in checkpoints)
    snaps = {}
    k = 0
    if 0 in want:
        snaps[0] = v.copy()
    for L, n in segments:
        if n <= 0:
            continue
        _check_step(L, dt)
        P = _rk4_propagator(L, dt).T
        # jump between checkpoints with matrix powers instead of stepping
        stops = sorted(c for c in want if k < c <= k + n) + [k + n]
        for stop in stops:
            if stop > k:
                v = _renorm(v @ np.linalg.matrix_power(P, stop - k))
                k = stop
            if k in want:
                snaps[k] = v.copy()
    return v, snaps


def lindblad_solve(rho0, H, jumps, t: float, dt: float) -> DensityMatrix2:
    """RK4 solution of ``drho/dt = -i[H, rho] + sum_k rate_k D[L_k] rho`` at time ``t``."""
    L = lindblad_superop(H, jumps)
    n = int(math.floor(t / dt + 1e-9))
    rest = t - n * dt
    v, _ = propagate(as_matrix(rho0).reshape(4), [(L, n)], dt)
    if rest > 1e-12:
        v = _renorm(_rk4_propagator(L, rest) @ v)
    return DensityMatrix2(_hermitize(v.reshape(2, 2)))


def _hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def attack_generator(H, params: ChannelParams, e=None, f=None, measuring=True,
                     d=DISSIPATION_OPERATOR) -> np.ndarray:
    """Generator of the unconditioned (ensemble-averaged) channel dynamics.

    Without feedback this is the average of the conditioned equation:
    dissipation plus measurement decoherence at rate ``gamma_E``.  With a
    feedback operator ``f`` it is the homodyne-feedback master equation
    ``-i[H + gE/2 (e^dag f + f e), .] + gD D[d] + gE D[e - i f] + (1-eta)/eta gE D[f]``.
    """
    gD, gE, eta = params.gamma_D, params.gamma_E, params.eta
    if not measuring or e is None:
        return lindblad_superop(H, [(gD, d)])
    if f is None:
        return lindblad_superop(H, [(gD, d), (gE, e)])
    _require_feedback_eta(eta, f)
    em, fm = as_matrix(e), as_matrix(f)
    H_fb = as_matrix(H) + 0.5 * gE * (em.conj().T @ fm + fm @ em)
    return lindblad_superop(H_fb, [(gD, d), (gE, em - 1j * fm), ((1 - eta) / eta * gE, fm)])


def _require_feedback_eta(eta: float, f):
    if eta <= 0 and np.any(as_matrix(f) != 0):
        raise ValueError("feedback requires eta > 0")


def mean_evolution(rho0s, Hs, params: ChannelParams, e=None, window: MeasurementWindow | None = None,
                   f=None, checkpoints: Sequence[int] = ()):
    """Deterministic evolution of several initial states to ``t_final``.

    ``rho0s`` and ``Hs`` are parallel sequences.  Measurement (and feedback)
    terms are active only inside ``window``.  Returns ``(finals, snaps)`` where
    ``finals`` is a list of :class:`DensityMatrix2` and ``snaps`` maps each
    checkpoint step to a list of states.
    """
    if window is None:
        window = MeasurementWindow.full(params)
    k0, k1 = window.step_range(params)
    n = params.n_steps
    out_v = []
    out_s = {c: [] for c in checkpoints}
    for rho0, H in zip(rho0s, Hs):
        L_off = attack_generator(H, params, measuring=False)
        L_on = attack_generator(H, params, e, f, measuring=e is not None)
        v, snaps = propagate(as_matrix(rho0).reshape(4), [(L_off, k0), (L_on, k1 - k0), (L_off, n - k1)],
                             params.dt, checkpoints)
        out_v.append(DensityMatrix2(_hermitize(v.reshape(2, 2))))
        for c in checkpoints:
            out_s[c].append(DensityMatrix2(_hermitize(snaps[c].reshape(2, 2))))
    return out_v, out_s


def ensemble_final_states(params: ChannelParams, e=None, window: MeasurementWindow | None = None,
                          f=None) -> dict[PureState, DensityMatrix2]:
    """Unconditioned state at ``t_final`` for each of the four BB84 inputs."""
    finals, _ = mean_evolution([s.density for s in ALL_STATES],
                               [hamiltonian_for(s, params.omega) for s in ALL_STATES],
                               params, e, window, f)
    return dict(zip(ALL_STATES, finals))


def feedback_master_solve(rho0, H, params: ChannelParams, e, f, window: MeasurementWindow) -> DensityMatrix2:
    """RK4 solution of the homodyne-feedback master equation at ``t_final``."""
    _require_feedback_eta(params.eta, f)
    finals, _ = mean_evolution([rho0], [H], params, e, window, f)
    return finals[0]


# -- conditioned dynamics -----------------------------------------------------------
#
# Both the plain and the feedback equations are written as one monitored
# channel (operator c at rate G, detected with efficiency k) plus unmonitored
# Lindblad terms.  With feedback, c = sqrt(eta) e - i f / sqrt(eta) and the
# leftover (1 - eta) gE D[e] is a unitary remix of gE D[e - i f] +
# (1-eta)/eta gE D[f], so the average is the feedback master equation.

@dataclass(frozen=True)
class Unraveling:
    H: np.ndarray
    jumps: tuple            # unmonitored (rate, operator) pairs
    c: np.ndarray | None    # monitored operator
    rate: float             # G
    efficiency: float       # k
    e: np.ndarray | None    # operator whose mean drives the current

    @property
    def noise_scale(self) -> float:
        return math.sqrt(self.rate * self.efficiency)

    def generator(self) -> np.ndarray:
        jumps = list(self.jumps)
        if self.c is not None:
            jumps.append((self.rate, self.c))
        return lindblad_superop(self.H, jumps)


def unraveling(H, params: ChannelParams, e=None, f=None, measuring: bool = True,
               noise_prefactor: str = "sqrt_rate", d=DISSIPATION_OPERATOR) -> Unraveling:
    h = as_matrix(H)
    gD, gE, eta = params.gamma_D, params.gamma_E, params.eta
    dm = as_matrix(d)
    if not measuring or e is None:
        return Unraveling(h, ((gD, dm),), None, 0.0, 0.0, None)
    em = as_matrix(e)
    if f is None:
        return Unraveling(h, ((gD, dm),), em, gE, eta, em)
    if eta <= 0:
        raise ValueError("feedback requires eta > 0")
    fm = as_matrix(f)
    s = _noise_scale(gE, noise_prefactor)
    k = s * s / gE if gE > 0 else 1.0
    if k > 1 + 1e-12:
        raise ValueError(f"noise prefactor {s:.3g} exceeds what rate gamma_E={gE} can carry")
    H_fb = h + 0.5 * gE * (em.conj().T @ fm + fm @ em)
    c = math.sqrt(eta) * em - 1j * fm / math.sqrt(eta)
    return Unraveling(H_fb, ((gD, dm), ((1 - eta) * gE, em)), c, gE, min(k, 1.0), em)


def _noise_scale(gE: float, noise_prefactor: str) -> float:
    if noise_prefactor == "sqrt_rate":
        return math.sqrt(gE)
    if noise_prefactor == "verbatim":
        return gE
    raise ValueError(f"noise_prefactor must be one of {NOISE_PREFACTORS}")


def _kraus_parts(u: Unraveling, dt: float):
    """``M0``, ``M1`` and the extra CP terms of one Kraus-form step."""
    eye = np.eye(2, dtype=complex)
    loss = sum(rate * (L.conj().T @ L) for rate, L in u.jumps if rate) + np.zeros((2, 2))
    if u.c is not None:
        loss = loss + u.rate * (u.c.conj().T @ u.c)
    M0 = eye - 1j * u.H * dt - 0.5 * loss * dt
    M1 = u.noise_scale * u.c if u.c is not None else np.zeros((2, 2), complex)
    extra = [(rate * dt, L) for rate, L in u.jumps if rate]
    if u.c is not None and u.efficiency < 1:
        extra.append((u.rate * (1 - u.efficiency) * dt, u.c))
    return M0, M1, extra


def _step_matrix(r: np.ndarray, u: Unraveling, params: ChannelParams, dW: float, scheme: str):
    dt = params.dt
    J = None
    if u.e is not None:
        J = (math.sqrt(params.gamma_E) * np.trace((u.e + u.e.conj().T) @ r).real
             + dW / (math.sqrt(params.eta) * dt))
    if scheme == "euler":
        new = r + dt * (u.generator() @ r.reshape(4)).reshape(2, 2)
        if u.c is not None:
            new = new + u.noise_scale * dW * innovation(u.c, r)
    elif scheme == "kraus":
        M0, M1, extra = _kraus_parts(u, dt)
        dy = 0.0
        if u.c is not None:
            dy = u.noise_scale * np.trace((u.c + u.c.conj().T) @ r).real * dt + dW
        M = M0 + M1 * dy
        new = M @ r @ M.conj().T + sum(w * (L @ r @ L.conj().T) for w, L in extra)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return _finish(new), J


def _finish(new: np.ndarray) -> DensityMatrix2:
    new = _hermitize(new)
    new = new / np.trace(new).real
    lo = 0.5 * (1 - math.sqrt((new[0, 0] - new[1, 1]).real ** 2 + 4 * abs(new[0, 1]) ** 2))
    if lo < -POSITIVITY_TOL:
        raise DynamicsError(f"state left the Bloch ball (min eigenvalue {lo:.3e}); reduce dt")
    return DensityMatrix2(new)


def sme_step(rho, H, params: ChannelParams, e, dW: float, measuring: bool = True, scheme: str = "kraus",
             d=DISSIPATION_OPERATOR) -> tuple[DensityMatrix2, float | None]:
    """One step of the homodyne stochastic master equation.

    The same ``dW`` drives the state and the current sample
    ``J = sqrt(gE) <e + e^dag> + dW / (sqrt(eta) dt)``.  With ``measuring``
    false only the Hamiltonian and dissipation act and ``J`` is ``None``.

    ``scheme="euler"`` is the literal Euler-Maruyama update; ``"kraus"``
    (default) applies the same first-order increment as a completely
    positive map followed by trace normalisation, so states never leave the
    Bloch ball.
    """
    if measuring and e is not None and params.eta <= 0:
        raise ValueError("a homodyne record needs eta > 0")
    u = unraveling(H, params, e, None, measuring, d=d)
    return _step_matrix(as_matrix(rho), u, params, dW, scheme)


def feedback_sme_step(rho, H, params: ChannelParams, e, f, dW: float, noise_prefactor: str = "sqrt_rate",
                      scheme: str = "kraus", d=DISSIPATION_OPERATOR) -> tuple[DensityMatrix2, float]:
    """One step of the conditioned equation with Markovian homodyne feedback.

    ``noise_prefactor`` selects the coefficient of ``dW H[sqrt(eta) e - i f/sqrt(eta)]``:
    ``"verbatim"`` uses ``gamma_E`` as printed, ``"sqrt_rate"`` uses
    ``sqrt(gamma_E)``, which reduces to :func:`sme_step` when ``f = 0``.
    Both average to the feedback master equation.
    """
    u = unraveling(H, params, e, f, True, noise_prefactor, d)
    return _step_matrix(as_matrix(rho), u, params, dW, scheme)


# -- vectorised integrator ----------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryRecord:
    seed: int
    coarse_current: np.ndarray
    fine_steps: int
    label: PureState
    final_state: DensityMatrix2
    snapshots: np.ndarray | None = field(default=None, repr=False)


@dataclass
class BatchResult:
    """Arrays for a batch of trajectories (row ``i`` is trajectory ``i``)."""

    currents: np.ndarray        # (N, n_bins)
    final_bloch: np.ndarray     # (N, 3)
    seeds: np.ndarray           # (N,) uint64
    labels: np.ndarray          # (N,) int
    fine_current: np.ndarray | None = None
    increments: np.ndarray | None = None

    def final_state(self, i: int) -> DensityMatrix2:
        return DensityMatrix2.from_bloch(self.final_bloch[i])


def _sandwich(X, Y) -> np.ndarray:
    # superoperator rho -> X rho Y^dag
    return np.kron(X, np.conj(Y))


class _Phase:
    """Pauli-transfer tables for one phase (listening or not) of the channel."""

    def __init__(self, us: Sequence[Unraveling], params: ChannelParams, scheme: str):
        dt = params.dt
        u0 = us[0]
        self.scheme = scheme
        self.monitored = u0.c is not None
        self.noise_scale = u0.noise_scale
        c = u0.c if self.monitored else np.zeros((2, 2), complex)
        self.signal_c = pauli_transfer(anticommutator_like_superop(c))[0]
        if scheme == "euler":
            self.A = np.stack([np.eye(4) + dt * pauli_transfer(u.generator()) for u in us])
            self.noise = pauli_transfer(anticommutator_like_superop(c))
        elif scheme == "kraus":
            A, B, C = [], [], []
            for u in us:
                M0, M1, extra = _kraus_parts(u, dt)
                S = _sandwich(M0, M0)
                for w, L in extra:
                    S = S + w * _sandwich(L, L)
                A.append(pauli_transfer(S))
                B.append(pauli_transfer(_sandwich(M1, M0) + _sandwich(M0, M1)))
                C.append(pauli_transfer(_sandwich(M1, M1)))
            self.A, self.B, self.C = np.stack(A), np.stack(B), np.stack(C)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")

    def tables(self, classes):
        out = {"A": _table(self.A, classes)}
        if self.scheme == "kraus":
            out["B"] = _table(self.B, classes)
            out["C"] = _table(self.C, classes)
        return out


def _table(stack: np.ndarray, classes: np.ndarray):
    # per-trajectory coefficient arrays; columns shared by every class collapse to scalars
    out = []
    for i in range(4):
        row = []
        for j in range(4):
            vals = stack[:, i, j]
            row.append(vals[0] if np.all(vals == vals[0]) else vals[classes])
        out.append(row)
    return out


def _aff(T, i, x, y, z):
    return T[i][0] + T[i][1] * x + T[i][2] * y + T[i][3] * z


def _advance(phase: _Phase, T, x, y, z, dW, dt):
    if phase.scheme == "euler":
        A = T["A"]
        nx, ny, nz = _aff(A, 1, x, y, z), _aff(A, 2, x, y, z), _aff(A, 3, x, y, z)
        if phase.monitored:
            M = phase.noise
            m0 = M[0, 0] + M[0, 1] * x + M[0, 2] * y + M[0, 3] * z
            k = phase.noise_scale * dW
            nx = nx + k * (M[1, 0] + M[1, 1] * x + M[1, 2] * y + M[1, 3] * z - m0 * x)
            ny = ny + k * (M[2, 0] + M[2, 1] * x + M[2, 2] * y + M[2, 3] * z - m0 * y)
            nz = nz + k * (M[3, 0] + M[3, 1] * x + M[3, 2] * y + M[3, 3] * z - m0 * z)
        return nx, ny, nz
    A = T["A"]
    if not phase.monitored:
        q0 = _aff(A, 0, x, y, z)
        return _aff(A, 1, x, y, z) / q0, _aff(A, 2, x, y, z) / q0, _aff(A, 3, x, y, z) / q0
    B, C = T["B"], T["C"]
    s = phase.signal_c
    dy = phase.noise_scale * (s[0] + s[1] * x + s[2] * y + s[3] * z) * dt + dW
    dy2 = dy * dy
    q = [_aff(A, i, x, y, z) + dy * _aff(B, i, x, y, z) + dy2 * _aff(C, i, x, y, z) for i in range(4)]
    return q[1] / q[0], q[2] / q[0], q[3] / q[0]


class _Kernel:
    def __init__(self, Hs, params: ChannelParams, e, f=None, noise_prefactor="sqrt_rate",
                 scheme="kraus", d=DISSIPATION_OPERATOR):
        self.params = params
        self.off = _Phase([unraveling(H, params, measuring=False, d=d) for H in Hs], params, scheme)
        self.on = _Phase([unraveling(H, params, e, f, e is not None, noise_prefactor, d) for H in Hs],
                         params, scheme)
        em = as_matrix(e) if e is not None else np.zeros((2, 2), complex)
        # row 0 of the transfer of rho -> e rho + rho e^dag is <e + e^dag>
        self.signal = pauli_transfer(anticommutator_like_superop(em))[0]
        self.current_scale = math.sqrt(params.gamma_E)
        self.record_scale = 1.0 / (math.sqrt(params.eta) * params.dt) if params.eta > 0 else math.inf


def integrate_bloch(r0: np.ndarray, kernel: _Kernel, classes: np.ndarray, window_steps: tuple[int, int],
                    increments: np.ndarray, bin_factor: int, keep_fine: bool = False,
                    snapshot_every: int | None = None):
    """Integrate Bloch vectors ``r0`` (shape ``(3, N)``) over the whole grid.

    ``increments`` has shape ``(k1 - k0, N)`` and supplies ``dW`` for each
    listened step.  Returns ``(r_final, coarse, fine, snapshots)``; currents
    are ``(N, bins)`` arrays.
    """
    params = kernel.params
    dt = params.dt
    k0, k1 = window_steps
    x, y, z = (np.array(c, dtype=float) for c in r0)
    N = x.shape[0]
    T_off = kernel.off.tables(classes)
    T_on = kernel.on.tables(classes)
    sig = kernel.signal
    coarse = np.zeros(((k1 - k0) // bin_factor, N))
    fine = np.zeros((k1 - k0, N)) if keep_fine else None
    snaps = []
    bound = (1.0 + 2.0 * POSITIVITY_TOL) ** 2
    check = kernel.on.scheme == "euler"
    for k in range(params.n_steps):
        if k0 <= k < k1:
            dW = increments[k - k0]
            J = kernel.current_scale * (sig[0] + sig[1] * x + sig[2] * y + sig[3] * z) + dW * kernel.record_scale
            coarse[(k - k0) // bin_factor] += J
            if keep_fine:
                fine[k - k0] = J
            x, y, z = _advance(kernel.on, T_on, x, y, z, dW, dt)
            if check:
                worst = float(np.max(x * x + y * y + z * z))
                if worst > bound:
                    raise DynamicsError(
                        f"positivity violated at step {k + 1} (min eigenvalue {0.5 * (1 - math.sqrt(worst)):.3e}); "
                        f"reduce dt={dt} or use the kraus scheme")
        else:
            x, y, z = _advance(kernel.off, T_off, x, y, z, 0.0, dt)
        if snapshot_every and (k + 1) % snapshot_every == 0:
            snaps.append(np.stack([x, y, z]))
    coarse /= bin_factor
    return (np.stack([x, y, z]), coarse.T, fine.T if keep_fine else None,
            np.stack(snaps) if snaps else None)


_BLOCH = {s: s.density.bloch for s in ALL_STATES}


def _prepare(initials, params, e, window, bin_factor, f, noise_prefactor, scheme):
    k0, k1 = window.step_range(params, bin_factor)
    if e is None:
        k1 = k0
    elif k1 > k0 and params.eta <= 0:
        raise ValueError("eta = 0 is only allowed without a measurement record")
    Hs = [hamiltonian_for(PureState.ZERO, params.omega), hamiltonian_for(PureState.PLUS, params.omega)]
    kernel = _Kernel(Hs, params, e, f, noise_prefactor, scheme)
    classes = np.array([0 if s.index < 2 else 1 for s in initials], dtype=np.intp)
    return k0, k1, kernel, classes


def simulate_batch(initials: Sequence[PureState], params: ChannelParams, e, window: MeasurementWindow,
                   seeds: Sequence[int], bin_factor: int = DEFAULT_BIN_FACTOR, f=None,
                   noise_prefactor: str = "sqrt_rate", scheme: str = "kraus", keep_fine: bool = False,
                   chunk: int = 2048) -> BatchResult:
    """Simulate many trajectories; trajectory ``i`` draws from ``WienerStream(seeds[i])``.

    A trajectory's output is bit-identical whichever batch or chunk it runs in.
    """
    initials = list(initials)
    seeds = np.asarray(seeds, dtype=np.uint64)
    if len(initials) != len(seeds):
        raise ValueError("one seed per trajectory required")
    k0, k1, kernel, classes = _prepare(initials, params, e, window, bin_factor, f, noise_prefactor, scheme)
    N, n_w = len(initials), k1 - k0
    currents = np.empty((N, n_w // bin_factor))
    finals = np.empty((N, 3))
    fine_all = np.empty((N, n_w)) if keep_fine else None
    incr_all = np.empty((N, n_w)) if keep_fine else None
    for lo in range(0, N, chunk):
        hi = min(N, lo + chunk)
        incr = np.empty((n_w, hi - lo))
        for j in range(lo, hi):
            incr[:, j - lo] = WienerStream(int(seeds[j]), params.dt).increments(n_w)
        r0 = np.stack([_BLOCH[s] for s in initials[lo:hi]], axis=1)
        rf, cur, fine, _ = integrate_bloch(r0, kernel, classes[lo:hi], (k0, k1), incr, bin_factor, keep_fine)
        finals[lo:hi] = rf.T
        currents[lo:hi] = cur
        if keep_fine:
            fine_all[lo:hi] = fine
            incr_all[lo:hi] = incr.T
    labels = np.array([s.index for s in initials], dtype=np.int64)
    return BatchResult(currents, finals, seeds, labels, fine_all, incr_all)


def simulate_trajectory(initial: PureState, params: ChannelParams, e, window: MeasurementWindow, seed: int,
                        bin_factor: int = DEFAULT_BIN_FACTOR, f=None, noise_prefactor: str = "sqrt_rate",
                        scheme: str = "kraus", snapshot_every: int | None = None) -> TrajectoryRecord:
    """One trajectory from ``t = 0`` to ``t_final``; Eve listens only inside ``window``.

    ``snapshot_every`` keeps the Bloch vector every that many fine steps.
    """
    k0, k1, kernel, classes = _prepare([initial], params, e, window, bin_factor, f, noise_prefactor, scheme)
    incr = WienerStream(seed, params.dt).increments(k1 - k0)[:, None]
    rf, cur, _, snaps = integrate_bloch(_BLOCH[initial][:, None], kernel, classes, (k0, k1), incr,
                                        bin_factor, snapshot_every=snapshot_every)
    return TrajectoryRecord(int(seed), cur[0], params.n_steps, initial,
                            DensityMatrix2.from_bloch(rf[:, 0]),
                            snaps[:, :, 0] if snaps is not None else None)
