"""BB84 Monte-Carlo engine, attack strategies and closed-form baselines."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dynamics
from .dynamics import ChannelParams, MeasurementWindow, derive_seed
from .qcore import (
    ALL_STATES,
    Basis,
    DensityMatrix2,
    Operator2,
    PureState,
    born_probability,
    hamiltonian_for,
    project,
)


# -- closed forms -------------------------------------------------------------------

def analytic_qber_no_attack(gamma_D_tf: float) -> float:
    """QBER of the bit-flip channel alone: ``1/4 - exp(-2 gD tf)/4``."""
    _nonneg(gamma_D_tf)
    return 0.25 - math.exp(-2.0 * gamma_D_tf) / 4.0


def analytic_accuracy_projective(gamma_D_tstar: float) -> float:
    """Eve's intercept-and-resend accuracy: ``5/8 + exp(-2 gD t*)/8``."""
    _nonneg(gamma_D_tstar)
    return 0.625 + math.exp(-2.0 * gamma_D_tstar) / 8.0


def analytic_qber_projective(gamma_D_tf: float) -> float:
    """QBER under intercept-and-resend: ``3/8 - exp(-2 gD tf)/8``, independent of t*."""
    _nonneg(gamma_D_tf)
    return 0.375 - math.exp(-2.0 * gamma_D_tf) / 8.0


def _nonneg(x):
    if not x >= 0:
        raise ValueError(f"argument must be >= 0, got {x}")


# -- protocol pieces ----------------------------------------------------------------

def alice_prepare(u1: float, u2: float) -> tuple[int, Basis, PureState]:
    """Map two uniforms to (bit, basis, state).

    Convention: bit 0 -> |0> or |+>, bit 1 -> |1> or |->.
    """
    bit = 0 if u1 < 0.5 else 1
    basis = Basis.PAULI_Z if u2 < 0.5 else Basis.PAULI_X
    return bit, basis, basis.state_for(bit)


def projective_attack(rho, rng: np.random.Generator) -> tuple[PureState, DensityMatrix2]:
    """Eve measures in a uniformly random basis and resends the outcome state."""
    basis = Basis.PAULI_Z if rng.random() < 0.5 else Basis.PAULI_X
    outcome, post = project(rho, basis, rng.random())
    return basis.state_for(outcome), post


def qber_from_final_states(final_states: dict[PureState, DensityMatrix2]) -> float:
    """Sifted error rate averaged over the four equally likely inputs."""
    missing = [s for s in ALL_STATES if s not in final_states]
    if missing:
        raise ValueError(f"missing final states for {missing}")
    keep = sum(final_states[s].fidelity_with(s.ket) for s in ALL_STATES)
    return 1.0 - keep / 4.0


# -- attacks ------------------------------------------------------------------------

@dataclass(frozen=True)
class NoAttack:
    variant = "None"


@dataclass(frozen=True)
class Projective:
    t_star: float
    variant = "Projective"


@dataclass(frozen=True)
class Continuous:
    e: Operator2
    window: MeasurementWindow | None = None
    variant = "Continuous"


@dataclass(frozen=True)
class ContinuousWithFeedback:
    e: Operator2
    f: Operator2
    window: MeasurementWindow | None = None
    variant = "ContinuousWithFeedback"


AttackStrategy = NoAttack | Projective | Continuous | ContinuousWithFeedback


def _validate_attack(attack, params: ChannelParams):
    if isinstance(attack, Projective) and not 0 <= attack.t_star <= params.t_final:
        raise ValueError(f"t*={attack.t_star} outside [0, {params.t_final}]")
    if isinstance(attack, (Continuous, ContinuousWithFeedback)) and attack.window is not None:
        attack.window.step_range(params)


# -- results ------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundRecord:
    alice_bit: int
    alice_basis: Basis
    initial_state: PureState
    bob_basis: Basis
    bob_bit: int
    eve_guess: PureState | None = None

    @property
    def sifted(self) -> bool:
        return self.alice_basis is self.bob_basis


@dataclass(frozen=True)
class ProtocolStats:
    n_total: int
    n_error: int
    n_rounds: int = 0
    n_guessed: int = 0
    n_eve_correct: int = 0
    n_eve_state_correct: int = 0

    @property
    def qber(self) -> float:
        return self.n_error / self.n_total if self.n_total else float("nan")

    @property
    def stderr_qber(self) -> float:
        q = self.qber
        return math.sqrt(q * (1 - q) / self.n_total) if self.n_total else float("nan")

    @property
    def eve_accuracy(self) -> float | None:
        """Fraction of Eve's guesses scored correct (bit-level for the projective
        attack, where a wrong-basis measurement still yields the right bit half
        the time; state-level for classifier guesses)."""
        return self.n_eve_correct / self.n_guessed if self.n_guessed else None

    @property
    def eve_state_accuracy(self) -> float | None:
        return self.n_eve_state_correct / self.n_guessed if self.n_guessed else None

    @property
    def sifting_rate(self) -> float:
        return self.n_total / self.n_rounds if self.n_rounds else float("nan")

    def __add__(self, other: "ProtocolStats") -> "ProtocolStats":
        return ProtocolStats(self.n_total + other.n_total, self.n_error + other.n_error,
                             self.n_rounds + other.n_rounds, self.n_guessed + other.n_guessed,
                             self.n_eve_correct + other.n_eve_correct,
                             self.n_eve_state_correct + other.n_eve_state_correct)


@dataclass
class ProtocolRun:
    stats: ProtocolStats
    rounds: list[RoundRecord] = field(default_factory=list)
    currents: np.ndarray | None = None


# -- engine -------------------------------------------------------------------------

_N_UNIFORMS = 6  # alice bit, alice basis, bob basis, bob outcome, eve basis, eve outcome


def _round_uniforms(master_seed: int, lo: int, hi: int) -> np.ndarray:
    u = np.empty((hi - lo, _N_UNIFORMS))
    for i in range(lo, hi):
        u[i - lo] = np.random.default_rng(derive_seed(master_seed, i)).random(_N_UNIFORMS)
    return u


def _p0_table(states: dict, basis: Basis) -> np.ndarray:
    return np.array([born_probability(states[s], basis) for s in ALL_STATES])


def run_protocol(n_rounds: int, params: ChannelParams, attack=NoAttack(), master_seed: int = 0,
                 eve_classifier: Callable[[np.ndarray], np.ndarray] | None = None,
                 bin_factor: int = dynamics.DEFAULT_BIN_FACTOR, keep_rounds: bool = False,
                 keep_currents: bool = False) -> ProtocolRun:
    """Simulate ``n_rounds`` BB84 rounds through the attacked channel.

    Round ``i`` draws all its randomness from ``derive_seed(master_seed, i)``
    (and its trajectory noise from ``derive_seed(master_seed, i, 1)``), so
    results do not depend on how rounds are grouped.  For continuous attacks
    ``eve_classifier`` maps the recorded currents ``(n, bins)`` to predicted
    state indices; without it Eve's accuracy is left undefined.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    _validate_attack(attack, params)
    u = _round_uniforms(master_seed, 0, n_rounds)
    bits = (u[:, 0] >= 0.5).astype(int)
    alice_x = u[:, 1] >= 0.5
    labels = np.where(alice_x, 2 + bits, bits)
    bob_x = u[:, 2] >= 0.5
    n = n_rounds
    guesses = np.full(n, -1)
    currents = None
    gD, tf, dt = params.gamma_D, params.t_final, params.dt
    H = {s: hamiltonian_for(s, params.omega) for s in ALL_STATES}

    if isinstance(attack, NoAttack):
        finals = dynamics.ensemble_final_states(params)
        p0 = np.stack([_p0_table(finals, Basis.PAULI_Z), _p0_table(finals, Basis.PAULI_X)])[bob_x.astype(int), labels]
    elif isinstance(attack, Projective):
        ts = attack.t_star
        jumps = [(gD, dynamics.DISSIPATION_OPERATOR)]
        mid = {s: dynamics.lindblad_solve(s.density, H[s], jumps, ts, dt) for s in ALL_STATES}
        # state at Bob for (Alice's input, Eve's collapsed state)
        after = {(s, c): dynamics.lindblad_solve(c.density, H[s], jumps, tf - ts, dt)
                 for s in ALL_STATES for c in ALL_STATES}
        eve_x = u[:, 4] >= 0.5
        eve_p0 = np.stack([_p0_table(mid, Basis.PAULI_Z), _p0_table(mid, Basis.PAULI_X)])[eve_x.astype(int), labels]
        eve_bit = (u[:, 5] >= eve_p0).astype(int)
        guesses = np.where(eve_x, 2 + eve_bit, eve_bit)
        p0_tab = np.empty((2, 4, 4))
        for si, s in enumerate(ALL_STATES):
            for ci, c in enumerate(ALL_STATES):
                p0_tab[0, si, ci] = born_probability(after[s, c], Basis.PAULI_Z)
                p0_tab[1, si, ci] = born_probability(after[s, c], Basis.PAULI_X)
        p0 = p0_tab[bob_x.astype(int), labels, guesses]
    elif isinstance(attack, (Continuous, ContinuousWithFeedback)):
        window = attack.window or MeasurementWindow.full(params)
        f = attack.f if isinstance(attack, ContinuousWithFeedback) else None
        seeds = [derive_seed(master_seed, i, 1) for i in range(n)]
        res = dynamics.simulate_batch([PureState.from_index(k) for k in labels], params, attack.e, window,
                                      seeds, bin_factor, f=f)
        x, z = res.final_bloch[:, 0], res.final_bloch[:, 2]
        # outcome 0 probability: (1 + z)/2 in Z, (1 + x)/2 in X
        p0 = np.clip(0.5 * (1 + np.where(bob_x, x, z)), 0.0, 1.0)
        currents = res.currents
        if eve_classifier is not None:
            guesses = np.asarray(eve_classifier(res.currents), dtype=int)
    else:
        raise TypeError(f"unknown attack {attack!r}")

    bob_bits = (u[:, 3] >= p0).astype(int)
    sifted = alice_x == bob_x
    errors = sifted & (bob_bits != bits)
    guessed = guesses >= 0
    state_hit = guessed & (guesses == labels)
    # states 0,2 carry bit 0 and states 1,3 bit 1
    hit = guessed & (guesses % 2 == bits) if isinstance(attack, Projective) else state_hit
    stats = ProtocolStats(int(sifted.sum()), int(errors.sum()), n, int(guessed.sum()), int(hit.sum()),
                          int(state_hit.sum()))
    rounds = []
    if keep_rounds:
        for i in range(n):
            rounds.append(RoundRecord(
                int(bits[i]), Basis.PAULI_X if alice_x[i] else Basis.PAULI_Z, PureState.from_index(labels[i]),
                Basis.PAULI_X if bob_x[i] else Basis.PAULI_Z, int(bob_bits[i]),
                PureState.from_index(guesses[i]) if guesses[i] >= 0 else None))
    return ProtocolRun(stats, rounds, currents if keep_currents else None)


def describe_attack(attack) -> str:
    if isinstance(attack, Projective):
        return f"Projective(t*={attack.t_star:g})"
    if isinstance(attack, Continuous):
        w = attack.window
        return f"Continuous({attack.e.label}, window={'full' if w is None else f'[{w.t_start:g},{w.t_end:g}]'})"
    if isinstance(attack, ContinuousWithFeedback):
        return f"ContinuousWithFeedback({attack.e.label}, {attack.f.label})"
    return "None"


SUMMARY_FIELDS = ("attack", "gamma_D", "gamma_E", "eta", "omega", "t_final", "dt", "n_rounds", "n_sifted",
                  "qber", "stderr_qber", "eve_accuracy")


def summary_row(stats: ProtocolStats, attack, params: ChannelParams) -> dict:
    acc = stats.eve_accuracy
    return {
        "attack": describe_attack(attack), "gamma_D": params.gamma_D, "gamma_E": params.gamma_E,
        "eta": params.eta, "omega": params.omega, "t_final": params.t_final, "dt": params.dt,
        "n_rounds": stats.n_rounds, "n_sifted": stats.n_total, "qber": f"{stats.qber:.6f}",
        "stderr_qber": f"{stats.stderr_qber:.6f}", "eve_accuracy": "" if acc is None else f"{acc:.6f}",
    }


def write_summary_csv(path, rows: Sequence[dict], header_lines: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        w.writerows(rows)
