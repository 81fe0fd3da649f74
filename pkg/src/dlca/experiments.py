"""Sweeps and tables behind the QBER/accuracy trade-off studies.

Deterministic quantities (QBER maps, feedback maps, angle schedules) come
from the unconditioned master equation.  Accuracies come from training the
LSTM on freshly generated datasets; every grid point draws its seeds from
``derive_seed(master_seed, index, ...)`` so results do not depend on the
number of workers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .bb84 import (
    analytic_accuracy_projective,
    analytic_qber_no_attack,
    analytic_qber_projective,
    qber_from_final_states,
)
from .classifier import TrainConfig, evaluate, train
from .datasets import fit_standardizer, generate_dataset, preprocess, split
from .dynamics import (
    ChannelParams,
    MeasurementWindow,
    attack_generator,
    derive_seed,
    ensemble_final_states,
    mean_evolution,
    propagate,
)
from .qcore import ALL_STATES, DensityMatrix2, SIGMA_Z, feedback_operator, hamiltonian_for, measurement_operator

CANDIDATE_ANGLES = (0.16 * math.pi, 0.87 * math.pi, 1.15 * math.pi, 1.86 * math.pi)
OPTIMAL_THETA = 1.86 * math.pi
DEFAULT_WINDOW = (0.1, 0.4)  # start and duration, in units of 1/gamma_D
SEGMENT = 0.3              # schedule segment length, in units of 1/gamma_D
OBJECTIVES = ("min_qber", "max_accuracy", "min_lambda")


class MissingPrerequisite(LookupError):
    """A table or schedule needs results that have not been produced yet."""


def window_in_units(params: ChannelParams, start: float, duration: float) -> MeasurementWindow:
    """Window given in gamma_D-scaled time."""
    return MeasurementWindow(start / params.gamma_D, duration / params.gamma_D)


def deterministic_qber(params: ChannelParams, theta: float | None, window: MeasurementWindow | None = None,
                       phi: float | None = None) -> float:
    """Ensemble QBER at ``t_final``; ``theta=None`` means no eavesdropper."""
    e = measurement_operator(theta) if theta is not None else None
    f = feedback_operator(phi) if phi is not None else None
    return qber_from_final_states(ensemble_final_states(params, e, window, f))


def lambda_ratio(qber: float, accuracy: float) -> float:
    if accuracy == 0:
        raise ZeroDivisionError("lambda is undefined for zero accuracy")
    return qber / accuracy


# -- accuracy sweeps ----------------------------------------------------------------

@dataclass
class SweepResult:
    axis_name: str
    axis: np.ndarray
    qber: np.ndarray
    accuracies: np.ndarray          # (points, retrains); empty second axis if untrained
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.qber = np.asarray(self.qber, dtype=float)
        self.accuracies = np.asarray(self.accuracies, dtype=float).reshape(len(self.axis), -1)

    @property
    def acc_mean(self) -> np.ndarray:
        if self.accuracies.shape[1] == 0:
            return np.full(len(self.axis), np.nan)
        return self.accuracies.mean(axis=1)

    @property
    def acc_std(self) -> np.ndarray:
        if self.accuracies.shape[1] < 2:
            return np.full(len(self.axis), np.nan)
        return self.accuracies.std(axis=1)

    @property
    def lam(self) -> np.ndarray:
        return lambda_curve(self)

    def rows(self):
        for j, x in enumerate(self.axis):
            yield {self.axis_name: x, "qber": self.qber[j], "acc_mean": self.acc_mean[j],
                   "acc_std": self.acc_std[j], "lambda": self.lam[j],
                   **{f"acc_{r}": a for r, a in enumerate(self.accuracies[j])}}


def lambda_curve(sweep: SweepResult) -> np.ndarray:
    """Pointwise ``qber / mean accuracy``; NaN where the accuracy is missing."""
    A = sweep.acc_mean
    if np.any(A == 0):
        raise ZeroDivisionError("lambda is undefined where the accuracy is zero")
    return sweep.qber / A


def argmin_lambda(sweep: SweepResult, candidates: Sequence[float] = CANDIDATE_ANGLES) -> float:
    """Axis value with the smallest lambda among the points nearest to ``candidates``."""
    lam = lambda_curve(sweep)
    idx = [int(np.argmin(np.abs(_wrap(sweep.axis - c)))) for c in candidates]
    return float(sweep.axis[min(idx, key=lambda j: lam[j])])


def _wrap(d):
    return (np.asarray(d) + math.pi) % (2 * math.pi) - math.pi


@dataclass(frozen=True)
class AccuracyJob:
    params: ChannelParams
    theta: float
    window: MeasurementWindow
    n_train: int
    n_test: int
    retrains: int
    seed: int
    batch_size: int = 32
    epochs: int = 1


def run_accuracy_job(job: AccuracyJob) -> tuple[float, np.ndarray]:
    """QBER plus one test accuracy per retrain for a single setting."""
    n = job.n_train + job.n_test
    ds = generate_dataset(n, job.params, job.theta, job.window, master_seed=derive_seed(job.seed, 0))
    tr, te = split(ds, job.n_train / n, seed=derive_seed(job.seed, 1))
    s = fit_standardizer(tr)
    tr, te = preprocess(tr, s), preprocess(te, s)
    accs = []
    for r in range(job.retrains):
        cfg = TrainConfig(epochs=job.epochs, batch_size=job.batch_size,
                          shuffle_seed=derive_seed(job.seed, 2, r), init_seed=derive_seed(job.seed, 3, r))
        accs.append(evaluate(train(tr, cfg).model, te).accuracy)
    return deterministic_qber(job.params, job.theta, job.window), np.array(accs)


def _run_jobs(jobs: Sequence[AccuracyJob], workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_accuracy_job, jobs))
    return [run_accuracy_job(j) for j in jobs]


def sweep_theta(theta_grid, params: ChannelParams, window: MeasurementWindow | None = None,
                n_train: int = 20_000, n_test: int = 5_000, retrains: int = 4, master_seed: int = 0,
                workers: int = 1, batch_size: int = 32) -> SweepResult:
    """Accuracy (over ``retrains`` trainings) and QBER for each measurement angle."""
    grid = np.asarray(theta_grid, dtype=float)
    if np.any(grid < 0) or np.any(grid >= 2 * math.pi):
        raise ValueError("theta grid must lie in [0, 2 pi)")
    window = window or MeasurementWindow.full(params)
    jobs = [AccuracyJob(params, float(th), window, n_train, n_test, retrains, derive_seed(master_seed, j),
                        batch_size) for j, th in enumerate(grid)]
    out = _run_jobs(jobs, workers)
    return SweepResult("theta", grid, [q for q, _ in out], np.array([a for _, a in out]),
                       _meta(params, master_seed, window=window, n_train=n_train, n_test=n_test,
                             retrains=retrains, batch_size=batch_size))


def accuracy_vs_window(delta_t_grid, params: ChannelParams, theta: float = OPTIMAL_THETA,
                       t_start: float | None = None, n_train: int = 20_000, n_test: int = 5_000,
                       retrains: int = 4, master_seed: int = 0, workers: int = 1) -> SweepResult:
    """Accuracy and QBER as the listening window ``[t_start, t_start + dt]`` grows."""
    t0 = DEFAULT_WINDOW[0] / params.gamma_D if t_start is None else t_start
    grid = np.asarray(delta_t_grid, dtype=float)
    jobs = [AccuracyJob(params, theta, MeasurementWindow(t0, float(d)), n_train, n_test, retrains,
                        derive_seed(master_seed, j)) for j, d in enumerate(grid)]
    out = _run_jobs(jobs, workers)
    return SweepResult("delta_t", grid, [q for q, _ in out], np.array([a for _, a in out]),
                       _meta(params, master_seed, theta=theta, t_start=t0, n_train=n_train, n_test=n_test,
                             retrains=retrains))


def bayes_accuracy_curve(theta_grid, params: ChannelParams, window: MeasurementWindow | None = None,
                         n: int = 4000, master_seed: int = 0) -> SweepResult:
    """Accuracy of the exact-likelihood classifier per angle (an upper bound for any network)."""
    from .bayes_filter import BayesFilterClassifier

    grid = np.asarray(theta_grid, dtype=float)
    window = window or MeasurementWindow.full(params)
    qb, acc = [], []
    for j, th in enumerate(grid):
        ds = generate_dataset(n, params, float(th), window, master_seed=derive_seed(master_seed, j))
        acc.append([evaluate(BayesFilterClassifier(params, float(th), window), ds).accuracy])
        qb.append(deterministic_qber(params, float(th), window))
    return SweepResult("theta", grid, qb, np.array(acc),
                       _meta(params, master_seed, window=window, n=n, classifier="bayes_optimal"))


# -- deterministic maps -------------------------------------------------------------

def _steps_of(times, params: ChannelParams) -> list[int]:
    out = []
    for t in times:
        k = round(t / params.dt)
        if abs(k * params.dt - t) > 1e-9 or not 0 <= k <= params.n_steps:
            raise ValueError(f"time {t} is not a grid point of [0, {params.t_final}] with dt={params.dt}")
        out.append(int(k))
    return out


def qber_heatmap(theta_grid, time_grid, params: ChannelParams) -> np.ndarray:
    """QBER if Bob received the qubit at each time, with Eve listening since t=0.

    Returns an array of shape ``(len(theta_grid), len(time_grid))``.
    """
    steps = _steps_of(time_grid, params)
    p = params.replace(t_final=max(steps) * params.dt) if steps else params
    rho0 = [s.density for s in ALL_STATES]
    Hs = [hamiltonian_for(s, params.omega) for s in ALL_STATES]
    out = np.empty((len(theta_grid), len(steps)))
    for i, th in enumerate(theta_grid):
        _, snaps = mean_evolution(rho0, Hs, p, measurement_operator(th), MeasurementWindow.full(p), None, steps)
        for j, k in enumerate(steps):
            out[i, j] = qber_from_final_states(dict(zip(ALL_STATES, snaps[k])))
    return out


def feedback_heatmap(theta_grid, phi_grid, params: ChannelParams,
                     window: MeasurementWindow | None = None) -> np.ndarray:
    """QBER from the feedback master equation, shape ``(len(theta_grid), len(phi_grid))``."""
    if params.eta <= 0:
        raise ValueError("feedback requires eta > 0")
    window = window or window_in_units(params, *DEFAULT_WINDOW)
    return np.array([[deterministic_qber(params, th, window, ph) for ph in phi_grid] for th in theta_grid])


# -- piecewise-optimised angle schedules --------------------------------------------

@dataclass(frozen=True)
class AngleSchedule:
    segment: float
    thetas: tuple[float, ...]
    objective: str
    accuracy_source: str = "none"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")

    def theta_at(self, t: float) -> float:
        return self.thetas[min(int(t / self.segment + 1e-9), len(self.thetas) - 1)]

    @property
    def edges(self) -> np.ndarray:
        return self.segment * np.arange(len(self.thetas) + 1)


def _accuracy_lookup(accuracy_curve) -> Callable[[float], float]:
    if isinstance(accuracy_curve, SweepResult):
        grid, vals = accuracy_curve.axis, accuracy_curve.acc_mean
    else:
        grid, vals = (np.asarray(a, dtype=float) for a in accuracy_curve)
    if np.any(~np.isfinite(vals)):
        raise MissingPrerequisite("accuracy curve has missing values")

    def look(th):
        return float(vals[int(np.argmin(np.abs(_wrap(grid - th))))])
    return look


def optimized_angle_traces(objective: str, params: ChannelParams, accuracy_curve=None, n_grid: int = 64,
                           segment: float | None = None, trace_every: int = 10):
    """Greedy per-segment angle choice.

    Each segment of length ``0.3/gamma_D`` picks the angle on an ``n_grid``
    grid that minimises the QBER at the segment end (``min_qber``), maximises
    the static accuracy curve (``max_accuracy``) or minimises their ratio
    (``min_lambda``).  The accuracy curve (a :class:`SweepResult` or a
    ``(grid, values)`` pair) is a static proxy: the network is not retrained
    per segment.  Returns ``(schedule, times, qber_trace)``.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    seg = SEGMENT / params.gamma_D if segment is None else segment
    n_seg_steps = round(seg / params.dt)
    if n_seg_steps <= 0 or params.n_steps % n_seg_steps:
        raise ValueError(f"segment {seg} does not tile t_final={params.t_final}")
    look = None
    if objective != "min_qber":
        if accuracy_curve is None:
            raise MissingPrerequisite(f"objective {objective} needs an accuracy curve (run sweep_theta first)")
        look = _accuracy_lookup(accuracy_curve)
    grid = 2 * math.pi * np.arange(n_grid) / n_grid
    Hs = [hamiltonian_for(s, params.omega) for s in ALL_STATES]
    V = np.array([s.density.matrix.reshape(4) for s in ALL_STATES])
    gens = {th: [attack_generator(H, params, measurement_operator(th)) for H in Hs] for th in grid}
    thetas, trace, times = [], [_qber_of(V)], [0.0]
    for _ in range(params.n_steps // n_seg_steps):
        best, best_score, best_V = None, math.inf, None
        for th in grid:
            W = np.array([propagate(V[i], [(gens[th][i], n_seg_steps)], params.dt)[0] for i in range(4)])
            q = _qber_of(W)
            score = {"min_qber": q, "max_accuracy": -look(th) if look else 0.0,
                     "min_lambda": q / look(th) if look else 0.0}[objective]
            if score < best_score - 1e-15:
                best, best_score, best_V = th, score, W
        marks = list(range(trace_every, n_seg_steps + 1, trace_every))
        snaps = [propagate(V[i], [(gens[best][i], n_seg_steps)], params.dt, marks)[1] for i in range(4)]
        t0 = len(thetas) * seg
        for m in marks:
            trace.append(_qber_of(np.array([snaps[i][m] for i in range(4)])))
            times.append(t0 + m * params.dt)
        thetas.append(float(best))
        V = best_V
    src = "none" if look is None else "static accuracy curve proxy"
    return AngleSchedule(seg, tuple(thetas), objective, src), np.array(times), np.array(trace)


def _qber_of(V: np.ndarray) -> float:
    return qber_from_final_states({s: DensityMatrix2(V[i].reshape(2, 2), check=False)
                                   for i, s in enumerate(ALL_STATES)})


def projective_qber_trace(times) -> np.ndarray:
    return np.array([analytic_qber_projective(t) for t in times])


# -- summary table ------------------------------------------------------------------

TIME_SHIFT_NOTE = {"scheme": "Time-Shift (literature, not computed)", "qber": "", "qber_increase": "0.01-0.02",
                   "accuracy": "0.60-0.70", "source": "static annotation"}


def summary_table(params: ChannelParams, accuracies: dict | None = None, t_star: float = 0.3) -> list[dict]:
    """Rows comparing the attack schemes.

    ``accuracies`` maps ``"continuous_sigma_z"`` and ``"windowed_optimal"`` to
    ``(mean, std)`` from trained classifiers; both are required.
    """
    accuracies = accuracies or {}
    missing = [k for k in ("continuous_sigma_z", "windowed_optimal") if k not in accuracies]
    if missing:
        raise MissingPrerequisite(f"summary needs trained accuracies for {missing}")
    x = params.gamma_D * params.t_final
    base = deterministic_qber(params, None)
    win = window_in_units(params, *DEFAULT_WINDOW)
    q_win = deterministic_qber(params, OPTIMAL_THETA, win)

    def acc(k):
        m, s = accuracies[k]
        return f"{m:.4f}", f"{s:.4f}"

    rows = [
        {"scheme": "no dissipation, no attack",
         "qber": f"{deterministic_qber(params.replace(gamma_D=0.0), None):.6f}", "accuracy": "n/a"},
        {"scheme": "dissipation only", "qber": f"{base:.6f}", "qber_asymptotic": "0.25",
         "qber_closed_form": f"{analytic_qber_no_attack(x):.6f}", "accuracy": "n/a"},
        {"scheme": f"projective (gamma_D t*={t_star:g})", "qber": f"{analytic_qber_projective(x):.6f}",
         "accuracy": f"{analytic_accuracy_projective(t_star):.6f}"},
        {"scheme": "continuous sigma_z", "qber": f"{deterministic_qber(params, math.pi / 2):.6f}",
         "accuracy": acc("continuous_sigma_z")[0], "accuracy_std": acc("continuous_sigma_z")[1]},
        {"scheme": "windowed theta=1.86pi [0.1, 0.5]", "qber": f"{q_win:.6f}",
         "qber_increase": f"{q_win - base:.6f}", "accuracy": acc("windowed_optimal")[0],
         "accuracy_std": acc("windowed_optimal")[1]},
        dict(TIME_SHIFT_NOTE),
    ]
    return rows


# -- output -------------------------------------------------------------------------

def _meta(params: ChannelParams, master_seed: int, **extra) -> dict:
    return {"version": __version__, "params": vars(params).copy(), "master_seed": master_seed, **extra}


def header_lines(meta: dict) -> list[str]:
    return [f"{k}: {v}" for k, v in meta.items()]


def write_matrix_csv(path, row_name: str, rows, col_name: str, cols, M, meta: dict):
    """Matrix CSV with a commented provenance header; first column holds the row axis."""
    with open(path, "w", newline="") as fh:
        for line in header_lines(meta):
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow([f"{row_name}\\{col_name}"] + [repr(float(c)) for c in cols])
        for r, vals in zip(rows, np.asarray(M)):
            w.writerow([repr(float(r))] + [repr(float(v)) for v in vals])


def write_rows_csv(path, rows: Sequence[dict], meta: dict):
    fields: list[str] = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as fh:
        for line in header_lines(meta):
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))
