import math

import numpy as np
import pytest

import oracles
from dlca.dynamics import ChannelParams, MeasurementWindow
from dlca.experiments import (
    CANDIDATE_ANGLES,
    MissingPrerequisite,
    OBJECTIVES,
    AngleSchedule,
    SweepResult,
    argmin_lambda,
    deterministic_qber,
    feedback_heatmap,
    lambda_curve,
    lambda_ratio,
    optimized_angle_traces,
    projective_qber_trace,
    qber_heatmap,
    read_rows_csv,
    summary_table,
    sweep_theta,
    window_in_units,
    write_matrix_csv,
    write_rows_csv,
)

P = ChannelParams()


def test_lambda_ratio_example():
    assert lambda_ratio(0.37, 0.904) == pytest.approx(0.409, abs=5e-4)
    with pytest.raises(ZeroDivisionError):
        lambda_ratio(0.3, 0.0)


def test_lambda_curve_and_argmin():
    grid = np.linspace(0, 2 * math.pi, 100, endpoint=False)
    acc = 0.5 + 0.1 * np.cos(grid - CANDIDATE_ANGLES[2])
    sw = SweepResult("theta", grid, np.full(100, 0.3), acc[:, None])
    assert np.allclose(lambda_curve(sw), 0.3 / acc)
    assert abs(argmin_lambda(sw) - CANDIDATE_ANGLES[2]) < 2 * math.pi / 100
    with pytest.raises(ZeroDivisionError):
        lambda_curve(SweepResult("theta", grid, np.full(100, 0.3), np.zeros((100, 1))))


def test_sweep_rows_statistics():
    sw = SweepResult("theta", [0.0, 1.0], [0.3, 0.4], [[0.5, 0.7], [0.4, 0.4]])
    rows = list(sw.rows())
    assert rows[0]["acc_mean"] == pytest.approx(0.6) and rows[0]["acc_std"] == pytest.approx(0.1)
    assert rows[1]["lambda"] == pytest.approx(1.0)
    assert np.all(np.isnan(SweepResult("theta", [0.0], [0.3], np.empty((1, 0))).acc_mean))


def test_deterministic_qber_matches_oracle():
    w = window_in_units(P, 0.1, 0.4)
    assert deterministic_qber(P, 1.86 * math.pi, w) == pytest.approx(oracles.windowed_qber(1.86 * math.pi, 0.1, 0.4),
                                                                     abs=1e-9)
    assert deterministic_qber(P, None) == pytest.approx(0.25 - math.exp(-6) / 4, abs=1e-10)


@pytest.fixture(scope="module")
def heat():
    thetas = np.linspace(0, 2 * math.pi, 8, endpoint=False)
    times = np.round(np.linspace(0, 3, 16), 3)
    return thetas, times, qber_heatmap(thetas, times, P)


def test_heatmap_shape_and_start(heat):
    thetas, times, M = heat
    assert M.shape == (8, 16)
    assert np.allclose(M[:, 0], 0.0, atol=1e-12)


def test_heatmap_rows_are_monotone(heat):
    assert np.all(np.diff(heat[2], axis=1) > -1e-9)


def test_heatmap_is_pi_periodic_in_theta(heat):
    M = heat[2]
    # e -> -e leaves the averaged dynamics unchanged
    assert np.allclose(M[:4], M[4:], atol=1e-12)


def test_heatmap_end_column_matches_full_window_qber(heat):
    thetas, _, M = heat
    for th, q in zip(thetas, M[:, -1]):
        assert q == pytest.approx(deterministic_qber(P, th), abs=1e-9)


def test_heatmap_rejects_off_grid_times():
    with pytest.raises(ValueError):
        qber_heatmap([0.0], [0.00015], P)


def test_feedback_heatmap_values_and_period():
    th = 1.86 * math.pi
    M = feedback_heatmap([th], [0.94 * math.pi, 0.94 * math.pi + 2 * math.pi], P)
    assert M[0, 0] == pytest.approx(oracles.windowed_qber(th, 0.1, 0.4, phi=0.94 * math.pi), abs=1e-9)
    assert M[0, 0] == pytest.approx(M[0, 1], abs=1e-12)
    with pytest.raises(ValueError):
        feedback_heatmap([th], [0.0], P.replace(eta=0.0))


def test_min_qber_schedule_is_consistent_with_direct_solve():
    sched, times, trace = optimized_angle_traces("min_qber", P, n_grid=16)
    assert len(sched.thetas) == 10 and sched.edges[-1] == pytest.approx(3.0)
    assert times[0] == 0 and times[-1] == pytest.approx(3.0)
    assert np.all(np.diff(times) > 0) and len(trace) == len(times)
    if len(set(sched.thetas)) == 1:
        assert trace[-1] == pytest.approx(deterministic_qber(P, sched.thetas[0]), abs=1e-9)
    # greedy choice: nothing on the grid beats the chosen angle on the first segment
    first = trace[times <= 0.3 + 1e-12][-1]
    p1 = P.replace(t_final=0.3)
    assert all(first <= deterministic_qber(p1, th) + 1e-12 for th in 2 * math.pi * np.arange(16) / 16)


def test_accuracy_objectives_need_a_curve():
    for obj in ("max_accuracy", "min_lambda"):
        with pytest.raises(MissingPrerequisite):
            optimized_angle_traces(obj, P)
    with pytest.raises(ValueError):
        optimized_angle_traces("nope", P)
    with pytest.raises(MissingPrerequisite):
        optimized_angle_traces("max_accuracy", P, accuracy_curve=([0.0, 1.0], [0.5, np.nan]))


def test_max_accuracy_schedule_follows_the_curve():
    grid = 2 * math.pi * np.arange(8) / 8
    acc = np.full(8, 0.3)
    acc[5] = 0.9
    sched, _, _ = optimized_angle_traces("max_accuracy", P, (grid, acc), n_grid=8)
    assert set(sched.thetas) == {grid[5]}
    assert sched.accuracy_source != "none"
    assert sched.theta_at(0.31) == grid[5]


def test_schedule_validation():
    with pytest.raises(ValueError):
        AngleSchedule(0.3, (0.0,), "bad")
    with pytest.raises(ValueError):
        optimized_angle_traces("min_qber", P, segment=0.7)
    assert set(OBJECTIVES) == {"min_qber", "max_accuracy", "min_lambda"}


def test_projective_trace_is_the_closed_form():
    t = np.linspace(0, 3, 5)
    assert np.allclose(projective_qber_trace(t), 0.375 - np.exp(-2 * t) / 8)


def test_summary_table():
    with pytest.raises(MissingPrerequisite):
        summary_table(P)
    rows = summary_table(P, {"continuous_sigma_z": (0.36, 0.01), "windowed_optimal": (0.3, 0.02)})
    by = {r["scheme"]: r for r in rows}
    assert float(by["no dissipation, no attack"]["qber"]) == 0.0
    assert float(by["dissipation only"]["qber"]) == pytest.approx(0.24938, abs=6e-6)
    proj = next(r for r in rows if r["scheme"].startswith("projective"))
    assert float(proj["qber"]) == pytest.approx(0.37469, abs=6e-6)
    assert float(proj["accuracy"]) == pytest.approx(0.625 + math.exp(-0.6) / 8, abs=1e-6)
    assert float(by["continuous sigma_z"]["qber"]) == pytest.approx(0.498760623911667, abs=1e-6)
    assert by["continuous sigma_z"]["accuracy"] == "0.3600"
    assert any("not computed" in r["scheme"] for r in rows)


def test_small_sweep_is_reproducible_across_workers():
    p = ChannelParams(t_final=0.3)
    grid = [0.5, 2.0]
    a = sweep_theta(grid, p, n_train=60, n_test=40, retrains=2, master_seed=3)
    b = sweep_theta(grid, p, n_train=60, n_test=40, retrains=2, master_seed=3, workers=2)
    assert a.accuracies.shape == (2, 2)
    assert np.array_equal(a.accuracies, b.accuracies)
    assert np.allclose(a.qber, [deterministic_qber(p, th) for th in grid])
    with pytest.raises(ValueError):
        sweep_theta([7.0], p, n_train=10, n_test=10)


def test_csv_writers(tmp_path):
    meta = {"version": "x", "master_seed": 1}
    write_matrix_csv(tmp_path / "m.csv", "theta", [0.0, 1.0], "t", [0.0, 0.5, 1.0], np.ones((2, 3)), meta)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[:2] == ["# version: x", "# master_seed: 1"]
    assert lines[2].startswith("theta\\t,")
    assert len(lines) == 5
    write_rows_csv(tmp_path / "r.csv", [{"a": 1}, {"a": 2, "b": 3}], meta)
    assert read_rows_csv(tmp_path / "r.csv") == [{"a": "1", "b": ""}, {"a": "2", "b": "3"}]
