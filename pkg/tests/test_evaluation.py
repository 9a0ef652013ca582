import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uwbslam.ekf import POINT, TAG, LandmarkRecord, SlamState
from uwbslam.evaluation import (
    MetricsReport,
    TrajectoryPair,
    Unalignable,
    align_trajectories,
    apply_transform,
    evaluate,
    landmark_error,
    read_residuals_csv,
    residuals_csv,
    rms_ate,
    run_ablation,
)
from uwbslam.scenario import parse_scenario
from uwbslam.sim import WorldModel


def pair_from_xy(est, gt):
    est, gt = np.asarray(est, float), np.asarray(gt, float)
    z = np.zeros((len(est), 1))
    return TrajectoryPair(np.arange(len(est)), np.hstack([est, z]), np.hstack([gt, z]))


def rotate(xy, ang, about):
    c, s = math.cos(ang), math.sin(ang)
    return (np.asarray(xy) - about) @ np.array([[c, s], [-s, c]]) + about


GT = np.column_stack([np.linspace(0, 5, 30), np.sin(np.linspace(0, 3, 30))])


def test_align_identical_is_identity():
    T = align_trajectories(pair_from_xy(GT, GT))
    np.testing.assert_allclose(T.matrix, np.eye(3), atol=1e-12)


def test_align_recovers_shift():
    pair = pair_from_xy(GT + [1, 2], GT)
    T = align_trajectories(pair)
    np.testing.assert_allclose(T.translation, [-1, -2], atol=1e-12)
    assert rms_ate(pair, T) < 1e-12


def test_align_recovers_rotation():
    est = rotate(GT, math.radians(30), GT.mean(axis=0))
    pair = pair_from_xy(est, GT)
    T = align_trajectories(pair)
    assert math.degrees(T.rotation) == pytest.approx(-30.0, abs=1e-9)
    assert rms_ate(pair, T) < 1e-9


def test_align_degenerate():
    with pytest.raises(Unalignable):
        align_trajectories(pair_from_xy(np.zeros((5, 2)), GT[:5]))
    with pytest.raises(ValueError):
        pair_from_xy(GT[:1], GT[:1])
    with pytest.raises(ValueError):
        TrajectoryPair([0, 1], np.zeros((2, 3)), np.zeros((3, 3)))


def test_rms_examples():
    assert rms_ate(pair_from_xy(GT, GT)) == 0.0
    shifted = pair_from_xy(GT + 0.1, GT)
    assert rms_ate(shifted, align_trajectories(shifted)) < 1e-12
    gt = np.column_stack([np.linspace(0, 5, 40), np.zeros(40)])
    # +, -, -, + keeps the lateral error uncorrelated with x, so no rotation helps
    lateral = 0.1 * np.tile([1.0, -1.0, -1.0, 1.0], 10)
    pair = pair_from_xy(gt + np.column_stack([np.zeros(40), lateral]), gt)
    assert rms_ate(pair) == pytest.approx(0.1, abs=1e-12)
    assert rms_ate(pair, align_trajectories(pair)) == pytest.approx(0.1, abs=1e-9)


@given(st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50), st.integers(0, 2**31))
def test_rms_invariant_under_common_rigid_motion(ang, tx, ty, seed):
    rng = np.random.default_rng(seed)
    est = GT + rng.normal(0, 0.1, GT.shape)
    base = pair_from_xy(est, GT)
    moved = pair_from_xy(rotate(est, ang, 0) + [tx, ty], rotate(GT, ang, 0) + [tx, ty])
    a = rms_ate(base, align_trajectories(base))
    b = rms_ate(moved, align_trajectories(moved))
    assert b == pytest.approx(a, abs=1e-9)
    # alignment never does worse than leaving the estimate where it is
    assert a <= rms_ate(base) + 1e-12


def map_state(points, kinds, ext_ids):
    mu = np.concatenate([[0, 0, 0], np.asarray(points, float).ravel()])
    recs = [LandmarkRecord(k, kinds[k], 3 + 2 * k, ext_ids[k]) for k in range(len(points))]
    return SlamState(mu, np.zeros((len(mu), len(mu))), recs)


WORLD = WorldModel(features=[[1, 1], [4, -1]], tags={0: [2, 2], 1: [5, 0]})


def test_landmark_error_examples():
    perfect = map_state([[1, 1], [4, -1], [2, 2], [5, 0]], [POINT, POINT, TAG, TAG], [None, None, 0, 1])
    errs = landmark_error(perfect, WORLD)
    assert [e.error for e in errs] == [0, 0, 0, 0] and not any(e.spurious for e in errs)
    assert errs[2].matched == "tag:0"
    spur = map_state([[1, 1], [20, 20]], [POINT, POINT], [None, None])
    errs = landmark_error(spur, WORLD)
    assert errs[1].spurious and not errs[0].spurious
    off = map_state([[1.05, 1], [4, -1.05], [2, 2.05]], [POINT, POINT, TAG], [None, None, 0])
    np.testing.assert_allclose([e.error for e in landmark_error(off, WORLD)], 0.05, atol=1e-12)


def test_landmark_error_applies_transform():
    pair = pair_from_xy(GT + [1, 0], GT)
    T = align_trajectories(pair)
    st_ = map_state([[3, 2]], [TAG], [0])
    assert landmark_error(st_, WORLD, T)[0].error == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(apply_transform(T, [3, 2]), [[2, 2]], atol=1e-12)


def test_report_and_csv_round_trip():
    traj = [(float(k), np.array([x, y, 0.0])) for k, (x, y) in enumerate(GT + 0.01)]
    truth = {float(k): np.array([x, y, 0.0]) for k, (x, y) in enumerate(GT)}
    st_ = map_state([[2, 2.1]], [TAG], [0])
    report, pair, T = evaluate(traj, truth, st_, WORLD, mode="full", seed=3, config_hash="abc")
    back = MetricsReport.from_json(report.to_json())
    assert back == report
    table = read_residuals_csv(residuals_csv(pair, T))
    np.testing.assert_array_equal(table["t"], pair.t)
    assert math.sqrt(np.mean(table["err"] ** 2)) == pytest.approx(report.rms_ate, rel=1e-12)
    with pytest.raises(ValueError):
        MetricsReport(-1.0, [], [], "full", 0, "")


DRIFT_DOC = {
    "name": "drifty",
    "world": {"features": [[1.5, 1.0], [3.0, -1.0]]},
    "script": {"start": [0, 0, 0], "speed": 0.05, "waypoints": [[3.0, 0.0], [3.0, 1.0]]},
    "noise": {"preset": "zero", "odom_heading_rate": 0.05, "odom_heading_sigma": 0.01},
    "driver": {"deploy_at_start": False},
}


def test_odom_only_reports_pure_odometry_drift():
    sc = parse_scenario(DRIFT_DOC)
    report, res = run_ablation(sc, "odom_only", 0)
    d = res.driver
    assert len(d.state.landmarks) == 0
    for (_, mu), (_, od) in zip(d.trajectory, d.odom_at_steps):
        np.testing.assert_allclose(mu, od, atol=1e-9)
    odo = [(t, od) for t, od in d.odom_at_steps]
    drift, _, _ = evaluate(odo, res.truth, d.state, res.world)
    assert report.rms_ate == pytest.approx(drift.rms_ate, abs=1e-9)


def test_unknown_mode():
    with pytest.raises(ValueError):
        run_ablation(parse_scenario(DRIFT_DOC), "lidar_only", 0)
