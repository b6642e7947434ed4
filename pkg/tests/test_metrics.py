import numpy as np
import pytest

from bevplan.metrics import (
    MetricsError,
    TrajectoryError,
    ade,
    evaluate_trajectories,
    l1_lat_long,
)


def test_ade_identical_zero():
    traj = np.random.default_rng(0).normal(size=(4, 5, 2))
    assert ade(traj, traj, 5) == 0.0


def test_ade_constant_offset():
    rng = np.random.default_rng(1)
    gt = rng.normal(size=(3, 5, 2))
    pred = gt + np.array([1.0, 0.0])
    for k in range(1, 6):
        assert ade(pred, gt, k) == pytest.approx(1.0, abs=1e-12)


def test_ade_manual_arithmetic():
    # spreadsheet-style: distances per step are 5, 1, 2 and 0, 3, 4
    pred = np.array(
        [
            [[3.0, 4.0], [1.0, 0.0], [0.0, 2.0]],
            [[0.0, 0.0], [0.0, 3.0], [4.0, 0.0]],
        ]
    )
    gt = np.zeros((2, 3, 2))
    assert ade(pred, gt, 1) == pytest.approx((5 + 0) / 2)
    assert ade(pred, gt, 2) == pytest.approx((5 + 1 + 0 + 3) / 4)
    assert ade(pred, gt, 3) == pytest.approx((5 + 1 + 2 + 0 + 3 + 4) / 6)


def test_ade_single_trajectory_2d_input():
    pred = np.array([[1.0, 0.0], [0.0, 2.0]])
    gt = np.zeros((2, 2))
    assert ade(pred, gt, 2) == pytest.approx(1.5)


def test_ade_errors():
    with pytest.raises(MetricsError):
        ade(np.zeros((2, 5, 2)), np.zeros((3, 5, 2)), 5)
    with pytest.raises(MetricsError):
        ade(np.zeros((2, 5, 2)), np.zeros((2, 5, 2)), 6)
    with pytest.raises(MetricsError):
        ade(np.zeros((2, 5, 3)), np.zeros((2, 5, 3)), 5)


def test_l1_error_along_heading_has_no_lateral():
    heading = 0.7
    u = np.array([np.cos(heading), np.sin(heading)])
    gt = np.zeros((1, 4, 2))
    pred = gt + np.outer([1.0, -2.0, 0.5, 3.0], u)[None]
    l1_long, l1_lat = l1_lat_long(pred, gt, heading)
    np.testing.assert_allclose(l1_lat, 0.0, atol=1e-12)
    np.testing.assert_allclose(l1_long, [1.0, 2.0, 0.5, 3.0], atol=1e-12)


def test_l1_heading_rotation_swaps_components():
    rng = np.random.default_rng(2)
    pred = rng.normal(size=(5, 4, 2))
    gt = rng.normal(size=(5, 4, 2))
    long0, lat0 = l1_lat_long(pred, gt, 0.0)
    long90, lat90 = l1_lat_long(pred, gt, np.pi / 2)
    np.testing.assert_allclose(long90, lat0, atol=1e-12)
    np.testing.assert_allclose(lat90, long0, atol=1e-12)


def test_l1_matches_rotation_matrix_oracle():
    rng = np.random.default_rng(3)
    pred = rng.normal(size=(6, 5, 2))
    gt = rng.normal(size=(6, 5, 2))
    headings = rng.uniform(-np.pi, np.pi, 6)
    l1_long, l1_lat = l1_lat_long(pred, gt, headings)
    acc = np.zeros((6, 5, 2))
    for n, th in enumerate(headings):
        rot = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])
        for t in range(5):
            acc[n, t] = rot @ (pred[n, t] - gt[n, t])
    np.testing.assert_allclose(l1_long, np.abs(acc[..., 0]).mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(l1_lat, np.abs(acc[..., 1]).mean(axis=0), atol=1e-12)


def test_l1_rejects_nonfinite_heading():
    with pytest.raises(MetricsError):
        l1_lat_long(np.zeros((1, 5, 2)), np.zeros((1, 5, 2)), np.nan)


def test_evaluate_trajectories_bundles_horizons():
    rng = np.random.default_rng(4)
    pred = rng.normal(size=(8, 5, 2))
    gt = rng.normal(size=(8, 5, 2))
    te = evaluate_trajectories(pred, gt)
    assert set(te.ade) == {0.5, 1.5, 2.5}
    assert te.ade[0.5] == pytest.approx(ade(pred, gt, 1))
    assert te.ade[2.5] == pytest.approx(ade(pred, gt, 5))
    l1_long, l1_lat = l1_lat_long(pred, gt, 0.0)
    assert te.l1_long[1.5] == pytest.approx(l1_long[2])
    assert te.l1_lat[2.5] == pytest.approx(l1_lat[4])


def test_trajectory_error_rejects_negative():
    with pytest.raises(MetricsError):
        TrajectoryError(ade={0.5: -0.1}, l1_long={}, l1_lat={})
