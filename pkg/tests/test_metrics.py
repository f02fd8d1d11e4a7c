"""Tests the error metrics.

Functions:
test_epoch_errors() - known attitude, velocity and position offsets
test_epoch_errors_grid_mismatch()
test_armse_pools_runs_and_epochs()
test_sm_rmse_sums_inside_segments()
test_improvement_ratio()
test_error_report()
"""
import numpy as np
import numpy.testing as npt
import pytest

from chebvio import metrics
from chebvio.errors import ParameterError
from chebvio.geometry import axis_angle, quat_mul

TIMES = np.array([0.0, 0.5, 1.0])


def series(angle_deg=0.0, dv=0.0, dp=0.0, times=TIMES):
    n = len(times)
    base = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    quats = quat_mul(base, axis_angle([0, 0, 1], np.radians(angle_deg)))
    return metrics.StateSeries(times, quats, np.full((n, 3), [dv, 0.0, 0.0]),
                               np.full((n, 3), [0.0, dp, 0.0]))


def test_epoch_errors():
    errors = metrics.epoch_errors(series(2.0, 0.3, 4.0), series())
    npt.assert_allclose(errors.attitude, 2.0)
    npt.assert_allclose(errors.attitude_axes, np.tile([0.0, 0.0, 2.0], (3, 1)), atol=1e-12)
    npt.assert_allclose(errors.velocity, 0.3)
    npt.assert_allclose(errors.position, 4.0)
    # q and -q are the same attitude
    flipped = series()
    flipped = metrics.StateSeries(TIMES, -flipped.quats, flipped.vels, flipped.positions)
    npt.assert_allclose(metrics.epoch_errors(flipped, series()).attitude, 0.0, atol=1e-12)


def test_epoch_errors_grid_mismatch():
    with pytest.raises(ParameterError):
        metrics.epoch_errors(series(times=TIMES + 0.1), series())
    with pytest.raises(ParameterError):
        metrics.epoch_errors(series(times=TIMES[:2]), series())
    with pytest.raises(ParameterError):
        metrics.StateSeries(TIMES, np.zeros((2, 4)), np.zeros((3, 3)), np.zeros((3, 3)))


def test_armse_pools_runs_and_epochs():
    result = metrics.armse([series(1.0, 1.0, 3.0), series(2.0, 0.0, 4.0)], series())
    assert result.attitude == pytest.approx(np.sqrt(2.5))
    assert result.velocity == pytest.approx(np.sqrt(0.5))
    assert result.position == pytest.approx(np.sqrt(12.5))
    assert result.to_dict()["position_m"] == pytest.approx(np.sqrt(12.5))
    mean = metrics.avg_error([series(1.0), series(3.0)], series())
    npt.assert_allclose(mean.attitude, 2.0)
    one = np.array([0.0])
    assert metrics.armse([series(90.0, times=one)], series(times=one)).attitude == \
        pytest.approx(90.0)
    with pytest.raises(ParameterError):
        metrics.armse([])


def test_sm_rmse_sums_inside_segments():
    # three epochs of 1 m in one segment, three of 2 m in the other
    result = metrics.sm_rmse([series(dp=1.0), series(dp=2.0)], [series(), series()])
    assert result.position == pytest.approx(np.sqrt((3 * 1.0 + 3 * 4.0) / 2))
    pair = np.array([0.0, 1.0])
    truth = series(times=pair)
    steps = metrics.StateSeries(pair, truth.quats, truth.vels, [[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
    assert metrics.sm_rmse([steps], [truth]).position == pytest.approx(5.0)
    single = metrics.segment_rmse(series(dp=2.0), series())
    assert single.position == pytest.approx(2.0)
    with pytest.raises(ParameterError):
        metrics.sm_rmse([series()], [series(), series()])


def test_improvement_ratio():
    assert metrics.improvement_ratio(2.0, 0.5) == pytest.approx(0.75)
    assert metrics.improvement_ratio(1.0, 2.0) == pytest.approx(-1.0)
    assert np.isnan(metrics.improvement_ratio(0.0, 1.0))
    ratios = metrics.improvement(metrics.Armse(1.0, 2.0, 4.0), metrics.Armse(0.5, 1.0, 1.0))
    npt.assert_allclose(ratios, [0.5, 0.5, 0.75])


def test_error_report():
    runs = [metrics.epoch_errors(series(1.0, dp=1.0), series()),
            metrics.epoch_errors(series(3.0, dp=1.0), series())]
    report = metrics.ErrorReport.from_errors("chebyshev", runs, wall_times=[1.0, 3.0], failed=1)
    frame = report.to_frame()
    assert list(frame.columns[:4]) == ["time_s", "attitude_deg", "velocity_mps", "position_m"]
    npt.assert_allclose(frame["attitude_deg"], 2.0)
    assert len(frame) == 3
    summary = report.summary()
    assert summary["runs"] == 2 and summary["failed"] == 1
    assert "wall_time_mean_s" not in summary
    assert report.summary(timing=True)["wall_time_mean_s"] == pytest.approx(2.0)
    assert summary["armse"]["attitude_deg"] == pytest.approx(np.sqrt(5.0))
