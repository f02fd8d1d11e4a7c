"""Tests the measurement residuals and noise models.

Functions:
test_gyro_error_zero_on_truth()
test_error_jacobians_fd() - gyro, accel, reprojection and prior Jacobians
test_reprojection_of_known_point()
test_cheirality()
test_prior_error_zero_at_prior()
test_noise_whiteners()
test_extrinsics_checks()
test_imu_series_checks()
test_group_by_feature()
test_huber_weights()
"""
import numpy as np
import numpy.testing as npt
import pytest

from chebvio import cheb_basis as cb
from chebvio import measurement_models as mm
from chebvio.errors import CheiralityError, ParameterError
from chebvio.geometry import axis_angle, pure, quat_mul, quat_to_rot
from chebvio.trajectory_model import constant_trajectory

GRAVITY = np.array([0.0, 0.0, -9.81])


def make_ext(C_bc=np.eye(3), p_cb=np.zeros(3)):
    return mm.Extrinsics(C_bc=C_bc, p_cb=p_cb, gravity=GRAVITY)


def fd_jacobian(func, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        dx = np.zeros_like(x)
        dx[i] = step
        cols.append((func(x + dx) - func(x - dx)) / (2 * step))
    return np.stack(cols, axis=-1)


def test_gyro_error_zero_on_truth():
    omega = np.array([0.1, -0.3, 0.2])
    bg = np.array([0.01, 0.02, -0.03])
    q = axis_angle([1, 0, 1], 0.7)
    q_dot = 0.5 * quat_mul(q, pure(omega))
    npt.assert_allclose(mm.gyro_error(q, q_dot, bg, omega + bg), np.zeros(3), atol=1e-15)


def test_error_jacobians_fd():
    rng = np.random.default_rng(1)
    q = 1.1 * axis_angle([0.3, -1, 0.2], 0.9)
    q_dot = rng.standard_normal(4)
    omega, bg = rng.standard_normal(3), rng.standard_normal(3)
    _, d_q, d_qdot = mm.gyro_error(q, q_dot, bg, omega, jac=True)
    npt.assert_allclose(d_q, fd_jacobian(lambda x: mm.gyro_error(x, q_dot, bg, omega), q),
                        atol=1e-8)
    npt.assert_allclose(d_qdot,
                        fd_jacobian(lambda x: mm.gyro_error(q, x, bg, omega), q_dot),
                        atol=1e-8)

    accel, f_meas, ba = rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3)
    _, d_q, d_a = mm.accel_error(q, accel, ba, f_meas, GRAVITY, jac=True)
    npt.assert_allclose(d_q, fd_jacobian(
        lambda x: mm.accel_error(x, accel, ba, f_meas, GRAVITY), q), atol=1e-7)
    npt.assert_allclose(d_a, fd_jacobian(
        lambda x: mm.accel_error(q, x, ba, f_meas, GRAVITY), accel), atol=1e-8)

    C_bc = axis_angle([0, 1, 0], 0.3)
    ext = make_ext(C_bc=quat_to_rot(C_bc), p_cb=np.array([0.1, 0.0, 0.05]))
    p = np.array([0.2, -0.1, 0.3])
    X = np.array([0.5, 0.4, 6.0])
    xy = np.array([0.01, -0.02])
    q = 1.1 * axis_angle([0, 0, 1], 0.1)
    _, _, d_q, d_X = mm.reprojection_error(q, p, X, xy, ext, jac=True)
    npt.assert_allclose(d_q, fd_jacobian(
        lambda x: mm.reprojection_error(x, p, X, xy, ext)[0], q), atol=1e-7)
    npt.assert_allclose(d_X, fd_jacobian(
        lambda x: mm.reprojection_error(q, p, x, xy, ext)[0], X), atol=1e-8)
    npt.assert_allclose(-d_X, fd_jacobian(
        lambda x: mm.reprojection_error(q, x, X, xy, ext)[0], p), atol=1e-8)

    prior = mm.PriorState(q0=axis_angle([1, 1, 1], 0.05), v0=np.zeros(3), p0=np.zeros(3))
    _, d_q = mm.prior_error(q, np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), prior,
                            jac=True)
    numeric = fd_jacobian(lambda x: mm.prior_error(x, np.zeros(3), np.zeros(3), np.zeros(3),
                                                   np.zeros(3), prior)[:3], q)
    npt.assert_allclose(d_q, numeric, atol=1e-8)


def test_reprojection_of_known_point():
    # identity attitude, camera axes equal body axes, point 4 m ahead
    ext = make_ext()
    r, depth = mm.reprojection_error(np.array([1.0, 0, 0, 0]), np.zeros(3),
                                     np.array([1.0, -2.0, 4.0]), np.array([0.25, -0.5]), ext)
    npt.assert_allclose(r, np.zeros(2), atol=1e-15)
    assert depth == pytest.approx(4.0)
    npt.assert_allclose(mm.camera_point(np.array([1.0, 0, 0, 0]), np.zeros(3),
                                        np.array([1.0, -2.0, 4.0]), ext), [1.0, -2.0, 4.0])


def test_cheirality():
    ext = make_ext()
    traj = constant_trajectory(np.array([1.0, 0, 0, 0]), np.zeros(3), np.zeros(3),
                               cb.TimeMap(0.0, 1.0), 3, 3)
    obs = mm.FeatureObservation(0.5, 7, (0.0, 0.0))
    npt.assert_allclose(mm.reprojection_residual(traj, np.array([0.0, 0.0, 3.0]), obs, ext),
                        np.zeros(2), atol=1e-15)
    with pytest.raises(CheiralityError):
        mm.reprojection_residual(traj, np.array([0.0, 0.0, -3.0]), obs, ext)
    with pytest.raises(CheiralityError):
        mm.reprojection_residual(traj, np.array([0.0, 0.0, 0.01]), obs, ext)


def test_prior_error_zero_at_prior():
    prior = mm.PriorState(q0=axis_angle([0, 1, 0], 0.2), v0=np.ones(3), p0=np.arange(3.0),
                          ba0=np.full(3, 0.1), bg0=np.full(3, -0.1))
    r = mm.prior_error(2.0 * prior.q0, prior.v0, prior.p0, prior.ba0, prior.bg0, prior)
    npt.assert_allclose(r, np.zeros(15), atol=1e-14)
    with pytest.raises(ParameterError):
        mm.PriorState(q0=np.zeros(3), v0=np.zeros(3), p0=np.zeros(3))


def test_noise_whiteners():
    noise = mm.NoiseModel.from_densities(1e-3, 2e-2, 200.0, 1.0, 500.0, np.eye(15) * 0.01)
    npt.assert_allclose(noise.Rg, np.eye(3) * 1e-6 * 200.0)
    npt.assert_allclose(noise.Rc, np.eye(2) * (1.0 / 500.0) ** 2)
    for W, cov in ((noise.Wg, noise.Rg), (noise.Wa, noise.Ra), (noise.Wc, noise.Rc),
                   (noise.Wp, noise.P0)):
        npt.assert_allclose(W.T @ cov @ W, np.eye(len(cov)), atol=1e-10)
    r = np.array([1.0, 2.0])
    assert np.sum(mm.apply_weight(r, noise.Wc) ** 2) == pytest.approx(r @ np.linalg.solve(
        noise.Rc, r))
    bad = mm.NoiseModel(Rg=-np.eye(3), Ra=np.eye(3), Rc=np.eye(2), P0=np.eye(15))
    with pytest.raises(ParameterError):
        _ = bad.Wg


def test_extrinsics_checks():
    with pytest.raises(ParameterError):
        mm.Extrinsics(C_bc=2 * np.eye(3), p_cb=np.zeros(3), gravity=GRAVITY)
    with pytest.raises(ParameterError):
        mm.Extrinsics(C_bc=-np.eye(3), p_cb=np.zeros(3), gravity=GRAVITY)
    with pytest.raises(ParameterError):
        mm.Extrinsics(C_bc=np.eye(3), p_cb=np.zeros(3), gravity=np.array([0, 0, -1.6]))
    ext = mm.Extrinsics(C_bc=np.eye(3), p_cb=np.zeros(3), gravity=np.array([0, 0, -1.6]),
                        gravity_band=None)
    npt.assert_allclose(ext.gravity, [0, 0, -1.6])


def test_imu_series_checks():
    times = np.arange(5) * 0.01
    imu = mm.ImuSeries(times, np.zeros((5, 3)), np.ones((5, 3)))
    assert len(imu) == 5
    assert imu.rate == pytest.approx(100.0)
    assert len(imu.window(0.01, 0.03)) == 3
    back = mm.ImuSeries.from_samples(list(imu))
    npt.assert_allclose(back.accel, imu.accel)
    with pytest.raises(ParameterError):
        mm.ImuSeries(times[::-1], np.zeros((5, 3)), np.zeros((5, 3)))
    uneven = times.copy()
    uneven[2] += 1e-4
    with pytest.raises(ParameterError):
        mm.ImuSeries(uneven, np.zeros((5, 3)), np.zeros((5, 3)))
    with pytest.raises(ParameterError):
        mm.ImuSeries(times, np.full((5, 3), np.nan), np.zeros((5, 3)))


def test_group_by_feature():
    obs = [mm.FeatureObservation(0.2, 2, (0.0, 0.0)), mm.FeatureObservation(0.1, 2, (0.1, 0.0)),
           mm.FeatureObservation(0.1, 1, (0.0, 0.1))]
    groups = mm.group_by_feature(obs)
    assert list(groups) == [1, 2]
    assert [o.frame_time for o in groups[2]] == [0.1, 0.2]
    with pytest.raises(ParameterError):
        mm.FeatureObservation(0.1, 3, (np.inf, 0.0))


def test_huber_weights():
    whitened = np.array([[0.5, 0.0], [3.0, 4.0]])
    npt.assert_allclose(mm.huber_weights(whitened, 1.0), [1.0, np.sqrt(1.0 / 5.0)])
