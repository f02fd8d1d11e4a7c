"""Tests the quaternion algebra.

Functions:
test_product_table() - i o j = k and friends
test_left_right_matrices()
test_rotation_homomorphism()
test_attitude_matrix_convention() - C_w^b is world to body
test_attitude_jacobian_fd() - against finite differences, raw q
test_log_exp()
test_log_small_angle()
test_right_jacobian_small_and_large()
test_scipy_round_trip()
test_sign_continuous()
"""
import numpy as np
import numpy.testing as npt
import pytest

from chebvio import geometry as geo


def random_quats(count, seed=0):
    rng = np.random.default_rng(seed)
    return geo.unit(rng.standard_normal((count, 4)))


def test_product_table():
    i, j, k = geo.quat(0, 1, 0, 0), geo.quat(0, 0, 1, 0), geo.quat(0, 0, 0, 1)
    npt.assert_array_equal(geo.quat_mul(i, j), k)
    npt.assert_array_equal(geo.quat_mul(j, i), -k)
    npt.assert_array_equal(geo.quat_mul(i, i), geo.quat(-1, 0, 0, 0))
    q = random_quats(1)[0]
    npt.assert_allclose(geo.quat_mul(q, geo.quat_conj(q)), geo.IDENTITY, atol=1e-15)
    npt.assert_allclose(geo.CONJ @ q, geo.quat_conj(q))
    npt.assert_allclose(geo.VEC @ q, geo.extract_vec(q))


def test_left_right_matrices():
    a, b = random_quats(2, seed=1)
    npt.assert_allclose(geo.left_matrix(a) @ b, geo.quat_mul(a, b), atol=1e-15)
    npt.assert_allclose(geo.right_matrix(b) @ a, geo.quat_mul(a, b), atol=1e-15)
    x = np.array([0.3, -1.0, 2.0])
    npt.assert_allclose(geo.skew(x) @ np.array([1.0, 2.0, 3.0]),
                        np.cross(x, [1.0, 2.0, 3.0]))


def test_rotation_homomorphism():
    a, b = random_quats(2, seed=2)
    npt.assert_allclose(geo.quat_to_rot(geo.quat_mul(a, b)),
                        geo.quat_to_rot(a) @ geo.quat_to_rot(b), atol=1e-14)
    rot = geo.quat_to_rot(a)
    npt.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-14)
    npt.assert_allclose(np.linalg.det(rot), 1.0)
    # scale does not matter
    npt.assert_allclose(geo.quat_to_rot(3.0 * a), rot, atol=1e-14)
    q = geo.rot_to_quat(rot)
    npt.assert_allclose(geo.quat_to_rot(q), rot, atol=1e-14)


def test_attitude_matrix_convention():
    # 90 deg about z: body x points to world y
    q = geo.axis_angle([0, 0, 1], np.pi / 2)
    npt.assert_allclose(geo.rot_apply(q, [1.0, 0, 0]), [0, 1.0, 0], atol=1e-15)
    npt.assert_allclose(geo.rot_transpose_apply(q, [0, 1.0, 0]), [1.0, 0, 0], atol=1e-15)
    npt.assert_allclose(geo.attitude_matrix(q), geo.quat_to_rot(q).T)
    # rotating the vector as a pure quaternion gives the same
    x = np.array([0.2, -0.4, 1.1])
    npt.assert_allclose(geo.extract_vec(geo.quat_mul(geo.quat_mul(q, geo.pure(x)),
                                                     geo.quat_conj(q))),
                        geo.rot_apply(q, x), atol=1e-15)


def test_attitude_jacobian_fd():
    rng = np.random.default_rng(4)
    q = 1.3 * random_quats(1, seed=3)[0]
    x = rng.standard_normal(3)
    jac = geo.attitude_jacobian(q, x)
    numeric = np.empty((3, 4))
    step = 1e-6
    for i in range(4):
        dq = np.zeros(4)
        dq[i] = step
        numeric[:, i] = (geo.rot_transpose_apply(q + dq, x)
                         - geo.rot_transpose_apply(q - dq, x)) / (2 * step)
    npt.assert_allclose(jac, numeric, atol=1e-8)
    # broadcasts over many quaternions
    quats = random_quats(5, seed=5)
    assert geo.attitude_jacobian(quats, x).shape == (5, 3, 4)


def test_log_exp():
    rotvec = np.array([[0.1, -0.2, 0.3], [2.0, 1.0, -0.5], [0.0, 0.0, 0.0]])
    q = geo.quat_exp(rotvec)
    npt.assert_allclose(np.linalg.norm(q, axis=1), 1.0)
    npt.assert_allclose(geo.quat_log(q), rotvec, atol=1e-14)
    # the sign of q does not change the rotation vector
    npt.assert_allclose(geo.quat_log(-q), rotvec, atol=1e-14)
    angle = np.linalg.norm(geo.quat_log(geo.axis_angle([1, 1, 0], 3.0)))
    assert angle == pytest.approx(3.0)


def test_log_small_angle():
    rotvec = np.array([1e-10, -2e-10, 5e-11])
    npt.assert_allclose(geo.quat_log(geo.quat_exp(rotvec)), rotvec, rtol=1e-6)


def test_right_jacobian_small_and_large():
    npt.assert_allclose(geo.right_jacobian(np.zeros(3)), np.eye(3))
    phi = np.array([0.4, -0.3, 0.9])
    # Jr(phi) dphi ~ log(exp(phi)^-1 exp(phi + dphi))
    dphi = 1e-7 * np.array([1.0, 2.0, -1.0])
    rel = geo.quat_mul(geo.quat_conj(geo.quat_exp(phi)), geo.quat_exp(phi + dphi))
    npt.assert_allclose(geo.right_jacobian(phi) @ dphi, geo.quat_log(rel), atol=1e-13)
    tiny = np.array([1e-8, 0.0, 0.0])
    npt.assert_allclose(geo.right_jacobian(tiny), np.eye(3), atol=1e-8)


def test_scipy_round_trip():
    quats = random_quats(4, seed=6)
    back = geo.from_scipy(geo.to_scipy(quats))
    dots = np.abs(np.sum(back * quats, axis=1))
    npt.assert_allclose(dots, 1.0)
    npt.assert_allclose(geo.to_scipy(quats).as_matrix(), geo.quat_to_rot(quats), atol=1e-14)


def test_sign_continuous():
    quats = random_quats(6, seed=7)
    flipped = quats.copy()
    flipped[3:] *= -1
    fixed = geo.sign_continuous(flipped)
    npt.assert_array_equal(fixed[0], flipped[0])
    assert np.all(np.sum(fixed[1:] * fixed[:-1], axis=1) >= 0)
