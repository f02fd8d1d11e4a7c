"""Tests the Levenberg-Marquardt and augmented-Lagrangian machinery.

Functions:
test_lm_linear() - one linear problem against lstsq
test_lm_rosenbrock()
test_lm_divergent_start()
test_normal_equations_sparse()
test_schur_matches_dense()
test_augmented_lagrangian_circle() - closest point on the unit circle
test_least_squares_report()
test_lm_stall_is_not_converged() - damping runs out away from a minimum
test_lm_flat_residual_is_a_minimum()
test_gradient_cosine()
test_penalty_scale()
"""
import json
from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest
import scipy.linalg
import scipy.sparse

from chebvio import optimizer
from chebvio.config import SolverConfig
from chebvio.errors import SolverFailure

CFG = SolverConfig()


def test_lm_linear():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((20, 4))
    b = rng.standard_normal(20)
    result = optimizer.levenberg_marquardt(lambda x: A @ x - b, lambda x: A, np.zeros(4), CFG)
    npt.assert_allclose(result.x, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-8)
    assert result.converged


def test_lm_rosenbrock():
    def residual(x):
        return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

    def jacobian(x):
        return np.array([[-20.0 * x[0], 10.0], [-1.0, 0.0]])

    cfg = replace(CFG, max_inner=200)
    result = optimizer.levenberg_marquardt(residual, jacobian, np.array([-1.2, 1.0]), cfg)
    npt.assert_allclose(result.x, [1.0, 1.0], atol=1e-6)


def test_lm_divergent_start():
    with pytest.raises(SolverFailure):
        optimizer.levenberg_marquardt(lambda x: np.array([np.nan]), lambda x: np.ones((1, 1)),
                                      np.zeros(1), CFG)
    with pytest.raises(SolverFailure):
        optimizer.levenberg_marquardt(lambda x: np.array([1e7]), lambda x: np.ones((1, 1)),
                                      np.zeros(1), CFG)


def test_normal_equations_sparse():
    rng = np.random.default_rng(1)
    dense = rng.standard_normal((50, 10)) * (rng.random((50, 10)) < 0.03)
    r = rng.standard_normal(50)
    hess, grad = optimizer.normal_equations(scipy.sparse.csr_matrix(dense), r)
    npt.assert_allclose(hess, dense.T @ dense, atol=1e-12)
    npt.assert_allclose(grad, dense.T @ r, atol=1e-12)


def test_schur_matches_dense():
    rng = np.random.default_rng(2)
    head, landmarks = 5, 4
    rows = []
    for s in range(landmarks):
        block = np.zeros((6, head + 3 * landmarks))
        block[:, :head] = rng.standard_normal((6, head))
        block[:, head + 3 * s: head + 3 * s + 3] = rng.standard_normal((6, 3))
        rows.append(block)
    J = np.vstack(rows + [np.hstack([np.eye(head), np.zeros((head, 3 * landmarks))])])
    r = rng.standard_normal(len(J))
    hess, grad = J.T @ J, J.T @ r
    schur = optimizer.solve_damped(hess, grad, 1e-3, tail=3 * landmarks, schur_threshold=0)
    lhs = hess + np.diag(1e-3 * np.diag(hess))
    dense = scipy.linalg.solve(lhs, -grad)
    npt.assert_allclose(schur, dense, atol=1e-10)


def test_augmented_lagrangian_circle():
    def evaluate(x):
        return x - 2.0, np.array([x @ x - 1.0])

    def linearize(x):
        return np.eye(2), 2.0 * x[None, :]

    cfg = replace(CFG, max_outer=20, max_inner=100)
    result = optimizer.augmented_lagrangian(evaluate, linearize, np.array([0.5, 0.2]), cfg)
    npt.assert_allclose(result.x, [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-5)
    assert result.max_constraint < 1e-6
    assert result.outer_iterations >= 1


def test_least_squares_report():
    A = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    b = np.array([1.0, 2.0, 3.0])
    result = optimizer.least_squares(lambda x: A @ x - b, lambda x: A, np.zeros(2), CFG)
    report = optimizer.stack_report(result, {"all": 0.5}, 0.01, "test", dropped_observations=2)
    assert report.method == "test"
    assert report.cost == 0.5
    data = json.loads(report.to_json())
    assert data["dropped_observations"] == 2
    assert data["block_costs"] == {"all": 0.5}
    assert data["max_constraint"] == 0.0


def test_lm_stall_is_not_converged():
    # the Jacobian points the wrong way, so no step lowers the cost
    result = optimizer.levenberg_marquardt(lambda x: x - 1.0, lambda x: -np.eye(1),
                                           np.zeros(1), CFG)
    assert not result.converged
    assert result.reason == "stalled"
    npt.assert_allclose(result.x, [0.0])
    assert not optimizer.least_squares(lambda x: x - 1.0, lambda x: -np.eye(1),
                                       np.zeros(1), CFG).converged


def test_lm_flat_residual_is_a_minimum():
    result = optimizer.levenberg_marquardt(lambda x: np.array([1.0, 2.0]),
                                           lambda x: np.zeros((2, 1)), np.zeros(1), CFG)
    assert result.converged
    assert result.reason == "gradient"


def test_gradient_cosine():
    J = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    r = np.array([0.0, 3.0, 4.0])
    hess, grad = J.T @ J, J.T @ r
    assert optimizer.gradient_cosine(hess, grad, r @ r) == pytest.approx(0.6)
    assert optimizer.gradient_cosine(np.zeros((2, 2)), np.zeros(2), 1.0) == 0.0


def test_penalty_scale():
    j_r = np.array([[3.0, 0.0, 1.0], [4.0, 0.0, 0.0]])
    j_c = np.array([[1.0, 0.0, 0.0]])
    assert optimizer.penalty_scale(j_r, j_c) == pytest.approx(25.0)
    assert optimizer.penalty_scale(scipy.sparse.csr_matrix(j_r), j_c) == pytest.approx(25.0)
    assert optimizer.penalty_scale(j_r, np.array([[0.0, 1.0, 0.0]])) == 1.0
