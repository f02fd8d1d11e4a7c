"""Tests the Chebyshev estimator.

Functions:
test_layout() - offsets and landmark lookup of the decision vector
test_residual_and_constraint_sizes()
test_jacobian_matches_finite_differences()
test_constraint_jacobian()
test_dead_reckon_noise_free()
test_triangulate()
test_initialize()
test_camera_outside_interval()
test_solve_rejects_degenerate_start()
test_solves_without_observations() - inertial-only interval
test_dropped_observations_are_warned()
test_noise_free_recovery() - slow, circular at order 60 from the truth
test_coning_recovery_from_dead_reckoning() - slow
test_quadrature_consistency() - slow, cost with the quadrature doubled
test_gauge_fixed_by_the_prior() - slow, shifted prior position
test_cost_falls_with_order() - slow, noise-free cost over basis orders 8 to 64
"""
import logging
from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest
from scipy.optimize._numdiff import approx_derivative

from chebvio import cheb_basis as cb
from chebvio import estimator as est
from chebvio import optimizer
from chebvio.config import PriorConfig, SolverConfig
from chebvio.errors import AssemblyError, SolverFailure, TriangulationError
from chebvio.geometry import attitude_matrix, axis_angle, quat_conj, quat_log, quat_mul
from chebvio.measurement_models import Extrinsics
from chebvio.metrics import StateSeries, armse
from chebvio.sim_gen import SimScenario, generate, simulation_problem, truth_decision_vector


def perturbed_truth(problem, truth, size=1e-4, seed=0):
    x = truth_decision_vector(problem, truth)
    rng = np.random.default_rng(seed)
    return est.DecisionVector(x.values + size * rng.standard_normal(x.values.shape), x.layout)


def test_layout():
    layout = est.DecisionLayout(8, 6, (2, 5, 9))
    assert layout.n_D == 36 and layout.n_K == 21
    assert layout.off_p0 == 57 and layout.off_ba == 60 and layout.off_bg == 63
    assert layout.n_state == 66
    assert layout.size == 66 + 9
    mask, index = layout.landmark_index([5, 3, 9])
    assert list(mask) == [True, False, True]
    assert list(index) == [1, 2]
    with pytest.raises(ValueError):
        est.DecisionLayout(8, 6).pack(np.zeros((4, 9)), np.zeros((3, 6)), np.zeros(3),
                                      np.zeros(3), np.zeros(3))


def test_residual_and_constraint_sizes(small_problem):
    problem, truth = small_problem
    x = truth_decision_vector(problem, truth)
    assert x.layout.feature_ids == problem.feature_ids
    npt.assert_allclose(x.bg, truth.bg)
    assembly = est.assemble_residuals(problem, x)
    n_nodes = problem.quad_order + 1
    n_obs = sum(len(track) for track in problem.tracks.values())
    assert len(assembly.residuals) == 15 + 6 * n_nodes + 2 * n_obs
    assert len(assembly.constraints) == problem.n_q + 1
    assert assembly.dropped == 0
    assert set(assembly.block_costs) == {"prior", "gyro", "accel", "reprojection"}
    assert assembly.cost == pytest.approx(sum(assembly.block_costs.values()))


def test_jacobian_matches_finite_differences(small_problem):
    problem, truth = small_problem
    x = perturbed_truth(problem, truth)
    analytic = est.jacobian(problem, x).toarray()

    def residual(values):
        return est.assemble_residuals(problem, est.DecisionVector(values, x.layout)).residuals

    numeric = approx_derivative(residual, x.values, method="3-point")
    assert analytic.shape == numeric.shape
    scale = max(1.0, np.max(np.abs(numeric)))
    assert np.max(np.abs(analytic - numeric)) / scale < 1e-5


def test_constraint_jacobian(small_problem):
    problem, truth = small_problem
    x = perturbed_truth(problem, truth, size=1e-2)

    def constraints(values):
        return est.assemble_residuals(problem,
                                      est.DecisionVector(values, x.layout)).constraints

    numeric = approx_derivative(constraints, x.values, method="3-point")
    npt.assert_allclose(est.constraint_jacobian(problem, x), numeric, atol=1e-7)


def test_dead_reckon_noise_free(small_problem):
    problem, truth = small_problem
    times, quats, vels, positions = est.dead_reckon(problem)
    assert times[0] == problem.time_map.t0 and times[-1] == pytest.approx(problem.time_map.tM)
    assert len(times) == 4 * (len(problem.imu) - 1) + 1
    err = quat_log(quat_mul(quat_conj(truth.quats[-1]), quats[-1]))
    assert np.linalg.norm(err) < 1e-4
    assert np.linalg.norm(vels[-1] - truth.vels[-1]) < 1e-3
    assert np.linalg.norm(positions[-1] - truth.positions[-1]) < 1e-3


def test_triangulate():
    ext = Extrinsics(C_bc=np.eye(3), p_cb=np.zeros(3), gravity=np.array([0, 0, -9.81]))
    point = np.array([0.3, -0.2, 5.0])
    quats = np.array([[1.0, 0, 0, 0], axis_angle([0, 1, 0], 0.05)])
    positions = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    xys = []
    for q, p in zip(quats, positions):
        Y = est.camera_poses(q[None], p[None], ext)
        cam = Y[0][0] @ point + Y[1][0]
        xys.append(cam[:2] / cam[2])
    npt.assert_allclose(est.triangulate(quats, positions, np.array(xys), ext), point,
                        atol=1e-9)
    with pytest.raises(TriangulationError):
        est.triangulate(quats[:1], positions[:1], np.array(xys[:1]), ext)
    with pytest.raises(TriangulationError):
        est.triangulate(quats, positions, np.array(xys), ext, min_parallax_deg=30.0)


def test_initialize(small_problem):
    problem, truth = small_problem
    x0 = est.initialize(problem)
    assert set(x0.layout.feature_ids) <= set(problem.feature_ids)
    assert len(x0.layout.feature_ids) >= len(problem.feature_ids) // 2
    npt.assert_allclose(x0.p0, problem.prior.p0)
    npt.assert_allclose(x0.ba, problem.prior.ba0)
    landmarks = x0.landmark_dict()
    errors = [np.linalg.norm(landmarks[fid] - truth.landmarks[fid]) for fid in landmarks]
    assert np.median(errors) < 0.05


def test_camera_outside_interval(small_problem):
    problem, _ = small_problem
    short = replace(problem, time_map=cb.TimeMap(0.0, 0.5))
    with pytest.raises(AssemblyError):
        _ = short.nodes
    late = replace(problem, time_map=cb.TimeMap(0.0, 2.0))
    with pytest.raises(AssemblyError):
        _ = late.nodes


def test_solve_rejects_degenerate_start(small_problem):
    problem, truth = small_problem
    x = truth_decision_vector(problem, truth)
    values = x.values.copy()
    values[:x.layout.n_D] *= 0.1
    with pytest.raises(SolverFailure):
        est.solve(problem, est.DecisionVector(values, x.layout))


def test_solves_without_observations(small_problem):
    problem, _ = small_problem
    inertial = replace(problem, observations=())
    x, _, report = est.solve(inertial, est.initialize(inertial))
    assert x.layout.feature_ids == ()
    assert report.converged
    assert report.max_constraint < 1e-8
    assert report.block_costs["reprojection"] == 0.0


def test_dropped_observations_are_warned(small_problem, monkeypatch, caplog):
    problem, truth = small_problem
    x = truth_decision_vector(problem, truth)
    fid = x.layout.feature_ids[0]
    k = np.argmin(np.abs(truth.times - problem.tracks[fid][0].frame_time))
    behind = truth.positions[k] - 10.0 * attitude_matrix(truth.quats[k]).T @ truth.ext.C_bc.T[:, 2]
    values = x.values.copy()
    values[x.layout.n_state:x.layout.n_state + 3] = behind

    def fixed(evaluate, linearize, x0, cfg, tail=0):
        return optimizer.AlResult(values, 1, 1, True, 0.0, np.zeros(0), 1.0)

    monkeypatch.setattr(est, "augmented_lagrangian", fixed)
    with caplog.at_level(logging.WARNING, logger="chebvio"):
        _, _, report = est.solve(problem, x)
    assert report.dropped_observations >= 1
    assert "left out of the chebyshev solution" in caplog.text


@pytest.mark.slow
def test_noise_free_recovery():
    scn = replace(SimScenario(kind="circular", seed=5), landmark_count=120).without_noise()
    truth, imu, obs = generate(scn)
    problem = simulation_problem(scn, truth, imu, obs, SolverConfig().with_orders(60, 60))
    x, traj, report = est.solve(problem, truth_decision_vector(problem, truth))
    states = truth.states()
    errors = armse([StateSeries(states.times, *traj.sample(states.times))], states)
    assert report.converged
    assert report.outer_iterations <= 3
    assert errors.attitude < 1e-3
    assert errors.velocity < 1e-4
    assert errors.position < 1e-4
    assert report.max_constraint < 1e-8
    assert report.method == "chebyshev"
    npt.assert_allclose(x.bg, np.zeros(3), atol=1e-5)


@pytest.mark.slow
def test_coning_recovery_from_dead_reckoning():
    scn = replace(SimScenario(kind="coning_line", seed=5), duration=1.0, landmark_count=60,
                  include_earth_rate=False).without_noise()
    truth, imu, obs = generate(scn)
    problem = simulation_problem(scn, truth, imu, obs, SolverConfig().with_orders(16, 16))
    _, traj, report = est.solve(problem, est.initialize(problem))
    states = truth.states()
    errors = armse([StateSeries(states.times, *traj.sample(states.times))], states)
    assert errors.attitude < 1e-2
    assert errors.velocity < 1e-3
    assert errors.position < 1e-3
    assert report.max_constraint < 1e-6


def coning_problem(solver, prior_cfg=None):
    scn = replace(SimScenario(kind="coning_line", seed=4), duration=1.0, landmark_count=60,
                  include_earth_rate=False).without_noise()
    truth, imu, obs = generate(scn)
    return simulation_problem(scn, truth, imu, obs, solver, prior_cfg), truth


@pytest.mark.slow
def test_quadrature_consistency():
    costs = []
    for quad_order in (24, 48):
        solver = replace(SolverConfig().with_orders(16, 16), quad_order=quad_order)
        problem, truth = coning_problem(solver)
        _, _, report = est.solve(problem, truth_decision_vector(problem, truth))
        assert report.converged
        costs.append(report.cost)
    assert abs(costs[1] - costs[0]) < 1e-10


@pytest.mark.slow
def test_gauge_fixed_by_the_prior():
    problem, truth = coning_problem(SolverConfig().with_orders(16, 16),
                                    PriorConfig(position=1e-6))
    shift = np.array([0.01, -0.02, 0.005])
    problem = replace(problem, prior=replace(problem.prior, p0=problem.prior.p0 + shift))
    x, traj, report = est.solve(problem, truth_decision_vector(problem, truth))
    assert report.converged
    npt.assert_allclose(x.p0, problem.prior.p0, atol=1e-7)
    npt.assert_allclose(traj.velocity_at(-1.0), problem.prior.v0, atol=1e-4)
    q_start = traj.attitude_at(-1.0)
    q_start = q_start / np.linalg.norm(q_start)
    assert np.linalg.norm(quat_log(quat_mul(quat_conj(problem.prior.q0), q_start))) < 1e-4
    landmarks = x.landmark_dict()
    for fid in landmarks:
        npt.assert_allclose(landmarks[fid] - truth.landmarks[fid], shift, atol=1e-5)


@pytest.mark.slow
def test_cost_falls_with_order():
    scn = replace(SimScenario(kind="circular", seed=2), landmark_count=120).without_noise()
    truth, imu, obs = generate(scn)
    costs = []
    for order in (8, 16, 32, 64):
        solver = SolverConfig().with_orders(order, order)
        problem = simulation_problem(scn, truth, imu, obs, solver)
        _, _, report = est.solve(problem, truth_decision_vector(problem, truth))
        costs.append(report.cost)
    for coarse, fine in zip(costs, costs[1:]):
        assert fine <= 10 * coarse + 1e-3
    assert costs[0] > 100 * costs[-1]
