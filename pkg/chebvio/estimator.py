"""
Chebyshev-polynomial visual-inertial estimator over one interval.

Decision vector layout, in this order:
    D   4 (n_q + 1)   quaternion coefficients, row-major
    K   3 (n_v + 1)   velocity coefficients, row-major
    p0  3, ba 3, bg 3
    X   3 per landmark, in ascending feature id

Weighted residual rows, in this order:
    prior 15 | gyro 3 (N + 1) | accel 3 (N + 1) | reprojection 2 per observation

Dynamics rows at quadrature node i carry sqrt(h w_i f_imu) W^T, so
their squared norm is the Clenshaw-Curtis value of the continuous
cost with per-sample covariances turned into densities. Constraints
are |q(tau_k)|^2 - 1 at the n_q + 1 Chebyshev points.
"""
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse

from . import cheb_basis as cb
from .config import SolverConfig
from .errors import (AssemblyError, ExtrapolationError, ParameterError, SolverFailure,
                     TriangulationError)
from .geometry import attitude_matrix, quat_mul, pure, unit, quat_to_rot
from .log import logger
from .measurement_models import (ImuSeries, accel_error, apply_weight, group_by_feature,
                                 gyro_error, huber_weights, prior_error, reprojection_error)
from .optimizer import SolveReport, augmented_lagrangian, stack_report
from .trajectory_model import ChebTrajectory, fit_to_samples

# pylint: disable=logging-fstring-interpolation
# pylint: disable=invalid-name
# D, K, X and the single-letter math names follow the model equations.

# pylint: disable=too-many-locals, too-many-instance-attributes
# assembly keeps every block it builds in locals.


@dataclass(frozen=True, eq=False)
class EstimationProblem:
    """ everything one interval needs; orders and quadrature come from cfg """
    imu: ImuSeries
    observations: tuple
    prior: object
    noise: object
    ext: object
    time_map: cb.TimeMap
    cfg: SolverConfig = field(default_factory=SolverConfig)

    @property
    def n_q(self):
        return self.cfg.n_q

    @property
    def n_v(self):
        return self.cfg.n_v

    @property
    def quad_order(self):
        return self.cfg.quadrature_order

    @cached_property
    def tracks(self):
        """ {feature_id: observations} for landmarks seen in at least 2 frames """
        groups = group_by_feature(self.observations)
        return {fid: obs for fid, obs in groups.items()
                if len({o.frame_time for o in obs}) >= 2}

    @property
    def feature_ids(self):
        return tuple(self.tracks)

    @cached_property
    def nodes(self):
        return _Nodes(self)


class _Nodes:
    """ per-problem evaluation data: quadrature, interpolated IMU, bases """

    def __init__(self, problem):
        tmap = problem.time_map
        imu = problem.imu
        if len(imu) < 2:
            raise AssemblyError("need at least two IMU samples")
        slack = 1e-9 * max(1.0, tmap.tM - tmap.t0)
        if imu.times[0] > tmap.t0 + slack or imu.times[-1] < tmap.tM - slack:
            raise AssemblyError(
                f"IMU spans [{imu.times[0]}, {imu.times[-1]}], "
                f"interval is [{tmap.t0}, {tmap.tM}]")
        rtol = max(1e-9, imu.spacing_tol / imu.period)
        try:
            self.gyro = cb.efh_build(imu.gyro, imu.times, problem.cfg.efh_degree, rtol)
            self.accel = cb.efh_build(imu.accel, imu.times, problem.cfg.efh_degree, rtol)
        except ParameterError as err:
            raise AssemblyError(f"IMU samples unusable: {err}") from err

        n_q, n_v = problem.n_q, problem.n_v
        scale = tmap.rate_scale
        self.rule = cb.clenshaw_curtis(problem.quad_order)
        self.tau = self.rule.nodes
        self.times = cb.tau_to_time(tmap, self.tau)
        self.omega = self.gyro(self.times)
        self.force = self.accel(self.times)
        self.Fq = cb.eval_basis(n_q, self.tau)
        self.dFq = scale * cb.eval_basis_derivative(n_q, self.tau)
        self.Fv = cb.eval_basis(n_v, self.tau)
        self.dFv = scale * cb.eval_basis_derivative(n_v, self.tau)
        self.row_scale = np.sqrt(tmap.half_span * self.rule.weights * imu.rate)

        self.tau_c = cb.chebyshev_points(n_q)
        self.Fc = cb.eval_basis(n_q, self.tau_c)
        self.Fq_start = cb.eval_basis(n_q, -1.0)
        self.Fv_start = cb.eval_basis(n_v, -1.0)

        obs = [o for track in problem.tracks.values() for o in track]
        times = np.array([o.frame_time for o in obs], dtype=float)
        if len(obs) and not np.all(tmap.contains(times)):
            bad = times[~tmap.contains(times)]
            raise AssemblyError(
                f"camera times {bad[:3]} outside the interval [{tmap.t0}, {tmap.tM}]")
        self.obs_fid = np.array([o.feature_id for o in obs], dtype=int)
        self.obs_xy = np.array([o.xy for o in obs], dtype=float).reshape(-1, 2)
        obs_tau = cb.time_to_tau(tmap, times)
        self.Fq_obs = cb.eval_basis(n_q, obs_tau).reshape(-1, n_q + 1)
        self.Gv_obs = tmap.half_span * cb.eval_basis_integral(n_v, obs_tau).reshape(-1, n_v + 1)


@dataclass(frozen=True)
class DecisionLayout:
    """ column offsets of the flat decision vector """
    n_q: int
    n_v: int
    feature_ids: tuple = ()

    @property
    def n_D(self):
        return 4 * (self.n_q + 1)

    @property
    def n_K(self):
        return 3 * (self.n_v + 1)

    @property
    def off_K(self):
        return self.n_D

    @property
    def off_p0(self):
        return self.n_D + self.n_K

    @property
    def off_ba(self):
        return self.off_p0 + 3

    @property
    def off_bg(self):
        return self.off_p0 + 6

    @property
    def off_X(self):
        return self.off_p0 + 9

    @property
    def n_state(self):
        """ columns before the landmarks """
        return self.off_X

    @property
    def size(self):
        return self.off_X + 3 * len(self.feature_ids)

    def landmark_index(self, fids):
        """ (mask of fids present in the layout, their landmark indices) """
        ids = np.asarray(self.feature_ids, dtype=int)
        fids = np.asarray(fids, dtype=int)
        if len(ids) == 0:
            return np.zeros(len(fids), dtype=bool), np.zeros(0, dtype=int)
        pos = np.clip(np.searchsorted(ids, fids), 0, len(ids) - 1)
        mask = ids[pos] == fids
        return mask, pos[mask]

    def pack(self, D, K, p0, ba, bg, landmarks=None):
        """ landmarks: {feature_id: xyz} covering feature_ids """
        landmarks = landmarks or {}
        parts = [np.ravel(D), np.ravel(K), p0, ba, bg]
        parts += [landmarks[fid] for fid in self.feature_ids]
        values = np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])
        if len(values) != self.size:
            raise ParameterError(f"decision vector has {len(values)} entries, "
                                 f"layout needs {self.size}")
        return values


@dataclass(frozen=True, eq=False)
class DecisionVector:
    values: np.ndarray
    layout: DecisionLayout

    @classmethod
    def from_parts(cls, layout, traj, ba, bg, landmarks=None):
        return cls(layout.pack(traj.D, traj.K, traj.p0, ba, bg, landmarks), layout)

    @property
    def D(self):
        lay = self.layout
        return self.values[:lay.n_D].reshape(4, lay.n_q + 1)

    @property
    def K(self):
        lay = self.layout
        return self.values[lay.off_K:lay.off_p0].reshape(3, lay.n_v + 1)

    @property
    def p0(self):
        return self.values[self.layout.off_p0:self.layout.off_ba]

    @property
    def ba(self):
        return self.values[self.layout.off_ba:self.layout.off_bg]

    @property
    def bg(self):
        return self.values[self.layout.off_bg:self.layout.off_X]

    @property
    def landmarks(self):
        """ (S, 3) array in layout order """
        return self.values[self.layout.off_X:].reshape(-1, 3)

    def landmark_dict(self):
        return dict(zip(self.layout.feature_ids, self.landmarks))

    def trajectory(self, time_map):
        return ChebTrajectory(self.D.copy(), self.K.copy(), self.p0.copy(), time_map)


@dataclass
class Assembly:
    """ weighted residuals, constraints and per-block costs at one x """
    residuals: np.ndarray
    constraints: np.ndarray
    block_costs: dict
    dropped: int = 0
    depth: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def cost(self):
        return float(self.residuals @ self.residuals)


def _evaluate(problem, x, with_jacobian=False):
    """ the single pass behind assemble_residuals and jacobian """
    nodes = problem.nodes
    lay = x.layout
    noise, ext, cfg = problem.noise, problem.ext, problem.cfg
    D, K, p0, ba, bg = x.D, x.K, x.p0, x.ba, x.bg

    # prior at tau = -1, where G(-1) = 0 so p = p0
    q_start = nodes.Fq_start @ D.T
    v_start = nodes.Fv_start @ K.T
    r_prior, dprior_q = prior_error(q_start, v_start, p0, ba, bg, problem.prior, jac=True)
    w_prior = apply_weight(r_prior, noise.Wp)

    q = nodes.Fq @ D.T
    q_dot = nodes.dFq @ D.T
    accel = nodes.dFv @ K.T
    scale = nodes.row_scale[:, None]
    e_g, dg_q, dg_qdot = gyro_error(q, q_dot, bg, nodes.omega, jac=True)
    e_a, da_q, da_a = accel_error(q, accel, ba, nodes.force, ext.gravity, jac=True)
    w_g = apply_weight(e_g, noise.Wg) * scale
    w_a = apply_weight(e_a, noise.Wa) * scale

    mask, lm = lay.landmark_index(nodes.obs_fid)
    n_obs = int(mask.sum())
    if n_obs:
        Fq_o, Gv_o = nodes.Fq_obs[mask], nodes.Gv_obs[mask]
        q_o = Fq_o @ D.T
        p_o = p0 + Gv_o @ K.T
        e_c, depth, dc_q, dc_X = reprojection_error(q_o, p_o, x.landmarks[lm],
                                                    nodes.obs_xy[mask], ext, jac=True)
        w_c = apply_weight(e_c, noise.Wc)
        valid = depth > cfg.depth_min
        row_w = valid.astype(float)
        if cfg.huber_delta is not None:
            row_w = row_w * huber_weights(w_c, cfg.huber_delta)
        w_c = w_c * row_w[:, None]
    else:
        w_c = np.zeros((0, 2))
        depth = np.zeros(0)
        valid = np.zeros(0, dtype=bool)

    q_c = nodes.Fc @ D.T
    constraints = np.sum(q_c * q_c, axis=1) - 1.0

    dropped = int(n_obs - valid.sum())
    if dropped:
        logger.debug(f"{dropped} observations behind depth {cfg.depth_min} m dropped")
    assembly = Assembly(
        residuals=np.concatenate([w_prior, w_g.ravel(), w_a.ravel(), w_c.ravel()]),
        constraints=constraints,
        block_costs={"prior": float(w_prior @ w_prior),
                     "gyro": float(np.sum(w_g * w_g)),
                     "accel": float(np.sum(w_a * w_a)),
                     "reprojection": float(np.sum(w_c * w_c))},
        dropped=dropped, depth=depth)
    if not with_jacobian:
        return assembly, None

    n_nodes = len(nodes.tau)
    n_D, n_K = lay.n_D, lay.n_K
    top = np.zeros((15 + 6 * n_nodes, lay.n_state))

    # prior rows
    block = np.zeros((15, lay.n_state))
    block[0:3, :n_D] = np.kron(dprior_q, nodes.Fq_start)
    block[3:6, lay.off_K:lay.off_p0] = np.kron(np.eye(3), nodes.Fv_start)
    block[6:9, lay.off_p0:lay.off_ba] = np.eye(3)
    block[9:12, lay.off_ba:lay.off_bg] = np.eye(3)
    block[12:15, lay.off_bg:lay.off_X] = np.eye(3)
    top[:15] = noise.Wp.T @ block

    # gyro rows
    jac_g = np.zeros((n_nodes, 3, lay.n_state))
    jac_g[:, :, :n_D] = (np.einsum('nra,nj->nraj', dg_q, nodes.Fq)
                         + np.einsum('nra,nj->nraj', dg_qdot, nodes.dFq)).reshape(n_nodes, 3, n_D)
    jac_g[:, :, lay.off_bg:lay.off_X] = -np.eye(3)
    jac_g = np.einsum('sr,nrc->nsc', noise.Wg.T, jac_g) * scale[:, :, None]
    top[15:15 + 3 * n_nodes] = jac_g.reshape(3 * n_nodes, lay.n_state)

    # accel rows
    jac_a = np.zeros((n_nodes, 3, lay.n_state))
    jac_a[:, :, :n_D] = np.einsum('nra,nj->nraj', da_q, nodes.Fq).reshape(n_nodes, 3, n_D)
    jac_a[:, :, lay.off_K:lay.off_p0] = np.einsum(
        'nrb,nj->nrbj', da_a, nodes.dFv).reshape(n_nodes, 3, n_K)
    jac_a[:, :, lay.off_ba:lay.off_bg] = -np.eye(3)
    jac_a = np.einsum('sr,nrc->nsc', noise.Wa.T, jac_a) * scale[:, :, None]
    top[15 + 3 * n_nodes:] = jac_a.reshape(3 * n_nodes, lay.n_state)

    n_X = lay.size - lay.n_state
    parts = [scipy.sparse.hstack([scipy.sparse.csr_matrix(top),
                                  scipy.sparse.csr_matrix((top.shape[0], n_X))])]
    if n_obs:
        d_p = -dc_X
        jac_c = np.zeros((n_obs, 2, lay.n_state))
        jac_c[:, :, :n_D] = np.einsum('nra,nj->nraj', dc_q, Fq_o).reshape(n_obs, 2, n_D)
        jac_c[:, :, lay.off_K:lay.off_p0] = np.einsum(
            'nrb,nj->nrbj', d_p, Gv_o).reshape(n_obs, 2, n_K)
        jac_c[:, :, lay.off_p0:lay.off_ba] = d_p
        jac_c = np.einsum('sr,nrc->nsc', noise.Wc.T, jac_c) * row_w[:, None, None]
        jac_x = np.einsum('sr,nrc->nsc', noise.Wc.T, dc_X) * row_w[:, None, None]
        rows = np.repeat(np.arange(2 * n_obs).reshape(n_obs, 2, 1), 3, axis=2)
        cols = np.broadcast_to((3 * lm)[:, None, None] + np.arange(3), (n_obs, 2, 3))
        landmark_part = scipy.sparse.coo_matrix(
            (jac_x.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * n_obs, n_X))
        parts.append(scipy.sparse.hstack([
            scipy.sparse.csr_matrix(jac_c.reshape(2 * n_obs, lay.n_state)),
            landmark_part]))
    jac = scipy.sparse.vstack(parts).tocsr()

    return assembly, jac


def assemble_residuals(problem, x):
    """ weighted residual vector, constraint vector and block costs """
    assembly, _ = _evaluate(problem, x)
    return assembly


def jacobian(problem, x):
    """ sparse Jacobian of the weighted residuals w.r.t. the decision vector """
    _, jac = _evaluate(problem, x, with_jacobian=True)
    return jac


def constraint_jacobian(problem, x):
    """ d(|q(tau_k)|^2 - 1)/dx, dense, nonzero only in the D columns """
    nodes = problem.nodes
    q_c = nodes.Fc @ x.D.T
    jac_c = np.zeros((len(q_c), x.layout.size))
    jac_c[:, :x.layout.n_D] = (2.0 * q_c[:, :, None] * nodes.Fc[:, None, :]).reshape(
        len(q_c), x.layout.n_D)
    return jac_c


def dead_reckon(problem, substeps=None):
    """
    Integrates the IMU from the prior over the interval on a grid of
    substeps points per IMU period: RK4 for the attitude, trapezoidal
    for velocity and position, prior biases removed.
    Returns (times, quats, vels, positions).
    """
    substeps = problem.cfg.init_substeps if substeps is None else substeps
    tmap, prior, nodes = problem.time_map, problem.prior, problem.nodes
    gravity = problem.ext.gravity
    n_steps = max(1, int(np.ceil((tmap.tM - tmap.t0) * problem.imu.rate * substeps - 1e-9)))
    times = np.linspace(tmap.t0, tmap.tM, n_steps + 1)
    h = times[1] - times[0]
    try:
        omega = nodes.gyro(times) - prior.bg0
        omega_mid = nodes.gyro(times[:-1] + 0.5 * h) - prior.bg0
        force = nodes.accel(times) - prior.ba0
    except ExtrapolationError as err:
        raise AssemblyError(f"IMU does not cover the interval: {err}") from err

    def rate(q, w):
        return 0.5 * quat_mul(q, pure(w))

    quats = np.empty((n_steps + 1, 4))
    quats[0] = unit(prior.q0)
    for k in range(n_steps):
        q = quats[k]
        k1 = rate(q, omega[k])
        k2 = rate(q + 0.5 * h * k1, omega_mid[k])
        k3 = rate(q + 0.5 * h * k2, omega_mid[k])
        k4 = rate(q + h * k3, omega[k + 1])
        quats[k + 1] = unit(q + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
    acc = np.einsum('nij,nj->ni', quat_to_rot(quats), force) + gravity
    vels = np.empty((n_steps + 1, 3))
    vels[0] = prior.v0
    vels[1:] = prior.v0 + np.cumsum(0.5 * h * (acc[:-1] + acc[1:]), axis=0)
    pos = np.empty((n_steps + 1, 3))
    pos[0] = prior.p0
    pos[1:] = prior.p0 + np.cumsum(0.5 * h * (vels[:-1] + vels[1:]), axis=0)
    return times, quats, vels, pos


def camera_poses(quats, positions, ext):
    """ (R_cw, t) with Y = R_cw X + t for every pose """
    R_cw = ext.C_bc @ attitude_matrix(quats)
    t = ext.p_cb - np.einsum('nij,nj->ni', R_cw, positions)
    return R_cw, t


def triangulate(quats, positions, xys, ext, min_parallax_deg=1.0, depth_min=0.05):
    """
    Linear (DLT) triangulation of one landmark from body poses and
    normalized observations. Raises TriangulationError when the views
    lack parallax or the point is not in front of every camera.
    """
    quats = np.atleast_2d(quats)
    positions = np.atleast_2d(positions)
    xys = np.atleast_2d(xys)
    if len(xys) < 2:
        raise TriangulationError("need at least two views")
    R_cw, t = camera_poses(quats, positions, ext)
    rays = np.einsum('nji,nj->ni', R_cw, np.column_stack([xys, np.ones(len(xys))]))
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    cosines = np.clip(rays @ rays.T, -1.0, 1.0)
    parallax = np.degrees(np.arccos(np.min(cosines)))
    if parallax < min_parallax_deg:
        raise TriangulationError(f"parallax {parallax:.3f} deg below {min_parallax_deg}")
    rows = []
    for rot, trans, (x, y) in zip(R_cw, t, xys):
        rows.append(np.append(x * rot[2] - rot[0], x * trans[2] - trans[0]))
        rows.append(np.append(y * rot[2] - rot[1], y * trans[2] - trans[1]))
    _, _, vt = np.linalg.svd(np.array(rows))
    hom = vt[-1]
    if abs(hom[3]) < 1e-12 * np.linalg.norm(hom):
        raise TriangulationError("point at infinity")
    point = hom[:3] / hom[3]
    depth = np.einsum('nij,j->ni', R_cw, point)[:, 2] + t[:, 2]
    if np.any(depth <= depth_min):
        raise TriangulationError(f"triangulated depth {depth.min():.3f} m")
    return point


def triangulate_tracks(problem, pose_at):
    """
    {feature_id: xyz} for every track that triangulates; pose_at(times)
    gives (quats, positions). Failures are logged and left out.
    """
    landmarks = {}
    for fid, track in problem.tracks.items():
        times = np.array([o.frame_time for o in track])
        quats, positions = pose_at(times)
        try:
            landmarks[fid] = triangulate(quats, positions, [o.xy for o in track], problem.ext,
                                         problem.cfg.min_parallax_deg, problem.cfg.depth_min)
        except TriangulationError as err:
            logger.warning(f"landmark {fid} excluded: {err}")
    return landmarks


def initialize(problem):
    """
    Dead-reckoned trajectory fitted by Chebyshev polynomials, p0 and
    biases from the prior, landmarks by linear triangulation.
    """
    times, quats, vels, _ = dead_reckon(problem)
    traj = fit_to_samples(times, quats, vels, problem.prior.p0, problem.n_q, problem.n_v,
                          problem.time_map)

    def pose_at(t):
        tau = cb.time_to_tau(problem.time_map, t)
        return traj.attitude_at(tau), traj.position_at(tau)

    landmarks = triangulate_tracks(problem, pose_at)
    layout = DecisionLayout(problem.n_q, problem.n_v, tuple(sorted(landmarks)))
    logger.info(f"initialized {len(landmarks)}/{len(problem.tracks)} landmarks")
    return DecisionVector.from_parts(layout, traj, problem.prior.ba0, problem.prior.bg0,
                                     landmarks)


def solve(problem, x0, cfg=None):
    """
    Augmented-Lagrangian Levenberg-Marquardt solve from x0.
    Returns (x, trajectory, SolveReport). Divergence raises
    SolverFailure carrying the report.
    """
    cfg = problem.cfg if cfg is None else cfg
    layout = x0.layout
    start = time.perf_counter()
    norms = np.linalg.norm(problem.nodes.Fc @ x0.D.T, axis=1)
    if np.min(norms) <= 0.5:
        raise SolverFailure(f"initial quaternion norm {np.min(norms):.3f} is not above 0.5")

    def evaluate(values):
        assembly, _ = _evaluate(problem, DecisionVector(values, layout))
        return assembly.residuals, assembly.constraints

    def linearize(values):
        x = DecisionVector(values, layout)
        # through the module attribute so checks can substitute it
        jac = jacobian(problem, x)
        return jac, constraint_jacobian(problem, x)

    excluded = len(problem.tracks) - len(layout.feature_ids)
    try:
        result = augmented_lagrangian(evaluate, linearize, x0.values, cfg,
                                      tail=3 * len(layout.feature_ids))
    except SolverFailure as err:
        report = SolveReport(False, 0, 0, np.inf, np.inf, wall_time=time.perf_counter() - start,
                             excluded_landmarks=excluded, message=str(err))
        raise SolverFailure(str(err), report=report) from err

    x = DecisionVector(result.x, layout)
    final = assemble_residuals(problem, x)
    if final.dropped:
        logger.warning(f"{final.dropped} observations behind depth {problem.cfg.depth_min} m "
                       f"left out of the chebyshev solution")
    report = stack_report(result, final.block_costs, time.perf_counter() - start, "chebyshev",
                          dropped_observations=final.dropped, excluded_landmarks=excluded)
    report.notes = {"n_q": problem.n_q, "n_v": problem.n_v,
                    "quad_order": problem.quad_order, "efh_degree": problem.cfg.efh_degree}
    if not np.isfinite(final.cost) or final.cost > cfg.divergence_cost:
        report.converged = False
        raise SolverFailure(f"solver diverged, cost {final.cost:.3e}", report=report)
    logger.info(f"chebyshev solve: converged={report.converged} cost={report.cost:.6e} "
                f"max|c|={report.max_constraint:.2e} outer={report.outer_iterations} "
                f"inner={report.inner_iterations}")
    return x, x.trajectory(problem.time_map), report
