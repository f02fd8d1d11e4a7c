"""
Discrete-time comparison estimator: IMU preintegration factors between
keyframes, bundle-adjustment reprojection at keyframes, one shared bias
pair, solved by the same Levenberg-Marquardt loop.

Preintegration is midpoint in the first body frame. The error state is
(dtheta, dv, dp, dbg, dba) with attitude perturbed on the right; the
transition matrices are the exact tangent of the discrete midpoint map,
so the bias Jacobians agree with re-integration to second order.
"""
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.optimize._numdiff import approx_derivative, group_columns

from .config import BaselineConfig
from .errors import AssemblyError, ParameterError, SolverFailure
from .estimator import dead_reckon, triangulate_tracks
from .geometry import (quat_conj, quat_exp, quat_log, quat_mul, quat_to_rot,
                       right_jacobian, skew, unit)
from .log import logger
from .measurement_models import (ImuSeries, apply_weight, huber_weights, prior_error,
                                 reprojection_error)
from .optimizer import SolveReport, least_squares, stack_report

# pylint: disable=logging-fstring-interpolation
# pylint: disable=invalid-name, too-many-locals, too-many-arguments
# the propagation follows the error-state equations term by term.

KEYFRAME_MATCH_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PreintegratedFactor:
    """
    Relative motion between two keyframes in the first body frame.
    bias_jacobian rows are (theta, v, p), columns (bg, ba).
    """
    dq: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    covariance: np.ndarray
    bias_jacobian: np.ndarray
    dt: float
    bg0: np.ndarray
    ba0: np.ndarray

    def corrected(self, bg, ba):
        """ first-order bias correction of (dq, dv, dp) """
        delta = np.concatenate([np.asarray(bg) - self.bg0, np.asarray(ba) - self.ba0])
        jac = self.bias_jacobian
        dq = quat_mul(self.dq, quat_exp(jac[0:3] @ delta))
        return dq, self.dv + jac[3:6] @ delta, self.dp + jac[6:9] @ delta

    @cached_property
    def sqrt_covariance(self):
        """ lower Cholesky factor of the covariance, lightly regularized """
        jitter = 1e-12 * max(np.max(np.diag(self.covariance)), 1e-30)
        return scipy.linalg.cholesky(self.covariance + jitter * np.eye(9), lower=True)


@dataclass(frozen=True, eq=False)
class KeyframeState:
    q: np.ndarray
    v: np.ndarray
    p: np.ndarray


@dataclass(eq=False)
class DiscreteState:
    """ keyframe states, shared biases and landmarks """
    times: np.ndarray
    quats: np.ndarray
    vels: np.ndarray
    positions: np.ndarray
    ba: np.ndarray
    bg: np.ndarray
    landmarks: dict = field(default_factory=dict)

    def keyframe(self, k):
        return KeyframeState(self.quats[k], self.vels[k], self.positions[k])


def _integrate(times, gyro, accel, bg, ba, noise=None):
    """
    Midpoint preintegration over samples at times (need not be uniform).
    Returns cumulative (dq, dv, dp) per sample and, with a noise model,
    the 15x15 covariance and transition product at the last sample.
    """
    times = np.asarray(times, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    n = len(times)
    dq = np.zeros((n, 4))
    dv = np.zeros((n, 3))
    dp = np.zeros((n, 3))
    dq[0] = [1.0, 0.0, 0.0, 0.0]
    cov = np.zeros((15, 15))
    phi = np.eye(15)
    eye = np.eye(3)
    for k in range(n - 1):
        dt = times[k + 1] - times[k]
        omega = 0.5 * (gyro[k] + gyro[k + 1]) - bg
        step = quat_exp(omega * dt)
        dq[k + 1] = unit(quat_mul(dq[k], step))
        rot0 = quat_to_rot(dq[k])
        rot1 = quat_to_rot(dq[k + 1])
        f0 = accel[k] - ba
        f1 = accel[k + 1] - ba
        acc = 0.5 * (rot0 @ f0 + rot1 @ f1)
        dp[k + 1] = dp[k] + dv[k] * dt + 0.5 * acc * dt * dt
        dv[k + 1] = dv[k] + acc * dt
        if noise is None:
            continue
        rot_step_t = quat_to_rot(step).T
        jr = right_jacobian(omega * dt)
        a_theta = -0.5 * (rot0 @ skew(f0) + rot1 @ skew(f1) @ rot_step_t)
        a_bg = 0.5 * rot1 @ skew(f1) @ jr * dt
        a_ba = -0.5 * (rot0 + rot1)
        F = np.eye(15)
        F[0:3, 0:3] = rot_step_t
        F[0:3, 9:12] = -jr * dt
        F[3:6, 0:3] = a_theta * dt
        F[3:6, 9:12] = a_bg * dt
        F[3:6, 12:15] = a_ba * dt
        F[6:9, 0:3] = 0.5 * a_theta * dt * dt
        F[6:9, 3:6] = eye * dt
        F[6:9, 9:12] = 0.5 * a_bg * dt * dt
        F[6:9, 12:15] = 0.5 * a_ba * dt * dt
        # white noise enters like a bias error over one step
        G = np.zeros((15, 12))
        G[:, 0:3] = F[:, 9:12]
        G[:, 3:6] = F[:, 12:15]
        G[9:12, 0:3] = 0.0
        G[12:15, 3:6] = 0.0
        G[9:12, 6:9] = eye
        G[12:15, 9:12] = eye
        Q = scipy.linalg.block_diag(noise.Rg, noise.Ra, noise.Rbg * dt, noise.Rba * dt)
        cov = F @ cov @ F.T + G @ Q @ G.T
        phi = F @ phi
    return dq, dv, dp, cov, phi


def preintegrate(imu, bg0, ba0, noise):
    """
    PreintegratedFactor over the IMU samples (ImuSeries or a sequence
    of ImuSample), first sample to last.
    """
    if not isinstance(imu, ImuSeries):
        imu = ImuSeries.from_samples(imu)
    if len(imu) < 2:
        raise ParameterError("preintegration needs at least two samples")
    bg0 = np.asarray(bg0, dtype=float)
    ba0 = np.asarray(ba0, dtype=float)
    dq, dv, dp, cov, phi = _integrate(imu.times, imu.gyro, imu.accel, bg0, ba0, noise)
    return PreintegratedFactor(dq=dq[-1], dv=dv[-1], dp=dp[-1], covariance=cov[:9, :9],
                               bias_jacobian=phi[:9, 9:15].copy(),
                               dt=float(imu.times[-1] - imu.times[0]), bg0=bg0, ba0=ba0)


def preint_residual(factor, state_i, state_j, gravity, ba=None, bg=None, weighted=True):
    """
    (r_theta, r_v, r_p) of the relative-motion model with gravity and
    first-order bias correction, whitened by the factor covariance.
    """
    ba = factor.ba0 if ba is None else ba
    bg = factor.bg0 if bg is None else bg
    dq, dv, dp = factor.corrected(bg, ba)
    dt = factor.dt
    rot_i_t = quat_to_rot(state_i.q).T
    r_theta = quat_log(quat_mul(quat_conj(dq), quat_mul(quat_conj(state_i.q), state_j.q)))
    r_v = rot_i_t @ (state_j.v - state_i.v - gravity * dt) - dv
    r_p = rot_i_t @ (state_j.p - state_i.p - state_i.v * dt - 0.5 * gravity * dt * dt) - dp
    r = np.concatenate([r_theta, r_v, r_p])
    if not weighted:
        return r
    return scipy.linalg.solve_triangular(factor.sqrt_covariance, r, lower=True)


def keyframe_times(time_map, keyframe_dt):
    """ t0, t0 + dt, ..., tM; the count is rounded so the last one is tM """
    count = max(1, int(round((time_map.tM - time_map.t0) / keyframe_dt)))
    return np.linspace(time_map.t0, time_map.tM, count + 1)


def _imu_grid(problem, t_start, t_end):
    """ interpolated IMU on the sample period between two times """
    count = max(1, int(round((t_end - t_start) * problem.imu.rate)))
    times = np.linspace(t_start, t_end, count + 1)
    nodes = problem.nodes
    return times, nodes.gyro(times), nodes.accel(times)


def _interp_states(grid, quats, vels, pos, at):
    """ componentwise linear interpolation, quaternions renormalized """
    def interp(values):
        return np.column_stack([np.interp(at, grid, values[:, i])
                                for i in range(values.shape[1])])
    return unit(interp(quats)), interp(vels), interp(pos)


class _Layout:
    """ flat vector: per keyframe (theta, v, p), then ba, bg, landmarks """

    def __init__(self, n_kf, feature_ids):
        self.n_kf = n_kf
        self.feature_ids = tuple(feature_ids)
        self.off_ba = 9 * n_kf
        self.off_bg = self.off_ba + 3
        self.off_X = self.off_ba + 6
        self.size = self.off_X + 3 * len(self.feature_ids)
        self.index = {fid: i for i, fid in enumerate(self.feature_ids)}

    def kf(self, k):
        return slice(9 * k, 9 * k + 9)

    def landmark(self, i):
        return slice(self.off_X + 3 * i, self.off_X + 3 * i + 3)


class _DiscreteProblem:
    """ the keyframe least-squares problem built from an EstimationProblem """

    def __init__(self, problem, keyframe_dt):
        self.problem = problem
        self.times = keyframe_times(problem.time_map, keyframe_dt)
        if len(self.times) < 2:
            raise AssemblyError("need at least two keyframes")
        self.gravity = problem.ext.gravity

        grid, quats, vels, pos = dead_reckon(problem)
        self.ref_q, v_init, p_init = _interp_states(grid, quats, vels, pos, self.times)

        # observations at keyframes only
        kf_obs = {}
        for fid, track in problem.tracks.items():
            kept = []
            for obs in track:
                k = int(np.argmin(np.abs(self.times - obs.frame_time)))
                if abs(self.times[k] - obs.frame_time) <= KEYFRAME_MATCH_TOL:
                    kept.append((k, obs))
            if len({k for k, _ in kept}) >= 2:
                kf_obs[fid] = kept

        def pose_at(t):
            q, _, p = _interp_states(grid, quats, vels, pos, t)
            return q, p

        restricted = _TrackView(problem, {fid: [o for _, o in kept]
                                          for fid, kept in kf_obs.items()})
        landmarks = triangulate_tracks(restricted, pose_at)
        self.excluded = len(problem.tracks) - len(landmarks)
        self.layout = _Layout(len(self.times), sorted(landmarks))

        obs = [(k, self.layout.index[fid], o.xy) for fid, kept in kf_obs.items()
               if fid in landmarks for k, o in kept]
        self.obs_kf = np.array([o[0] for o in obs], dtype=int)
        self.obs_lm = np.array([o[1] for o in obs], dtype=int)
        self.obs_xy = np.array([o[2] for o in obs], dtype=float).reshape(-1, 2)

        self.factors = []
        for k in range(len(self.times) - 1):
            t_grid, gyro, accel = _imu_grid(problem, self.times[k], self.times[k + 1])
            self.factors.append(preintegrate(ImuSeries(t_grid, gyro, accel, spacing_tol=1e-6),
                                             problem.prior.bg0, problem.prior.ba0,
                                             problem.noise))

        x0 = np.zeros(self.layout.size)
        for k in range(len(self.times)):
            x0[self.layout.kf(k)] = np.concatenate([np.zeros(3), v_init[k], p_init[k]])
        x0[self.layout.off_ba:self.layout.off_bg] = problem.prior.ba0
        x0[self.layout.off_bg:self.layout.off_X] = problem.prior.bg0
        for fid, i in self.layout.index.items():
            x0[self.layout.landmark(i)] = landmarks[fid]
        self.x0 = x0
        self.n_residuals = 15 + 9 * len(self.factors) + 2 * len(self.obs_kf)

    def unpack(self, x):
        lay = self.layout
        blocks = x[:lay.off_ba].reshape(lay.n_kf, 9)
        quats = quat_mul(self.ref_q, quat_exp(blocks[:, 0:3]))
        return (quats, blocks[:, 3:6], blocks[:, 6:9], x[lay.off_ba:lay.off_bg],
                x[lay.off_bg:lay.off_X], x[lay.off_X:].reshape(-1, 3))

    def residual_blocks(self, x):
        problem = self.problem
        quats, vels, pos, ba, bg, X = self.unpack(x)
        r_prior = apply_weight(prior_error(quats[0], vels[0], pos[0], ba, bg, problem.prior),
                               problem.noise.Wp)
        r_preint = np.concatenate(
            [preint_residual(f, KeyframeState(quats[k], vels[k], pos[k]),
                             KeyframeState(quats[k + 1], vels[k + 1], pos[k + 1]),
                             self.gravity, ba, bg) for k, f in enumerate(self.factors)])
        if len(self.obs_kf):
            e_c, depth = reprojection_error(quats[self.obs_kf], pos[self.obs_kf],
                                            X[self.obs_lm], self.obs_xy, problem.ext)
            w_c = apply_weight(e_c, problem.noise.Wc)
            row_w = (depth > problem.cfg.depth_min).astype(float)
            if problem.cfg.huber_delta is not None:
                row_w = row_w * huber_weights(w_c, problem.cfg.huber_delta)
            w_c = w_c * row_w[:, None]
            dropped = int(np.sum(depth <= problem.cfg.depth_min))
        else:
            w_c = np.zeros((0, 2))
            dropped = 0
        return r_prior, r_preint, w_c.ravel(), dropped

    def residual(self, x):
        r_prior, r_preint, r_c, _ = self.residual_blocks(x)
        return np.concatenate([r_prior, r_preint, r_c])

    @cached_property
    def sparsity(self):
        """ (structure, column groups) for sparse finite differences """
        lay = self.layout
        pattern = scipy.sparse.lil_matrix((self.n_residuals, lay.size), dtype=int)
        pattern[0:15, lay.kf(0)] = 1
        pattern[0:15, lay.off_ba:lay.off_X] = 1
        for k in range(len(self.factors)):
            rows = slice(15 + 9 * k, 24 + 9 * k)
            pattern[rows, lay.kf(k)] = 1
            pattern[rows, lay.kf(k + 1)] = 1
            pattern[rows, lay.off_ba:lay.off_X] = 1
        base = 15 + 9 * len(self.factors)
        for n, (k, i) in enumerate(zip(self.obs_kf, self.obs_lm)):
            rows = slice(base + 2 * n, base + 2 * n + 2)
            pattern[rows, lay.kf(k)] = 1
            pattern[rows, lay.landmark(i)] = 1
        pattern = pattern.tocsr()
        return pattern, group_columns(pattern)

    def jacobian(self, x, method):
        return approx_derivative(self.residual, x, method=method, sparsity=self.sparsity)


class _TrackView:
    """ a problem whose tracks are replaced, for triangulation """

    def __init__(self, problem, tracks):
        self.tracks = tracks
        self.ext = problem.ext
        self.cfg = problem.cfg


def densify(state, problem, times):
    """
    States at arbitrary times in the interval by IMU dead-reckoning
    from the nearest earlier keyframe with the estimated biases.
    Returns (quats, vels, positions).
    """
    times = np.asarray(times, dtype=float)
    quats = np.empty((len(times), 4))
    vels = np.empty((len(times), 3))
    pos = np.empty((len(times), 3))
    gravity = problem.ext.gravity
    nodes = problem.nodes
    owner = np.clip(np.searchsorted(state.times, times, side='right') - 1,
                    0, len(state.times) - 1)
    for k in np.unique(owner):
        pick = np.flatnonzero(owner == k)
        t_k = state.times[k]
        grid = np.unique(np.concatenate([[t_k], times[pick]]))
        d_q, d_v, d_p, _, _ = _integrate(grid, nodes.gyro(grid), nodes.accel(grid),
                                         state.bg, state.ba)
        rot = quat_to_rot(state.quats[k])
        dt = grid - t_k
        at = np.searchsorted(grid, times[pick])
        quats[pick] = quat_mul(state.quats[k], d_q[at])
        vels[pick] = state.vels[k] + np.outer(dt[at], gravity) + d_v[at] @ rot.T
        pos[pick] = state.positions[k] + np.outer(dt[at], state.vels[k]) \
            + 0.5 * np.outer(dt[at] ** 2, gravity) + d_p[at] @ rot.T
    return quats, vels, pos


def solve_discrete(problem, keyframe_dt=None, baseline_cfg=None, cfg=None):
    """
    Preintegration + keyframe bundle adjustment over the problem's
    interval. Returns (DiscreteState, SolveReport).
    """
    baseline_cfg = baseline_cfg or BaselineConfig()
    keyframe_dt = baseline_cfg.keyframe_dt if keyframe_dt is None else keyframe_dt
    cfg = problem.cfg if cfg is None else cfg
    start = time.perf_counter()
    discrete = _DiscreteProblem(problem, keyframe_dt)
    try:
        result = least_squares(discrete.residual,
                               lambda x: discrete.jacobian(x, baseline_cfg.fd_method),
                               discrete.x0, cfg, tail=3 * len(discrete.layout.feature_ids))
    except SolverFailure as err:
        report = SolveReport(False, 0, 0, np.inf, 0.0, wall_time=time.perf_counter() - start,
                             method="preintegration", message=str(err))
        raise SolverFailure(str(err), report=report) from err

    r_prior, r_preint, r_c, dropped = discrete.residual_blocks(result.x)
    if dropped:
        logger.warning(f"{dropped} observations behind depth {problem.cfg.depth_min} m "
                       f"left out of the preintegration solution")
    costs = {"prior": float(r_prior @ r_prior), "preintegration": float(r_preint @ r_preint),
             "reprojection": float(r_c @ r_c)}
    report = stack_report(result, costs, time.perf_counter() - start, "preintegration",
                          dropped_observations=dropped, excluded_landmarks=discrete.excluded)
    report.notes = {"keyframe_dt": float(keyframe_dt), "keyframes": len(discrete.times),
                    "integrator": "midpoint", "fd_method": baseline_cfg.fd_method}
    if not np.isfinite(report.cost) or report.cost > cfg.divergence_cost:
        report.converged = False
        raise SolverFailure(f"baseline diverged, cost {report.cost:.3e}", report=report)
    quats, vels, pos, ba, bg, X = discrete.unpack(result.x)
    state = DiscreteState(times=discrete.times, quats=quats, vels=vels.copy(),
                          positions=pos.copy(), ba=ba.copy(), bg=bg.copy(),
                          landmarks=dict(zip(discrete.layout.feature_ids, X.copy())))
    logger.info(f"preintegration solve: converged={report.converged} cost={report.cost:.6e} "
                f"keyframes={len(discrete.times)} iterations={report.inner_iterations}")
    return state, report
