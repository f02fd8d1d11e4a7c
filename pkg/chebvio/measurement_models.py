"""
Measurement types and residuals.

The residual functions come in two layers. The *_error functions work
on evaluated quantities (attitude, its rate, acceleration, position,
landmark) and broadcast over leading axes; with jac=True they also
return the local Jacobians the estimator chains into coefficient
space. The *_residual functions are the same residuals evaluated on a
ChebTrajectory at one tau.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg

from .cheb_basis import time_to_tau
from .errors import CheiralityError, ParameterError
from .geometry import (CONJ, VEC, attitude_jacobian, attitude_matrix, left_matrix,
                       quat_conj, quat_mul, right_matrix, unit)

# pylint: disable=invalid-name
# Rg, Ra, Rc, P0, C_bc follow the math.

# pylint: disable=too-many-arguments
# residuals take the measurement, the state and the calibration.


@dataclass(frozen=True)
class ImuSample:
    """ one raw IMU reading: t (s), gyro (rad/s), accel (m/s^2) """
    t: float
    gyro: tuple
    accel: tuple


@dataclass(frozen=True, eq=False)
class ImuSeries:
    """
    Equispaced IMU readings stored column-wise. times (n,), gyro and
    accel (n, 3). Timestamps strictly increase and are equispaced
    within spacing_tol seconds.
    """
    times: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    spacing_tol: float = 1e-6

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if times.ndim != 1 or len(gyro) != len(times) or len(accel) != len(times):
            raise ParameterError("IMU times, gyro and accel lengths differ")
        if len(times) >= 2:
            steps = np.diff(times)
            if np.any(steps <= 0):
                raise ParameterError("IMU timestamps are not strictly increasing")
            if np.max(np.abs(steps - steps.mean())) > self.spacing_tol:
                raise ParameterError("IMU samples are not equispaced")
        if not (np.all(np.isfinite(gyro)) and np.all(np.isfinite(accel))):
            raise ParameterError("IMU readings must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "gyro", gyro)
        object.__setattr__(self, "accel", accel)

    @classmethod
    def from_samples(cls, samples, spacing_tol=1e-6):
        samples = list(samples)
        return cls(np.array([s.t for s in samples]),
                   np.array([s.gyro for s in samples]),
                   np.array([s.accel for s in samples]), spacing_tol)

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        for t, gyro, accel in zip(self.times, self.gyro, self.accel):
            yield ImuSample(float(t), tuple(gyro), tuple(accel))

    @property
    def period(self):
        return (self.times[-1] - self.times[0]) / (len(self.times) - 1)

    @property
    def rate(self):
        return 1.0 / self.period

    def window(self, t0, tM, tol=1e-9):
        """ the samples with t0 <= t <= tM """
        keep = (self.times >= t0 - tol) & (self.times <= tM + tol)
        return ImuSeries(self.times[keep], self.gyro[keep], self.accel[keep],
                         self.spacing_tol)


@dataclass(frozen=True)
class FeatureObservation:
    """ normalized image coordinates of a landmark in one frame """
    frame_time: float
    feature_id: int
    xy: tuple

    def __post_init__(self):
        if not np.all(np.isfinite(self.xy)) or not np.isfinite(self.frame_time):
            raise ParameterError(f"observation of feature {self.feature_id} is not finite")


def group_by_feature(observations):
    """ {feature_id: [observations sorted by frame time]} """
    groups = defaultdict(list)
    for obs in observations:
        groups[obs.feature_id].append(obs)
    return {fid: sorted(obs, key=lambda o: o.frame_time)
            for fid, obs in sorted(groups.items())}


def _whitener(cov, name):
    """ lower Cholesky factor W of cov^-1, so |W^T r|^2 = r^T cov^-1 r """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ParameterError(f"{name} is not symmetric")
    try:
        return scipy.linalg.cholesky(np.linalg.inv(cov), lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as err:
        raise ParameterError(f"{name} is not positive definite") from err


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """
    Rg, Ra: per-sample gyro/accel covariances, Rc: normalized image
    coordinate covariance, P0: 15x15 prior covariance in the order
    attitude, v, p, ba, bg. Rbg, Rba are bias random-walk densities,
    used only for preintegration covariance.
    """
    Rg: np.ndarray
    Ra: np.ndarray
    Rc: np.ndarray
    P0: np.ndarray
    Rbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    Rba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    @classmethod
    def from_densities(cls, gyro_density, accel_density, imu_rate, pixel_std,
                       focal, P0, gyro_walk=0.0, accel_walk=0.0):
        """ discrete std = density * sqrt(rate); Rc = (pixel_std/focal)^2 I """
        return cls(Rg=np.eye(3) * gyro_density ** 2 * imu_rate,
                   Ra=np.eye(3) * accel_density ** 2 * imu_rate,
                   Rc=np.eye(2) * (pixel_std / focal) ** 2,
                   P0=np.asarray(P0, dtype=float),
                   Rbg=np.eye(3) * gyro_walk ** 2,
                   Rba=np.eye(3) * accel_walk ** 2)

    @cached_property
    def Wg(self):
        return _whitener(self.Rg, "Rg")

    @cached_property
    def Wa(self):
        return _whitener(self.Ra, "Ra")

    @cached_property
    def Wc(self):
        return _whitener(self.Rc, "Rc")

    @cached_property
    def Wp(self):
        return _whitener(self.P0, "P0")


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """
    C_bc: body to camera rotation, p_cb: body origin in the camera
    frame, gravity: g in the world frame. Y = C_bc (C_w^b (X - p)) + p_cb.
    """
    C_bc: np.ndarray
    p_cb: np.ndarray
    gravity: np.ndarray
    gravity_band: Optional[tuple] = (9.6, 9.9)

    def __post_init__(self):
        rot = np.asarray(self.C_bc, dtype=float)
        if rot.shape != (3, 3) or not np.allclose(rot.T @ rot, np.eye(3), atol=1e-10) \
                or abs(np.linalg.det(rot) - 1.0) > 1e-10:
            raise ParameterError("C_bc is not a rotation matrix")
        gravity = np.asarray(self.gravity, dtype=float)
        if self.gravity_band is not None:
            low, high = self.gravity_band
            if not low <= np.linalg.norm(gravity) <= high:
                raise ParameterError(
                    f"|g| = {np.linalg.norm(gravity):.4f} outside [{low}, {high}]")
        object.__setattr__(self, "C_bc", rot)
        object.__setattr__(self, "p_cb", np.asarray(self.p_cb, dtype=float))
        object.__setattr__(self, "gravity", gravity)


@dataclass(frozen=True, eq=False)
class PriorState:
    """ the given state at t0 """
    q0: np.ndarray
    v0: np.ndarray
    p0: np.ndarray
    ba0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg0: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        shapes = {"q0": 4, "v0": 3, "p0": 3, "ba0": 3, "bg0": 3}
        for name, size in shapes.items():
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != (size,):
                raise ParameterError(f"prior {name} must have {size} entries")
            object.__setattr__(self, name, value)


def gyro_error(q, q_dot, bg, omega, jac=False):
    """
    omega - 2 [q* o q_dot]_{2:4} - bg with the raw q.
    Jacobians: d/dq = -2 P R(q_dot) CONJ, d/dq_dot = -2 P L(q*), d/dbg = -I.
    """
    r = np.asarray(omega, dtype=float) - 2.0 * quat_mul(quat_conj(q), q_dot)[..., 1:] \
        - np.asarray(bg, dtype=float)
    if not jac:
        return r
    d_q = -2.0 * VEC @ right_matrix(q_dot) @ CONJ
    d_qdot = -2.0 * VEC @ left_matrix(quat_conj(q))
    return r, d_q, d_qdot


def accel_error(q, accel, ba, f_meas, gravity, jac=False):
    """
    f - C_w^b(q/|q|) (a - g) - ba.
    Jacobians: d/dq (3x4), d/da = -C.
    """
    rot = attitude_matrix(q)
    rel = np.asarray(accel, dtype=float) - gravity
    r = np.asarray(f_meas, dtype=float) - np.einsum('...ij,...j->...i', rot, rel) \
        - np.asarray(ba, dtype=float)
    if not jac:
        return r
    return r, -attitude_jacobian(q, rel), -rot


def camera_point(q, p, X, ext):
    """ Y = C_bc C_w^b (X - p) + p_cb """
    rel = np.asarray(X, dtype=float) - p
    body = np.einsum('...ij,...j->...i', attitude_matrix(q), rel)
    return body @ ext.C_bc.T + ext.p_cb


def reprojection_error(q, p, X, xy, ext, jac=False):
    """
    Y_{1:2}/Y_3 - xy. Depth is not checked here.
    Jacobians: d/dq (2x4), d/dX (2x3), d/dp = -d/dX.
    """
    rel = np.asarray(X, dtype=float) - p
    rot = attitude_matrix(q)
    Y = np.einsum('...ij,...j->...i', rot, rel) @ ext.C_bc.T + ext.p_cb
    depth = Y[..., 2:3]
    r = Y[..., :2] / depth - np.asarray(xy, dtype=float)
    if not jac:
        return r, Y[..., 2]
    inv = 1.0 / depth[..., 0]
    proj = np.zeros(Y.shape[:-1] + (2, 3))
    proj[..., 0, 0] = inv
    proj[..., 1, 1] = inv
    proj[..., :, 2] = -Y[..., :2] * (inv * inv)[..., None]
    d_q = proj @ ext.C_bc @ attitude_jacobian(q, rel)
    d_X = proj @ ext.C_bc @ rot
    return r, Y[..., 2], d_q, d_X


def prior_error(q, v, p, ba, bg, prior, jac=False):
    """
    [2 [u* o q0]_{2:4}; v - v0; p - p0; ba - ba0; bg - bg0] with u = q/|q|.
    Jacobian of the attitude block w.r.t. the raw q is returned.
    """
    q = np.asarray(q, dtype=float)
    u = unit(q)
    r = np.concatenate([
        2.0 * quat_mul(quat_conj(u), prior.q0)[1:],
        np.asarray(v) - prior.v0,
        np.asarray(p) - prior.p0,
        np.asarray(ba) - prior.ba0,
        np.asarray(bg) - prior.bg0,
    ])
    if not jac:
        return r
    norm = np.linalg.norm(q)
    d_unit = (np.eye(4) - np.outer(u, u)) / norm
    return r, 2.0 * VEC @ right_matrix(prior.q0) @ CONJ @ d_unit


def gyro_residual(traj, bg, omega_meas, tau):
    """ rad/s, unweighted """
    return gyro_error(traj.attitude_at(tau), traj.attitude_rate_at(tau), bg, omega_meas)


def accel_residual(traj, ba, f_meas, ext, tau):
    """ m/s^2, unweighted """
    return accel_error(traj.attitude_at(tau), traj.acceleration_at(tau), ba, f_meas,
                       ext.gravity)


def reprojection_residual(traj, Xw, obs, ext, depth_min=0.05):
    """ normalized image coordinates, unweighted; raises when depth <= depth_min """
    tau = time_to_tau(traj.time_map, obs.frame_time)
    r, depth = reprojection_error(traj.attitude_at(tau), traj.position_at(tau), Xw,
                                  obs.xy, ext)
    if depth <= depth_min:
        raise CheiralityError(
            f"feature {obs.feature_id} at depth {float(depth):.3f} m at t={obs.frame_time}")
    return r


def prior_residual(traj, ba, bg, prior):
    return prior_error(traj.attitude_at(-1.0), traj.velocity_at(-1.0),
                       traj.position_at(-1.0), ba, bg, prior)


def apply_weight(residual, W):
    """ W^T r over the last axis """
    return np.einsum('ji,...j->...i', W, np.asarray(residual, dtype=float))


def huber_weights(whitened, delta):
    """
    square-root IRLS weights of whitened residual blocks (..., k):
    1 inside delta, sqrt(delta/|r|) outside
    """
    norm = np.linalg.norm(whitened, axis=-1)
    with np.errstate(divide='ignore'):
        return np.where(norm <= delta, 1.0, np.sqrt(delta / np.maximum(norm, 1e-300)))
