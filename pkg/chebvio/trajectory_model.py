"""
Continuous-time pose over one interval as Chebyshev polynomials.

    q(tau) = D F(tau)                       attitude, raw (not normalized)
    v(tau) = K F(tau)                       velocity, m/s
    p(tau) = p0 + (tM - t0)/2 K G(tau)      position, m

Time derivatives carry the chain-rule factor 2/(tM - t0) here and
nowhere else.
"""
from dataclasses import dataclass, field

import numpy as np

from . import cheb_basis as cb
from .errors import FitError, ParameterError
from .geometry import sign_continuous, unit
from .log import logger

# pylint: disable=logging-fstring-interpolation
# pylint: disable=invalid-name
# D, K and tM are the names used throughout the math.


@dataclass(frozen=True, eq=False)
class ChebTrajectory:
    """
    D: 4 x (n_q + 1) quaternion coefficients
    K: 3 x (n_v + 1) velocity coefficients
    p0: position at t0
    time_map: the interval
    """
    D: np.ndarray
    K: np.ndarray
    p0: np.ndarray
    time_map: cb.TimeMap
    fit_residual: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.D.ndim != 2 or self.D.shape[0] != 4:
            raise ParameterError(f"D must be 4 x (n_q+1), got {self.D.shape}")
        if self.K.ndim != 2 or self.K.shape[0] != 3:
            raise ParameterError(f"K must be 3 x (n_v+1), got {self.K.shape}")
        if np.shape(self.p0) != (3,):
            raise ParameterError("p0 must be a 3-vector")

    @property
    def n_q(self):
        return self.D.shape[1] - 1

    @property
    def n_v(self):
        return self.K.shape[1] - 1

    def attitude_at(self, tau):
        """ D F(tau), unnormalized """
        return cb.eval_basis(self.n_q, tau) @ self.D.T

    def unit_attitude_at(self, tau):
        return unit(self.attitude_at(tau))

    def attitude_rate_at(self, tau):
        """ dq/dt in 1/s """
        return self.time_map.rate_scale * (cb.eval_basis_derivative(self.n_q, tau) @ self.D.T)

    def velocity_at(self, tau):
        return cb.eval_basis(self.n_v, tau) @ self.K.T

    def acceleration_at(self, tau):
        """ dv/dt in m/s^2 """
        return self.time_map.rate_scale * (cb.eval_basis_derivative(self.n_v, tau) @ self.K.T)

    def position_at(self, tau):
        integral = cb.eval_basis_integral(self.n_v, tau) @ self.K.T
        return self.p0 + self.time_map.half_span * integral

    def sample(self, times):
        """ (unit quaternions, velocities, positions) at times in seconds """
        tau = cb.time_to_tau(self.time_map, times)
        return self.unit_attitude_at(tau), self.velocity_at(tau), self.position_at(tau)


def constant_trajectory(q, v, p0, time_map, n_q, n_v):
    """ constant attitude q and velocity v, coefficients in column 0 only """
    D = np.zeros((4, n_q + 1))
    K = np.zeros((3, n_v + 1))
    D[:, 0] = q
    K[:, 0] = v
    return ChebTrajectory(D, K, np.asarray(p0, dtype=float), time_map)


def _lstsq(basis, values, what):
    coeffs, _, rank, _ = np.linalg.lstsq(basis, values, rcond=None)
    if rank < basis.shape[1]:
        raise FitError(f"{what} fit is rank deficient ({rank} < {basis.shape[1]})")
    return coeffs


def fit_to_samples(times, quats, vels, p0, n_q, n_v, time_map):
    """
    Least-squares D and K through sampled attitude and velocity.
    Quaternion samples are made sign-continuous first. The largest
    absolute fit residual is kept on the result.
    """
    times = np.asarray(times, dtype=float)
    quats = sign_continuous(quats)
    vels = np.asarray(vels, dtype=float)
    if len(times) < max(n_q, n_v) + 1:
        raise FitError(f"{len(times)} samples cannot fit orders {n_q}/{n_v}")
    if len(quats) != len(times) or len(vels) != len(times):
        raise ParameterError("times, quats and vels must have the same length")
    if not np.all(time_map.contains(times)):
        raise FitError("samples fall outside the time map")
    tau = cb.time_to_tau(time_map, times)
    basis_q = cb.eval_basis(n_q, tau)
    basis_v = cb.eval_basis(n_v, tau)
    D = _lstsq(basis_q, quats, "attitude").T
    K = _lstsq(basis_v, vels, "velocity").T
    residual = max(np.max(np.abs(basis_q @ D.T - quats)),
                   np.max(np.abs(basis_v @ K.T - vels)))
    logger.debug(f"trajectory fit n_q={n_q} n_v={n_v} residual {residual:.3e}")
    return ChebTrajectory(D, K, np.asarray(p0, dtype=float), time_map,
                          fit_residual=float(residual))
