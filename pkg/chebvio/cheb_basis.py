"""
Chebyshev polynomials of the first kind on [-1, 1].

Evaluation of the basis, its derivative and its running integral,
Chebyshev points, Clenshaw-Curtis weights, the affine map between
seconds and tau, and Floater-Hormann interpolation of equispaced
sensor samples.

Every function accepts a scalar tau (returns a 1-d vector of length
order+1) or an array of taus (returns one row per tau).
"""
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import FloaterHormannInterpolator

from .errors import DomainError, ExtrapolationError, ParameterError

TAU_EPS = 1e-9


def _check_order(order):
    if int(order) != order or order < 0:
        raise ParameterError(f"order must be a non-negative integer, got {order}")
    return int(order)


def _check_tau(tau):
    """ returns tau as an array clamped into [-1, 1] """
    tau = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise DomainError("tau is not finite")
    if np.any(np.abs(tau) > 1.0 + TAU_EPS):
        raise DomainError(f"tau outside [-1, 1]: {tau[np.abs(tau) > 1.0 + TAU_EPS]}")
    return np.clip(tau, -1.0, 1.0)


def eval_basis(order, tau):
    """
    F_0(tau) .. F_order(tau) by the three-term recurrence
    F_{i+1} = 2 tau F_i - F_{i-1}
    """
    order = _check_order(order)
    tau = _check_tau(tau)
    out = np.empty(tau.shape + (order + 1,))
    out[..., 0] = 1.0
    if order >= 1:
        out[..., 1] = tau
    for i in range(1, order):
        out[..., i + 1] = 2.0 * tau * out[..., i] - out[..., i - 1]
    return out


def eval_basis_derivative(order, tau):
    """ dF_i/dtau by dF_{i+1} = 2 F_i + 2 tau dF_i - dF_{i-1} """
    order = _check_order(order)
    tau = _check_tau(tau)
    val = eval_basis(order, tau)
    out = np.zeros(tau.shape + (order + 1,))
    if order >= 1:
        out[..., 1] = 1.0
    for i in range(1, order):
        out[..., i + 1] = 2.0 * val[..., i] + 2.0 * tau * out[..., i] \
            - out[..., i - 1]
    return out


def eval_basis_integral(order, tau):
    """
    G_i(tau), the integral of F_i from -1 to tau.

    G_0 = tau + 1, G_1 = (tau^2 - 1) / 2 and for i >= 2
    G_i = F_{i+1}/(2(i+1)) - F_{i-1}/(2(i-1)) - (-1)^i/(i^2 - 1)
    """
    order = _check_order(order)
    tau = _check_tau(tau)
    val = eval_basis(order + 1, tau)
    out = np.empty(tau.shape + (order + 1,))
    out[..., 0] = tau + 1.0
    if order >= 1:
        out[..., 1] = 0.5 * (tau * tau - 1.0)
    for i in range(2, order + 1):
        out[..., i] = val[..., i + 1] / (2.0 * (i + 1)) \
            - val[..., i - 1] / (2.0 * (i - 1)) \
            - (-1.0) ** i / (i * i - 1.0)
    return out


def chebyshev_points(n):
    """
    -cos(i pi / n) for i = 0..n, ascending. Computed through the sine
    so the midpoint is exactly 0 and the set is exactly symmetric.
    """
    if int(n) != n or n < 1:
        raise ParameterError(f"need n >= 1 Chebyshev intervals, got {n}")
    n = int(n)
    i = np.arange(n + 1)
    return np.sin(np.pi * (2 * i - n) / (2.0 * n))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """ nodes on [-1, 1] (ascending Chebyshev points) and their weights """
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self):
        return len(self.nodes) - 1

    def integrate(self, values):
        """ sum_i w_i values[i] along the first axis """
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))


def clenshaw_curtis(n):
    """
    Clenshaw-Curtis rule on chebyshev_points(n), closed-form
    cosine-sum weights. n must be even and >= 2.
    """
    if int(n) != n or n < 2 or n % 2:
        raise ParameterError(f"Clenshaw-Curtis needs an even n >= 2, got {n}")
    n = int(n)
    theta = np.pi * np.arange(n + 1) / n
    weights = np.zeros(n + 1)
    inner = theta[1:n]
    v = np.ones(n - 1)
    for k in range(1, n // 2):
        v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
    v -= np.cos(n * inner) / (n * n - 1)
    weights[0] = weights[n] = 1.0 / (n * n - 1)
    weights[1:n] = 2.0 * v / n
    # the rule is symmetric, so the cos-ordered weights serve the ascending nodes
    return QuadratureRule(nodes=chebyshev_points(n), weights=weights)


@dataclass(frozen=True)
class TimeMap:
    """ affine map [t0, tM] seconds <-> [-1, 1] """
    t0: float
    tM: float

    def __post_init__(self):
        if not self.tM > self.t0:
            raise ParameterError(f"time map needs tM > t0, got [{self.t0}, {self.tM}]")

    @property
    def half_span(self):
        """ dt/dtau """
        return 0.5 * (self.tM - self.t0)

    @property
    def rate_scale(self):
        """ dtau/dt, the chain-rule factor on every time derivative """
        return 2.0 / (self.tM - self.t0)

    def contains(self, t, tol=1e-9):
        t = np.asarray(t, dtype=float)
        slack = tol * max(1.0, abs(self.tM - self.t0))
        return (t >= self.t0 - slack) & (t <= self.tM + slack)


def time_to_tau(time_map, t):
    """ seconds -> tau, t0 -> -1 and tM -> 1 """
    t = np.asarray(t, dtype=float)
    return (2.0 * t - time_map.t0 - time_map.tM) / (time_map.tM - time_map.t0)


def tau_to_time(time_map, tau):
    """ tau -> seconds """
    tau = np.asarray(tau, dtype=float)
    return time_map.t0 + (tau + 1.0) * time_map.half_span


class EfhInterpolant:
    """
    Floater-Hormann barycentric rational interpolant of equispaced
    vector samples. Immutable once built; one scipy interpolator per
    sample component.
    """

    def __init__(self, times, samples, degree, rtol=1e-9):
        times = np.asarray(times, dtype=float)
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if times.ndim != 1 or samples.ndim != 2 or len(times) != len(samples):
            raise ParameterError("times must be 1-d and match the number of samples")
        if degree < 0 or int(degree) != degree:
            raise ParameterError(f"blend degree must be a non-negative integer, got {degree}")
        if len(times) < degree + 1 or len(times) < 2:
            raise ParameterError(
                f"need at least {max(degree + 1, 2)} samples, got {len(times)}")
        steps = np.diff(times)
        step = (times[-1] - times[0]) / (len(times) - 1)
        if step <= 0 or np.max(np.abs(steps - step)) > rtol * step:
            raise ParameterError("samples are not equispaced in time")
        self.times = times
        self.samples = samples
        self.degree = int(degree)
        self.step = step
        self._parts = [FloaterHormannInterpolator(times, samples[:, j], d=self.degree)
                       for j in range(samples.shape[1])]

    @property
    def span(self):
        return self.times[0], self.times[-1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        slack = 1e-9 * max(1.0, self.times[-1] - self.times[0])
        if np.any(t < self.times[0] - slack) or np.any(t > self.times[-1] + slack):
            raise ExtrapolationError(
                f"interpolant spans [{self.times[0]}, {self.times[-1]}], "
                f"asked for [{np.min(t)}, {np.max(t)}]")
        t = np.clip(t, self.times[0], self.times[-1])
        flat = np.atleast_1d(t).ravel()
        out = np.stack([np.asarray(part(flat), dtype=float) for part in self._parts],
                       axis=-1)
        return out.reshape(t.shape + (self.samples.shape[1],))


def efh_build(samples, times, d=3, rtol=1e-9):
    """ builds the interpolant; times must be equispaced to rtol relative """
    return EfhInterpolant(times, samples, d, rtol=rtol)


def efh_eval(interp, t):
    """ interpolated sample vector(s) at t; outside the span raises """
    return interp(t)
