"""
Error metrics between estimated and reference state series.

Per-epoch attitude error is |log(q* o q_hat)| in degrees, velocity and
position errors are Euclidean norms. ARMSE pools squared errors over
runs and epochs; SM-RMSE averages over segments but sums over the
epochs inside a segment, so segment lengths must match for numbers to
be comparable across sequences.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

from .errors import ParameterError
from .geometry import quat_conj, quat_log, quat_mul


class Armse(NamedTuple):
    """ one number per state type: deg, m/s, m """
    attitude: float
    velocity: float
    position: float

    def to_dict(self):
        return {"attitude_deg": float(self.attitude), "velocity_mps": float(self.velocity),
                "position_m": float(self.position)}


@dataclass(frozen=True, eq=False)
class StateSeries:
    """ attitude (unit, scalar first), velocity and position at times """
    times: np.ndarray
    quats: np.ndarray
    vels: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        arrays = {"quats": (self.quats, 4), "vels": (self.vels, 3),
                  "positions": (self.positions, 3)}
        object.__setattr__(self, "times", times)
        for name, (value, width) in arrays.items():
            value = np.asarray(value, dtype=float).reshape(-1, width)
            if len(value) != len(times):
                raise ParameterError(f"{name} has {len(value)} rows for {len(times)} times")
            object.__setattr__(self, name, value)

    def __len__(self):
        return len(self.times)

    def select(self, mask):
        return StateSeries(self.times[mask], self.quats[mask], self.vels[mask],
                           self.positions[mask])

    def window(self, t0, tM, tol=1e-9):
        """ the samples with t0 <= t <= tM """
        return self.select((self.times >= t0 - tol) & (self.times <= tM + tol))


@dataclass(frozen=True, eq=False)
class EpochErrors:
    times: np.ndarray
    attitude: np.ndarray
    velocity: np.ndarray
    position: np.ndarray
    attitude_axes: np.ndarray

    def squared(self):
        return self.attitude ** 2, self.velocity ** 2, self.position ** 2


def epoch_errors(estimate, truth, time_tol=1e-9):
    """ EpochErrors of estimate against truth on the same time grid """
    if len(estimate) != len(truth) or \
            np.max(np.abs(estimate.times - truth.times), initial=0.0) > time_tol:
        raise ParameterError("estimate and truth are not on the same time grid")
    rotvec = quat_log(quat_mul(quat_conj(truth.quats), estimate.quats))
    axes = np.degrees(rotvec)
    return EpochErrors(times=truth.times.copy(),
                       attitude=np.linalg.norm(axes, axis=1),
                       velocity=np.linalg.norm(estimate.vels - truth.vels, axis=1),
                       position=np.linalg.norm(estimate.positions - truth.positions, axis=1),
                       attitude_axes=axes)


def _collect(runs, truth):
    """ EpochErrors per run; truth is one series shared by all runs or one per run """
    if truth is None:
        return list(runs)
    runs = list(runs)
    truths = truth if isinstance(truth, (list, tuple)) else [truth] * len(runs)
    if len(truths) != len(runs):
        raise ParameterError(f"{len(runs)} runs but {len(truths)} references")
    return [epoch_errors(run, ref) for run, ref in zip(runs, truths)]


def avg_error(runs, truth=None):
    """
    per-epoch mean over runs of the error norms; the per-axis attitude
    columns are means of absolute components
    """
    errors = _collect(runs, truth)
    if not errors:
        raise ParameterError("no runs to average")
    lengths = {len(e.times) for e in errors}
    if len(lengths) != 1:
        raise ParameterError("runs have different numbers of epochs")
    return EpochErrors(times=errors[0].times,
                       attitude=np.mean([e.attitude for e in errors], axis=0),
                       velocity=np.mean([e.velocity for e in errors], axis=0),
                       position=np.mean([e.position for e in errors], axis=0),
                       attitude_axes=np.mean([np.abs(e.attitude_axes) for e in errors],
                                             axis=0))


def armse(runs, truth=None):
    """ root of the mean over runs and epochs of squared error norms """
    errors = _collect(runs, truth)
    if not errors:
        raise ParameterError("no runs for ARMSE")
    parts = [np.concatenate(block) for block in zip(*(e.squared() for e in errors))]
    return Armse(*(float(np.sqrt(np.mean(part))) for part in parts))


def segment_rmse(estimate, truth=None):
    """ RMSE of one segment, the mean taken over its epochs """
    return armse([estimate], truth if truth is None else [truth])


def sm_rmse(segments, truths=None):
    """ sqrt((1/H) sum_segments sum_epochs |e|^2), exactly as defined """
    errors = _collect(segments, truths)
    if not errors:
        raise ParameterError("no segments for SM-RMSE")
    sums = np.array([[np.sum(s) for s in e.squared()] for e in errors])
    return Armse(*(float(v) for v in np.sqrt(sums.mean(axis=0))))


def improvement_ratio(baseline, chebyshev):
    """ (baseline - chebyshev) / baseline, nan when the baseline is 0 """
    if baseline == 0:
        return float("nan")
    return float((baseline - chebyshev) / baseline)


def improvement(baseline, chebyshev):
    """ ratios per state type of two Armse values """
    return Armse(*(improvement_ratio(b, c) for b, c in zip(baseline, chebyshev)))


@dataclass(eq=False)
class ErrorReport:
    """ per-epoch mean errors and aggregates of one estimator over many runs """
    estimator: str
    mean: EpochErrors
    armse: Armse
    per_run: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    failed: int = 0

    @classmethod
    def from_errors(cls, estimator, errors, wall_times=(), failed=0):
        errors = list(errors)
        return cls(estimator=estimator, mean=avg_error(errors), armse=armse(errors),
                   per_run=[armse([e]) for e in errors], wall_times=list(wall_times),
                   failed=failed)

    def to_frame(self, axes=True):
        """ per-epoch mean errors as a DataFrame """
        frame = pd.DataFrame({"time_s": self.mean.times,
                              "attitude_deg": self.mean.attitude,
                              "velocity_mps": self.mean.velocity,
                              "position_m": self.mean.position})
        if axes:
            for i, axis in enumerate("xyz"):
                frame[f"attitude_{axis}_deg"] = self.mean.attitude_axes[:, i]
        return frame

    def summary(self, timing=False):
        """ aggregates; wall times only on request since they vary run to run """
        out = {"estimator": self.estimator,
               "runs": len(self.per_run),
               "failed": int(self.failed),
               "armse": self.armse.to_dict()}
        if timing:
            times = np.asarray(self.wall_times, dtype=float)
            out["wall_time_mean_s"] = float(times.mean()) if len(times) else None
            out["wall_time_std_s"] = float(times.std()) if len(times) else None
        return out
