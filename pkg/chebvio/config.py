"""
loads and keeps the config for the system

CONFIG is the dict read from config.toml at the repository root.
The dataclasses below are typed, read-only views of its sections.
"""
import copy
import os
from dataclasses import dataclass, asdict, fields, replace
from typing import Optional

import numpy as np
import toml

from .errors import ConfigError

DEFAULT_CONFIG_PATH = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config.toml")

SECTIONS = ("scenario", "solver", "baseline", "noise", "prior",
            "dataset", "logging")


def _merge(base, override):
    """ deep-merges override into a copy of base """
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path=None):
    """
    returns a dict of the config from config.toml,
    with the file at path (if any) merged over it
    """
    try:
        with open(DEFAULT_CONFIG_PATH, 'r') as file:
            conf = toml.load(file)
    except FileNotFoundError:
        conf = {}
    if path is None:
        return conf
    try:
        with open(path, 'r') as file:
            user = toml.load(file)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except toml.TomlDecodeError as err:
        raise ConfigError(f"config file {path} is not valid TOML: {err}") \
            from err
    unknown = set(user) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return _merge(conf, user)


CONFIG = load_config()


def _section(conf, name):
    section = conf.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    return section


def _build(cls, section, name):
    """ builds a frozen section view, rejecting keys it does not know """
    known = {f.name for f in fields(cls)}
    unknown = {k for k, v in section.items()
               if not isinstance(v, dict)} - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**{k: v for k, v in section.items() if k in known})
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad [{name}] section: {err}") from err


# pylint: disable=too-many-instance-attributes
# the solver really has this many knobs.

@dataclass(frozen=True)
class SolverConfig:
    """ [solver]: polynomial orders, quadrature, tolerances and schedules """
    n_q: int = 60
    n_v: int = 60
    quad_order: Optional[int] = None
    efh_degree: int = 3
    init_substeps: int = 4
    cost_tol: float = 1e-9
    constraint_tol: float = 1e-8
    step_tol: float = 1e-10
    grad_tol: float = 1e-4
    max_outer: int = 10
    max_inner: int = 50
    mu_init: float = 10.0
    mu_growth: float = 5.0
    constraint_decrease: float = 4.0
    lm_damping: float = 1e-4
    lm_up: float = 10.0
    lm_down: float = 10.0
    lm_max_damping: float = 1e16
    divergence_cost: float = 1e12
    schur_threshold: int = 150
    depth_min: float = 0.05
    min_parallax_deg: float = 1.0
    huber_delta: Optional[float] = None

    def __post_init__(self):
        if self.n_q < 1 or self.n_v < 1:
            raise ConfigError("polynomial orders must be >= 1")
        if self.quad_order is not None and (
                self.quad_order < 2 or self.quad_order % 2):
            raise ConfigError("quad_order must be an even number >= 2")
        if self.efh_degree < 0:
            raise ConfigError("efh_degree must be >= 0")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("iteration caps must be >= 1")

    @property
    def quadrature_order(self):
        """ N of the Clenshaw-Curtis rule, max(n_q, n_v) + 8 made even """
        if self.quad_order is not None:
            return self.quad_order
        order = max(self.n_q, self.n_v) + 8
        return order + (order % 2)

    def with_orders(self, n_q, n_v):
        """ copy with other polynomial orders (quadrature re-derived) """
        return replace(self, n_q=n_q, n_v=n_v, quad_order=None)

    @classmethod
    def from_config(cls, conf=None):
        conf = CONFIG if conf is None else conf
        return _build(cls, _section(conf, "solver"), "solver")

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class BaselineConfig:
    """ [baseline]: preintegration comparison settings """
    keyframe_dt: float = 0.1
    fd_method: str = "3-point"

    def __post_init__(self):
        if self.keyframe_dt <= 0:
            raise ConfigError("keyframe_dt must be positive")
        if self.fd_method not in ("2-point", "3-point"):
            raise ConfigError("fd_method must be '2-point' or '3-point'")

    @classmethod
    def from_config(cls, conf=None):
        conf = CONFIG if conf is None else conf
        return _build(cls, _section(conf, "baseline"), "baseline")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PriorConfig:
    """ [prior]: standard deviations and bias means of the initial state """
    attitude_deg: float = 0.1
    velocity: float = 0.05
    position: float = 0.01
    accel_bias: float = 0.1
    gyro_bias: float = 0.1
    accel_bias_mean: tuple = (0.0, 0.0, 0.0)
    gyro_bias_mean: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        sigmas = (self.attitude_deg, self.velocity, self.position,
                  self.accel_bias, self.gyro_bias)
        if min(sigmas) <= 0:
            raise ConfigError("prior standard deviations must be positive")

    def covariance(self):
        """ 15x15 P0 in the block order attitude, v, p, ba, bg """
        sig = np.repeat([np.deg2rad(self.attitude_deg), self.velocity,
                         self.position, self.accel_bias, self.gyro_bias], 3)
        return np.diag(sig ** 2)

    @classmethod
    def from_config(cls, conf=None):
        conf = CONFIG if conf is None else conf
        section = dict(_section(conf, "prior"))
        for key in ("accel_bias_mean", "gyro_bias_mean"):
            if key in section:
                section[key] = tuple(section[key])
        return _build(cls, section, "prior")


@dataclass(frozen=True)
class NoiseConfig:
    """
    [noise]: continuous-time sensor noise for recorded data.
    Densities are per sqrt(Hz); simulations derive their own.
    """
    gyro_noise_density: float = 1.6968e-4
    accel_noise_density: float = 2.0e-3
    gyro_random_walk: float = 1.9393e-5
    accel_random_walk: float = 3.0e-3
    pixel_noise_std: float = 1.0
    focal: float = 458.654

    @classmethod
    def from_config(cls, conf=None):
        conf = CONFIG if conf is None else conf
        return _build(cls, _section(conf, "noise"), "noise")


@dataclass(frozen=True)
class DatasetConfig:
    """ [dataset]: segmentation and calibration inputs for recordings """
    segment_len: float = 1.0
    gravity: tuple = (0.0, 0.0, -9.81)
    gravity_band: tuple = (9.6, 9.9)
    fov_limit: tuple = (0.85, 0.55)
    gap_factor: float = 2.0
    spacing_tol: float = 1e-6
    n_q: int = 16
    n_v: int = 16

    @classmethod
    def from_config(cls, conf=None):
        conf = CONFIG if conf is None else conf
        section = dict(_section(conf, "dataset"))
        for key in ("gravity", "gravity_band", "fov_limit"):
            if key in section:
                section[key] = tuple(section[key])
        return _build(cls, section, "dataset")
