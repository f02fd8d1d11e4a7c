"""
Synthetic trajectories and measurements for the Monte-Carlo studies.

circular     z-up world, 3 m circle with a vertical bob, heading along
             the horizontal velocity, nose pitching with the climb
             rate, camera looking outward at a ring of walls
coning_line  north-up-east navigation frame, coning attitude, straight
             line travel east with a sinusoidal acceleration, camera
             looking north at a box of landmarks; optional Earth
             rotation and transport rate in the IMU measurements

Discrete noise std is density * sqrt(rate); 1 deg/sqrt(h) is
(pi/180)/60 rad/sqrt(s).
"""
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import cheb_basis as cb
from .config import CONFIG, BaselineConfig, PriorConfig, SolverConfig
from .errors import ConfigError
from .estimator import DecisionLayout, DecisionVector, EstimationProblem
from .geometry import quat_conj, quat_exp, quat_mul, quat_to_rot, sign_continuous
from .log import logger
from .measurement_models import (Extrinsics, FeatureObservation, ImuSeries, NoiseModel,
                                 PriorState, camera_point)
from .metrics import ErrorReport, StateSeries
from .pipeline import ESTIMATORS, Pipeline
from .trajectory_model import fit_to_samples

# pylint: disable=logging-fstring-interpolation
# pylint: disable=invalid-name, too-many-instance-attributes, too-many-locals
# scenario parameters and kinematics keep their physical names.

DEG_PER_SQRT_HOUR = np.pi / 180.0 / 60.0
EARTH_RATE = 7.2921151467e-5
EARTH_RADIUS = 6378137.0
KINDS = ("circular", "coning_line")

# camera axes in body coordinates, one row per camera axis
CIRCULAR_C_BC = np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]])
CONING_C_BC = np.array([[0.0, 0.0, 1.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class SimScenario:
    """
    Everything that defines one synthetic data set. Densities:
    gyro_psd in rad/s/sqrt(Hz), accel_psd in m/s^2/sqrt(Hz). With
    noisy/biased off the measurements are exact but the noise model
    still uses the densities for weighting.
    """
    kind: str = "circular"
    duration: float = 5.0
    imu_rate: int = 100
    cam_rate: int = 10
    focal: float = 460.0
    pixel_noise_std: float = 1.0
    gyro_psd: float = DEG_PER_SQRT_HOUR
    accel_psd: float = 0.01
    bg_true: tuple = (0.0, 0.0, 0.0)
    ba_true: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    landmark_count: int = 240
    noisy: bool = True
    biased: bool = True
    gravity: float = 9.81
    fov: tuple = (1.0, 0.75)
    min_depth: float = 0.5
    camera_offset: tuple = (0.1, 0.0, 0.05)
    # circular
    radius: float = 3.0
    lap_period: float = 10.0
    bob_amplitude: float = 0.2
    bob_frequency: float = 1.0
    pitch_amplitude: float = np.radians(10.0)
    wall_radius: float = 8.0
    wall_height: tuple = (-1.5, 2.5)
    # coning_line
    coning_rate: float = 0.5 * np.pi
    coning_angle: float = np.radians(30.0)
    accel_amplitude: float = 2.0
    accel_frequency: float = 0.4 * np.pi
    initial_speed: float = 0.0
    include_earth_rate: bool = True
    latitude: float = np.radians(30.0)
    landmark_box_min: tuple = (4.0, -3.0, -4.0)
    landmark_box_max: tuple = (12.0, 3.0, 14.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}, expected one of {KINDS}")
        if self.duration <= 0 or self.imu_rate <= 0 or self.cam_rate <= 0:
            raise ConfigError("duration and rates must be positive")
        if self.imu_rate % self.cam_rate:
            raise ConfigError(f"imu_rate {self.imu_rate} is not a multiple of "
                              f"cam_rate {self.cam_rate}")
        samples = self.duration * self.imu_rate
        if abs(samples - round(samples)) > 1e-9 or \
                abs(self.duration * self.cam_rate - round(self.duration * self.cam_rate)) > 1e-9:
            raise ConfigError("duration * rate must be a whole number of samples")
        if self.landmark_count < 1:
            raise ConfigError("landmark_count must be >= 1")

    @classmethod
    def from_config(cls, conf=None, kind=None, seed=None):
        """ the [scenario] section and its [scenario.<kind>] table """
        conf = CONFIG if conf is None else conf
        section = conf.get("scenario", {})
        kind = (kind or section.get("kind", "circular")).replace("-", "_")
        if kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {kind!r}")
        table = dict(section.get(kind, {}))
        values = {"kind": kind, "seed": int(section.get("seed", 0) if seed is None else seed)}
        converters = {
            "gyro_psd_deg_sqrt_h": ("gyro_psd", lambda v: float(v) * DEG_PER_SQRT_HOUR),
            "gyro_bias_deg_s": ("bg_true", lambda v: tuple(np.radians(v))),
            "accel_bias": ("ba_true", tuple),
            "coning_angle_deg": ("coning_angle", lambda v: float(np.radians(v))),
            "pitch_amplitude_deg": ("pitch_amplitude", lambda v: float(np.radians(v))),
            "latitude_deg": ("latitude", lambda v: float(np.radians(v))),
        }
        known = set(cls.__dataclass_fields__)
        for key, value in table.items():
            if key in converters:
                name, convert = converters[key]
                values[name] = convert(value)
            elif key in known:
                values[key] = tuple(value) if isinstance(value, list) else value
            else:
                raise ConfigError(f"unknown key {key!r} in [scenario.{kind}]")
        try:
            return cls(**values)
        except TypeError as err:
            raise ConfigError(f"bad [scenario.{kind}] section: {err}") from err

    def without_noise(self):
        """ same scenario with exact measurements and zero biases """
        return replace(self, noisy=False, biased=False)

    @property
    def imu_times(self):
        count = int(round(self.duration * self.imu_rate))
        return np.arange(count + 1) / self.imu_rate

    @property
    def cam_times(self):
        count = int(round(self.duration * self.cam_rate))
        return np.arange(count + 1) / self.cam_rate

    def to_dict(self):
        out = {}
        for key, value in self.__dict__.items():
            out[key] = list(value) if isinstance(value, tuple) else value
        return out


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """
    True states at the IMU times, true (noise- and bias-free) angular
    rate and specific force, landmarks (row i has feature id i) and the
    calibration the measurements were made with.
    """
    times: np.ndarray
    quats: np.ndarray
    vels: np.ndarray
    positions: np.ndarray
    omega: np.ndarray
    force: np.ndarray
    landmarks: np.ndarray
    ext: Extrinsics
    bg: np.ndarray
    ba: np.ndarray
    metadata: dict = field(default_factory=dict)

    def states(self):
        return StateSeries(self.times, self.quats, self.vels, self.positions)


def _heading_attitude(yaw, yaw_rate, pitch, pitch_rate):
    """
    yaw about world z, then nose-up pitch, zero roll, in a z-up world;
    returns the attitude and its body angular rate
    """
    q_yaw = quat_exp(np.outer(yaw, [0.0, 0.0, 1.0]))
    q_pitch = quat_exp(np.outer(-pitch, [0.0, 1.0, 0.0]))
    quats = quat_mul(q_yaw, q_pitch)
    # omega = R_y(-pitch)^T yaw_rate e_z - pitch_rate e_y
    rot_pitch = quat_to_rot(q_pitch)
    omega = yaw_rate[:, None] * rot_pitch[:, 2, :]
    omega[:, 1] -= pitch_rate
    return quats, omega


def _circular_kinematics(scn, t):
    """
    position, velocity, acceleration, attitude and body rate; every
    component is an entire function of t
    """
    w = 2.0 * np.pi / scn.lap_period
    wb = 2.0 * np.pi * scn.bob_frequency
    R, A, P = scn.radius, scn.bob_amplitude, scn.pitch_amplitude
    pos = np.column_stack([R * np.cos(w * t), R * np.sin(w * t), A * np.sin(wb * t)])
    vel = np.column_stack([-R * w * np.sin(w * t), R * w * np.cos(w * t),
                           A * wb * np.cos(wb * t)])
    acc = np.column_stack([-R * w * w * np.cos(w * t), -R * w * w * np.sin(w * t),
                           -A * wb * wb * np.sin(wb * t)])
    # heading along the counter-clockwise tangent, nose up while climbing
    quats, omega = _heading_attitude(w * t + 0.5 * np.pi, np.full_like(t, w),
                                     P * np.cos(wb * t), -P * wb * np.sin(wb * t))
    return pos, vel, acc, quats, omega


def _coning_kinematics(scn, t):
    """ attitude, its body rate, and motion in the north-up-east frame """
    half = 0.5 * scn.coning_angle
    zeta = scn.coning_rate
    quats = np.column_stack([np.full_like(t, np.cos(half)),
                             np.sin(half) * np.cos(zeta * t),
                             np.sin(half) * np.sin(zeta * t), np.zeros_like(t)])
    q_dot = np.column_stack([np.zeros_like(t), -np.sin(half) * zeta * np.sin(zeta * t),
                             np.sin(half) * zeta * np.cos(zeta * t), np.zeros_like(t)])
    omega = 2.0 * quat_mul(quat_conj(quats), q_dot)[:, 1:]
    a, w = scn.accel_amplitude, scn.accel_frequency
    east = np.array([0.0, 0.0, 1.0])
    acc = np.outer(a * np.sin(w * t), east)
    vel = np.outer(scn.initial_speed + a / w * (1.0 - np.cos(w * t)), east)
    pos = np.outer((scn.initial_speed + a / w) * t - a / w ** 2 * np.sin(w * t), east)
    return quats, omega, pos, vel, acc


def _observations(scn, rng, cam_t, quats, positions, landmarks, ext):
    """ noisy normalized projections of the landmarks each camera frame sees """
    sigma = scn.pixel_noise_std / scn.focal if scn.noisy else 0.0
    fov_x, fov_y = scn.fov
    observations = []
    for t, q, p in zip(cam_t, quats, positions):
        Y = camera_point(q, p, landmarks, ext)
        depth = Y[:, 2]
        with np.errstate(divide='ignore', invalid='ignore'):
            xy = Y[:, :2] / depth[:, None]
        seen = (depth > scn.min_depth) & (np.abs(xy[:, 0]) <= fov_x) & \
            (np.abs(xy[:, 1]) <= fov_y)
        noise = rng.normal(0.0, 1.0, size=(len(landmarks), 2)) * sigma
        for fid in np.flatnonzero(seen):
            observations.append(FeatureObservation(float(t), int(fid),
                                                   tuple(xy[fid] + noise[fid])))
    return observations


def _imu(scn, rng, times, omega, force):
    bg = np.asarray(scn.bg_true, dtype=float) if scn.biased else np.zeros(3)
    ba = np.asarray(scn.ba_true, dtype=float) if scn.biased else np.zeros(3)
    gyro = omega + bg
    accel = force + ba
    if scn.noisy:
        gyro = gyro + rng.normal(0.0, scn.gyro_psd * np.sqrt(scn.imu_rate), size=gyro.shape)
        accel = accel + rng.normal(0.0, scn.accel_psd * np.sqrt(scn.imu_rate),
                                   size=accel.shape)
    return ImuSeries(times, gyro, accel), bg, ba


def _extrinsics(C_bc, offset, gravity):
    return Extrinsics(C_bc=C_bc, p_cb=-C_bc @ np.asarray(offset, dtype=float),
                      gravity=gravity)


def gen_circular(scn):
    """ (GroundTruth, ImuSeries, observations) of the circular scenario """
    rng = np.random.default_rng(scn.seed)
    gravity = np.array([0.0, 0.0, -scn.gravity])
    ext = _extrinsics(CIRCULAR_C_BC, scn.camera_offset, gravity)
    angles = rng.uniform(0.0, 2.0 * np.pi, scn.landmark_count)
    heights = rng.uniform(*scn.wall_height, scn.landmark_count)
    landmarks = np.column_stack([scn.wall_radius * np.cos(angles),
                                 scn.wall_radius * np.sin(angles), heights])

    t = scn.imu_times
    pos, vel, acc, quats, omega = _circular_kinematics(scn, t)
    quats = sign_continuous(quats)
    force = np.einsum('nji,nj->ni', quat_to_rot(quats), acc - gravity)
    imu, bg, ba = _imu(scn, rng, t, omega, force)

    cam_t = scn.cam_times
    idx = np.round(cam_t * scn.imu_rate).astype(int)
    obs = _observations(scn, rng, cam_t, quats[idx], pos[idx], landmarks, ext)
    truth = GroundTruth(t, quats, vel, pos, omega, force, landmarks, ext, bg, ba,
                        metadata={"attitude": "tangent heading, pitch with the climb rate",
                                  "bob": [scn.bob_amplitude, scn.bob_frequency],
                                  "pitch_amplitude_deg": float(np.degrees(scn.pitch_amplitude))})
    logger.info(f"circular scenario seed={scn.seed}: {len(t)} IMU samples, "
                f"{len(obs)} observations")
    return truth, imu, obs


def gen_coning_line(scn):
    """
    (GroundTruth, ImuSeries, observations) of the coning straight-line
    scenario. Truth is in the navigation frame at t0; with
    include_earth_rate the IMU also senses Earth rotation, transport
    rate and Coriolis acceleration, which the estimator does not model.
    """
    rng = np.random.default_rng(scn.seed)
    gravity = np.array([0.0, -scn.gravity, 0.0])
    ext = _extrinsics(CONING_C_BC, scn.camera_offset, gravity)
    low = np.asarray(scn.landmark_box_min, dtype=float)
    high = np.asarray(scn.landmark_box_max, dtype=float)
    landmarks = rng.uniform(low, high, size=(scn.landmark_count, 3))

    t = scn.imu_times
    quats, omega_nb, pos, vel, acc = _coning_kinematics(scn, t)
    rot = quat_to_rot(quats)
    specific = acc - gravity
    omega = omega_nb
    if scn.include_earth_rate:
        lat = scn.latitude
        earth = EARTH_RATE * np.array([np.cos(lat), np.sin(lat), 0.0])
        transport = np.column_stack([vel[:, 2] / EARTH_RADIUS,
                                     vel[:, 2] * np.tan(lat) / EARTH_RADIUS,
                                     -vel[:, 0] / EARTH_RADIUS])
        specific = specific + np.cross(2.0 * earth + transport, vel)
        omega = omega_nb + np.einsum('nji,nj->ni', rot, earth + transport)
    force = np.einsum('nji,nj->ni', rot, specific)
    imu, bg, ba = _imu(scn, rng, t, omega, force)

    cam_t = scn.cam_times
    idx = np.round(cam_t * scn.imu_rate).astype(int)
    obs = _observations(scn, rng, cam_t, quats[idx], pos[idx], landmarks, ext)
    truth = GroundTruth(t, quats, vel, pos, omega, force, landmarks, ext, bg, ba,
                        metadata={"frame": "north-up-east at t0",
                                  "earth_rate": bool(scn.include_earth_rate)})
    logger.info(f"coning_line scenario seed={scn.seed}: {len(t)} IMU samples, "
                f"{len(obs)} observations")
    return truth, imu, obs


def generate(scn):
    if scn.kind == "circular":
        return gen_circular(scn)
    return gen_coning_line(scn)


def simulation_problem(scn, truth, imu, observations, solver_cfg=None, prior_cfg=None):
    """
    EstimationProblem over the whole scenario. The prior mean is the
    true state at t0 with the configured bias means.
    """
    solver_cfg = solver_cfg or SolverConfig()
    prior_cfg = prior_cfg or PriorConfig()
    noise = NoiseModel.from_densities(scn.gyro_psd, scn.accel_psd, scn.imu_rate,
                                      scn.pixel_noise_std, scn.focal,
                                      prior_cfg.covariance())
    prior = PriorState(q0=truth.quats[0], v0=truth.vels[0], p0=truth.positions[0],
                       ba0=np.asarray(prior_cfg.accel_bias_mean, dtype=float),
                       bg0=np.asarray(prior_cfg.gyro_bias_mean, dtype=float))
    return EstimationProblem(imu=imu, observations=tuple(observations), prior=prior,
                             noise=noise, ext=truth.ext,
                             time_map=cb.TimeMap(float(imu.times[0]), float(imu.times[-1])),
                             cfg=solver_cfg)


def truth_decision_vector(problem, truth):
    """
    Decision vector fitted to the true states, with the true biases
    and the true positions of every tracked landmark.
    """
    traj = fit_to_samples(truth.times, truth.quats, truth.vels, truth.positions[0],
                          problem.n_q, problem.n_v, problem.time_map)
    fids = tuple(sorted(problem.tracks))
    layout = DecisionLayout(problem.n_q, problem.n_v, fids)
    landmarks = {fid: truth.landmarks[fid] for fid in fids}
    return DecisionVector.from_parts(layout, traj, truth.ba, truth.bg, landmarks)


@dataclass(eq=False)
class MonteCarloResult:
    """ one ErrorReport per estimator, plus the failures of every run """
    scenario: SimScenario
    reports: dict
    failures: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)


def _one_run(args):
    scn, index, estimators, solver_cfg, baseline_cfg, prior_cfg = args
    run_scn = replace(scn, seed=scn.seed + index)
    start = time.perf_counter()
    truth, imu, obs = generate(run_scn)
    problem = simulation_problem(run_scn, truth, imu, obs, solver_cfg, prior_cfg)
    pipeline = Pipeline(baseline_cfg=baseline_cfg, estimators=estimators)
    outcomes = pipeline.run(problem, truth.states(), label=f"run{index:03d}")
    logger.debug(f"run {index} done in {time.perf_counter() - start:.2f} s")
    return outcomes


def run_monte_carlo(scn, runs, estimators=ESTIMATORS, solver_cfg=None, baseline_cfg=None,
                    prior_cfg=None, jobs=1):
    """
    runs independent simulations with seeds scn.seed + i and evaluates
    every estimator on each; failed runs are recorded and left out of
    the aggregates. Results do not depend on jobs.
    """
    estimators = tuple(estimators)
    if not estimators:
        raise ConfigError("no estimators selected")
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise ConfigError(f"unknown estimators {sorted(unknown)}")
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    solver_cfg = solver_cfg or SolverConfig()
    baseline_cfg = baseline_cfg or BaselineConfig()
    prior_cfg = prior_cfg or PriorConfig()
    tasks = [(scn, i, estimators, solver_cfg, baseline_cfg, prior_cfg) for i in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_outcomes = list(pool.map(_one_run, tasks))
    else:
        all_outcomes = [_one_run(task) for task in tasks]

    reports, failures = {}, []
    for name in estimators:
        good = [o[name] for o in all_outcomes if not o[name].failed]
        bad = [o[name] for o in all_outcomes if o[name].failed]
        for outcome in bad:
            logger.warning(f"{name} {outcome.label} failed: {outcome.message}")
            failures.append({"estimator": name, "run": outcome.label,
                             "message": outcome.message})
        if good:
            reports[name] = ErrorReport.from_errors(
                name, [o.errors for o in good], [o.report.wall_time for o in good],
                failed=len(bad))
        else:
            logger.warning(f"every {name} run failed")
    return MonteCarloResult(scn, reports, failures, all_outcomes)
