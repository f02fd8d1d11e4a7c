"""
input adapter reads recordings in the EuRoC ASL layout and
feature-track files, and cuts a recording into one-segment
estimation problems

Times inside chebvio are seconds since the first IMU row of the
recording. Nanosecond stamps are subtracted as integers before the
conversion to float so no precision is lost.
"""
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
import yaml
from scipy.spatial.transform import Rotation, Slerp

from .. import cheb_basis as cb
from ..config import DatasetConfig, NoiseConfig, PriorConfig, SolverConfig
from ..errors import DatasetError, ParameterError
from ..estimator import EstimationProblem
from ..geometry import from_scipy, to_scipy
from ..log import logger
from ..measurement_models import (Extrinsics, FeatureObservation, ImuSeries, NoiseModel,
                                  PriorState, group_by_feature)
from ..metrics import StateSeries

# pylint: disable=logging-fstring-interpolation
# pylint: disable=invalid-name, too-many-arguments, too-many-locals
# T_BS, C_bc and friends follow the calibration file names.

IMU_COLUMNS = ["timestamp", "w_x", "w_y", "w_z", "a_x", "a_y", "a_z"]
GROUNDTRUTH_COLUMNS = ["timestamp", "p_x", "p_y", "p_z", "q_w", "q_x", "q_y", "q_z",
                       "v_x", "v_y", "v_z", "bw_x", "bw_y", "bw_z", "ba_x", "ba_y", "ba_z"]
TRACK_COLUMNS = ["frame_time_s", "feature_id", "x_norm", "y_norm"]
NS = 1_000_000_000


@dataclass(frozen=True, eq=False)
class RecordingBundle:
    """
    One recording on its IMU grid. The ground truth (states and bias
    estimates) is resampled to the IMU times; tracks are the feature
    observations loaded for it, possibly none.
    """
    imu_ns: np.ndarray
    imu_times: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    groundtruth: StateSeries
    gt_bg: np.ndarray
    gt_ba: np.ndarray
    ext: Extrinsics
    t_origin_ns: int
    tracks: tuple = ()
    gaps: tuple = ()

    @property
    def duration(self):
        return float(self.imu_times[-1] - self.imu_times[0])

    @property
    def imu_rate(self):
        return (len(self.imu_times) - 1) / self.duration

    @property
    def frame_times(self):
        return np.unique([o.frame_time for o in self.tracks])

    def with_tracks(self, tracks):
        return RecordingBundle(self.imu_ns, self.imu_times, self.gyro, self.accel,
                               self.groundtruth, self.gt_bg, self.gt_ba, self.ext,
                               self.t_origin_ns, tuple(tracks), self.gaps)


@dataclass(eq=False)
class Segment:
    """ one interval of a recording; skip_reason is set when it cannot be solved """
    index: int
    t0: float
    tM: float
    problem: Optional[EstimationProblem] = None
    truth: Optional[StateSeries] = None
    skip_reason: str = ""
    frames: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def usable(self):
        return not self.skip_reason


def _mav_dir(dir_path):
    if not os.path.isdir(dir_path):
        raise DatasetError(f"dataset directory not found: {dir_path}")
    nested = os.path.join(dir_path, "mav0")
    return nested if os.path.isdir(nested) else dir_path


def _read_table(path, columns, what):
    """ numeric table with the given column names; the first column is int64 ns """
    if not os.path.isfile(path):
        raise DatasetError(f"{what} file not found: {path}")
    try:
        frame = pd.read_csv(path, header=None, comment="#", skipinitialspace=True,
                            dtype=str)
    except pd.errors.EmptyDataError as err:
        raise DatasetError(f"{what} file {path} is empty") from err
    if frame.empty:
        raise DatasetError(f"{what} file {path} has no rows")
    if frame.shape[1] < len(columns):
        raise DatasetError(f"{what} file {path} has {frame.shape[1]} columns, "
                           f"expected {len(columns)}")
    frame = frame.iloc[:, :len(columns)]
    frame.columns = columns
    stamps = pd.to_numeric(frame["timestamp"], errors="coerce", downcast=None)
    values = frame[columns[1:]].apply(pd.to_numeric, errors="coerce")
    bad = stamps.isna() | values.isna().any(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DatasetError(f"{what} file {path}: malformed row {row}")
    ns = frame["timestamp"].astype(np.int64).to_numpy()
    steps = np.diff(ns)
    if np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 1
        raise DatasetError(f"{what} file {path}: timestamps not increasing at row {row}")
    return ns, values.to_numpy(dtype=float)


def read_sensor_yaml(path):
    """ the 4x4 T_BS of a sensor.yaml (sensor to body) """
    if not os.path.isfile(path):
        raise DatasetError(f"calibration file not found: {path}")
    with open(path, "r") as file:
        # OpenCV-style files open with a %YAML:1.0 directive PyYAML rejects
        lines = [line for line in file if not line.startswith("%")]
    try:
        data = yaml.safe_load("".join(lines))
        matrix = np.asarray(data["T_BS"]["data"], dtype=float).reshape(4, 4)
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as err:
        raise DatasetError(f"no usable T_BS in {path}: {err}") from err
    return matrix


def _extrinsics(mav, gravity, gravity_band):
    """ camera extrinsics relative to the IMU, which is the body frame """
    T_B_cam = read_sensor_yaml(os.path.join(mav, "cam0", "sensor.yaml"))
    imu_yaml = os.path.join(mav, "imu0", "sensor.yaml")
    T_B_imu = read_sensor_yaml(imu_yaml) if os.path.isfile(imu_yaml) else np.eye(4)
    T_imu_cam = np.linalg.solve(T_B_imu, T_B_cam)
    R_BS, t_BS = T_imu_cam[:3, :3], T_imu_cam[:3, 3]
    try:
        return Extrinsics(C_bc=R_BS.T, p_cb=-R_BS.T @ t_BS, gravity=gravity,
                          gravity_band=gravity_band)
    except ParameterError as err:
        raise DatasetError(f"bad calibration in {mav}: {err}") from err


def _relative_seconds(ns, origin_ns):
    return (ns - origin_ns).astype(np.float64) / NS


def load_euroc(dir_path, dataset_cfg=None, tracks=None):
    """
    RecordingBundle of an ASL directory (the one holding mav0/ or mav0
    itself). IMU rows outside the ground-truth span are dropped. Gaps
    longer than gap_factor nominal periods are logged and kept in
    bundle.gaps as (time, length) pairs.
    """
    cfg = dataset_cfg or DatasetConfig()
    mav = _mav_dir(dir_path)
    imu_ns, imu = _read_table(os.path.join(mav, "imu0", "data.csv"), IMU_COLUMNS, "IMU")
    gt_ns, gt = _read_table(os.path.join(mav, "state_groundtruth_estimate0", "data.csv"),
                            GROUNDTRUTH_COLUMNS, "ground truth")
    ext = _extrinsics(mav, np.asarray(cfg.gravity, dtype=float), cfg.gravity_band)
    origin = int(imu_ns[0])

    keep = (imu_ns >= gt_ns[0]) & (imu_ns <= gt_ns[-1])
    if keep.sum() < 2:
        raise DatasetError(f"IMU and ground truth in {mav} do not overlap")
    imu_ns, imu = imu_ns[keep], imu[keep]
    times = _relative_seconds(imu_ns, origin)
    gt_times = _relative_seconds(gt_ns, origin)

    steps = np.diff(times)
    nominal = float(np.median(steps))
    gap_idx = np.flatnonzero(steps > cfg.gap_factor * nominal)
    gaps = tuple((float(times[i]), float(steps[i])) for i in gap_idx)
    for start, length in gaps:
        logger.warning(f"IMU gap of {length * 1e3:.1f} ms at t={start:.3f} s")

    quats_xyzw = gt[:, [4, 5, 6, 3]]
    rotations = Rotation.from_quat(quats_xyzw)
    quats = from_scipy(Slerp(gt_times, rotations)(times))

    def interp(block):
        return np.column_stack([np.interp(times, gt_times, block[:, i])
                                for i in range(block.shape[1])])

    truth = StateSeries(times, quats, interp(gt[:, 7:10]), interp(gt[:, 0:3]))
    bundle = RecordingBundle(imu_ns=imu_ns, imu_times=times, gyro=imu[:, 0:3],
                             accel=imu[:, 3:6], groundtruth=truth, gt_bg=interp(gt[:, 10:13]),
                             gt_ba=interp(gt[:, 13:16]), ext=ext, t_origin_ns=origin,
                             gaps=gaps)
    logger.info(f"loaded {mav}: {len(times)} IMU samples over {bundle.duration:.2f} s")
    if tracks is not None:
        bundle = bundle.with_tracks(load_tracks(tracks, cfg.fov_limit)
                                    if isinstance(tracks, (str, os.PathLike)) else tracks)
    return bundle


def load_tracks(path, fov_limit=None):
    """
    FeatureObservations from a CSV with header
    frame_time_s,feature_id,x_norm,y_norm, sorted by (time, id).
    """
    if not os.path.isfile(path):
        raise DatasetError(f"tracks file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as err:
        raise DatasetError(f"tracks file {path} is unreadable: {err}") from err
    missing = [c for c in TRACK_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetError(f"tracks file {path} lacks columns {missing}")
    values = frame[TRACK_COLUMNS].apply(pd.to_numeric, errors="coerce")
    bad = ~np.isfinite(values.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        raise DatasetError(f"tracks file {path}: malformed row {int(np.flatnonzero(bad)[0])}")
    duplicated = values.duplicated(subset=["frame_time_s", "feature_id"])
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise DatasetError(f"tracks file {path}: feature observed twice in one frame "
                           f"at row {row}")
    if fov_limit is not None:
        outside = (values["x_norm"].abs() > fov_limit[0]) | \
            (values["y_norm"].abs() > fov_limit[1])
        if outside.any():
            row = int(np.flatnonzero(outside.to_numpy())[0])
            raise DatasetError(f"tracks file {path}: row {row} outside the field of view")
    values = values.sort_values(["frame_time_s", "feature_id"], kind="stable")
    return [FeatureObservation(float(t), int(fid), (float(x), float(y)))
            for t, fid, x, y in values.itertuples(index=False, name=None)]


def _nearest(frames, t):
    return float(frames[np.argmin(np.abs(frames - t))])


def _noise_model(noise_cfg, prior_cfg, rate):
    return NoiseModel.from_densities(noise_cfg.gyro_noise_density, noise_cfg.accel_noise_density,
                                     rate, noise_cfg.pixel_noise_std, noise_cfg.focal,
                                     prior_cfg.covariance(), noise_cfg.gyro_random_walk,
                                     noise_cfg.accel_random_walk)


def make_segments(bundle, seg_len=None, solver_cfg=None, prior_cfg=None, noise_cfg=None,
                  dataset_cfg=None):
    """
    Consecutive non-overlapping segments of seg_len seconds with ends
    snapped to camera frame times. Each carries its EstimationProblem
    (prior mean from the ground truth at t0, bias means from config)
    and the ground truth on the IMU grid. Unsolvable segments are kept
    with a skip reason.
    """
    dataset_cfg = dataset_cfg or DatasetConfig()
    seg_len = dataset_cfg.segment_len if seg_len is None else seg_len
    solver_cfg = solver_cfg or SolverConfig(n_q=dataset_cfg.n_q, n_v=dataset_cfg.n_v)
    prior_cfg = prior_cfg or PriorConfig()
    noise_cfg = noise_cfg or NoiseConfig()
    if seg_len <= 0:
        raise ParameterError("segment length must be positive")
    frames = bundle.frame_times
    start = frames[0] if len(frames) else bundle.imu_times[0]
    count = int(np.floor((bundle.imu_times[-1] - start) / seg_len + 1e-9))
    if count == 0:
        logger.warning(f"segment length {seg_len} s exceeds the {bundle.duration:.2f} s "
                       "recording, no segments")
        return []
    noise = _noise_model(noise_cfg, prior_cfg, bundle.imu_rate)
    tracks = list(bundle.tracks)
    gap_times = np.array([g[0] for g in bundle.gaps])
    segments = []
    for k in range(count):
        t0, tM = start + k * seg_len, start + (k + 1) * seg_len
        if len(frames):
            t0, tM = _nearest(frames, t0), _nearest(frames, tM)
        segment = Segment(k, float(t0), float(tM))
        segments.append(segment)
        in_frames = frames[(frames >= t0 - 1e-9) & (frames <= tM + 1e-9)]
        segment.frames = len(in_frames)
        if len(in_frames) < 2 or tM <= t0:
            segment.skip_reason = f"{len(in_frames)} camera frames"
        elif len(gap_times) and np.any((gap_times >= t0 - 1e-9) & (gap_times < tM)):
            segment.skip_reason = "IMU gap"
        else:
            obs = [o for o in tracks if t0 - 1e-9 <= o.frame_time <= tM + 1e-9]
            multi = {fid for fid, track in group_by_feature(obs).items()
                     if len({o.frame_time for o in track}) >= 2}
            if not multi:
                segment.skip_reason = "no landmark seen in two frames"
            else:
                _fill_segment(segment, bundle, obs, noise, solver_cfg, prior_cfg,
                              dataset_cfg)
        if segment.skip_reason:
            logger.warning(f"segment {k} [{t0:.3f}, {tM:.3f}] skipped: {segment.skip_reason}")
    return segments


def _fill_segment(segment, bundle, obs, noise, solver_cfg, prior_cfg, dataset_cfg):
    t0, tM = segment.t0, segment.tM
    period = 1.0 / bundle.imu_rate
    times = bundle.imu_times
    lo = max(0, int(np.searchsorted(times, t0 + 1e-9)) - 1)
    hi = min(len(times), int(np.searchsorted(times, tM - 1e-9)) + 1)
    if times[lo] > t0 + 1e-9 or times[hi - 1] < tM - 1e-9:
        segment.skip_reason = "IMU does not cover the segment"
        return
    try:
        imu = ImuSeries(times[lo:hi], bundle.gyro[lo:hi], bundle.accel[lo:hi],
                        spacing_tol=dataset_cfg.spacing_tol)
    except ParameterError as err:
        segment.skip_reason = f"IMU unusable: {err}"
        return
    gt = bundle.groundtruth
    q0 = from_scipy(Slerp(gt.times[lo:hi], to_scipy(gt.quats[lo:hi]))([t0]))[0]
    v0 = np.array([np.interp(t0, gt.times, gt.vels[:, i]) for i in range(3)])
    p0 = np.array([np.interp(t0, gt.times, gt.positions[:, i]) for i in range(3)])
    prior = PriorState(q0=q0, v0=v0, p0=p0,
                       ba0=np.asarray(prior_cfg.accel_bias_mean, dtype=float),
                       bg0=np.asarray(prior_cfg.gyro_bias_mean, dtype=float))
    segment.problem = EstimationProblem(imu=imu, observations=tuple(obs), prior=prior,
                                        noise=noise, ext=bundle.ext,
                                        time_map=cb.TimeMap(t0, tM), cfg=solver_cfg)
    segment.truth = gt.window(t0, tM)
    segment.notes = {"imu_samples": len(imu), "observations": len(obs),
                     "period_s": period}
