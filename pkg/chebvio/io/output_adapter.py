"""
This is the output adapter.
Its main responsibility is to write the results of a run
into the run directory: CSV tables, JSON summaries, the
resolved TOML config, trajectory dumps and EuRoC-layout
exports of synthetic or loaded data.
"""
import json
import math
import os
import subprocess

import numpy as np
import pandas as pd
import toml

from .. import __version__
from .. import cheb_basis as cb
from ..errors import DatasetError
from ..log import logger
from ..trajectory_model import ChebTrajectory

# pylint: disable=logging-fstring-interpolation

FLOAT_FORMAT = "%.17g"


def _clean(obj):
    """ JSON-safe copy: numpy scalars and arrays to Python, nan/inf to None """
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def to_json(obj):
    """ deterministic JSON text """
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(obj, path):
    with open(path, "w") as file:
        file.write(to_json(obj))


def write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_toml(conf, path):
    with open(path, "w") as file:
        toml.dump(_clean(conf), file)


def version_string():
    """ git describe of the source tree when available, else v<version> """
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        result = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                                cwd=here, capture_output=True, text=True, timeout=5,
                                check=True)
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    return result.stdout.strip() or f"v{__version__}"


def trajectory_frame(traj):
    """ long format: block,row,col,value with blocks D, K, p0, t0, tM """
    rows = []
    for name, matrix in (("D", traj.D), ("K", traj.K)):
        for (i, j), value in np.ndenumerate(matrix):
            rows.append((name, i, j, value))
    rows.extend(("p0", i, 0, value) for i, value in enumerate(traj.p0))
    rows.append(("t0", 0, 0, traj.time_map.t0))
    rows.append(("tM", 0, 0, traj.time_map.tM))
    return pd.DataFrame(rows, columns=["block", "row", "col", "value"])


def dump_trajectory(traj, path):
    write_csv(trajectory_frame(traj), path)


def load_trajectory(path):
    """ ChebTrajectory from a dump_trajectory file """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise DatasetError(f"cannot read trajectory {path}: {err}") from err

    def block(name):
        part = frame[frame["block"] == name]
        if part.empty:
            raise DatasetError(f"trajectory {path} has no {name} block")
        out = np.zeros((part["row"].max() + 1, part["col"].max() + 1))
        out[part["row"].to_numpy(), part["col"].to_numpy()] = part["value"].to_numpy()
        return out

    time_map = cb.TimeMap(float(block("t0")[0, 0]), float(block("tM")[0, 0]))
    return ChebTrajectory(block("D"), block("K"), block("p0")[:, 0], time_map)


def tracks_frame(observations):
    return pd.DataFrame([(o.frame_time, o.feature_id, o.xy[0], o.xy[1]) for o in observations],
                        columns=["frame_time_s", "feature_id", "x_norm", "y_norm"])


def write_tracks(observations, path):
    write_csv(tracks_frame(observations), path)


def _sensor_yaml(T_BS, comment):
    data = ", ".join(repr(float(v)) for v in np.asarray(T_BS, dtype=float).ravel())
    return ("%YAML:1.0\n"
            f"comment: {comment}\n"
            "T_BS:\n"
            "  cols: 4\n"
            "  rows: 4\n"
            f"  data: [{data}]\n")


def export_euroc(out_dir, imu_ns, gyro, accel, truth, bg, ba, ext, observations=None):
    """
    Writes mav0/imu0/data.csv, mav0/state_groundtruth_estimate0/data.csv,
    mav0/cam0/sensor.yaml and, with observations, tracks.csv. truth is
    a StateSeries on the IMU grid, imu_ns the integer stamps.
    """
    mav = os.path.join(out_dir, "mav0")
    for sub in ("imu0", "state_groundtruth_estimate0", "cam0"):
        os.makedirs(os.path.join(mav, sub), exist_ok=True)
    imu_ns = np.asarray(imu_ns, dtype=np.int64)

    imu = pd.DataFrame(np.column_stack([gyro, accel]),
                       columns=["w_RS_S_x [rad s^-1]", "w_RS_S_y [rad s^-1]",
                                "w_RS_S_z [rad s^-1]", "a_RS_S_x [m s^-2]",
                                "a_RS_S_y [m s^-2]", "a_RS_S_z [m s^-2]"])
    imu.insert(0, "#timestamp [ns]", imu_ns)
    write_csv(imu, os.path.join(mav, "imu0", "data.csv"))

    columns = ["p_RS_R_x [m]", "p_RS_R_y [m]", "p_RS_R_z [m]",
               "q_RS_w []", "q_RS_x []", "q_RS_y []", "q_RS_z []",
               "v_RS_R_x [m s^-1]", "v_RS_R_y [m s^-1]", "v_RS_R_z [m s^-1]",
               "b_w_RS_S_x [rad s^-1]", "b_w_RS_S_y [rad s^-1]", "b_w_RS_S_z [rad s^-1]",
               "b_a_RS_S_x [m s^-2]", "b_a_RS_S_y [m s^-2]", "b_a_RS_S_z [m s^-2]"]
    n = len(imu_ns)
    gt = pd.DataFrame(np.column_stack([truth.positions, truth.quats, truth.vels,
                                       np.broadcast_to(bg, (n, 3)),
                                       np.broadcast_to(ba, (n, 3))]), columns=columns)
    gt.insert(0, "#timestamp", imu_ns)
    write_csv(gt, os.path.join(mav, "state_groundtruth_estimate0", "data.csv"))

    # T_BS maps camera coordinates to body: R_BS = C_bc^T, t_BS = -C_bc^T p_cb
    T_BS = np.eye(4)
    T_BS[:3, :3] = ext.C_bc.T
    T_BS[:3, 3] = -ext.C_bc.T @ ext.p_cb
    with open(os.path.join(mav, "cam0", "sensor.yaml"), "w") as file:
        file.write(_sensor_yaml(T_BS, "chebvio export, normalized coordinates"))
    if observations is not None:
        write_tracks(observations, os.path.join(out_dir, "tracks.csv"))
    logger.info(f"exported EuRoC layout to {out_dir}")


class OutputAdapter:
    """ Is given results and writes them into one run directory """

    def __init__(self, out_dir):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def write_frame(self, name, frame):
        write_csv(frame, self.path(name))

    def write_json(self, name, obj):
        write_json(obj, self.path(name))

    def write_config(self, conf, name="config.toml"):
        """ the resolved configuration plus the version that produced the run """
        write_toml(conf, self.path(name))
        self.write_json("metadata.json", {"version": version_string()})

    def write_report(self, name, report):
        self.write_json(name, report.to_dict())

    def write_trajectory(self, name, traj):
        dump_trajectory(traj, self.path(name))
