"""
Shared fixtures of the test suite.

small_scenario   -- noise-free one-second circular scenario
small_problem    -- its EstimationProblem at orders 12/12 with the truth
euroc_dir        -- a three-second EuRoC-layout directory with tracks.csv,
                    exported from a noise-free circular simulation
"""
from dataclasses import replace

import numpy as np
import pytest

from chebvio.config import DatasetConfig, SolverConfig
from chebvio.io.output_adapter import export_euroc
from chebvio.sim_gen import SimScenario, generate, simulation_problem


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end solves that take a while")


@pytest.fixture
def small_scenario():
    scn = SimScenario(kind="circular", seed=3)
    return replace(scn, duration=1.0, landmark_count=40).without_noise()


@pytest.fixture
def small_problem(small_scenario):
    truth, imu, obs = generate(small_scenario)
    problem = simulation_problem(small_scenario, truth, imu, obs,
                                 SolverConfig().with_orders(12, 12))
    return problem, truth


@pytest.fixture
def euroc_dir(tmp_path):
    scn = replace(SimScenario(kind="circular", seed=11), duration=3.0,
                  landmark_count=120).without_noise()
    truth, imu, obs = generate(scn)
    fov = DatasetConfig().fov_limit
    obs = [o for o in obs if abs(o.xy[0]) <= fov[0] and abs(o.xy[1]) <= fov[1]]
    imu_ns = np.round(imu.times * 1e9).astype(np.int64)
    export_euroc(str(tmp_path), imu_ns, imu.gyro, imu.accel, truth.states(), truth.bg,
                 truth.ba, truth.ext, obs)
    return tmp_path
