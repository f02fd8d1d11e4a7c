"""
Class Pipeline which runs the selected estimators on one
estimation problem and works as the middle hand between
the solvers and the metrics.
"""
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .config import BaselineConfig
from .errors import ChebVioError, ConfigError
from .estimator import initialize, solve
from .log import logger
from .metrics import EpochErrors, StateSeries, epoch_errors
from .optimizer import SolveReport
from .preint_baseline import densify, solve_discrete

# pylint: disable=logging-fstring-interpolation

ESTIMATORS = ("chebyshev", "preintegration")


@dataclass(eq=False)
class RunOutcome:
    """ what one estimator produced on one problem """
    estimator: str
    label: str
    report: Optional[SolveReport]
    estimate: Optional[StateSeries] = None
    errors: Optional[EpochErrors] = None
    failed: bool = False
    message: str = ""


class Pipeline:
    """
    Runs each selected estimator on a problem and scores it against
    a reference on the reference's time grid.

    __init__(self, baseline_cfg, estimators) --
        Checks the estimator selection
    run(self, problem, truth, label) --
        {estimator: RunOutcome}; a failing estimator gives a failed
        outcome instead of an exception
    run_chebyshev(self, problem, times) --
        initialize, solve, sample the polynomials at times
    run_preintegration(self, problem, times) --
        keyframe solve, dead-reckon between keyframes to times

    Both runners set report.wall_time to the whole way from the problem
    to the sampled states, setup included.
    """

    def __init__(self, baseline_cfg=None, estimators=ESTIMATORS):
        estimators = tuple(estimators)
        if not estimators:
            raise ConfigError("no estimators selected")
        unknown = set(estimators) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators {sorted(unknown)}")
        self.baseline_cfg = baseline_cfg or BaselineConfig()
        self.estimators = estimators

    def run(self, problem, truth, label=""):
        """ truth is a StateSeries; only its samples inside the interval are scored """
        tmap = problem.time_map
        truth = truth.window(tmap.t0, tmap.tM)
        runners = {"chebyshev": self.run_chebyshev,
                   "preintegration": self.run_preintegration}
        outcomes = {}
        for name in self.estimators:
            try:
                estimate, report = runners[name](problem, truth.times)
            except ChebVioError as err:
                if isinstance(err, ConfigError):
                    raise
                logger.warning(f"{name} {label} failed: {err}")
                outcomes[name] = RunOutcome(name, label, getattr(err, "report", None),
                                            failed=True, message=str(err))
                continue
            outcomes[name] = RunOutcome(name, label, report, estimate,
                                        epoch_errors(estimate, truth))
        return outcomes

    @staticmethod
    def run_chebyshev(problem, times):
        start = time.perf_counter()
        x0 = initialize(problem)
        _, traj, report = solve(problem, x0)
        quats, vels, positions = traj.sample(times)
        report.wall_time = time.perf_counter() - start
        return StateSeries(times, quats, vels, positions), report

    def run_preintegration(self, problem, times):
        start = time.perf_counter()
        state, report = solve_discrete(problem, baseline_cfg=self.baseline_cfg)
        quats, vels, positions = densify(state, problem, times)
        report.wall_time = time.perf_counter() - start
        return StateSeries(times, quats, vels, positions), report


def _run_segment(args):
    segment, estimators, baseline_cfg = args
    pipeline = Pipeline(baseline_cfg=baseline_cfg, estimators=estimators)
    return pipeline.run(segment.problem, segment.truth, label=f"segment{segment.index:03d}")


def run_segments(segments, estimators=ESTIMATORS, baseline_cfg=None, jobs=1):
    """
    {segment index: {estimator: RunOutcome}} for the usable segments,
    in process pools of jobs workers when jobs > 1
    """
    usable = [s for s in segments if s.usable]
    tasks = [(s, tuple(estimators), baseline_cfg) for s in usable]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_segment, tasks))
    else:
        results = [_run_segment(task) for task in tasks]
    logger.info(f"solved {len(usable)} of {len(segments)} segments")
    return {s.index: outcomes for s, outcomes in zip(usable, results)}
