"""
Command line of chebvio.

    chebvio [--config FILE] [-v|-q] sim      --scenario circular --runs 50 --out DIR
    chebvio [--config FILE] [-v|-q] euroc    --dataset MH_01_easy --tracks t.csv --out DIR
    chebvio selftest [--filter basis]

Exit codes: 0 success, 1 runtime failure, 2 usage, config or dataset error.
"""
import copy
import os

import click
import numpy as np
import pandas as pd

from . import selftest
from .config import (BaselineConfig, DatasetConfig, NoiseConfig, PriorConfig, SolverConfig,
                     load_config)
from .errors import ChebVioError, ConfigError, DatasetError
from .io.input_adapter import load_euroc, load_tracks, make_segments
from .io.output_adapter import OutputAdapter, export_euroc
from .log import logger, set_level
from .metrics import improvement, improvement_ratio, segment_rmse, sm_rmse
from .pipeline import ESTIMATORS, run_segments
from .sim_gen import SimScenario, generate, run_monte_carlo

# pylint: disable=logging-fstring-interpolation
# pylint: disable=too-many-arguments, too-many-locals


class BadInput(click.ClickException):
    """ config or dataset problem, reported like a usage error """
    exit_code = 2


def _guard(func, *args, **kwargs):
    """ runs func, turning chebvio errors into click exits """
    try:
        return func(*args, **kwargs)
    except (ConfigError, DatasetError) as err:
        logger.error(str(err))
        raise BadInput(str(err)) from err
    except ChebVioError as err:
        logger.error(str(err))
        raise click.ClickException(str(err)) from err


def _estimator_option(func):
    return click.option("--estimator", "estimators", multiple=True,
                        type=click.Choice(ESTIMATORS),
                        help="estimator to run, repeatable; default all")(func)


def _timing(wall_times):
    """ {estimator: wall times} to means, spreads and the time improvement ratio """
    out = {}
    for name, times in wall_times.items():
        times = np.asarray(times, dtype=float)
        out[name] = {"runs": len(times),
                     "wall_time_mean_s": float(times.mean()) if len(times) else None,
                     "wall_time_std_s": float(times.std()) if len(times) else None}
    if set(ESTIMATORS) <= set(out):
        base, cheb = (out[name]["wall_time_mean_s"] for name in ("preintegration", "chebyshev"))
        if base is not None and cheb is not None:
            out["improvement_time"] = improvement_ratio(base, cheb)
    return out


def _armse_frame(armses):
    return pd.DataFrame([dict(estimator=name, **value.to_dict())
                         for name, value in armses.items()])


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="TOML file merged over the default config.toml")
@click.option("-v", "--verbose", is_flag=True, help="log INFO and DEBUG to the console")
@click.option("-q", "--quiet", is_flag=True, help="only log errors to the console")
@click.pass_context
def cli(ctx, config_path, verbose, quiet):
    """ Chebyshev polynomial visual-inertial estimation experiments """
    conf = _guard(load_config, config_path)
    level = conf.get("logging", {}).get("level", "WARNING")
    if verbose:
        level = "DEBUG"
    elif quiet:
        level = "ERROR"
    try:
        set_level(level)
    except ValueError as err:
        raise BadInput(str(err)) from err
    ctx.obj = conf


@cli.command()
@click.option("--scenario", type=click.Choice(["circular", "coning-line", "coning_line"]),
              default=None, help="default: [scenario] kind")
@click.option("--runs", type=click.IntRange(min=1), default=None,
              help="Monte-Carlo runs, default: [scenario] runs")
@click.option("--seed", type=int, default=None, help="seed of run 0, run i uses seed + i")
@click.option("--jobs", type=click.IntRange(min=1), default=1, help="worker processes")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out/sim",
              help="run directory")
@click.option("--export", is_flag=True, help="also write run 0 in the EuRoC layout")
@_estimator_option
@click.pass_obj
def sim(conf, scenario, runs, seed, jobs, out_dir, export, estimators):
    """ Monte-Carlo comparison on a synthetic scenario """
    estimators = estimators or ESTIMATORS
    section = conf.get("scenario", {})
    runs = int(section.get("runs", 1) if runs is None else runs)
    if runs < 1:
        raise BadInput(f"[scenario] runs must be >= 1, got {runs}")
    scn = _guard(SimScenario.from_config, conf, scenario, seed)
    solver_cfg = _guard(SolverConfig.from_config, conf)
    baseline_cfg = _guard(BaselineConfig.from_config, conf)
    prior_cfg = _guard(PriorConfig.from_config, conf)

    result = _guard(run_monte_carlo, scn, runs, estimators, solver_cfg, baseline_cfg,
                    prior_cfg, jobs)
    out = OutputAdapter(out_dir)
    resolved = copy.deepcopy(conf)
    resolved.setdefault("scenario", {}).update(kind=scn.kind, seed=scn.seed, runs=runs)
    resolved["solver"] = solver_cfg.to_dict()
    resolved["solver"]["quad_order"] = solver_cfg.quadrature_order
    resolved["baseline"] = baseline_cfg.to_dict()
    resolved["run"] = {"command": "sim", "estimators": list(estimators), "jobs": jobs}
    out.write_config(resolved)

    for name, report in result.reports.items():
        out.write_frame(f"epoch_errors_{name}.csv", report.to_frame())
    out.write_frame("armse.csv", _armse_frame(
        {name: report.armse for name, report in result.reports.items()}))
    per_run, timing = [], []
    for index, outcomes in enumerate(result.outcomes):
        for name, outcome in outcomes.items():
            row = {"run": index, "seed": scn.seed + index, "estimator": name,
                   "failed": outcome.failed}
            if not outcome.failed:
                row.update(segment_rmse(outcome.errors).to_dict())
                timing.append({"run": index, "estimator": name,
                               "wall_time_s": outcome.report.wall_time,
                               "converged": outcome.report.converged})
            per_run.append(row)
    out.write_frame("per_run_armse.csv", pd.DataFrame(per_run))
    out.write_frame("timing.csv", pd.DataFrame(timing))

    summary = {"command": "sim", "scenario": scn.to_dict(), "runs": runs,
               "estimators": {name: r.summary() for name, r in result.reports.items()},
               "failures": result.failures}
    if set(ESTIMATORS) <= set(result.reports):
        summary["improvement"] = improvement(result.reports["preintegration"].armse,
                                             result.reports["chebyshev"].armse).to_dict()
    out.write_json("summary.json", summary)
    out.write_json("timing.json", _timing(
        {name: report.wall_times for name, report in result.reports.items()}))

    if export:
        truth, imu, obs = generate(scn)
        imu_ns = np.round(imu.times * 1e9).astype(np.int64)
        export_euroc(out.path("euroc"), imu_ns, imu.gyro, imu.accel, truth.states(),
                     truth.bg, truth.ba, truth.ext, obs)

    for name, report in result.reports.items():
        click.echo(f"{name}: ARMSE {report.armse.attitude:.4f} deg "
                   f"{report.armse.velocity:.4f} m/s {report.armse.position:.4f} m "
                   f"({len(report.per_run)} runs, {report.failed} failed)")
    if not result.reports:
        raise click.ClickException("every run failed")


@cli.command()
@click.option("--dataset", "dataset_dir", type=click.Path(file_okay=False), required=True,
              help="EuRoC sequence directory (contains mav0/)")
@click.option("--tracks", "tracks_path", type=click.Path(dir_okay=False), default=None,
              help="feature tracks CSV, default: <dataset>/tracks.csv")
@click.option("--segment-len", type=float, default=None, help="seconds, default: [dataset]")
@click.option("--jobs", type=click.IntRange(min=1), default=1, help="worker processes")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out/euroc",
              help="run directory")
@_estimator_option
@click.pass_obj
def euroc(conf, dataset_dir, tracks_path, segment_len, jobs, out_dir, estimators):
    """ segmented comparison on a EuRoC recording with feature tracks """
    estimators = estimators or ESTIMATORS
    dataset_cfg = _guard(DatasetConfig.from_config, conf)
    solver_cfg = _guard(SolverConfig.from_config, conf).with_orders(dataset_cfg.n_q,
                                                                    dataset_cfg.n_v)
    baseline_cfg = _guard(BaselineConfig.from_config, conf)
    prior_cfg = _guard(PriorConfig.from_config, conf)
    noise_cfg = _guard(NoiseConfig.from_config, conf)
    seg_len = dataset_cfg.segment_len if segment_len is None else segment_len
    if seg_len <= 0:
        raise BadInput(f"segment length must be positive, got {seg_len}")

    tracks_path = tracks_path or os.path.join(dataset_dir, "tracks.csv")
    tracks = _guard(load_tracks, tracks_path, dataset_cfg.fov_limit)
    bundle = _guard(load_euroc, dataset_dir, dataset_cfg, tracks)
    segments = _guard(make_segments, bundle, seg_len, solver_cfg, prior_cfg, noise_cfg,
                      dataset_cfg)
    results = _guard(run_segments, segments, estimators, baseline_cfg, jobs)

    out = OutputAdapter(out_dir)
    resolved = copy.deepcopy(conf)
    resolved["dataset"] = dict(resolved.get("dataset", {}), segment_len=seg_len)
    resolved["solver"] = solver_cfg.to_dict()
    resolved["solver"]["quad_order"] = solver_cfg.quadrature_order
    resolved["run"] = {"command": "euroc", "dataset": os.path.abspath(dataset_dir),
                       "tracks": os.path.abspath(tracks_path),
                       "estimators": list(estimators), "jobs": jobs}
    out.write_config(resolved)

    rows, timing = [], []
    for segment in segments:
        base = {"segment": segment.index, "t0_s": segment.t0, "tM_s": segment.tM,
                "frames": segment.frames}
        if not segment.usable:
            rows.extend(dict(base, estimator=name, status=f"skipped: {segment.skip_reason}")
                        for name in estimators)
            continue
        for name, outcome in results[segment.index].items():
            if outcome.failed:
                rows.append(dict(base, estimator=name, status=f"failed: {outcome.message}"))
                continue
            rows.append(dict(base, estimator=name, status="ok",
                             **segment_rmse(outcome.errors).to_dict()))
            timing.append({"segment": segment.index, "estimator": name,
                           "wall_time_s": outcome.report.wall_time})
    out.write_frame("segments.csv", pd.DataFrame(rows))
    out.write_frame("timing.csv", pd.DataFrame(timing))

    # SM-RMSE over the segments every selected estimator solved
    solved = [i for i, outcomes in sorted(results.items())
              if not any(o.failed for o in outcomes.values())]
    summary = {"command": "euroc", "dataset": os.path.basename(os.path.normpath(dataset_dir)),
               "segment_len_s": seg_len, "segments": len(segments),
               "usable": len(results), "compared": len(solved),
               "skipped": {str(s.index): s.skip_reason for s in segments if not s.usable}}
    wall_times, armses = {}, {}
    if solved:
        for name in estimators:
            errors = [results[i][name].errors for i in solved]
            armses[name] = sm_rmse(errors)
            wall_times[name] = [results[i][name].report.wall_time for i in solved]
        summary["sm_rmse"] = {name: value.to_dict() for name, value in armses.items()}
        if set(ESTIMATORS) <= set(armses):
            summary["improvement"] = improvement(armses["preintegration"],
                                                 armses["chebyshev"]).to_dict()
        out.write_frame("sm_rmse.csv", _armse_frame(armses))
        out.write_json("timing.json", _timing(wall_times))
    out.write_json("summary.json", summary)

    for name, value in armses.items():
        click.echo(f"{name}: SM-RMSE {value.attitude:.4f} deg {value.velocity:.4f} m/s "
                   f"{value.position:.4f} m over {len(solved)} segments")
    if not solved:
        raise click.ClickException("no segment was solved by every estimator")


@cli.command(name="selftest")
@click.option("--filter", "name_filter", default=None, help="substring of check names")
def selftest_cmd(name_filter):
    """ fast invariant checks; exit 0 only when all pass """
    if name_filter and not any(name_filter in name for name in selftest.CHECKS):
        raise click.UsageError(f"no check matches {name_filter!r}")
    results = selftest.run_checks(name_filter, echo=click.echo)
    failed = [name for name, (passed, _) in results.items() if not passed]
    click.echo(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise click.ClickException(f"failed: {', '.join(failed)}")


def main():
    cli(prog_name="chebvio")  # pylint: disable=no-value-for-parameter
