"""
Fast invariant checks behind `chebvio selftest`.

Each check is a function returning (passed, detail). They run on
small problems so the whole suite finishes in seconds; `--filter`
selects checks by substring of their name.
"""
import time
from dataclasses import replace

import numpy as np
from numpy.polynomial import chebyshev
from scipy.optimize._numdiff import approx_derivative

from . import cheb_basis as cb
from . import estimator
from .config import SolverConfig
from .log import logger
from .metrics import StateSeries, armse
from .sim_gen import SimScenario, generate, simulation_problem, truth_decision_vector

# pylint: disable=logging-fstring-interpolation

CHECKS = {}


def check(name):
    """ registers a check function under name """
    def register(func):
        CHECKS[name] = func
        return func
    return register


@check("basis_values")
def basis_values(order=12):
    """ recurrence against numpy's Chebyshev Vandermonde matrix """
    tau = np.linspace(-1.0, 1.0, 41)
    err = np.max(np.abs(cb.eval_basis(order, tau) - chebyshev.chebvander(tau, order)))
    return err < 1e-12, f"max |F - chebvander| = {err:.2e}"


@check("basis_calculus")
def basis_calculus(order=12):
    """ derivative and running integral against numpy's chebder/chebint """
    tau = np.linspace(-1.0, 1.0, 41)
    eye = np.eye(order + 1)
    der = np.column_stack([chebyshev.chebval(tau, chebyshev.chebder(c)) for c in eye])
    integ = np.column_stack([chebyshev.chebval(tau, chebyshev.chebint(c, lbnd=-1.0))
                             for c in eye])
    err = max(np.max(np.abs(cb.eval_basis_derivative(order, tau) - der)),
              np.max(np.abs(cb.eval_basis_integral(order, tau) - integ)))
    return err < 1e-10, f"max calculus error = {err:.2e}"


@check("basis_quadrature")
def basis_quadrature(n=16):
    """ Clenshaw-Curtis integrates T_k exactly for k <= n """
    rule = cb.clenshaw_curtis(n)
    values = cb.eval_basis(n, rule.nodes)
    exact = np.array([0.0 if k % 2 else 2.0 / (1.0 - k * k) for k in range(n + 1)])
    err = np.max(np.abs(rule.integrate(values) - exact))
    return err < 1e-12, f"max quadrature error = {err:.2e}"


def small_problem(kind="circular", duration=1.0, order=8, landmarks=40, seed=3,
                  earth_rate=False):
    """ noise-free short scenario and its estimation problem """
    scn = replace(SimScenario(kind=kind, seed=seed), duration=duration,
                  landmark_count=landmarks, include_earth_rate=earth_rate).without_noise()
    truth, imu, obs = generate(scn)
    problem = simulation_problem(scn, truth, imu, obs, SolverConfig().with_orders(order, order))
    return problem, truth


@check("jacobian")
def jacobian_check(rtol=1e-5):
    """ analytic Jacobian against central differences near the truth """
    problem, truth = small_problem()
    x = truth_decision_vector(problem, truth)
    rng = np.random.default_rng(0)
    x = estimator.DecisionVector(x.values + 1e-4 * rng.standard_normal(x.values.shape),
                                 x.layout)
    analytic = estimator.jacobian(problem, x)
    analytic = analytic.toarray() if hasattr(analytic, "toarray") else np.asarray(analytic)

    def residual(values):
        return estimator.assemble_residuals(
            problem, estimator.DecisionVector(values, x.layout)).residuals

    numeric = approx_derivative(residual, x.values, method="3-point")
    err = np.max(np.abs(analytic - numeric)) / max(1.0, np.max(np.abs(numeric)))
    return err < rtol, f"relative Jacobian error = {err:.2e}"


@check("zero_noise_recovery")
def zero_noise_recovery(order=16):
    """ exact measurements, flat-world coning: the solve lands on the truth """
    problem, truth = small_problem(kind="coning_line", order=order, landmarks=60)
    x0 = estimator.initialize(problem)
    _, traj, report = estimator.solve(problem, x0)
    states = truth.states()
    quats, vels, positions = traj.sample(states.times)
    errors = armse([StateSeries(states.times, quats, vels, positions)], states)
    passed = errors.attitude < 1e-2 and errors.velocity < 1e-3 and errors.position < 1e-3
    return passed, (f"ARMSE {errors.attitude:.2e} deg {errors.velocity:.2e} m/s "
                    f"{errors.position:.2e} m, converged={report.converged}")


def run_checks(name_filter=None, echo=None):
    """
    runs the registered checks whose name contains name_filter.
    Returns {name: (passed, detail)}; a check that raises counts as
    failed with the exception as its detail.
    """
    results = {}
    for name, func in CHECKS.items():
        if name_filter and name_filter not in name:
            continue
        start = time.perf_counter()
        try:
            passed, detail = func()
        except Exception as err:  # pylint: disable=broad-except
            passed, detail = False, f"{type(err).__name__}: {err}"
        passed = bool(passed)
        results[name] = (passed, detail)
        logger.debug(f"selftest {name} took {time.perf_counter() - start:.2f} s")
        if echo is not None:
            echo(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return results
