"""
Levenberg-Marquardt and augmented-Lagrangian machinery shared by the
Chebyshev estimator and the preintegration baseline.

Residual and Jacobian callbacks may return dense arrays or scipy
sparse matrices. Normal equations are formed densely and solved by
Cholesky; trailing 3-column landmark blocks can be eliminated by a
Schur complement first.
"""
import json
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import SolverFailure
from .log import logger

# pylint: disable=logging-fstring-interpolation
# pylint: disable=too-many-arguments, too-many-locals
# the solver loops carry their whole state in locals.

DENSE_FILL = 0.05


@dataclass
class SolveReport:
    """ outcome of one solve, serializable to JSON """
    converged: bool
    outer_iterations: int
    inner_iterations: int
    cost: float
    max_constraint: float
    block_costs: dict = field(default_factory=dict)
    wall_time: float = 0.0
    dropped_observations: int = 0
    excluded_landmarks: int = 0
    method: str = "chebyshev"
    message: str = ""
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        out = asdict(self)
        out["cost"] = float(self.cost)
        out["max_constraint"] = float(self.max_constraint)
        out["block_costs"] = {k: float(v) for k, v in self.block_costs.items()}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class LmResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    reason: str


@dataclass
class AlResult:
    x: np.ndarray
    outer_iterations: int
    inner_iterations: int
    converged: bool
    max_constraint: float
    multipliers: np.ndarray
    penalty: float
    reason: str = ""


def _dense(matrix):
    if scipy.sparse.issparse(matrix):
        return matrix.toarray()
    return np.asarray(matrix, dtype=float)


def normal_equations(jac, r):
    """ (J^T J, J^T r), dense """
    if scipy.sparse.issparse(jac):
        nnz = jac.nnz / max(1, jac.shape[0] * jac.shape[1])
        if nnz > DENSE_FILL:
            jac = jac.toarray()
        else:
            jac = jac.tocsr()
            return _dense(jac.T @ jac), jac.T @ r
    return jac.T @ jac, jac.T @ r


def solve_damped(hess, grad, damping, tail=0, schur_threshold=150):
    """
    Solves (H + damping diag(H)) dx = -g.
    With tail > schur_threshold the last tail columns are treated as
    independent 3x3 blocks and eliminated first.
    """
    diag = np.diag(hess).copy()
    floor = 1e-12 * max(1.0, diag.max(initial=0.0))
    lhs = hess + np.diag(damping * np.maximum(diag, floor))
    rhs = -grad
    if tail == 0 or tail <= schur_threshold:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(lhs), rhs)
    size = lhs.shape[0]
    head = size - tail
    blocks = tail // 3
    idx = np.arange(blocks)
    c_blocks = lhs[head:, head:].reshape(blocks, 3, blocks, 3)[idx, :, idx, :]
    c_inv = np.linalg.inv(c_blocks)
    coupling = lhs[:head, head:]
    b_cinv = np.einsum('msi,sij->msj', coupling.reshape(head, blocks, 3),
                       c_inv).reshape(head, tail)
    reduced = lhs[:head, :head] - b_cinv @ coupling.T
    step_head = scipy.linalg.cho_solve(scipy.linalg.cho_factor(reduced),
                                       rhs[:head] - b_cinv @ rhs[head:])
    rest = (rhs[head:] - coupling.T @ step_head).reshape(blocks, 3)
    step_tail = np.einsum('sij,sj->si', c_inv, rest).ravel()
    return np.concatenate([step_head, step_tail])


def gradient_cosine(hess, grad, cost):
    """
    largest |J_j . r| / (|J_j| |r|) over the Jacobian columns, from
    J^T J and J^T r; columns without entries are skipped
    """
    norms = np.sqrt(np.maximum(np.diag(hess), 0.0) * cost)
    live = norms > 0.0
    if not np.any(live):
        return 0.0
    return float(np.max(np.abs(grad[live]) / norms[live]))


def levenberg_marquardt(residual, jacobian, x0, cfg, tail=0, max_iter=None):
    """
    Minimizes |residual(x)|^2. Accepted steps never increase the cost.
    Stops on relative cost decrease below cfg.cost_tol, a step below
    cfg.step_tol, damping above cfg.lm_max_damping or the iteration cap.
    A damping exit counts as converged only when the residual is
    orthogonal to every Jacobian column within cfg.grad_tol.
    """
    max_iter = cfg.max_inner if max_iter is None else max_iter
    x = np.array(x0, dtype=float)
    r = residual(x)
    cost = float(r @ r)
    if not np.isfinite(cost) or cost > cfg.divergence_cost:
        raise SolverFailure(f"cost {cost:.3e} at the start of the inner loop")
    damping = cfg.lm_damping
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        hess, grad = normal_equations(jacobian(x), r)
        while True:
            try:
                step = solve_damped(hess, grad, damping, tail, cfg.schur_threshold)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                step = None
            if step is not None and np.all(np.isfinite(step)):
                r_new = residual(x + step)
                cost_new = float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    break
            damping *= cfg.lm_up
            if damping > cfg.lm_max_damping:
                cosine = gradient_cosine(hess, grad, cost)
                if cosine <= cfg.grad_tol:
                    logger.debug(f"LM at a minimum, cost {cost:.6e}, gradient cosine {cosine:.1e}")
                    return LmResult(x, cost, iterations, True, "gradient")
                logger.info(f"LM stalled at cost {cost:.6e}, gradient cosine {cosine:.1e}")
                return LmResult(x, cost, iterations, False, "stalled")
        decrease = cost - cost_new
        small_step = np.linalg.norm(step) <= cfg.step_tol * (np.linalg.norm(x) + cfg.step_tol)
        x = x + step
        r = r_new
        logger.debug(f"LM {iterations}: cost {cost:.6e} -> {cost_new:.6e}, damping {damping:.1e}")
        previous, cost = cost, cost_new
        damping = max(damping / cfg.lm_down, 1e-15)
        if decrease <= cfg.cost_tol * max(previous, 1e-300) or cost == 0.0:
            return LmResult(x, cost, iterations, True, "cost")
        if small_step:
            return LmResult(x, cost, iterations, True, "step")
    return LmResult(x, cost, iterations, False, "max_inner")


def penalty_scale(j_r, j_c):
    """
    mean squared column norm of J_r over the columns J_c touches, 1
    when there are none
    """
    touched = np.flatnonzero(np.any(_dense(j_c) != 0.0, axis=0))
    if scipy.sparse.issparse(j_r):
        squares = np.asarray(j_r.multiply(j_r).sum(axis=0)).ravel()
    else:
        squares = np.sum(np.asarray(j_r, dtype=float) ** 2, axis=0)
    scale = float(np.mean(squares[touched])) if len(touched) else 0.0
    return scale if scale > 0.0 else 1.0


def augmented_lagrangian(evaluate, linearize, x0, cfg, tail=0):
    """
    Equality-constrained least squares min |r(x)|^2 s.t. c(x) = 0.

    evaluate(x) -> (r, c), linearize(x) -> (J_r, J_c). Each outer
    iteration minimizes |r|^2 + mu |c + lam/(2 mu)|^2 by LM, then
    lam <- lam + 2 mu c, and mu grows by cfg.mu_growth when max|c|
    did not drop by cfg.constraint_decrease. mu is counted in units of
    penalty_scale(J_r, J_c) at x0.
    """
    x = np.array(x0, dtype=float)
    _, c = evaluate(x)
    lam = np.zeros(len(c))
    mu = cfg.mu_init * penalty_scale(*linearize(x))
    previous = np.inf
    inner_total = 0
    violation = float(np.max(np.abs(c), initial=0.0))
    reason = "max_outer"

    for outer in range(1, cfg.max_outer + 1):
        def aug_residual(z, mu=mu, lam=lam):
            r_z, c_z = evaluate(z)
            return np.concatenate([r_z, np.sqrt(mu) * (c_z + lam / (2.0 * mu))])

        def aug_jacobian(z, mu=mu):
            j_r, j_c = linearize(z)
            j_c = np.sqrt(mu) * _dense(j_c)
            if scipy.sparse.issparse(j_r):
                return scipy.sparse.vstack([j_r, scipy.sparse.csr_matrix(j_c)]).tocsr()
            return np.vstack([j_r, j_c])

        inner = levenberg_marquardt(aug_residual, aug_jacobian, x, cfg, tail=tail)
        x = inner.x
        inner_total += inner.iterations
        _, c = evaluate(x)
        violation = float(np.max(np.abs(c), initial=0.0))
        logger.debug(f"AL outer {outer}: mu {mu:.1e}, max|c| {violation:.3e}, "
                     f"inner {inner.iterations} ({inner.reason})")
        if inner.converged and violation < cfg.constraint_tol:
            reason = inner.reason
            return AlResult(x, outer, inner_total, True, violation, lam, mu, reason)
        lam = lam + 2.0 * mu * c
        if violation > previous / cfg.constraint_decrease:
            mu *= cfg.mu_growth
        previous = violation
    logger.info(f"augmented Lagrangian hit the iteration cap, max|c| {violation:.3e}")
    return AlResult(x, cfg.max_outer, inner_total, False, violation, lam, mu, reason)


def least_squares(residual, jacobian, x0, cfg, tail=0):
    """ unconstrained LM with the same reporting shape as augmented_lagrangian """
    result = levenberg_marquardt(residual, jacobian, x0, cfg, tail=tail,
                                 max_iter=cfg.max_inner * cfg.max_outer)
    return AlResult(result.x, 1, result.iterations, result.converged, 0.0,
                    np.zeros(0), 0.0, result.reason)


def stack_report(al_result, block_costs, wall_time, method, **extra):
    """ SolveReport from an AlResult """
    return SolveReport(converged=bool(al_result.converged),
                       outer_iterations=int(al_result.outer_iterations),
                       inner_iterations=int(al_result.inner_iterations),
                       cost=float(sum(block_costs.values())),
                       max_constraint=float(al_result.max_constraint),
                       block_costs=dict(block_costs), wall_time=float(wall_time),
                       method=method, message=al_result.reason, **extra)
