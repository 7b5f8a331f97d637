# nnls.py
"""Non-negative least squares, Lawson-Hanson active set with a projected-gradient warm start.

The solver works on the normal equations (gram = A^T A, rhs = A^T b), so very
tall designs (the realified APS dictionary has 2 M^2 rows) never need to be
materialized. `nnls_solve` accepts the design/target form.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg

from errors import DimensionMismatch, InvalidParameter, NonFinite

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
DEFAULT_TOL = 1e-10
ITERATIONS_PER_COLUMN = 10
WARM_START_STEPS = 20


class NnlsStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class NnlsProblem:
    design: np.ndarray
    target: np.ndarray
    tol: float = DEFAULT_TOL
    max_iter: Optional[int] = None

    def __post_init__(self):
        design = np.asarray(self.design)
        target = np.asarray(self.target)
        if design.ndim != 2 or design.shape[0] < 1 or design.shape[1] < 1:
            raise DimensionMismatch(f"design must be a non-empty matrix, got shape {design.shape}")
        if target.shape != (design.shape[0],):
            raise DimensionMismatch(f"target shape {target.shape} does not match {design.shape[0]} rows")
        if np.iscomplexobj(design) or np.iscomplexobj(target):
            raise InvalidParameter("NNLS is real-valued; realify complex data first")
        if not (np.all(np.isfinite(design)) and np.all(np.isfinite(target))):
            raise NonFinite("design and target must be finite")
        if self.tol <= 0:
            raise InvalidParameter(f"tolerance must be > 0, got {self.tol}")


@dataclass(frozen=True)
class NnlsResult:
    x: np.ndarray
    status: NnlsStatus
    iterations: int
    objective: float
    kkt_residual: float

    @property
    def converged(self) -> bool:
        return self.status is NnlsStatus.CONVERGED


def kkt_violation(gram: np.ndarray, rhs: np.ndarray, x: np.ndarray) -> float:
    """Largest KKT violation relative to ||A^T b||_inf.

    Active coordinates need a zero gradient, zero coordinates a non-negative one.
    """
    grad = gram @ x - rhs
    scale = max(float(np.max(np.abs(rhs), initial=0.0)), np.finfo(float).tiny)
    active = x > 0
    worst = 0.0
    if np.any(active):
        worst = max(worst, float(np.max(np.abs(grad[active]))))
    if np.any(~active):
        worst = max(worst, float(np.max(-grad[~active], initial=0.0)))
    return worst / scale


def _solve_passive(gram: np.ndarray, rhs: np.ndarray, passive: np.ndarray) -> np.ndarray:
    z = np.zeros_like(rhs)
    idx = np.flatnonzero(passive)
    if idx.size:
        sub = gram[np.ix_(idx, idx)]
        z[idx] = scipy.linalg.lstsq(sub, rhs[idx], lapack_driver="gelsd")[0]
    return z


def _restore_feasibility(gram, rhs, x, passive):
    """Lawson-Hanson inner loop: step toward the passive-set solution until it is positive."""
    z = _solve_passive(gram, rhs, passive)
    while np.any(z[passive] <= 0):
        blocking = np.flatnonzero(passive & (z <= 0))
        ratios = x[blocking] / (x[blocking] - z[blocking])
        alpha = np.min(ratios)
        x = x + alpha * (z - x)
        x[blocking[np.argmin(ratios)]] = 0.0
        passive = passive & (x > 0)
        x[~passive] = 0.0
        z = _solve_passive(gram, rhs, passive)
    return z, passive


def _warm_start(gram: np.ndarray, rhs: np.ndarray, steps: int) -> np.ndarray:
    x = np.zeros_like(rhs)
    lipschitz = float(np.max(np.abs(scipy.linalg.eigvalsh(gram, subset_by_index=[gram.shape[0] - 1] * 2))))
    if lipschitz <= 0:
        return x
    for _ in range(steps):
        x = np.maximum(0.0, x - (gram @ x - rhs) / lipschitz)
    return x


def nnls_solve_normal(
    gram: np.ndarray,
    rhs: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    target_sq_norm: float = 0.0,
    warm_start_steps: int = WARM_START_STEPS,
) -> NnlsResult:
    """min_{x >= 0} x^T gram x - 2 rhs^T x + target_sq_norm (= ||A x - b||^2).

    Stops once every zero coordinate has gradient >= -tol * ||rhs||_inf.
    """
    gram = np.asarray(gram, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if gram.shape != (n, n):
        raise DimensionMismatch(f"gram shape {gram.shape} does not match rhs length {n}")
    if not (np.all(np.isfinite(gram)) and np.all(np.isfinite(rhs))):
        raise NonFinite("gram and rhs must be finite")
    max_iter = ITERATIONS_PER_COLUMN * n if max_iter is None else max_iter
    threshold = tol * float(np.max(np.abs(rhs), initial=0.0))

    x = _warm_start(gram, rhs, warm_start_steps) if warm_start_steps > 0 else np.zeros(n)
    passive = x > 0
    if np.any(passive):
        x, passive = _restore_feasibility(gram, rhs, x, passive)

    status = NnlsStatus.CONVERGED
    iterations = 0
    excluded = np.zeros(n, dtype=bool)
    while True:
        w = rhs - gram @ x
        candidates = ~passive & ~excluded
        if not np.any(candidates) or np.max(w[candidates]) <= threshold:
            break
        if iterations >= max_iter:
            status = NnlsStatus.MAX_ITERATIONS
            logger.warning("NNLS stopped at max iterations", extra={"max_iter": max_iter, "columns": n})
            break
        iterations += 1
        j = np.flatnonzero(candidates)[np.argmax(w[candidates])]
        trial = passive.copy()
        trial[j] = True
        z = _solve_passive(gram, rhs, trial)
        if z[j] <= 0:
            # numerically dependent column, skip it until the passive set changes
            excluded[j] = True
            continue
        passive = trial
        if np.any(z[passive] <= 0):
            z, passive = _restore_feasibility(gram, rhs, x, passive)
        x = z
        x[~passive] = 0.0
        excluded[:] = False

    objective = float(x @ gram @ x - 2.0 * rhs @ x + target_sq_norm)
    return NnlsResult(
        x=x,
        status=status,
        iterations=iterations,
        objective=objective,
        kkt_residual=kkt_violation(gram, rhs, x),
    )


def nnls_solve(problem: NnlsProblem) -> NnlsResult:
    """Solve min_{x >= 0} ||A x - b||^2 for the problem's design A and target b."""
    design = np.asarray(problem.design, dtype=float)
    target = np.asarray(problem.target, dtype=float)
    result = nnls_solve_normal(
        design.T @ design,
        design.T @ target,
        tol=problem.tol,
        max_iter=problem.max_iter,
        target_sq_norm=float(target @ target),
    )
    # recompute the objective from the residual for accuracy
    residual = design @ result.x - target
    return NnlsResult(
        x=result.x,
        status=result.status,
        iterations=result.iterations,
        objective=float(residual @ residual),
        kkt_residual=result.kkt_residual,
    )
