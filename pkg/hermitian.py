# hermitian.py
"""Shared helpers for complex Hermitian matrices (covariances and their estimates)."""
import logging
from typing import Tuple, Type

import numpy as np
import numpy.typing as npt
import scipy.linalg

from errors import DimensionMismatch, OneBitError

logger = logging.getLogger(__name__)

HermitianMatrix = npt.NDArray[np.complex128]

# --- CONFIGURATION ---
HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-9
RIDGE_SCALE = 1e-10


def hermitian_part(matrix: np.ndarray) -> HermitianMatrix:
    return 0.5 * (matrix + matrix.conj().T)


def is_hermitian(matrix: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
    return bool(np.max(np.abs(matrix - matrix.conj().T), initial=0.0) <= tol * scale)


def min_eigenvalue_ratio(matrix: np.ndarray) -> float:
    """Smallest eigenvalue divided by the spectral radius (0 for the zero matrix)."""
    eigs = np.linalg.eigvalsh(hermitian_part(matrix))
    radius = float(np.max(np.abs(eigs), initial=0.0))
    if radius == 0.0:
        return 0.0
    return float(eigs[0]) / radius


def is_psd(matrix: np.ndarray, tol: float = PSD_TOL) -> bool:
    return min_eigenvalue_ratio(matrix) >= -tol


def check_square(matrix: np.ndarray, name: str = "matrix") -> int:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {matrix.shape}")
    return matrix.shape[0]


def guarded_solve(
    matrix: np.ndarray,
    rhs: np.ndarray,
    *,
    cond_cap: float,
    allow_ridge: bool,
    error: Type[OneBitError],
    what: str,
) -> Tuple[np.ndarray, bool]:
    """Solve `matrix @ x = rhs` for a Hermitian `matrix`.

    When the condition number exceeds `cond_cap` a ridge of
    RIDGE_SCALE * trace / dim is added if `allow_ridge`, otherwise `error` is
    raised. Returns the solution and whether the ridge was used.
    """
    dim = check_square(matrix, what)
    cond = np.linalg.cond(matrix)
    ridged = False
    if not np.isfinite(cond) or cond > cond_cap:
        if not allow_ridge:
            raise error(f"{what} condition number {cond:.3e} exceeds cap {cond_cap:.1e}")
        ridge = RIDGE_SCALE * float(np.real(np.trace(matrix))) / dim
        logger.warning(
            "ridge applied to %s", what, extra={"condition": float(cond), "ridge": ridge}
        )
        matrix = matrix + ridge * np.eye(dim)
        ridged = True
    try:
        solution = scipy.linalg.solve(matrix, rhs, assume_a="her")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise error(f"{what} could not be inverted: {e}") from e
    return solution, ridged
