# bussgang.py
"""Bussgang gain, arcsine law, and the (plug-in) BLMMSE channel estimator."""
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from errors import DiagonalUnderflow, DimensionMismatch, NormalizationOverflow, SingularArcsineMatrix
from hermitian import HermitianMatrix, check_square, guarded_solve

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
DIAG_FLOOR = 1e-8
COND_CAP = 1e12
CLIP_TOL = 1e-9
UNIT_GAIN = np.sqrt(2.0 / np.pi)


class Provenance(str, Enum):
    ORACLE = "oracle"
    PLUG_IN = "plug-in"


def _checked_diagonal(C_y: np.ndarray, diag_floor: float) -> np.ndarray:
    check_square(C_y, "C_y")
    diag = np.real(np.diag(C_y))
    low = np.flatnonzero(diag <= diag_floor)
    if low.size:
        raise DiagonalUnderflow(
            f"diag(C_y) at index {int(low[0])} is {diag[low[0]]:.3e} <= floor {diag_floor:.1e}"
        )
    return diag


def bussgang_gain(C_y: HermitianMatrix, diag_floor: float = DIAG_FLOOR) -> np.ndarray:
    """A = sqrt(2/pi) diag(C_y)^(-1/2), returned as a real diagonal matrix."""
    diag = _checked_diagonal(C_y, diag_floor)
    return np.diag(UNIT_GAIN / np.sqrt(diag))


def arcsine_map(C_y: HermitianMatrix, diag_floor: float = DIAG_FLOOR, clip_tol: float = CLIP_TOL) -> HermitianMatrix:
    """Covariance of csign(y) for y ~ CN(0, C_y).

    C_r = 2/pi [arcsin(D^-1/2 Re C_y D^-1/2) + j arcsin(D^-1/2 Im C_y D^-1/2)], D = diag(C_y).
    """
    diag = _checked_diagonal(C_y, diag_floor)
    inv_sqrt = 1.0 / np.sqrt(diag)
    normalized = C_y * np.outer(inv_sqrt, inv_sqrt)
    peak = max(np.max(np.abs(normalized.real)), np.max(np.abs(normalized.imag)))
    if peak > 1.0 + clip_tol:
        raise NormalizationOverflow(f"normalized correlation {peak:.12g} exceeds 1")
    re = np.clip(normalized.real, -1.0, 1.0)
    im = np.clip(normalized.imag, -1.0, 1.0)
    C_r = (2.0 / np.pi) * (np.arcsin(re) + 1j * np.arcsin(im))
    np.fill_diagonal(C_r, 1.0)
    return C_r


@dataclass(frozen=True)
class BlmmseFilter:
    """F = C_hr C_r^-1 = (C_y - N0 I) A^H C_r^-1, with the C_y it came from."""

    matrix: np.ndarray
    provenance: Provenance
    C_y: HermitianMatrix
    ridge_applied: bool = False

    @property
    def num_antennas(self) -> int:
        return self.matrix.shape[0]


def build_blmmse_filter(
    C_y: HermitianMatrix,
    noise_power: float,
    provenance: Provenance = Provenance.ORACLE,
    *,
    diag_floor: float = DIAG_FLOOR,
    cond_cap: float = COND_CAP,
    allow_ridge: bool = True,
) -> BlmmseFilter:
    """Oracle and plug-in filters run the same code; only the source of C_y differs.

    C_r is inverted through a Hermitian solve. When its condition number
    exceeds `cond_cap` a small ridge is added if `allow_ridge`, otherwise
    SingularArcsineMatrix is raised.
    """
    C_y = np.asarray(C_y, dtype=complex)
    M = check_square(C_y, "C_y")
    A = bussgang_gain(C_y, diag_floor)
    C_r = arcsine_map(C_y, diag_floor)
    C_hr = (C_y - noise_power * np.eye(M)) @ A.conj().T
    # F = C_hr C_r^-1  <=>  F^H = C_r^-1 C_hr^H
    solution, ridged = guarded_solve(
        C_r, C_hr.conj().T, cond_cap=cond_cap, allow_ridge=allow_ridge, error=SingularArcsineMatrix, what="C_r"
    )
    matrix = solution.conj().T
    if not np.all(np.isfinite(matrix)):
        raise SingularArcsineMatrix("BLMMSE filter has non-finite entries")
    return BlmmseFilter(matrix=matrix, provenance=Provenance(provenance), C_y=C_y, ridge_applied=ridged)


def estimate_channel(f: BlmmseFilter, r: np.ndarray) -> np.ndarray:
    """h_hat = F r; a 2-D `r` is a batch of observations as rows."""
    r = np.asarray(r)
    if r.shape[-1] != f.num_antennas:
        raise DimensionMismatch(f"observation length {r.shape[-1]} != filter size {f.num_antennas}")
    if r.ndim == 1:
        return f.matrix @ r
    return r @ f.matrix.T


def naive_channel_estimate(C_y: HermitianMatrix, r: np.ndarray, diag_floor: float = DIAG_FLOOR) -> np.ndarray:
    """Undo the Bussgang gain only: sqrt(pi/2) diag(C_y)^(1/2) r."""
    diag = _checked_diagonal(np.asarray(C_y), diag_floor)
    return np.sqrt(np.pi / 2.0) * np.sqrt(diag) * np.asarray(r)
