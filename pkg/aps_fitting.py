# aps_fitting.py
"""Angular power spectrum refinement of a channel covariance estimate.

The dictionary holds one block of rank-one steering outer products per local
cluster mask followed by an unmasked common block, ordered
[B_1 ... B_L, B_c]. Fitting is a realified NNLS on the Frobenius error; the
Gram matrix of the realified dictionary has the closed form
|a_g^H S_p S_q a_h|^2, so B itself is only built on request.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Optional, Tuple

import numpy as np

from channel_model import ClusterGeometry, steering_matrix
from errors import DimensionMismatch, InvalidParameter, NegativeCoefficient
from hermitian import HermitianMatrix, check_square, hermitian_part
from nnls import DEFAULT_TOL, NnlsResult, nnls_solve_normal

logger = logging.getLogger(__name__)

GridSpacing = Literal["angle", "sine"]


def angle_grid(grid_size: int, spacing: GridSpacing = "angle") -> np.ndarray:
    """`grid_size` angles in degrees covering [-90, 90), uniform in angle or in sine."""
    if grid_size < 1:
        raise InvalidParameter(f"grid size must be >= 1, got {grid_size}")
    steps = np.arange(grid_size) / grid_size
    if spacing == "angle":
        return -90.0 + 180.0 * steps
    if spacing == "sine":
        return np.rad2deg(np.arcsin(-1.0 + 2.0 * steps))
    raise InvalidParameter(f"unknown grid spacing '{spacing}'")


@dataclass(frozen=True)
class AngularDictionary:
    grid_deg: np.ndarray
    steering: np.ndarray  # (M, G)
    masks: Tuple[np.ndarray, ...]  # boolean, one per block, common block last

    @property
    def num_antennas(self) -> int:
        return self.steering.shape[0]

    @property
    def grid_size(self) -> int:
        return self.steering.shape[1]

    @property
    def num_blocks(self) -> int:
        return len(self.masks)

    @property
    def num_columns(self) -> int:
        return self.num_blocks * self.grid_size

    def block_steering(self, block: int) -> np.ndarray:
        """S_p A for block p."""
        return self.steering * self.masks[block][:, None]

    def column(self, index: int) -> np.ndarray:
        """vec(S_p a_g a_g^H S_p^H), column-major, for dictionary column `index`."""
        block, g = divmod(index, self.grid_size)
        a = self.block_steering(block)[:, g]
        return np.outer(a, a.conj()).reshape(-1, order="F")

    def matrix(self) -> np.ndarray:
        """Full complex dictionary B, shape (M^2, (L+1) G); only sensible for small M."""
        return np.stack([self.column(k) for k in range(self.num_columns)], axis=1)

    @cached_property
    def gram(self) -> np.ndarray:
        """Re(B^H B) with entries |a_g^H S_p S_q a_h|^2."""
        G = self.grid_size
        gram = np.empty((self.num_columns, self.num_columns))
        for p in range(self.num_blocks):
            for q in range(p, self.num_blocks):
                overlap = self.masks[p] & self.masks[q]
                inner = self.steering[overlap].conj().T @ self.steering[overlap]
                block = np.abs(inner) ** 2
                gram[p * G:(p + 1) * G, q * G:(q + 1) * G] = block
                gram[q * G:(q + 1) * G, p * G:(p + 1) * G] = block.T
        return gram

    def projection(self, C: HermitianMatrix) -> np.ndarray:
        """Re(B^H vec(C)), i.e. a_g^H S_p C S_p a_g per column."""
        check_square(C, "covariance")
        if C.shape[0] != self.num_antennas:
            raise DimensionMismatch(f"covariance size {C.shape[0]} != dictionary size {self.num_antennas}")
        parts = []
        for p in range(self.num_blocks):
            As = self.block_steering(p)
            parts.append(np.real(np.sum(As.conj() * (C @ As), axis=0)))
        return np.concatenate(parts)


def build_dictionary(g: ClusterGeometry, grid_size: Optional[int] = None, spacing: GridSpacing = "angle") -> AngularDictionary:
    """Dictionary for the geometry's known masks; `grid_size` defaults to 2M."""
    grid_size = 2 * g.num_antennas if grid_size is None else grid_size
    grid = angle_grid(grid_size, spacing)
    masks = tuple(c.selection(g.num_antennas) for c in g.local_clusters)
    masks += (np.ones(g.num_antennas, dtype=bool),)
    return AngularDictionary(grid_deg=grid, steering=steering_matrix(grid, g.num_antennas), masks=masks)


@dataclass(frozen=True)
class ApsFit:
    coefficients: np.ndarray
    objective: float
    solver: NnlsResult

    @property
    def converged(self) -> bool:
        return self.solver.converged


def fit_aps(d: AngularDictionary, C_h_hat: HermitianMatrix, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None) -> ApsFit:
    """gamma* = argmin_{gamma >= 0} ||B gamma - vec(C_h_hat)||^2 over the realified problem.

    The objective is ||C_h(gamma*) - C_h_hat||_F^2. Only the Hermitian part of
    the input is fitted; the anti-Hermitian part adds a constant.
    """
    C = hermitian_part(np.asarray(C_h_hat, dtype=complex))
    result = nnls_solve_normal(
        d.gram,
        d.projection(C),
        tol=tol,
        max_iter=max_iter,
        target_sq_norm=float(np.sum(np.abs(np.asarray(C_h_hat)) ** 2)),
    )
    return ApsFit(coefficients=result.x, objective=max(result.objective, 0.0), solver=result)


def reconstruct_covariance(d: AngularDictionary, gamma: np.ndarray) -> HermitianMatrix:
    """C_h(gamma) = sum_p S_p A diag(gamma_p) A^H S_p^H; PSD since gamma >= 0."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (d.num_columns,):
        raise DimensionMismatch(f"expected {d.num_columns} coefficients, got shape {gamma.shape}")
    if np.any(gamma < 0):
        raise NegativeCoefficient(f"coefficient {int(np.argmin(gamma))} is negative: {gamma.min():.3e}")
    C = np.zeros((d.num_antennas, d.num_antennas), dtype=complex)
    for p, block in enumerate(np.split(gamma, d.num_blocks)):
        As = d.block_steering(p)
        C += (As * block) @ As.conj().T
    return hermitian_part(C)


def refine_covariance(d: AngularDictionary, C_h_hat: HermitianMatrix, tol: float = DEFAULT_TOL) -> Tuple[HermitianMatrix, ApsFit]:
    """Fit then reconstruct: the refined, PSD channel covariance and its fit record."""
    fit = fit_aps(d, C_h_hat, tol=tol)
    if not fit.converged:
        logger.warning("APS fit did not converge", extra={"objective": fit.objective})
    return reconstruct_covariance(d, fit.coefficients), fit
