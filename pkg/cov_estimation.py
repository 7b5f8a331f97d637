# cov_estimation.py
"""Covariance estimation of C_y from unquantized, one-bit, and dithered one-bit samples.

All estimators are built on `OuterProductSum`, a streaming accumulator of
sum_n left_n right_n^H. Partial sums from different workers merge by addition.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from errors import DimensionMismatch, EmptyBatch, InvalidParameter
from hermitian import HermitianMatrix, hermitian_part
from quantizer import DitheredSampleBatch


class EstimationMethod(str, Enum):
    UNQUANTIZED = "unquantized"
    NONDITHERED = "nondithered_arcsine"
    DITHERED = "dithered"


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: HermitianMatrix
    method: EstimationMethod
    num_samples: int
    lam: Optional[float] = None

    @property
    def num_antennas(self) -> int:
        return self.matrix.shape[0]


@dataclass
class OuterProductSum:
    dim: int
    total: np.ndarray = field(init=False)
    count: int = 0

    def __post_init__(self):
        self.total = np.zeros((self.dim, self.dim), dtype=complex)

    def update(self, left: np.ndarray, right: Optional[np.ndarray] = None) -> "OuterProductSum":
        """Add sum_n left_n right_n^H for snapshots stored as rows (right defaults to left)."""
        left = np.atleast_2d(left)
        right = left if right is None else np.atleast_2d(right)
        if left.shape != right.shape or left.shape[1] != self.dim:
            raise DimensionMismatch(f"expected (n, {self.dim}) blocks, got {left.shape} and {right.shape}")
        self.total += left.T @ right.conj()
        self.count += left.shape[0]
        return self

    def merge(self, other: "OuterProductSum") -> "OuterProductSum":
        if other.dim != self.dim:
            raise DimensionMismatch(f"cannot merge sums of size {self.dim} and {other.dim}")
        merged = OuterProductSum(self.dim)
        merged.total = self.total + other.total
        merged.count = self.count + other.count
        return merged

    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise EmptyBatch("no samples accumulated")
        return self.total / self.count


def estimate_from_sum(acc: OuterProductSum, method: EstimationMethod, lam: Optional[float] = None) -> CovarianceEstimate:
    method = EstimationMethod(method)
    mean = acc.mean()
    if method is EstimationMethod.UNQUANTIZED:
        matrix = hermitian_part(mean)
    elif method is EstimationMethod.NONDITHERED:
        # invert the arcsine law; the diagonal of C_r is exactly 1 so the result has unit diagonal
        C_r = hermitian_part(mean)
        matrix = np.sin(0.5 * np.pi * C_r.real) + 1j * np.sin(0.5 * np.pi * C_r.imag)
    else:
        if lam is None or lam <= 0:
            raise InvalidParameter(f"dithered estimate needs a dither scale > 0, got {lam}")
        matrix = hermitian_part(lam**2 * mean)
    return CovarianceEstimate(matrix=matrix, method=method, num_samples=acc.count, lam=lam)


def sample_covariance(ys: np.ndarray) -> CovarianceEstimate:
    """(1/N) sum_n y_n y_n^H over rows of `ys`."""
    ys = np.atleast_2d(np.asarray(ys, dtype=complex))
    if ys.shape[0] == 0:
        raise EmptyBatch("sample covariance of an empty batch")
    return estimate_from_sum(OuterProductSum(ys.shape[1]).update(ys), EstimationMethod.UNQUANTIZED)


def nondithered_estimate(rs: np.ndarray) -> CovarianceEstimate:
    """sin(pi/2 Re C_r) + j sin(pi/2 Im C_r) with C_r the sample covariance of csign outputs."""
    rs = np.atleast_2d(np.asarray(rs, dtype=complex))
    if rs.shape[0] == 0:
        raise EmptyBatch("non-dithered estimate of an empty batch")
    return estimate_from_sum(OuterProductSum(rs.shape[1]).update(rs), EstimationMethod.NONDITHERED)


def dithered_estimate(batch: DitheredSampleBatch) -> CovarianceEstimate:
    """Hermitian part of (lam^2 / N) sum_n r_n r~_n^H; not projected onto the PSD cone."""
    if batch.num_samples == 0:
        raise EmptyBatch("dithered estimate of an empty batch")
    acc = OuterProductSum(batch.num_antennas).update(batch.r, batch.r_tilde)
    return estimate_from_sum(acc, EstimationMethod.DITHERED, batch.lam)


def channel_cov_from_y(estimate: CovarianceEstimate, noise_power: float) -> HermitianMatrix:
    """C_h_hat = C_y_hat - N0 I; may be indefinite."""
    return estimate.matrix - noise_power * np.eye(estimate.num_antennas)
