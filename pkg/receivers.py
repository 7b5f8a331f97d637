# receivers.py
"""Data-phase Bussgang model, MRC / ZF / BLMMSE receivers, and the sum-rate bound."""
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from bussgang import COND_CAP, DIAG_FLOOR, UNIT_GAIN, arcsine_map
from errors import DegenerateSinr, DiagonalUnderflow, DimensionMismatch, InvalidParameter, SingularArcsineMatrix, SingularGram
from hermitian import HermitianMatrix, guarded_solve, hermitian_part

logger = logging.getLogger(__name__)


class ReceiverKind(str, Enum):
    MRC = "mrc"
    ZF = "zf"
    BLMMSE = "blmmse"


@dataclass(frozen=True)
class MultiUserChannel:
    """H with one user channel per column, and the noise power N0."""

    H: np.ndarray
    noise_power: float

    def __post_init__(self):
        if np.ndim(self.H) != 2 or self.H.shape[1] < 1:
            raise DimensionMismatch(f"H must be M x K with K >= 1, got shape {np.shape(self.H)}")
        if self.noise_power < 0:
            raise InvalidParameter(f"noise power must be >= 0, got {self.noise_power}")

    @property
    def num_antennas(self) -> int:
        return self.H.shape[0]

    @property
    def num_users(self) -> int:
        return self.H.shape[1]


@dataclass(frozen=True)
class LinearReceiver:
    """W^H (K x M); row k is w_k^H."""

    matrix: np.ndarray
    kind: ReceiverKind
    H_hat: np.ndarray
    ridge_applied: bool = False


def data_covariance(H: np.ndarray, noise_power: float) -> HermitianMatrix:
    """C_yD = H H^H + N0 I."""
    return hermitian_part(H @ H.conj().T) + noise_power * np.eye(H.shape[0])


def data_bussgang_gain(H: np.ndarray, noise_power: float, diag_floor: float = DIAG_FLOOR) -> np.ndarray:
    """A_D = sqrt(2/pi) diag(H H^H + N0 I)^(-1/2) as a diagonal matrix."""
    power = np.sum(np.abs(H) ** 2, axis=1) + noise_power
    low = np.flatnonzero(power <= diag_floor)
    if low.size:
        raise DiagonalUnderflow(f"antenna {int(low[0])} receives power {power[low[0]]:.3e} <= floor {diag_floor:.1e}")
    return np.diag(UNIT_GAIN / np.sqrt(power))


def quantizer_noise_cov(H: np.ndarray, noise_power: float, diag_floor: float = DIAG_FLOOR) -> HermitianMatrix:
    """C_qD = P_arcsine(C_yD) - A_D C_yD A_D^H."""
    C_y = data_covariance(H, noise_power)
    A = data_bussgang_gain(H, noise_power, diag_floor)
    return hermitian_part(arcsine_map(C_y, diag_floor) - A @ C_y @ A.conj().T)


def mrc_receiver(H_hat: np.ndarray) -> LinearReceiver:
    return LinearReceiver(matrix=H_hat.conj().T, kind=ReceiverKind.MRC, H_hat=H_hat)


def zf_receiver(H_hat: np.ndarray, cond_cap: float = COND_CAP) -> LinearReceiver:
    """W^H = (H^H H)^-1 H^H; never ridged, since a ridge breaks W^H H = I."""
    gram = H_hat.conj().T @ H_hat
    solution, _ = guarded_solve(
        hermitian_part(gram), H_hat.conj().T, cond_cap=cond_cap, allow_ridge=False, error=SingularGram, what="ZF Gram"
    )
    return LinearReceiver(matrix=solution, kind=ReceiverKind.ZF, H_hat=H_hat)


def blmmse_receiver(
    H_hat: np.ndarray,
    noise_power: float,
    *,
    diag_floor: float = DIAG_FLOOR,
    cond_cap: float = COND_CAP,
    allow_ridge: bool = True,
) -> LinearReceiver:
    """W^H = H^H A_D^H P_arcsine(C_yD)^-1 with A_D and C_yD built from H_hat."""
    C_y = data_covariance(H_hat, noise_power)
    A = data_bussgang_gain(H_hat, noise_power, diag_floor)
    C_r = arcsine_map(C_y, diag_floor)
    # W^H = (C_r^-1 A H)^H since C_r is Hermitian and A real diagonal
    solution, ridged = guarded_solve(
        C_r, A @ H_hat, cond_cap=cond_cap, allow_ridge=allow_ridge, error=SingularArcsineMatrix, what="data C_r"
    )
    return LinearReceiver(matrix=solution.conj().T, kind=ReceiverKind.BLMMSE, H_hat=H_hat, ridge_applied=ridged)


def build_receiver(
    kind: ReceiverKind,
    H_hat: np.ndarray,
    noise_power: float,
    *,
    diag_floor: float = DIAG_FLOOR,
    cond_cap: float = COND_CAP,
    allow_ridge: bool = True,
) -> LinearReceiver:
    """Dispatch on the receiver kind; knobs a receiver does not use are ignored."""
    kind = ReceiverKind(kind)
    if np.ndim(H_hat) != 2:
        raise DimensionMismatch(f"H_hat must be M x K, got shape {np.shape(H_hat)}")
    if kind is ReceiverKind.MRC:
        return mrc_receiver(H_hat)
    if kind is ReceiverKind.ZF:
        return zf_receiver(H_hat, cond_cap=cond_cap)
    return blmmse_receiver(H_hat, noise_power, diag_floor=diag_floor, cond_cap=cond_cap, allow_ridge=allow_ridge)


def user_sinrs(W_H: np.ndarray, H: np.ndarray, noise_power: float, diag_floor: float = DIAG_FLOOR) -> np.ndarray:
    """Per-user SINR of the Bussgang data model, evaluated on the true channel H.

    SINR_k = |w_k^H A h_k|^2 / (sum_{i != k} |w_k^H A h_i|^2 + N0 ||w_k^H A||^2 + w_k^H C_q w_k).
    Users with an all-zero receiver row get SINR 0.
    """
    W_H = np.atleast_2d(W_H)
    if W_H.shape != (H.shape[1], H.shape[0]):
        raise DimensionMismatch(f"receiver shape {W_H.shape} does not match H^T shape {(H.shape[1], H.shape[0])}")
    A = data_bussgang_gain(H, noise_power, diag_floor)
    C_q = quantizer_noise_cov(H, noise_power, diag_floor)
    WA = W_H @ A
    gains = np.abs(WA @ H) ** 2
    signal = np.diag(gains).copy()
    cross = gains.copy()
    np.fill_diagonal(cross, 0.0)
    interference = cross.sum(axis=1)
    noise = noise_power * np.sum(np.abs(WA) ** 2, axis=1)
    distortion = np.real(np.einsum("km,mn,kn->k", W_H, C_q, W_H.conj()))
    denominator = interference + noise + np.maximum(distortion, 0.0)

    sinrs = np.zeros(H.shape[1])
    silent = ~np.any(W_H != 0, axis=1)
    for k in np.flatnonzero(~silent):
        if denominator[k] <= 0:
            if signal[k] > 0:
                raise DegenerateSinr(f"user {k} has zero interference-plus-noise with non-zero signal")
            continue
        sinrs[k] = signal[k] / denominator[k]
    return sinrs


def sum_rate(W_H: np.ndarray, H: np.ndarray, noise_power: float, diag_floor: float = DIAG_FLOOR) -> float:
    """sum_k log2(1 + SINR_k) in bits/s/Hz for one channel realization."""
    return float(np.sum(np.log2(1.0 + user_sinrs(W_H, H, noise_power, diag_floor))))
