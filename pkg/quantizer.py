# quantizer.py
"""Memoryless one-bit quantization, plain and with uniform dithering."""
from dataclasses import dataclass

import numpy as np

from errors import DimensionMismatch, InvalidParameter

INV_SQRT2 = 1.0 / np.sqrt(2.0)


def real_sign(x: np.ndarray) -> np.ndarray:
    """sign with sign(0) = +1, as int8."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


def csign(y: np.ndarray) -> np.ndarray:
    """Complex sign: (sign(Re y) + j sign(Im y)) / sqrt(2), elementwise."""
    y = np.asarray(y)
    return INV_SQRT2 * (real_sign(y.real) + 1j * real_sign(y.imag))


@dataclass(frozen=True)
class DitheredSampleBatch:
    """Four +-1 sign streams per snapshot, rows are snapshots (shape (N, M)).

    `real`/`imag` use the first dither pair, `real_tilde`/`imag_tilde` the second.
    """

    real: np.ndarray
    imag: np.ndarray
    real_tilde: np.ndarray
    imag_tilde: np.ndarray
    lam: float

    def __post_init__(self):
        shape = self.real.shape
        if any(s.shape != shape for s in (self.imag, self.real_tilde, self.imag_tilde)):
            raise DimensionMismatch("all four sign streams must share one shape")
        if self.lam <= 0:
            raise InvalidParameter(f"dither scale must be > 0, got {self.lam}")

    @property
    def num_samples(self) -> int:
        return self.real.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.real.shape[1]

    @property
    def r(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @property
    def r_tilde(self) -> np.ndarray:
        return self.real_tilde + 1j * self.imag_tilde


def dithered_quantize(y: np.ndarray, lam: float, rng: np.random.Generator) -> DitheredSampleBatch:
    """Quantize each snapshot twice with fresh uniform dithers in [-lam, lam].

    A 1-D `y` is one snapshot; a 2-D `y` holds snapshots as rows. Every
    snapshot and antenna gets four independent dither values.
    """
    if lam <= 0:
        raise InvalidParameter(f"dither scale must be > 0, got {lam}")
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    dithers = rng.uniform(-lam, lam, size=(4,) + y.shape)
    return DitheredSampleBatch(
        real=real_sign(y.real + dithers[0]),
        imag=real_sign(y.imag + dithers[1]),
        real_tilde=real_sign(y.real + dithers[2]),
        imag_tilde=real_sign(y.imag + dithers[3]),
        lam=float(lam),
    )
