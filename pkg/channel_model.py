# channel_model.py
"""Spatially non-stationary ULA channel: cluster geometries, covariance, realizations.

Common clusters are seen by every antenna; a local cluster is seen only by the
antennas in its mask. Angles are degrees at the boundary and converted to
radians once, inside `steering_matrix`.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from config import GeometrySpec, default_geometry_dict
from errors import GeometryError, InvalidParameter
from hermitian import HermitianMatrix

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
NORMALIZATION_TOL = 1e-12


def steering_vector(theta_deg: float, num_antennas: int) -> np.ndarray:
    """Half-wavelength ULA response, entry m is exp(j*pi*m*sin(theta)) for m = 0..M-1."""
    return steering_matrix([theta_deg], num_antennas)[:, 0]


def steering_matrix(thetas_deg: Sequence[float], num_antennas: int) -> np.ndarray:
    """Stack steering vectors as columns, shape (M, len(thetas))."""
    if num_antennas < 1:
        raise InvalidParameter(f"num_antennas must be >= 1, got {num_antennas}")
    sines = np.sin(np.deg2rad(np.asarray(thetas_deg, dtype=float)))
    return np.exp(1j * np.pi * np.outer(np.arange(num_antennas), sines))


@dataclass(frozen=True)
class LocalCluster:
    aoas: np.ndarray
    powers: np.ndarray
    antenna_mask: np.ndarray  # 0-based antenna indices, the diagonal support of S_i

    def selection(self, num_antennas: int) -> np.ndarray:
        """Boolean diagonal of the selection matrix S_i."""
        mask = np.zeros(num_antennas, dtype=bool)
        mask[self.antenna_mask] = True
        return mask


@dataclass(frozen=True)
class ClusterGeometry:
    """Frozen channel statistics: path angles, path powers and sub-array masks."""

    common_aoas: np.ndarray
    common_powers: np.ndarray
    local_clusters: Tuple[LocalCluster, ...]
    num_antennas: int

    def __post_init__(self):
        if self.num_antennas < 1:
            raise GeometryError(f"num_antennas must be >= 1, got {self.num_antennas}")
        clusters = [(self.common_aoas, self.common_powers, None)]
        clusters += [(c.aoas, c.powers, c.antenna_mask) for c in self.local_clusters]
        for aoas, powers, mask in clusters:
            if np.shape(aoas) != np.shape(powers):
                raise GeometryError("each cluster needs one power per AoA")
            if np.any(np.asarray(powers) < 0):
                raise GeometryError("path powers must be non-negative")
            if np.any(np.abs(np.asarray(aoas)) > 90.0):
                raise GeometryError("AoAs must lie in [-90, 90] degrees")
            if mask is not None:
                mask = np.asarray(mask)
                if mask.size and (mask.min() < 0 or mask.max() >= self.num_antennas):
                    raise GeometryError(f"antenna mask outside 0..{self.num_antennas - 1}")

    @property
    def num_local_clusters(self) -> int:
        return len(self.local_clusters)

    @property
    def common_power(self) -> float:
        return float(np.sum(self.common_powers))

    def covariance_diagonal(self) -> np.ndarray:
        """diag(C_h): steering entries have unit modulus, so only cluster totals matter."""
        diag = np.full(self.num_antennas, self.common_power)
        for cluster in self.local_clusters:
            diag[cluster.antenna_mask] += float(np.sum(cluster.powers))
        return diag

    def check_normalized(self, tol: float = NORMALIZATION_TOL) -> None:
        peak = float(np.max(self.covariance_diagonal()))
        if abs(peak - 1.0) > tol:
            raise GeometryError(f"max(diag(C_h)) = {peak:.15g}, expected 1")


def _split_power(total: float, num_paths: int, rng: np.random.Generator) -> np.ndarray:
    # uniform weights rescaled to the cluster total
    weights = rng.uniform(0.0, 1.0, size=num_paths)
    while weights.sum() == 0.0:
        weights = rng.uniform(0.0, 1.0, size=num_paths)
    return total * weights / weights.sum()


def random_geometry(spec: GeometrySpec, rng: np.random.Generator) -> ClusterGeometry:
    """Draw AoAs uniformly in the configured ranges and split each cluster's power.

    Total cluster powers are never rescaled: a spec whose max covariance
    diagonal differs from 1 is rejected with GeometryError.
    """
    lo, hi = spec.common_aoa_range
    common_aoas = rng.uniform(lo, hi, size=spec.common_num_paths)
    common_powers = _split_power(spec.common_power, spec.common_num_paths, rng) if spec.common_num_paths else np.zeros(0)
    clusters = []
    for cluster_spec in spec.local_clusters:
        lo, hi = cluster_spec.aoa_range
        aoas = rng.uniform(lo, hi, size=cluster_spec.num_paths)
        powers = _split_power(cluster_spec.power, cluster_spec.num_paths, rng)
        clusters.append(LocalCluster(aoas, powers, np.asarray(cluster_spec.antenna_indices(), dtype=int)))
    geometry = ClusterGeometry(common_aoas, common_powers, tuple(clusters), spec.num_antennas)
    geometry.check_normalized()
    logger.debug(
        "geometry drawn",
        extra={"num_antennas": spec.num_antennas, "common_aoas": common_aoas.round(3).tolist()},
    )
    return geometry


def _path_components(g: ClusterGeometry):
    """Yield (masked steering matrix, powers) per cluster, common cluster first."""
    yield steering_matrix(g.common_aoas, g.num_antennas), np.asarray(g.common_powers, dtype=float)
    for cluster in g.local_clusters:
        steering = steering_matrix(cluster.aoas, g.num_antennas)
        steering[~cluster.selection(g.num_antennas)] = 0.0
        yield steering, np.asarray(cluster.powers, dtype=float)


def channel_covariance(g: ClusterGeometry) -> HermitianMatrix:
    """C_h = sum_i gamma_i a_i a_i^H over common paths plus masked local paths."""
    cov = np.zeros((g.num_antennas, g.num_antennas), dtype=complex)
    for steering, powers in _path_components(g):
        cov += (steering * powers) @ steering.conj().T
    return 0.5 * (cov + cov.conj().T)


def sample_channel(g: ClusterGeometry, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw h = sum_i rho_i S a(theta_i) with rho_i ~ CN(0, gamma_i) independent per path.

    With `size` given, returns an (size, M) array of independent draws as rows.
    """
    n = 1 if size is None else size
    h = np.zeros((n, g.num_antennas), dtype=complex)
    for steering, powers in _path_components(g):
        if powers.size == 0:
            continue
        scale = np.sqrt(powers / 2.0)
        gains = scale * (rng.standard_normal((n, powers.size)) + 1j * rng.standard_normal((n, powers.size)))
        h += gains @ steering.T
    return h[0] if size is None else h


def received_signal(h: np.ndarray, noise_power: float, rng: np.random.Generator) -> np.ndarray:
    """y = h + n with n ~ CN(0, N0 I), same shape as h."""
    if noise_power < 0:
        raise InvalidParameter(f"noise power must be >= 0, got {noise_power}")
    h = np.asarray(h, dtype=complex)
    if noise_power == 0:
        return h.copy()
    scale = np.sqrt(noise_power / 2.0)
    return h + scale * (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))


def single_path_geometry(theta_deg: float, power: float, num_antennas: int) -> ClusterGeometry:
    """One common path, no local clusters."""
    return ClusterGeometry(np.array([theta_deg], dtype=float), np.array([power], dtype=float), (), num_antennas)


def default_geometry_spec(num_antennas: int) -> GeometrySpec:
    """Default study geometry for any M divisible by 4: local clusters on the first and last quarter."""
    return GeometrySpec.model_validate(default_geometry_dict(num_antennas))
