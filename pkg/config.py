# config.py
"""Experiment configuration: pydantic models, presets, and the YAML file format."""
import copy
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

logger = logging.getLogger(__name__)

EstimatorName = Literal["unquantized", "nondithered", "dithered"]
ReceiverName = Literal["mrc", "zf", "blmmse"]
AngleRange = Tuple[float, float]
AntennaRange = Tuple[int, int]


def snr_db_to_noise_power(snr_db: float) -> float:
    """With max(diag(C_h)) = 1 the SNR is 1 / N0."""
    return 10.0 ** (-snr_db / 10.0)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_angle_range(value: AngleRange) -> AngleRange:
    lo, hi = value
    if not (-90.0 <= lo <= hi <= 90.0):
        raise ValueError(f"angle range {value} must satisfy -90 <= low <= high <= 90")
    return value


class LocalClusterSpec(_Strict):
    """A scattering cluster visible only to a sub-array.

    `antennas` lists 1-based inclusive index ranges, e.g. [[1, 64]].
    """

    num_paths: int = Field(ge=1)
    aoa_range: AngleRange
    power: float = Field(ge=0.0)
    antennas: List[AntennaRange] = Field(min_length=1)

    check_aoa_range = field_validator("aoa_range")(_check_angle_range)

    def antenna_indices(self) -> List[int]:
        """0-based sorted antenna indices covered by the ranges."""
        covered = set()
        for start, stop in self.antennas:
            covered.update(range(start - 1, stop))
        return sorted(covered)


class GeometrySpec(_Strict):
    num_antennas: int = Field(ge=1)
    common_num_paths: int = Field(ge=0)
    common_aoa_range: AngleRange = (-60.0, 60.0)
    common_power: float = Field(ge=0.0)
    local_clusters: List[LocalClusterSpec] = Field(default_factory=list)

    check_common_aoa_range = field_validator("common_aoa_range")(_check_angle_range)

    @model_validator(mode="after")
    def check_masks_inside_array(self) -> "GeometrySpec":
        for i, cluster in enumerate(self.local_clusters):
            for start, stop in cluster.antennas:
                if not (1 <= start <= stop <= self.num_antennas):
                    raise ValueError(
                        f"local cluster {i}: antenna range [{start}, {stop}] outside 1..{self.num_antennas}"
                    )
        if self.common_num_paths == 0 and self.common_power > 0:
            raise ValueError("common_power > 0 requires common_num_paths >= 1")
        return self


class ExperimentConfig(_Strict):
    geometry: GeometrySpec
    snr_db: Optional[float] = 10.0
    noise_power: Optional[float] = Field(default=None, ge=0.0)
    lambdas: List[float] = Field(min_length=1)
    sample_sizes: List[int] = Field(min_length=1)
    grid_size: Optional[int] = Field(default=None, ge=1)
    grid_oversampling: int = Field(default=2, ge=1)
    grid_spacing: Literal["angle", "sine"] = "angle"
    num_users: int = Field(default=4, ge=1)
    num_geometries: int = Field(default=10, ge=1)
    num_groups: int = Field(default=20, ge=1)
    num_channel_draws: int = Field(default=100, ge=1)
    estimators: List[EstimatorName] = Field(
        default_factory=lambda: ["unquantized", "nondithered", "dithered"], min_length=1
    )
    receivers: List[ReceiverName] = Field(default_factory=lambda: ["mrc", "zf", "blmmse"], min_length=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output: Optional[str] = None
    chunk_size: int = Field(default=2048, ge=1)
    diag_floor: float = Field(default=1e-8, gt=0.0)
    cond_cap: float = Field(default=1e12, gt=1.0)
    allow_ridge: bool = True
    nnls_tol: float = Field(default=1e-10, gt=0.0)

    @field_validator("lambdas")
    @classmethod
    def check_positive_lambdas(cls, value: List[float]) -> List[float]:
        if any(lam <= 0 for lam in value):
            raise ValueError("every lambda must be > 0")
        return value

    @field_validator("sample_sizes")
    @classmethod
    def check_positive_sizes(cls, value: List[int]) -> List[int]:
        if any(n < 1 for n in value):
            raise ValueError("every sample size must be >= 1")
        return value

    @model_validator(mode="after")
    def check_noise_defined(self) -> "ExperimentConfig":
        if self.noise_power is None and self.snr_db is None:
            raise ValueError("one of snr_db or noise_power must be set")
        return self

    @property
    def num_antennas(self) -> int:
        return self.geometry.num_antennas

    @property
    def effective_noise_power(self) -> float:
        """Explicit `noise_power` wins over `snr_db` (max diag(C_h) = 1)."""
        if self.noise_power is not None:
            return self.noise_power
        return snr_db_to_noise_power(self.snr_db)

    @property
    def effective_grid_size(self) -> int:
        """Explicit `grid_size` wins over `grid_oversampling * M`."""
        return self.grid_size if self.grid_size is not None else self.grid_oversampling * self.num_antennas


# --- PRESETS ---
def default_geometry_dict(num_antennas: int) -> Dict[str, Any]:
    """Study default: 3 common paths, two 3-path local clusters on the outer quarters."""
    if num_antennas % 4:
        raise ConfigError(f"num_antennas must be divisible by 4, got {num_antennas}", field="geometry.num_antennas")
    quarter = num_antennas // 4
    return {
        "num_antennas": num_antennas,
        "common_num_paths": 3,
        "common_aoa_range": [-60.0, 60.0],
        "common_power": 0.3,
        "local_clusters": [
            {"num_paths": 3, "aoa_range": [-60.0, 0.0], "power": 0.7, "antennas": [[1, quarter]]},
            {"num_paths": 3, "aoa_range": [0.0, 60.0], "power": 0.5, "antennas": [[3 * quarter + 1, num_antennas]]},
        ],
    }


PRESETS: Dict[str, Dict[str, Any]] = {
    "paper": {
        "geometry": default_geometry_dict(256),
        "snr_db": 10.0,
        "grid_oversampling": 8,
        "lambdas": [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0],
        "sample_sizes": [20, 50, 100, 200, 500, 1000, 2000, 5000, 10000],
        "num_users": 4,
        "num_geometries": 10,
        "num_groups": 20,
        "num_channel_draws": 100,
    },
    "desk": {
        "geometry": default_geometry_dict(32),
        "snr_db": 10.0,
        "grid_oversampling": 8,
        "lambdas": [0.5, 1.0, 1.5, 2.5],
        "sample_sizes": [50, 200, 1000],
        "num_users": 4,
        "num_geometries": 2,
        "num_groups": 3,
        "num_channel_draws": 20,
    },
}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _validation_to_config_error(err: ValidationError, source: str) -> ConfigError:
    first = err.errors()[0]
    field = ".".join(str(part) for part in first["loc"])
    if first["type"] == "extra_forbidden":
        message = f"unknown key '{first['loc'][-1]}' in {source}"
    else:
        message = f"{first['msg']} in {source}"
    if len(err.errors()) > 1:
        message += f" (+{len(err.errors()) - 1} more)"
    return ConfigError(message, field=field or None)


def build_config(data: Dict[str, Any], source: str = "config") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise _validation_to_config_error(e, source) from e


def load_yaml(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ConfigError(f"malformed YAML in {path}: {e.problem}", line=line) from e
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML in {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a key-value mapping at top level", line=1)
    return data


def parse_config(path: str, preset: Optional[str] = None) -> ExperimentConfig:
    """Read a YAML config, optionally deep-merged over a named preset."""
    data = load_yaml(path)
    if preset is not None:
        data = _deep_merge(preset_dict(preset), data)
    return build_config(data, source=str(path))


def preset_dict(name: str) -> Dict[str, Any]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}', choose from {sorted(PRESETS)}", field="preset")
    return copy.deepcopy(PRESETS[name])


def preset_config(name: str, **overrides: Any) -> ExperimentConfig:
    return build_config(_deep_merge(preset_dict(name), overrides), source=f"preset '{name}'")


def dump_config(cfg: ExperimentConfig, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg.model_dump(mode="json"), f, sort_keys=False)
