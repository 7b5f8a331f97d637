# harness.py
"""Monte Carlo experiments: covariance error, channel NMSE, and ergodic sum rate.

Work is split into cells (geometry realization, sample group, N). Every random
stream of a cell comes from a Philox generator keyed by (seed, stream, cell
coordinates, ...), so results do not depend on how cells are scheduled. Within
a cell the same received snapshots feed every estimator and dither scale.
"""
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from aps_fitting import AngularDictionary, build_dictionary, refine_covariance
from bussgang import BlmmseFilter, Provenance, build_blmmse_filter, estimate_channel
from channel_model import ClusterGeometry, channel_covariance, random_geometry, received_signal, sample_channel
from config import ExperimentConfig, GeometrySpec
from cov_estimation import EstimationMethod, OuterProductSum, channel_cov_from_y, estimate_from_sum
from errors import OneBitError
from hermitian import HermitianMatrix
from quantizer import csign, dithered_quantize
from receivers import MultiUserChannel, ReceiverKind, build_receiver, sum_rate

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
KIND_COVARIANCE = "covariance"
KIND_CHANNEL = "channel"
KIND_SUMRATE = "sumrate"

STREAM_GEOMETRY = 0
STREAM_SAMPLES = 1
STREAM_DITHER = 2
STREAM_EVALUATION = 3

METHOD_ORACLE = "oracle"
METHOD_PERFECT_CSI = "perfect_csi"

SUMMARY_KEYS = ["kind", "method", "receiver", "lambda", "num_samples", "seed", "metric"]
CSV_COLUMNS = SUMMARY_KEYS + ["value", "stderr", "count", "failures", "ridge_activations"]
RAW_COLUMNS = SUMMARY_KEYS + ["geometry", "group", "value", "ridge", "status", "message"]
CSV_FLOAT_FORMAT = "%.10g"
DICTIONARY_CACHE_SIZE = 8

ESTIMATION_METHODS = {
    "unquantized": EstimationMethod.UNQUANTIZED,
    "nondithered": EstimationMethod.NONDITHERED,
    "dithered": EstimationMethod.DITHERED,
}

# (geometry, estimator name) -> channel covariance used in place of the estimate
CovarianceOverride = Callable[[ClusterGeometry, str], HermitianMatrix]


@dataclass(frozen=True)
class Record:
    kind: str
    method: str
    receiver: str
    lam: Optional[float]
    num_samples: int
    geometry: int
    group: int
    metric: str
    value: float
    ridge: int = 0
    status: str = "ok"
    message: str = ""


@dataclass
class ExperimentResult:
    kind: str
    seed: int
    records: List[Record] = field(default_factory=list)

    def failures(self) -> List[Record]:
        return [r for r in self.records if r.status != "ok"]

    def to_frame(self) -> pd.DataFrame:
        rows = [asdict(r) for r in self.records]
        frame = pd.DataFrame(rows, columns=[f for f in Record.__dataclass_fields__])
        frame = frame.rename(columns={"lam": "lambda"})
        frame["lambda"] = frame["lambda"].astype(float)
        frame["seed"] = self.seed
        return frame[RAW_COLUMNS]

    def summary(self) -> pd.DataFrame:
        """Average over geometries and groups: one row per (kind, method, receiver, lambda, N, seed, metric)."""
        frame = self.to_frame()
        frame["ok_value"] = frame["value"].where(frame["status"] == "ok")
        frame["failed"] = (frame["status"] != "ok").astype(int)
        summary = (
            frame.groupby(SUMMARY_KEYS, dropna=False, sort=True)
            .agg(
                value=("ok_value", "mean"),
                stderr=("ok_value", _stderr),
                count=("ok_value", "count"),
                failures=("failed", "sum"),
                ridge_activations=("ridge", "sum"),
            )
            .reset_index()
        )
        return summary[CSV_COLUMNS]

    def metric(self, metric: str, method: str, lam: Optional[float] = None, receiver: str = "") -> pd.DataFrame:
        """Summary rows for one curve, indexed by N."""
        s = self.summary()
        rows = s[(s["metric"] == metric) & (s["method"] == method) & (s["receiver"] == receiver)]
        rows = rows[rows["lambda"].isna()] if lam is None else rows[np.isclose(rows["lambda"], lam)]
        return rows.set_index("num_samples").sort_index()


def _stderr(values: pd.Series) -> float:
    n = values.count()
    return float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")


# --- SEEDING ---
def _lam_key(lam: float) -> int:
    return int(np.float64(lam).view(np.uint64))


def cell_rng(seed: int, stream: int, *coords: int) -> np.random.Generator:
    """Counter-based generator keyed by the master seed, a stream id and coordinates."""
    sequence = np.random.SeedSequence(seed, spawn_key=(stream,) + tuple(int(c) for c in coords))
    return np.random.Generator(np.random.Philox(sequence))


def draw_geometry(cfg: ExperimentConfig, geometry_index: int, user: int = 0) -> ClusterGeometry:
    return random_geometry(cfg.geometry, cell_rng(cfg.seed, STREAM_GEOMETRY, geometry_index, user))


@lru_cache(maxsize=DICTIONARY_CACHE_SIZE)
def cached_dictionary(geometry_json: str, seed: int, geometry_index: int, user: int, grid_size: int,
                      spacing: str) -> AngularDictionary:
    geometry = random_geometry(GeometrySpec.model_validate_json(geometry_json),
                               cell_rng(seed, STREAM_GEOMETRY, geometry_index, user))
    return build_dictionary(geometry, grid_size, spacing)


def geometry_dictionary(cfg: ExperimentConfig, geometry_index: int, user: int = 0) -> AngularDictionary:
    """Angular dictionary of one geometry realization, shared by every group and N of a sweep.

    The Gram matrix is cached on the dictionary, so it is computed once per
    (seed, geometry, user) and process.
    """
    return cached_dictionary(cfg.geometry.model_dump_json(), cfg.seed, geometry_index, user,
                             cfg.effective_grid_size, cfg.grid_spacing)


# --- ESTIMATION UNITS ---
@dataclass(frozen=True)
class Unit:
    """One estimator setting within a cell: estimator name and dither scale (dithered only)."""

    name: str
    lam: Optional[float] = None

    @property
    def method(self) -> EstimationMethod:
        return ESTIMATION_METHODS[self.name]


def estimation_units(cfg: ExperimentConfig) -> List[Unit]:
    units = []
    for name in cfg.estimators:
        if name == "dithered":
            units.extend(Unit(name, float(lam)) for lam in cfg.lambdas)
        else:
            units.append(Unit(name))
    return units


def accumulate_samples(
    geometry: ClusterGeometry,
    noise_power: float,
    num_samples: int,
    units: Sequence[Unit],
    cfg: ExperimentConfig,
    coords: Tuple[int, ...],
) -> Dict[Unit, OuterProductSum]:
    """Stream N received snapshots in chunks into one accumulator per unit."""
    M = geometry.num_antennas
    sums = {unit: OuterProductSum(M) for unit in units}
    sample_rng = cell_rng(cfg.seed, STREAM_SAMPLES, *coords)
    dither_rngs = {
        unit: cell_rng(cfg.seed, STREAM_DITHER, *coords, _lam_key(unit.lam)) for unit in units if unit.lam is not None
    }
    remaining = num_samples
    while remaining > 0:
        n = min(cfg.chunk_size, remaining)
        y = received_signal(sample_channel(geometry, sample_rng, size=n), noise_power, sample_rng)
        signs = None
        for unit in units:
            if unit.method is EstimationMethod.UNQUANTIZED:
                sums[unit].update(y)
            elif unit.method is EstimationMethod.NONDITHERED:
                signs = csign(y) if signs is None else signs
                sums[unit].update(signs)
            else:
                batch = dithered_quantize(y, unit.lam, dither_rngs[unit])
                sums[unit].update(batch.r, batch.r_tilde)
        remaining -= n
    return sums


def estimate_channel_covariance(
    acc: OuterProductSum,
    unit: Unit,
    noise_power: float,
    dictionary: AngularDictionary,
    cfg: ExperimentConfig,
) -> Tuple[HermitianMatrix, HermitianMatrix]:
    """(basic C_y_hat - N0 I, refined estimate); the unquantized baseline is not refined."""
    estimate = estimate_from_sum(acc, unit.method, unit.lam)
    basic = channel_cov_from_y(estimate, noise_power)
    if unit.method is EstimationMethod.UNQUANTIZED:
        return basic, basic
    refined, _ = refine_covariance(dictionary, basic, tol=cfg.nnls_tol)
    return basic, refined


def normalized_frobenius_error(C_true: np.ndarray, C_est: np.ndarray) -> float:
    """||C - C_hat||_F^2 / ||C||_F^2."""
    return float(np.sum(np.abs(C_true - C_est) ** 2) / np.sum(np.abs(C_true) ** 2))


def _plugin_filter(C_h_star: HermitianMatrix, noise_power: float, cfg: ExperimentConfig) -> BlmmseFilter:
    C_y_hat = C_h_star + noise_power * np.eye(C_h_star.shape[0])
    return build_blmmse_filter(
        C_y_hat,
        noise_power,
        Provenance.PLUG_IN,
        diag_floor=cfg.diag_floor,
        cond_cap=cfg.cond_cap,
        allow_ridge=cfg.allow_ridge,
    )


def _failure(kind, unit_name, receiver, lam, num_samples, g, q, metric, error: Exception) -> Record:
    logger.error(
        "evaluation failed",
        extra={"kind": kind, "method": unit_name, "receiver": receiver, "lambda": lam, "num_samples": num_samples,
               "geometry": g, "group": q, "error": str(error)},
    )
    return Record(kind, unit_name, receiver, lam, num_samples, g, q, metric, float("nan"),
                  status="failed", message=f"{type(error).__name__}: {error}")


# --- CELL WORKERS ---
def covariance_cell(
    cfg: ExperimentConfig, g: int, q: int, num_samples: int, override: Optional[CovarianceOverride] = None
) -> List[Record]:
    noise_power = cfg.effective_noise_power
    geometry = draw_geometry(cfg, g)
    C_h = channel_covariance(geometry)
    dictionary = geometry_dictionary(cfg, g)
    units = estimation_units(cfg)
    sums = accumulate_samples(geometry, noise_power, num_samples, units, cfg, (g, q, num_samples, 0))
    records = []
    for unit in units:
        try:
            if override is not None:
                basic = refined = override(geometry, unit.name)
            else:
                basic, refined = estimate_channel_covariance(sums[unit], unit, noise_power, dictionary, cfg)
        except OneBitError as e:
            records.append(_failure(KIND_COVARIANCE, unit.name, "", unit.lam, num_samples, g, q, "e_nf", e))
            continue
        records.append(Record(KIND_COVARIANCE, unit.name, "", unit.lam, num_samples, g, q, "e_nf",
                              normalized_frobenius_error(C_h, refined)))
        if unit.method is not EstimationMethod.UNQUANTIZED:
            records.append(Record(KIND_COVARIANCE, unit.name, "", unit.lam, num_samples, g, q, "e_nf_basic",
                                  normalized_frobenius_error(C_h, basic)))
    return records


def _nmse(f: BlmmseFilter, h: np.ndarray, r: np.ndarray, trace: float) -> float:
    error = h - estimate_channel(f, r)
    return float(np.mean(np.sum(np.abs(error) ** 2, axis=1)) / trace)


def channel_cell(
    cfg: ExperimentConfig, g: int, q: int, num_samples: int, override: Optional[CovarianceOverride] = None
) -> List[Record]:
    noise_power = cfg.effective_noise_power
    geometry = draw_geometry(cfg, g)
    C_h = channel_covariance(geometry)
    trace = float(np.real(np.trace(C_h)))
    dictionary = geometry_dictionary(cfg, g)
    units = estimation_units(cfg)
    sums = accumulate_samples(geometry, noise_power, num_samples, units, cfg, (g, q, num_samples, 0))

    eval_rng = cell_rng(cfg.seed, STREAM_EVALUATION, g, q, num_samples, 0)
    h = sample_channel(geometry, eval_rng, size=cfg.num_channel_draws)
    r = csign(received_signal(h, noise_power, eval_rng))

    records = []
    try:
        oracle = build_blmmse_filter(C_h + noise_power * np.eye(geometry.num_antennas), noise_power, Provenance.ORACLE,
                                     diag_floor=cfg.diag_floor, cond_cap=cfg.cond_cap, allow_ridge=cfg.allow_ridge)
        records.append(Record(KIND_CHANNEL, METHOD_ORACLE, "", None, num_samples, g, q, "e_nmse",
                              _nmse(oracle, h, r, trace), ridge=int(oracle.ridge_applied)))
    except OneBitError as e:
        records.append(_failure(KIND_CHANNEL, METHOD_ORACLE, "", None, num_samples, g, q, "e_nmse", e))

    for unit in units:
        try:
            if override is not None:
                C_h_star = override(geometry, unit.name)
            else:
                _, C_h_star = estimate_channel_covariance(sums[unit], unit, noise_power, dictionary, cfg)
            plugin = _plugin_filter(C_h_star, noise_power, cfg)
        except OneBitError as e:
            records.append(_failure(KIND_CHANNEL, unit.name, "", unit.lam, num_samples, g, q, "e_nmse", e))
            continue
        records.append(Record(KIND_CHANNEL, unit.name, "", unit.lam, num_samples, g, q, "e_nmse",
                              _nmse(plugin, h, r, trace), ridge=int(plugin.ridge_applied)))
    return records


def sumrate_cell(
    cfg: ExperimentConfig, g: int, q: int, num_samples: int, override: Optional[CovarianceOverride] = None
) -> List[Record]:
    noise_power = cfg.effective_noise_power
    K = cfg.num_users
    geometries = [draw_geometry(cfg, g, k) for k in range(K)]
    units = estimation_units(cfg)

    # per CSI source: one filter per user, or None for perfect CSI
    sources: Dict[Tuple[str, Optional[float]], Optional[List[BlmmseFilter]]] = {(METHOD_PERFECT_CSI, None): None}
    records = []
    failed_sources = {}
    oracle_filters, unit_filters = [], {unit: [] for unit in units}
    for k, geometry in enumerate(geometries):
        C_h = channel_covariance(geometry)
        try:
            oracle_filters.append(build_blmmse_filter(
                C_h + noise_power * np.eye(geometry.num_antennas), noise_power, Provenance.ORACLE,
                diag_floor=cfg.diag_floor, cond_cap=cfg.cond_cap, allow_ridge=cfg.allow_ridge))
        except OneBitError as e:
            failed_sources[(METHOD_ORACLE, None)] = e
        dictionary = geometry_dictionary(cfg, g, k)
        sums = accumulate_samples(geometry, noise_power, num_samples, units, cfg, (g, q, num_samples, k))
        for unit in units:
            if (unit.name, unit.lam) in failed_sources:
                continue
            try:
                if override is not None:
                    C_h_star = override(geometry, unit.name)
                else:
                    _, C_h_star = estimate_channel_covariance(sums[unit], unit, noise_power, dictionary, cfg)
                unit_filters[unit].append(_plugin_filter(C_h_star, noise_power, cfg))
            except OneBitError as e:
                failed_sources[(unit.name, unit.lam)] = e
    if (METHOD_ORACLE, None) not in failed_sources:
        sources[(METHOD_ORACLE, None)] = oracle_filters
    for unit in units:
        if (unit.name, unit.lam) not in failed_sources:
            sources[(unit.name, unit.lam)] = unit_filters[unit]

    eval_rng = cell_rng(cfg.seed, STREAM_EVALUATION, g, q, num_samples, 0)
    D = cfg.num_channel_draws
    H_all = np.stack([sample_channel(geo, eval_rng, size=D) for geo in geometries], axis=2)  # (D, M, K)
    pilots = csign(received_signal(H_all, noise_power, eval_rng))

    receiver_kwargs = {"diag_floor": cfg.diag_floor, "cond_cap": cfg.cond_cap, "allow_ridge": cfg.allow_ridge}
    for (name, lam), filters in sources.items():
        for receiver in cfg.receivers:
            kind = ReceiverKind(receiver)
            rates, ridges = [], 0
            try:
                for d in range(D):
                    channel = MultiUserChannel(H_all[d], noise_power)
                    if filters is None:
                        H_hat = channel.H
                    else:
                        H_hat = np.stack([estimate_channel(filters[k], pilots[d, :, k]) for k in range(K)], axis=1)
                    W = build_receiver(kind, H_hat, noise_power, **receiver_kwargs)
                    ridges += int(W.ridge_applied)
                    rates.append(sum_rate(W.matrix, channel.H, channel.noise_power, cfg.diag_floor))
            except OneBitError as e:
                records.append(_failure(KIND_SUMRATE, name, receiver, lam, num_samples, g, q, "r_sum", e))
                continue
            records.append(Record(KIND_SUMRATE, name, receiver, lam, num_samples, g, q, "r_sum",
                                  float(np.mean(rates)), ridge=ridges))
    for (name, lam), error in failed_sources.items():
        for receiver in cfg.receivers:
            records.append(_failure(KIND_SUMRATE, name, receiver, lam, num_samples, g, q, "r_sum", error))
    return records


# --- ORCHESTRATION ---
def _cells(cfg: ExperimentConfig) -> Iterator[Tuple[int, int, int]]:
    for g in range(cfg.num_geometries):
        for q in range(cfg.num_groups):
            for n in cfg.sample_sizes:
                yield g, q, n


def _run(kind: str, worker, cfg: ExperimentConfig, n_jobs: int, progress: bool,
         override: Optional[CovarianceOverride]) -> ExperimentResult:
    # an unnormalizable geometry fails here before any work is scheduled
    draw_geometry(cfg, 0)
    cells = list(_cells(cfg))
    logger.info("experiment started", extra={"kind": kind, "cells": len(cells), "n_jobs": n_jobs, "seed": cfg.seed})
    tasks = (delayed(worker)(cfg, g, q, n, override) for g, q, n in cells)
    result = ExperimentResult(kind=kind, seed=cfg.seed)
    for cell_records in tqdm(Parallel(n_jobs=n_jobs, return_as="generator")(tasks), total=len(cells),
                             desc=kind, disable=not progress):
        result.records.extend(cell_records)
    logger.info("experiment finished",
                extra={"kind": kind, "records": len(result.records), "failures": len(result.failures())})
    return result


def run_covariance_experiment(cfg: ExperimentConfig, *, n_jobs: int = 1, progress: bool = False,
                              override: Optional[CovarianceOverride] = None) -> ExperimentResult:
    """E_NF of the refined (or, unquantized, basic) channel covariance per estimator, lambda and N."""
    return _run(KIND_COVARIANCE, covariance_cell, cfg, n_jobs, progress, override)


def run_channel_experiment(cfg: ExperimentConfig, *, n_jobs: int = 1, progress: bool = False,
                           override: Optional[CovarianceOverride] = None) -> ExperimentResult:
    """E_NMSE of the plug-in BLMMSE channel estimate, with the true-covariance filter as reference."""
    return _run(KIND_CHANNEL, channel_cell, cfg, n_jobs, progress, override)


def run_sumrate_experiment(cfg: ExperimentConfig, *, n_jobs: int = 1, progress: bool = False,
                           override: Optional[CovarianceOverride] = None) -> ExperimentResult:
    """Ergodic sum rate per CSI source and receiver, with true-covariance and perfect-CSI references."""
    return _run(KIND_SUMRATE, sumrate_cell, cfg, n_jobs, progress, override)


EXPERIMENTS = {
    KIND_COVARIANCE: run_covariance_experiment,
    KIND_CHANNEL: run_channel_experiment,
    KIND_SUMRATE: run_sumrate_experiment,
}


def emit_csv(result: ExperimentResult, path: str, raw: bool = False) -> None:
    """Write the summary table (or every per-trial record with `raw`) with a fixed header."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame = result.to_frame() if raw else result.summary()
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
