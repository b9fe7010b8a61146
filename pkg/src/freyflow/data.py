"""Dataset generation, normalization, and the on-disk array container.

The container is a directory holding a JSON manifest (shapes, dtypes,
endianness, version, metadata) plus one raw little-endian binary file per
named array. Datasets, KLE bases, and model checkpoints all share it.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .domain import Domain
from .exceptions import (
    ConvergenceError,
    CorruptContainerError,
    InsufficientSamplesError,
    VersionMismatchError,
)
from .geostat import CovarianceModel, INACTIVE_SENTINEL, KLEBasis, _cholesky_factor
from .solver import SolverConfig, simulate_pair

FORMAT_VERSION = 1
STD_GUARD = 1e-12

_MANIFEST = "manifest.json"


# ---------------------------------------------------------------------------
# Array container

def save_container(path, arrays: dict, metadata: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    manifest = {"format_version": FORMAT_VERSION, "arrays": {},
                "metadata": metadata or {}}
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        manifest["arrays"][name] = {
            "shape": list(arr.shape),
            "dtype": dtype.name,
            "byteorder": "little",
        }
        arr.astype(dtype, copy=False).tofile(os.path.join(path, name + ".bin"))
    with open(os.path.join(path, _MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_container(path):
    """Load (arrays, metadata); checks the format version and file sizes."""
    manifest_path = os.path.join(path, _MANIFEST)
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CorruptContainerError(f"no manifest at {manifest_path}")
    except json.JSONDecodeError as err:
        raise CorruptContainerError(f"unreadable manifest {manifest_path}: {err}")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"container {path} has format version {version}, "
            f"expected {FORMAT_VERSION}")
    arrays = {}
    for name, spec in manifest["arrays"].items():
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        fname = os.path.join(path, name + ".bin")
        expected = int(np.prod(spec["shape"])) * dtype.itemsize
        if not os.path.exists(fname) or os.path.getsize(fname) != expected:
            raise CorruptContainerError(
                f"array file {fname} missing or wrong size")
        arrays[name] = np.fromfile(fname, dtype=dtype).reshape(spec["shape"])
    return arrays, manifest.get("metadata", {})


# ---------------------------------------------------------------------------
# Fingerprints

def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def domain_fingerprint(domain: Domain, cov: CovarianceModel | None = None,
                       solver_cfg: SolverConfig | None = None) -> str:
    """Content hash of the generating configuration."""
    g = domain.grid
    sched = domain.schedule
    desc = {
        "grid": [g.n_x1, g.n_x2, g.d_x1, g.d_x2, list(g.origin)],
        "mask": hashlib.sha256(
            np.ascontiguousarray(domain.mask.mask).tobytes()).hexdigest(),
        "specific_yield": domain.specific_yield,
        "periods": [[p.duration, p.recharge_rate, list(p.well_rates),
                     p.river_stage] for p in sched.periods],
        "wells": [list(c) for c in sched.well_cells],
        "river": [list(c) for c in sched.river_cells],
        "robin": [list(c) for c in sched.robin_cells],
        "robin_conductance": sched.robin_conductance,
        "robin_external_head": sched.robin_external_head,
        "river_bed_conductance": sched.river_bed_conductance,
    }
    if cov is not None:
        desc["covariance"] = cov.to_config()
    if solver_cfg is not None:
        desc["solver"] = {
            "picard_tol": solver_cfg.picard_tol,
            "upstream_weighting": solver_cfg.upstream_weighting,
            "n_substeps": solver_cfg.n_substeps,
        }
    return hashlib.sha256(_canonical_json(desc).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Dataset

@dataclass
class Dataset:
    y: np.ndarray  # (N, n_x1, n_x2) float32
    h: np.ndarray  # (N, N_t, n_x1, n_x2) float32
    seeds: list
    fingerprint: str

    @property
    def n(self) -> int:
        return self.y.shape[0]


_WORKER_STATE = {}


def _init_worker(domain, cov, cfg, chol):
    _WORKER_STATE.update(domain=domain, cov=cov, cfg=cfg, chol=chol)


def _run_sample(seed):
    s = _WORKER_STATE
    return simulate_pair(s["domain"], s["cov"], seed, s["cfg"], chol=s["chol"])


def generate_dataset(domain: Domain, cov: CovarianceModel,
                     solver_cfg: SolverConfig, n: int, base_seed: int,
                     n_workers: int = 1, progress=None) -> Dataset:
    """N independent simulate_pair calls with seeds base_seed + i.

    Per-sample seeding makes the result independent of worker count.
    """
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    seeds = [base_seed + i for i in range(n)]
    chol = _cholesky_factor(domain, cov)
    failures = []
    pairs = [None] * n

    if n_workers > 1:
        with ProcessPoolExecutor(
                max_workers=n_workers, initializer=_init_worker,
                initargs=(domain, cov, solver_cfg, chol)) as pool:
            for i, result in enumerate(pool.map(_run_sample, seeds,
                                                chunksize=8)):
                pairs[i] = result
                if progress:
                    progress(i + 1, n)
    else:
        for i, seed in enumerate(seeds):
            try:
                pairs[i] = simulate_pair(domain, cov, seed, solver_cfg,
                                         chol=chol)
            except ConvergenceError as err:
                failures.append(str(err))
            if progress:
                progress(i + 1, n)
    if failures:
        raise ConvergenceError(
            f"{len(failures)} of {n} samples failed: " + "; ".join(failures[:5]))

    y = np.stack([p[0] for p in pairs]).astype(np.float32)
    h = np.stack([p[1] for p in pairs]).astype(np.float32)
    return Dataset(y=y, h=h, seeds=seeds,
                   fingerprint=domain_fingerprint(domain, cov, solver_cfg))


def split_indices(n: int):
    """Deterministic 90/5/5 train/validation/test split by seed order."""
    n_hold = max(1, round(0.05 * n))
    n_train = n - 2 * n_hold
    return (np.arange(0, n_train),
            np.arange(n_train, n_train + n_hold),
            np.arange(n_train + n_hold, n))


def save_dataset(path, ds: Dataset) -> None:
    save_container(path, {"y": ds.y, "h": ds.h},
                   metadata={"kind": "dataset", "seeds": list(ds.seeds),
                             "fingerprint": ds.fingerprint})


def load_dataset(path) -> Dataset:
    arrays, meta = load_container(path)
    if meta.get("kind") != "dataset":
        raise CorruptContainerError(f"{path} is not a dataset container")
    return Dataset(y=arrays["y"], h=arrays["h"], seeds=list(meta["seeds"]),
                   fingerprint=meta["fingerprint"])


# ---------------------------------------------------------------------------
# Normalization

@dataclass
class NormStats:
    y_mean: np.ndarray
    y_std: np.ndarray
    h_mean: np.ndarray
    h_std: np.ndarray
    count: int


def compute_norm_stats(ds: Dataset, mask: np.ndarray) -> NormStats:
    """Per-element mean and std (N-1 divisor) over samples, active cells only."""
    if ds.n < 2:
        raise InsufficientSamplesError(
            f"normalization statistics need >= 2 samples, got {ds.n}")
    mask = np.asarray(mask, dtype=bool)
    y_mean = ds.y.mean(axis=0)
    y_std = ds.y.std(axis=0, ddof=1)
    h_mean = ds.h.mean(axis=0)
    h_std = ds.h.std(axis=0, ddof=1)
    y_mean[~mask] = 0.0
    y_std[~mask] = 0.0
    h_mean[:, ~mask] = 0.0
    h_std[:, ~mask] = 0.0
    return NormStats(y_mean=y_mean, y_std=y_std, h_mean=h_mean,
                     h_std=h_std, count=ds.n)


def _broadcast_mask(arr: np.ndarray, mask: np.ndarray) -> np.ndarray:
    extra = arr.ndim - mask.ndim
    return mask.reshape((1,) * extra + mask.shape)


def normalize(arr, mean, std, mask):
    """Standardize active cells; inactive or zero-variance cells map to 0."""
    arr = np.asarray(arr)
    if arr.shape[-mean.ndim:] != mean.shape:
        raise ValueError(f"shape {arr.shape} does not match stats {mean.shape}")
    mask_b = _broadcast_mask(arr, np.asarray(mask, dtype=bool))
    usable = mask_b & (std > STD_GUARD)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(usable, (arr - mean) / np.where(usable, std, 1.0), 0.0)
    return out


def denormalize(arr, mean, std, mask):
    """Inverse of normalize on active cells; inactive cells restore -1."""
    arr = np.asarray(arr)
    if arr.shape[-mean.ndim:] != mean.shape:
        raise ValueError(f"shape {arr.shape} does not match stats {mean.shape}")
    mask_b = _broadcast_mask(arr, np.asarray(mask, dtype=bool))
    usable = std > STD_GUARD
    out = np.where(usable, arr * std + mean, mean)
    return np.where(mask_b, out, INACTIVE_SENTINEL)


def normalize_y(arr, stats: NormStats, mask):
    return normalize(arr, stats.y_mean, stats.y_std, mask)


def denormalize_y(arr, stats: NormStats, mask):
    return denormalize(arr, stats.y_mean, stats.y_std, mask)


def normalize_h(arr, stats: NormStats, mask):
    return normalize(arr, stats.h_mean, stats.h_std, mask)


def denormalize_h(arr, stats: NormStats, mask):
    return denormalize(arr, stats.h_mean, stats.h_std, mask)


def save_norm_stats(path, stats: NormStats) -> None:
    save_container(path, {"y_mean": stats.y_mean, "y_std": stats.y_std,
                          "h_mean": stats.h_mean, "h_std": stats.h_std},
                   metadata={"kind": "norm_stats", "count": stats.count})


def load_norm_stats(path) -> NormStats:
    arrays, meta = load_container(path)
    if meta.get("kind") != "norm_stats":
        raise CorruptContainerError(f"{path} is not a norm-stats container")
    return NormStats(y_mean=arrays["y_mean"], y_std=arrays["y_std"],
                     h_mean=arrays["h_mean"], h_std=arrays["h_std"],
                     count=int(meta["count"]))


# ---------------------------------------------------------------------------
# KLE basis persistence

def save_kle_basis(path, basis: KLEBasis) -> None:
    save_container(path, {
        "mean": basis.mean_field,
        "eigenvalues": basis.eigenvalues,
        "eigenfunctions": basis.eigenfunctions,
        "mask": basis.mask.astype(np.uint8),
    }, metadata={"kind": "kle_basis", "rtol": basis.rtol, "n_xi": basis.n_xi})


def load_kle_basis(path) -> KLEBasis:
    arrays, meta = load_container(path)
    if meta.get("kind") != "kle_basis":
        raise CorruptContainerError(f"{path} is not a KLE basis container")
    return KLEBasis(mean_field=arrays["mean"],
                    eigenvalues=arrays["eigenvalues"],
                    eigenfunctions=arrays["eigenfunctions"],
                    n_xi=int(meta["n_xi"]), rtol=float(meta["rtol"]),
                    mask=arrays["mask"].astype(bool))


# ---------------------------------------------------------------------------
# Model checkpoints

def save_checkpoint(path, state: dict, config: dict, kind: str,
                    fingerprint: str = "") -> None:
    """Persist named parameter arrays plus the model configuration."""
    arrays = {f"param.{k}": np.asarray(v) for k, v in state.items()}
    save_container(path, arrays, metadata={
        "kind": kind, "config": config, "fingerprint": fingerprint,
        "param_names": list(state.keys()),
    })


def load_checkpoint(path, expected_kind: str | None = None):
    arrays, meta = load_container(path)
    kind = meta.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise CorruptContainerError(
            f"{path} holds a {kind!r} checkpoint, expected {expected_kind!r}")
    state = {name: arrays[f"param.{name}"] for name in meta["param_names"]}
    return state, meta
