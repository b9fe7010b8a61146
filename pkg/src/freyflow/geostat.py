"""Correlated lognormal conductivity fields and the Karhunen-Loeve basis.

Fields are generated by dense Cholesky factorization of the summed-component
covariance over the active cells (exact at the 706-cell scale). The
"multi-scale" character of the reference fields is realized as a
superposition of a broad and a fine Gaussian component with configurable
weights; the magnitudes are documented defaults, not published values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import Domain, active_index_map, cell_centers
from .exceptions import (
    CovarianceNotPositiveDefiniteError,
    InsufficientSamplesError,
    ZeroEigenvalueModeError,
)

INACTIVE_SENTINEL = -1.0

_KERNELS = ("exponential", "gaussian")


@dataclass(frozen=True)
class CovarianceComponent:
    variance: float
    lambda_x1: float  # correlation length along x1, meters
    lambda_x2: float
    kernel: str = "exponential"

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")
        if self.lambda_x1 <= 0 or self.lambda_x2 <= 0:
            raise ValueError("correlation lengths must be positive")
        if self.kernel not in _KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")


@dataclass(frozen=True)
class CovarianceModel:
    mean_log_k: float
    components: tuple[CovarianceComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("at least one covariance component is required")

    def to_config(self) -> dict:
        return {
            "mean_log_k": self.mean_log_k,
            "components": [
                {"variance": c.variance, "lambda_x1": c.lambda_x1,
                 "lambda_x2": c.lambda_x2, "kernel": c.kernel}
                for c in self.components
            ],
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "CovarianceModel":
        comps = tuple(CovarianceComponent(**c) for c in cfg["components"])
        return cls(mean_log_k=float(cfg["mean_log_k"]), components=comps)


def default_covariance() -> CovarianceModel:
    """Two-scale default: broad 2500 m component plus fine 600 m component."""
    return CovarianceModel(
        mean_log_k=-9.0,
        components=(
            CovarianceComponent(0.6, 2500.0, 2500.0, "exponential"),
            CovarianceComponent(0.4, 600.0, 600.0, "exponential"),
        ),
    )


def covariance_matrix(domain: Domain, cov: CovarianceModel) -> np.ndarray:
    """Dense covariance over the active cells in scan order."""
    x1, x2 = cell_centers(domain)
    rows, cols = active_index_map(domain)
    p1 = x1[rows, cols]
    p2 = x2[rows, cols]
    C = np.zeros((p1.size, p1.size))
    for comp in cov.components:
        r = np.hypot(
            (p1[:, None] - p1[None, :]) / comp.lambda_x1,
            (p2[:, None] - p2[None, :]) / comp.lambda_x2,
        )
        if comp.kernel == "exponential":
            C += comp.variance * np.exp(-r)
        else:
            C += comp.variance * np.exp(-(r ** 2))
    return C


def _cholesky_factor(domain: Domain, cov: CovarianceModel) -> np.ndarray:
    C = covariance_matrix(domain, cov)
    total_var = sum(c.variance for c in cov.components)
    if total_var == 0.0:
        return np.zeros_like(C)
    jitter = 1e-10 * total_var
    try:
        return np.linalg.cholesky(C + jitter * np.eye(C.shape[0]))
    except np.linalg.LinAlgError as err:
        raise CovarianceNotPositiveDefiniteError(
            f"covariance factorization failed: {err}") from err


def sample_log_conductivity(domain: Domain, cov: CovarianceModel,
                            seed: int, chol: np.ndarray | None = None) -> np.ndarray:
    """One Gaussian y = ln K field; deterministic per seed, sentinel on inactive.

    ``chol`` lets batch callers reuse a precomputed Cholesky factor.
    """
    if chol is None:
        chol = _cholesky_factor(domain, cov)
    rows, cols = active_index_map(domain)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(rows.size)
    values = cov.mean_log_k + chol @ z
    out = np.full((domain.grid.n_x1, domain.grid.n_x2), INACTIVE_SENTINEL)
    out[rows, cols] = values
    return out


@dataclass(frozen=True)
class KLEBasis:
    """Discrete KLE of a field ensemble over the active cells."""

    mean_field: np.ndarray  # (n_x1, n_x2), sentinel on inactive
    eigenvalues: np.ndarray  # descending, length n_modes
    eigenfunctions: np.ndarray  # (n_modes, n_active), orthonormal rows
    n_xi: int
    rtol: float
    mask: np.ndarray = field(repr=False, default=None)

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)


def _active_matrix(samples, mask: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(mask)
    return np.stack([np.asarray(s)[rows, cols] for s in samples])


def truncation_count(eigenvalues: np.ndarray, rtol: float) -> int:
    """Smallest count whose tail eigenvalue sum is <= rtol * total."""
    total = float(eigenvalues.sum())
    if total <= 0.0:
        return 0
    tail = total
    for n in range(len(eigenvalues) + 1):
        if tail <= rtol * total:
            return n
        if n < len(eigenvalues):
            tail -= float(eigenvalues[n])
    return len(eigenvalues)


def fit_kle(samples, mask: np.ndarray, rtol: float = 0.07) -> KLEBasis:
    """Ensemble mean/covariance eigenpairs over active cells via SVD.

    The covariance uses the 1/(N-1) divisor; eigenvalues are returned in
    descending order and the retained count follows the tail-energy rule.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise InsufficientSamplesError(
            f"fit_kle needs at least 2 samples, got {len(samples)}")
    if not 0.0 < rtol < 1.0:
        raise ValueError(f"rtol must lie in (0, 1), got {rtol}")
    mask = np.asarray(mask, dtype=bool)
    X = _active_matrix(samples, mask)
    n = X.shape[0]
    mean_active = X.mean(axis=0)
    centered = X - mean_active
    # Eigenpairs of centered^T centered / (n-1) without forming the matrix.
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    eigenvalues = s ** 2 / (n - 1)
    # Numerical noise can leave tiny trailing values; clip to zero.
    eigenvalues[eigenvalues < 1e-14 * max(eigenvalues.max(initial=0.0), 1.0)] = 0.0
    mean_field = np.full(mask.shape, INACTIVE_SENTINEL)
    mean_field[mask] = mean_active
    return KLEBasis(
        mean_field=mean_field,
        eigenvalues=eigenvalues,
        eigenfunctions=vt,
        n_xi=truncation_count(eigenvalues, rtol),
        rtol=rtol,
        mask=mask,
    )


def kle_project(basis: KLEBasis, field_2d: np.ndarray,
                n_modes: int | None = None) -> np.ndarray:
    """Coefficients xi_i = <field - mean, phi_i> / sqrt(lambda_i)."""
    n_modes = basis.n_xi if n_modes is None else n_modes
    lam = basis.eigenvalues[:n_modes]
    if np.any(lam <= 0):
        raise ZeroEigenvalueModeError(
            f"projection onto {n_modes} modes requested but only "
            f"{int((basis.eigenvalues > 0).sum())} have positive eigenvalues")
    centered = (np.asarray(field_2d) - basis.mean_field)[basis.mask]
    return (basis.eigenfunctions[:n_modes] @ centered) / np.sqrt(lam)


def kle_reconstruct(basis: KLEBasis, xi: np.ndarray) -> np.ndarray:
    """Mean plus sum of sqrt(lambda_i) phi_i xi_i; sentinel on inactive cells."""
    xi = np.asarray(xi)
    if xi.ndim != 1 or len(xi) > basis.n_modes:
        raise ValueError(
            f"coefficient vector of length {xi.shape} exceeds the "
            f"{basis.n_modes} available modes")
    n = len(xi)
    active = basis.mean_field[basis.mask] + (
        (np.sqrt(basis.eigenvalues[:n]) * xi) @ basis.eigenfunctions[:n]
    )
    out = np.full(basis.mask.shape, INACTIVE_SENTINEL)
    out[basis.mask] = active
    return out
