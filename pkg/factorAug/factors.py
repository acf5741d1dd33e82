"""
Latent factor estimation: PCA with eigen-ratio selection of the factor
count, and diversified projection with a pretrained weight matrix.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt
from scipy import linalg

from factorAug.constants import DEFAULT_N_PRIME, EIGEN_CLIP_TOLERANCE, EIGEN_RATIO_SKIP, RANK_TOLERANCE
from factorAug.errors import DataError, NumericalError
from factorAug.matrixio import MatrixLike, as_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EigenSpectrum:
    """Descending, nonnegative eigenvalues of a sample covariance matrix."""

    values: np.ndarray
    source_dims: Tuple[int, int]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel().copy()
        if np.any(values < -EIGEN_CLIP_TOLERANCE * max(1.0, float(np.abs(values).max(initial=0.0)))):
            raise NumericalError(f"Negative eigenvalue {values.min():.3g} in covariance spectrum")
        values = np.clip(values, 0.0, None)
        if np.any(np.diff(values) > 0):
            raise ValueError("Eigenvalues must be nonincreasing")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def rank_bound(self) -> int:
        return min(self.source_dims)


@dataclass(frozen=True, eq=False)
class FactorModel:
    """
    Fitted factor model Z ~ 1 a_hat' + F_hat B_hat'.

    pca: eigvals holds the top K eigenvalues; F_hat' F_hat = n I.
    dp: W holds the p x K' diversified weights; F_hat = (Z - a_hat) W / p.
    """

    mode: str
    K: int
    B_hat: np.ndarray
    F_hat: np.ndarray
    a_hat: np.ndarray
    eigvals: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None
    spectrum: Optional[EigenSpectrum] = None

    @property
    def p(self) -> int:
        return self.B_hat.shape[0]

    def state(self) -> Dict[str, np.ndarray]:
        """Arrays that rebuild the model (F_hat is kept for reporting)."""
        arrays = {"B_hat": self.B_hat, "F_hat": self.F_hat, "a_hat": self.a_hat}
        if self.eigvals is not None:
            arrays["eigvals"] = self.eigvals
        if self.W is not None:
            arrays["W"] = self.W
        return arrays

    @classmethod
    def from_state(cls, mode: str, K: int, arrays: Dict[str, np.ndarray]) -> "FactorModel":
        return cls(
            mode=mode,
            K=K,
            B_hat=np.asarray(arrays["B_hat"]),
            F_hat=np.asarray(arrays["F_hat"]),
            a_hat=np.ravel(arrays["a_hat"]),
            eigvals=np.ravel(arrays["eigvals"]) if "eigvals" in arrays else None,
            W=np.asarray(arrays["W"]) if "W" in arrays else None,
        )


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _effective_rank(values: np.ndarray) -> int:
    if values.size == 0 or values[0] <= 0:
        return 0
    return int(np.sum(values > RANK_TOLERANCE * values[0]))


def _covariance_eigen(Zc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigenpairs of Zc' Zc / n in descending order, via the smaller Gram matrix.

    Returns:
        (eigenvalues of length min(n, p), p x min(n, p) eigenvectors)
    """
    n, p = Zc.shape
    if n >= p:
        values, vectors = linalg.eigh(Zc.T @ Zc / n)
        values, vectors = values[::-1], vectors[:, ::-1]
        return values, vectors

    values, left = linalg.eigh(Zc @ Zc.T / n)
    values, left = values[::-1], left[:, ::-1]
    vectors = np.zeros((p, n))
    positive = values > 0
    vectors[:, positive] = (Zc.T @ left[:, positive]) / np.sqrt(n * values[positive])
    return values, vectors


def eigen_spectrum(Z: MatrixLike) -> EigenSpectrum:
    """Spectrum of the sample covariance of Z (demeaned internally)."""
    z = as_array(Z)
    values, _ = _covariance_eigen(z - z.mean(axis=0))
    return EigenSpectrum(values, z.shape)


def eigen_ratio_bounds(r: int, k_min: Optional[int] = None, k_max: Optional[int] = None) -> Tuple[int, int]:
    """
    Search window for the eigen-ratio estimator given r = min(n, p).

    Defaults: k_max = floor(r/3), k_min = max(floor(r/10), 2). If the window
    is empty it collapses to k_max (at least 1).
    """
    upper = r // 3 if k_max is None else k_max
    lower = max(r // 10, 2) if k_min is None else k_min
    upper = max(upper, 1)
    if upper < lower:
        lower = upper
    return lower, upper


def eigen_ratio_k(spec: EigenSpectrum, k_min: Optional[int] = None, k_max: Optional[int] = None) -> int:
    """
    Number of factors maximizing lambda_j / lambda_{j+1} over the window.

    Ratios whose denominator is below 1e-12 * lambda_1 are skipped; if every
    ratio is skipped the lower bound is returned. Ties go to the smallest j.

    Raises:
        NumericalError: spectrum shorter than k_max + 1
    """
    r = spec.rank_bound
    if r < 3 and k_min is None and k_max is None:
        return 1
    lower, upper = eigen_ratio_bounds(r, k_min, k_max)
    values = spec.values
    if values.size < upper + 1:
        raise NumericalError(f"Spectrum has {values.size} values, eigen-ratio needs {upper + 1}")

    lam1 = values[0]
    best_j, best_ratio = lower, -np.inf
    for j in range(lower, upper + 1):
        denominator = values[j]
        if lam1 <= 0 or denominator < EIGEN_RATIO_SKIP * lam1:
            continue
        ratio = values[j - 1] / denominator
        if ratio > best_ratio:
            best_j, best_ratio = j, ratio
    logger.debug(f"eigen-ratio window [{lower}, {upper}] -> K={best_j}")
    return best_j


def pca_fit(Z: MatrixLike, K: Union[int, str] = "auto", k_min: Optional[int] = None,
            k_max: Optional[int] = None) -> FactorModel:
    """
    Principal-component factor estimates.

    Args:
        Z: n x p matrix (demeaned internally; the means become a_hat)
        K: Number of factors, or 'auto' for the eigen-ratio estimate
        k_min, k_max: Optional eigen-ratio window overrides

    Returns:
        FactorModel with B_hat = xi * sqrt(lambda), F_hat = Zc xi / sqrt(lambda)

    Raises:
        NumericalError: K exceeds the effective rank of the covariance
    """
    z = as_array(Z)
    n, p = z.shape
    a_hat = z.mean(axis=0)
    Zc = z - a_hat
    values, vectors = _covariance_eigen(Zc)
    spectrum = EigenSpectrum(values, (n, p))
    rank = _effective_rank(spectrum.values)

    if K == "auto":
        K = eigen_ratio_k(spectrum, k_min, k_max)
        if K > rank:
            if rank == 0:
                raise NumericalError("Cannot estimate factors: covariance has effective rank 0")
            logger.warning(f"Eigen-ratio chose K={K} above effective rank {rank}; using {rank}")
            K = rank
    K = int(K)
    if K < 1:
        raise DataError(f"Factor count must be >= 1, got {K}")
    if K > rank:
        raise NumericalError(f"K={K} exceeds the effective rank {rank} of the covariance")

    lam = spectrum.values[:K]
    xi = _fix_signs(vectors[:, :K])
    root = np.sqrt(lam)
    B_hat = xi * root
    F_hat = (Zc @ xi) / root
    logger.info(f"PCA factors: n={n}, p={p}, K={K}")
    return FactorModel("pca", K, B_hat, F_hat, a_hat, eigvals=lam.copy(), spectrum=spectrum)


def dp_pretrain(Z_prime: MatrixLike, K_prime: int) -> np.ndarray:
    """
    Diversified weights W = sqrt(p) * top-K' eigenvectors of cov(Z_prime).

    Z_prime must not overlap the rows later passed to dp_fit; that is the
    caller's responsibility.

    Raises:
        DataError: fewer than K' + 1 rows
        NumericalError: K' exceeds the covariance rank
    """
    z = as_array(Z_prime)
    n_prime, p = z.shape
    if K_prime < 1:
        raise DataError(f"K' must be >= 1, got {K_prime}")
    if n_prime < K_prime + 1:
        raise DataError(f"Pretraining needs at least K'+1={K_prime + 1} rows, got {n_prime}")

    values, vectors = _covariance_eigen(z - z.mean(axis=0))
    rank = _effective_rank(np.clip(values, 0.0, None))
    if K_prime > rank:
        raise NumericalError(f"K'={K_prime} exceeds the effective rank {rank} of the pretraining covariance")
    W = np.sqrt(p) * _fix_signs(vectors[:, :K_prime])
    logger.info(f"Diversified weights pretrained on {n_prime} rows, K'={K_prime}")
    return W


def dp_fit(Z: MatrixLike, W: np.ndarray, K: Optional[int] = None) -> FactorModel:
    """
    Diversified-projection factors F_hat = Zc W / p and least-squares loadings.

    All K' columns of W are kept; K, when given, only has to satisfy K <= K'.

    Raises:
        NumericalError: 'degenerate projected factors' when F_hat' F_hat is singular
    """
    z = as_array(Z)
    W = np.asarray(W, dtype=np.float64)
    n, p = z.shape
    if W.shape[0] != p:
        raise DataError(f"W has {W.shape[0]} rows but Z has {p} columns")
    K_prime = W.shape[1]
    if K is not None and K > K_prime:
        raise DataError(f"K={K} exceeds the number of diversified weights K'={K_prime}")

    a_hat = z.mean(axis=0)
    Zc = z - a_hat
    F_hat = Zc @ W / p
    gram = F_hat.T @ F_hat
    gram_values = linalg.eigvalsh(gram)
    if gram_values[-1] <= 0 or gram_values[0] <= RANK_TOLERANCE * gram_values[-1]:
        raise NumericalError("degenerate projected factors")
    B_hat = linalg.solve(gram, F_hat.T @ Zc, assume_a="pos").T
    logger.info(f"Diversified-projection factors: n={n}, p={p}, K'={K_prime}")
    return FactorModel("dp", K_prime, B_hat, F_hat, a_hat, W=W.copy())


def project_new(model: FactorModel, z_new: MatrixLike) -> np.ndarray:
    """
    Factor scores of new rows under a fitted model.

    pca: diag(lambda)^-1 B_hat' (z - a_hat); dp: W' (z - a_hat) / p.
    Accepts a single row or a matrix of rows.
    """
    z = as_array(z_new)
    if z.shape[-1] != model.p:
        raise DataError(f"Expected rows of length {model.p}, got {z.shape[-1]}")
    centered = z - model.a_hat
    if model.mode == "pca":
        return centered @ (model.B_hat / model.eigvals)
    if model.mode == "dp":
        return centered @ model.W / model.p
    raise ValueError(f"Unknown factor mode '{model.mode}'")


class FactorSpec(BaseModel):
    """How factors are estimated from each transformed matrix."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: Literal["pca", "dp"] = "pca"
    k: Union[Literal["auto"], PositiveInt] = "auto"
    k_min: Optional[int] = Field(None, ge=1)
    k_max: Optional[int] = Field(None, ge=1)
    n_prime: int = Field(DEFAULT_N_PRIME, ge=2)
    k_prime: Optional[int] = Field(None, ge=1)
    freeze_w: bool = False


def fit_factor_model(Z: MatrixLike, spec: FactorSpec, seed: int = 0,
                     weights: Optional[np.ndarray] = None) -> FactorModel:
    """
    Fit a factor model to Z as configured.

    dp mode pretrains W on n' randomly chosen rows and fits on the remaining
    rows, so the two samples never overlap. A precomputed W (frozen weights)
    skips pretraining and uses every row.

    Args:
        Z: Transformed training matrix
        spec: Factor configuration
        seed: Seed for the pretraining split
        weights: Diversified weights to reuse instead of pretraining
    """
    z = as_array(Z)
    if spec.mode == "pca":
        return pca_fit(z, spec.k, spec.k_min, spec.k_max)

    if weights is not None:
        return dp_fit(z, weights)

    n = z.shape[0]
    n_prime = spec.n_prime
    if n_prime > n // 2:
        logger.warning(f"n'={n_prime} leaves too few rows out of {n}; using {n // 2}")
        n_prime = n // 2
    order = np.random.default_rng(seed).permutation(n)
    pretrain_rows, main_rows = order[:n_prime], order[n_prime:]
    Z_prime = z[pretrain_rows]

    if spec.k_prime is not None:
        K_prime = spec.k_prime
    elif spec.k != "auto":
        K_prime = int(spec.k)
    else:
        K_prime = eigen_ratio_k(eigen_spectrum(Z_prime), spec.k_min, spec.k_max)
    W = dp_pretrain(Z_prime, K_prime)
    return dp_fit(z[main_rows], W)
