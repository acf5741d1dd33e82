"""
Nonlinear transformations of a design matrix: pairwise interactions, kernel
feature maps against training landmarks, hidden-layer network features and
per-feature log-likelihood ratios.
"""

import logging
from typing import Dict, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist
from scipy.stats import iqr, norm

from factorAug.constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPSILON_FLOOR,
    DEFAULT_FNN_EPOCHS,
    DEFAULT_FNN_LEARN_RATE,
    DEFAULT_HIDDEN_WIDTH,
    DEFAULT_N0,
    DEFAULT_POLY_COEF0,
    DEFAULT_POLY_DEGREE,
)
from factorAug.errors import DataError
from factorAug.matrixio import MatrixLike, as_array
from factorAug.network import FeedForwardNetwork, binary_targets

logger = logging.getLogger(__name__)

TransformKind = Literal["identity", "interactions", "rbf", "poly", "fnn", "lr"]

KDE_CHUNK_ROWS = 2048


class TransformSpec(BaseModel):
    """Configuration of one transformation family."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: TransformKind
    n0: int = Field(DEFAULT_N0, ge=1)
    gamma: Optional[float] = Field(None, gt=0)
    degree: int = Field(DEFAULT_POLY_DEGREE, ge=1)
    coef0: float = DEFAULT_POLY_COEF0
    hidden_width: int = Field(DEFAULT_HIDDEN_WIDTH, ge=1)
    depth: int = Field(1, ge=1)
    epochs: int = Field(DEFAULT_FNN_EPOCHS, ge=0)
    learn_rate: float = Field(DEFAULT_FNN_LEARN_RATE, gt=0)
    batch_size: int = Field(DEFAULT_BATCH_SIZE, ge=1)
    epsilon_floor: float = Field(DEFAULT_EPSILON_FLOOR, gt=0)
    bandwidth: Optional[float] = Field(None, gt=0)
    seed: int = 0


class FittedTransform:
    """
    A transformation with its fitted state. Immutable after fit.

    apply() works on a single row (returns a vector) or on a matrix
    (returns one transformed row per input row).
    """

    def __init__(self, spec: TransformSpec, output_dim: int):
        self.spec = spec
        self.output_dim = output_dim

    def apply(self, x: MatrixLike) -> np.ndarray:
        x = as_array(x)
        single = x.ndim == 1
        rows = x.reshape(1, -1) if single else x
        out = self._apply_rows(rows)
        return out[0] if single else out

    def _apply_rows(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state(self) -> Dict[str, np.ndarray]:
        """Arrays needed to rebuild the transform."""
        return {}


class IdentityTransform(FittedTransform):
    def _apply_rows(self, X: np.ndarray) -> np.ndarray:
        return X.copy()


class InteractionTransform(FittedTransform):
    def _apply_rows(self, X: np.ndarray) -> np.ndarray:
        return interactions(X)


class KernelTransform(FittedTransform):
    def __init__(self, spec: TransformSpec, landmarks: np.ndarray, gamma: Optional[float]):
        super().__init__(spec, landmarks.shape[0])
        self.landmarks = landmarks
        self.gamma = gamma

    def _apply_rows(self, X: np.ndarray) -> np.ndarray:
        return kernel_features(X, self.landmarks, self.spec, gamma=self.gamma)

    def state(self) -> Dict[str, np.ndarray]:
        state = {"landmarks": self.landmarks}
        if self.gamma is not None:
            state["gamma"] = np.array([self.gamma])
        return state


class NetworkTransform(FittedTransform):
    def __init__(self, spec: TransformSpec, network: FeedForwardNetwork,
                 initial_loss: float = float("nan"), final_loss: float = float("nan")):
        super().__init__(spec, network.hidden_widths[-1])
        self.network = network
        self.initial_loss = initial_loss
        self.final_loss = final_loss

    def _apply_rows(self, X: np.ndarray) -> np.ndarray:
        return self.network.hidden(X)

    def state(self) -> Dict[str, np.ndarray]:
        return self.network.weights()


class LikelihoodRatioTransform(FittedTransform):
    """Per-feature log density ratio between class 2 and class 1 samples."""

    def __init__(self, spec: TransformSpec, class1: np.ndarray, class2: np.ndarray,
                 bandwidth1: np.ndarray, bandwidth2: np.ndarray, epsilon_floor: float):
        super().__init__(spec, class1.shape[1])
        self.class1 = class1
        self.class2 = class2
        self.bandwidth1 = bandwidth1
        self.bandwidth2 = bandwidth2
        self.epsilon_floor = epsilon_floor

    def _apply_rows(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.output_dim:
            raise DataError(f"Expected {self.output_dim} features, got {X.shape[1]}")
        f1 = gaussian_kde_columns(X, self.class1, self.bandwidth1)
        f2 = gaussian_kde_columns(X, self.class2, self.bandwidth2)
        eps = self.epsilon_floor
        return np.log(np.maximum(f2, eps)) - np.log(np.maximum(f1, eps))

    def state(self) -> Dict[str, np.ndarray]:
        return {
            "class1": self.class1,
            "class2": self.class2,
            "bandwidth1": self.bandwidth1,
            "bandwidth2": self.bandwidth2,
        }


def interactions(x: MatrixLike) -> np.ndarray:
    """
    All products x_i * x_j with i <= j, in lexicographic (i, j) order.

    Accepts a single row of length p or an n x p matrix.
    """
    x = as_array(x)
    p = x.shape[-1]
    if p < 1:
        raise DataError("interactions needs at least one feature")
    i, j = np.triu_indices(p)
    return x[..., i] * x[..., j]


def select_landmarks(X: MatrixLike, n0: int, seed: int) -> np.ndarray:
    """
    Draw n0 distinct training row indices uniformly without replacement.

    Raises:
        DataError: n0 > n
    """
    n = as_array(X).shape[0]
    if n0 > n:
        raise DataError(f"Cannot draw {n0} landmarks from {n} rows")
    rng = np.random.default_rng(seed)
    return rng.choice(n, size=n0, replace=False)


def default_gamma(X: MatrixLike) -> float:
    """rbf bandwidth 1 / (p * mean column variance); 1/p for constant data."""
    x = as_array(X)
    p = x.shape[1]
    mean_var = float(x.var(axis=0).mean()) if x.shape[0] > 0 else 0.0
    if mean_var <= 0:
        return 1.0 / p
    return 1.0 / (p * mean_var)


def kernel_features(x: MatrixLike, landmarks: MatrixLike, spec: TransformSpec,
                    gamma: Optional[float] = None) -> np.ndarray:
    """
    Kernel evaluations of x against every landmark row.

    Args:
        x: Single row or matrix of rows
        landmarks: n0 x p landmark rows
        spec: rbf or poly spec
        gamma: rbf bandwidth; falls back to spec.gamma

    Returns:
        Vector of length n0 (single row) or n x n0 matrix
    """
    x = as_array(x)
    L = as_array(landmarks)
    single = x.ndim == 1
    rows = x.reshape(1, -1) if single else x
    if rows.shape[1] != L.shape[1]:
        raise DataError(f"Row has {rows.shape[1]} features but landmarks have {L.shape[1]}")

    if spec.kind == "rbf":
        g = gamma if gamma is not None else spec.gamma
        if g is None:
            raise ValueError("rbf kernel needs gamma")
        out = np.exp(-g * cdist(rows, L, "sqeuclidean"))
    elif spec.kind == "poly":
        out = (rows @ L.T + spec.coef0) ** spec.degree
    else:
        raise ValueError(f"Not a kernel transform: {spec.kind}")
    return out[0] if single else out


def fnn_transform_fit(X: MatrixLike, y: np.ndarray, spec: TransformSpec) -> NetworkTransform:
    """
    Train a ReLU network on (X, y) and keep its hidden layer as the feature map.

    Logistic loss is used when y takes exactly two values, squared loss otherwise.
    The head starts from random weights, not zero.

    Raises:
        NumericalError: non-finite loss during training (epoch reported)
    """
    x = as_array(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != x.shape[0]:
        raise DataError(f"Response has {y.shape[0]} rows but X has {x.shape[0]}")

    targets = binary_targets(y)
    loss = "logistic" if targets is not None else "squared"
    if targets is None:
        targets = y

    network = FeedForwardNetwork(x.shape[1], [spec.hidden_width] * spec.depth, 1, seed=spec.seed, zero_head=False)
    result = network.train(x, targets, loss, spec.epochs, spec.learn_rate, spec.batch_size)
    logger.info(f"fnn transform trained ({loss} loss): {result['initial_loss']:.6g} -> {result['final_loss']:.6g}")
    return NetworkTransform(spec, network, result["initial_loss"], result["final_loss"])


def silverman_bandwidth(sample: np.ndarray) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5), falling back to sd and then 1.0."""
    n = sample.shape[0]
    if n < 2:
        return 1.0
    sd = float(np.std(sample, ddof=1))
    spread = min(sd, float(iqr(sample)) / 1.34)
    if spread <= 0:
        spread = sd
    if spread <= 0:
        return 1.0
    return 0.9 * spread * n ** (-0.2)


def gaussian_kde_columns(X: np.ndarray, samples: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    """Evaluate a separate 1-d Gaussian KDE per column at every row of X."""
    out = np.empty(X.shape, dtype=np.float64)
    m = samples.shape[0]
    for j in range(X.shape[1]):
        h = bandwidths[j]
        for start in range(0, X.shape[0], KDE_CHUNK_ROWS):
            block = X[start:start + KDE_CHUNK_ROWS, j]
            z = (block[:, None] - samples[None, :, j]) / h
            out[start:start + KDE_CHUNK_ROWS, j] = norm.pdf(z).sum(axis=1) / (m * h)
    return out


def lr_features_fit(X: MatrixLike, y: np.ndarray, epsilon_floor: float = DEFAULT_EPSILON_FLOOR,
                    bandwidth: Optional[float] = None,
                    spec: Optional[TransformSpec] = None) -> LikelihoodRatioTransform:
    """
    Fit per-class, per-feature Gaussian KDEs for log-likelihood-ratio features.

    The smaller label is class 1, the larger class 2.

    Args:
        X: Training features
        y: Binary labels
        epsilon_floor: Densities are floored at this value before the log
        bandwidth: Fixed KDE bandwidth; Silverman's rule per feature per class when None

    Raises:
        DataError: y does not contain exactly two classes
    """
    x = as_array(X)
    y = np.asarray(y).ravel()
    labels = np.unique(y)
    if labels.size != 2:
        raise DataError(f"Likelihood-ratio features need two classes, got {labels.size}")
    if epsilon_floor <= 0:
        raise ValueError("epsilon_floor must be > 0")

    class1 = x[y == labels[0]].copy()
    class2 = x[y == labels[1]].copy()

    def bandwidths(sample: np.ndarray) -> np.ndarray:
        if bandwidth is not None:
            return np.full(sample.shape[1], float(bandwidth))
        return np.array([silverman_bandwidth(sample[:, j]) for j in range(sample.shape[1])])

    if spec is None:
        spec = TransformSpec(kind="lr", epsilon_floor=epsilon_floor, bandwidth=bandwidth)
    return LikelihoodRatioTransform(spec, class1, class2, bandwidths(class1), bandwidths(class2), epsilon_floor)


def fit_transform(spec: TransformSpec, X: MatrixLike, y: Optional[np.ndarray] = None) -> FittedTransform:
    """Fit the transform described by spec on training rows X."""
    x = as_array(X)
    if spec.kind == "identity":
        return IdentityTransform(spec, x.shape[1])
    if spec.kind == "interactions":
        p = x.shape[1]
        return InteractionTransform(spec, p * (p + 1) // 2)
    if spec.kind in ("rbf", "poly"):
        n0 = min(spec.n0, x.shape[0])
        idx = select_landmarks(x, n0, spec.seed)
        gamma = None
        if spec.kind == "rbf":
            gamma = spec.gamma if spec.gamma is not None else default_gamma(x)
        logger.debug(f"{spec.kind} kernel with {n0} landmarks")
        return KernelTransform(spec, x[idx].copy(), gamma)
    if spec.kind == "fnn":
        if y is None:
            raise ValueError("fnn transform needs responses")
        return fnn_transform_fit(x, y, spec)
    if spec.kind == "lr":
        if y is None:
            raise ValueError("lr features need labels")
        return lr_features_fit(x, y, spec.epsilon_floor, spec.bandwidth, spec=spec)
    raise ValueError(f"Unknown transform kind '{spec.kind}'")


def transform_from_state(spec: TransformSpec, state: Dict[str, np.ndarray], input_dim: int) -> FittedTransform:
    """Rebuild a FittedTransform from the arrays returned by state()."""
    if spec.kind == "identity":
        return IdentityTransform(spec, input_dim)
    if spec.kind == "interactions":
        return InteractionTransform(spec, input_dim * (input_dim + 1) // 2)
    if spec.kind in ("rbf", "poly"):
        gamma = float(np.ravel(state["gamma"])[0]) if "gamma" in state else None
        return KernelTransform(spec, np.array(state["landmarks"]), gamma)
    if spec.kind == "fnn":
        return NetworkTransform(spec, FeedForwardNetwork.from_weights(state))
    if spec.kind == "lr":
        return LikelihoodRatioTransform(
            spec,
            np.array(state["class1"]),
            np.array(state["class2"]),
            np.ravel(state["bandwidth1"]),
            np.ravel(state["bandwidth2"]),
            spec.epsilon_floor,
        )
    raise ValueError(f"Unknown transform kind '{spec.kind}'")
