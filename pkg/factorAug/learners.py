"""
Predictors fitted on augmented designs: ridge, lasso (coordinate descent),
a ReLU network with dropout, and an external learner behind a subprocess.
Also holds penalty grids and cross-validation.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg
from scipy.special import expit

from factorAug.constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_DROPOUT,
    DEFAULT_EXTERNAL_TIMEOUT,
    DEFAULT_FNN_EPOCHS,
    DEFAULT_FNN_LEARN_RATE,
    DEFAULT_FOLDS,
    DEFAULT_MAX_ITER,
    FINE_GRID,
    LASSO_TOL,
    STANDARD_LASSO_GRID,
    STANDARD_RIDGE_GRID,
)
from factorAug.errors import DataError, NumericalError
from factorAug.external_client import ExternalLearnerClient
from factorAug.matrixio import MatrixLike, as_array
from factorAug.network import FeedForwardNetwork

logger = logging.getLogger(__name__)

LearnerKind = Literal["ridge", "lasso", "fnn", "external"]
Task = Literal["regression", "binary", "multiclass"]


class LearnerSpec(BaseModel):
    """Learner kind and hyperparameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: LearnerKind = "ridge"
    gamma1: float = Field(0.0, ge=0)
    gamma2: float = Field(0.0, ge=0)
    widths: Tuple[int, ...] = (16, 4)
    dropout: float = Field(DEFAULT_DROPOUT, ge=0, lt=1)
    epochs: int = Field(DEFAULT_FNN_EPOCHS, ge=0)
    learn_rate: float = Field(DEFAULT_FNN_LEARN_RATE, gt=0)
    batch_size: int = Field(DEFAULT_BATCH_SIZE, ge=1)
    task: Task = "regression"
    max_iter: int = Field(DEFAULT_MAX_ITER, ge=1)
    standardize: bool = True
    command: Tuple[str, ...] = ()
    timeout: float = Field(DEFAULT_EXTERNAL_TIMEOUT, gt=0)
    seed: int = 0

    @field_validator("widths")
    @classmethod
    def check_widths(cls, widths: Tuple[int, ...]) -> Tuple[int, ...]:
        if not widths or any(w < 1 for w in widths):
            raise ValueError(f"hidden widths must all be >= 1, got {list(widths)}")
        return widths

    @model_validator(mode="after")
    def check_command(self) -> "LearnerSpec":
        if self.kind == "external" and not self.command:
            raise ValueError("external learner needs a command")
        return self

    @property
    def penalty(self) -> float:
        return self.gamma1 if self.kind == "lasso" else self.gamma2


@dataclass(frozen=True, eq=False)
class FittedLearner:
    """
    A fitted predictor.

    Linear models keep coef (design width) plus intercept on the original
    design scale. One-vs-rest models keep one member per class.
    """

    spec: LearnerSpec
    n_features: int
    coef: Optional[np.ndarray] = None
    intercept: float = 0.0
    network: Optional[FeedForwardNetwork] = None
    input_center: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    classes: Optional[np.ndarray] = None
    members: Tuple["FittedLearner", ...] = ()
    train_design: Optional[np.ndarray] = None
    train_labels: Optional[np.ndarray] = None
    converged: bool = True
    final_loss: float = float("nan")
    objective_path: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def theta(self) -> np.ndarray:
        """Intercept followed by slopes."""
        return np.concatenate([[self.intercept], self.coef])


@dataclass(frozen=True, eq=False)
class CVResult:
    best: LearnerSpec
    table: pd.DataFrame


def _column_scales(Qc: np.ndarray) -> np.ndarray:
    scales = np.sqrt((Qc ** 2).mean(axis=0)) if Qc.shape[0] else np.ones(Qc.shape[1])
    return np.where(scales > 1e-12, scales, 1.0)


def _prepare(Q: MatrixLike, y: np.ndarray, standardize: bool):
    q = as_array(Q)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != q.shape[0]:
        raise DataError(f"Response has {y.shape[0]} rows but the design has {q.shape[0]}")
    center = q.mean(axis=0)
    Qc = q - center
    scale = _column_scales(Qc) if standardize else np.ones(q.shape[1])
    y_mean = float(y.mean())
    return Qc / scale, y - y_mean, center, scale, y_mean


def ridge_fit(Q: MatrixLike, y: np.ndarray, gamma2: float, standardize: bool = True,
              spec: Optional[LearnerSpec] = None) -> FittedLearner:
    """
    Ridge regression with an unpenalized intercept.

    Solves (Qs' Qs + gamma2 I) theta = Qs' yc on centered (and optionally
    scaled) columns, then maps theta back to the original scale.

    Raises:
        NumericalError: singular system at gamma2 = 0
    """
    if gamma2 < 0:
        raise ValueError(f"gamma2 must be >= 0, got {gamma2}")
    Qs, yc, center, scale, y_mean = _prepare(Q, y, standardize)
    p = Qs.shape[1]
    spec = spec or LearnerSpec(kind="ridge", gamma2=gamma2, standardize=standardize)

    if p == 0:
        return FittedLearner(spec, 0, np.zeros(0), y_mean)

    A = Qs.T @ Qs + gamma2 * np.eye(p)
    eigvals = linalg.eigvalsh(A)
    if eigvals[-1] <= 0 or eigvals[0] <= 1e-12 * eigvals[-1]:
        raise NumericalError(f"Ridge system is singular at gamma2={gamma2}; use gamma2 > 0")
    theta = linalg.solve(A, Qs.T @ yc, assume_a="pos")
    coef = theta / scale
    return FittedLearner(spec, p, coef, y_mean - center @ coef)


def soft_threshold(z: float, t: float) -> float:
    return float(np.sign(z) * max(abs(z) - t, 0.0))


def lasso_objective(Qs: np.ndarray, yc: np.ndarray, theta: np.ndarray, gamma1: float) -> float:
    r = yc - Qs @ theta
    return float(r @ r / Qs.shape[0] + gamma1 * np.abs(theta).sum())


def lasso_fit(Q: MatrixLike, y: np.ndarray, gamma1: float, max_iter: int = DEFAULT_MAX_ITER,
              standardize: bool = True, spec: Optional[LearnerSpec] = None) -> FittedLearner:
    """
    Lasso by cyclic coordinate descent on (1/n)||y - Q theta||^2 + gamma1 ||theta||_1.

    The intercept is handled by centering and never penalized. Stops when
    the largest coefficient change in a sweep is below 1e-7, or after
    max_iter sweeps (converged=False).
    """
    if gamma1 < 0:
        raise ValueError(f"gamma1 must be >= 0, got {gamma1}")
    Qs, yc, center, scale, y_mean = _prepare(Q, y, standardize)
    n, p = Qs.shape
    spec = spec or LearnerSpec(kind="lasso", gamma1=gamma1, max_iter=max_iter, standardize=standardize)

    theta = np.zeros(p)
    residual = yc.copy()
    norms = (2.0 / n) * (Qs ** 2).sum(axis=0)
    path = [lasso_objective(Qs, yc, theta, gamma1)]
    converged = p == 0

    for sweep in range(1, max_iter + 1):
        if p == 0:
            break
        max_change = 0.0
        for j in range(p):
            if norms[j] == 0:
                continue
            old = theta[j]
            rho = (2.0 / n) * (Qs[:, j] @ residual) + norms[j] * old
            new = soft_threshold(rho, gamma1) / norms[j]
            if new != old:
                residual -= Qs[:, j] * (new - old)
                theta[j] = new
                max_change = max(max_change, abs(new - old))
        path.append(lasso_objective(Qs, yc, theta, gamma1))
        logger.debug(f"lasso sweep {sweep}: objective {path[-1]:.10g}, max change {max_change:.3g}")
        if max_change < LASSO_TOL:
            converged = True
            break

    if not converged:
        logger.warning(f"Lasso hit the sweep cap ({max_iter}) at gamma1={gamma1:g}")
    coef = theta / scale
    return FittedLearner(spec, p, coef, y_mean - center @ coef,
                         converged=converged, final_loss=path[-1], objective_path=tuple(path))


def _class_targets(y: np.ndarray, task: str) -> Tuple[Optional[np.ndarray], np.ndarray]:
    """(classes, target matrix) for classification tasks; (None, y) for regression."""
    if task == "regression":
        return None, y.reshape(-1, 1)
    classes = np.unique(y)
    if task == "binary":
        if classes.size != 2:
            raise DataError(f"Binary task needs two classes, got {classes.size}")
        return classes, (y == classes[1]).astype(np.float64).reshape(-1, 1)
    if classes.size < 2:
        raise DataError("Multiclass task needs at least two classes")
    return classes, (y[:, None] == classes[None, :]).astype(np.float64)


def fnn_fit(Q: MatrixLike, y: np.ndarray, spec: LearnerSpec) -> FittedLearner:
    """
    Train a ReLU network with dropout by mini-batch gradient descent.

    Binary and multiclass (one-vs-rest) tasks use sigmoid outputs with
    logistic loss; regression uses squared loss.

    Raises:
        NumericalError: non-finite loss (epoch reported)
    """
    q = as_array(Q)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != q.shape[0]:
        raise DataError(f"Response has {y.shape[0]} rows but the design has {q.shape[0]}")
    center = q.mean(axis=0)
    scale = _column_scales(q - center) if spec.standardize else np.ones(q.shape[1])
    inputs = (q - center) / scale

    classes, targets = _class_targets(y, spec.task)
    loss = "squared" if classes is None else "logistic"
    network = FeedForwardNetwork(q.shape[1], spec.widths, targets.shape[1], dropout=spec.dropout, seed=spec.seed)
    result = network.train(inputs, targets, loss, spec.epochs, spec.learn_rate, spec.batch_size)
    logger.info(f"fnn learner trained ({spec.task}): loss {result['initial_loss']:.6g} -> {result['final_loss']:.6g}")
    return FittedLearner(spec, q.shape[1], network=network, input_center=center, input_scale=scale,
                         classes=classes, final_loss=result["final_loss"])


def fit_learner(Q: MatrixLike, y: np.ndarray, spec: LearnerSpec) -> FittedLearner:
    """Fit any learner kind; linear classifiers are fitted one-vs-rest on 0/1 targets."""
    q = as_array(Q)
    y = np.asarray(y, dtype=np.float64).ravel()

    if spec.kind == "fnn":
        return fnn_fit(q, y, spec)
    if spec.kind == "external":
        return FittedLearner(spec, q.shape[1], train_design=q.copy(), train_labels=y.copy())

    def linear(target: np.ndarray) -> FittedLearner:
        if spec.kind == "ridge":
            return ridge_fit(q, target, spec.gamma2, spec.standardize, spec)
        return lasso_fit(q, target, spec.gamma1, spec.max_iter, spec.standardize, spec)

    if spec.task == "regression":
        return linear(y)
    classes, targets = _class_targets(y, spec.task)
    members = tuple(linear(targets[:, c]) for c in range(targets.shape[1]))
    return FittedLearner(spec, q.shape[1], classes=classes, members=members,
                         converged=all(m.converged for m in members))


def predict(model: FittedLearner, Q_new: MatrixLike) -> np.ndarray:
    """
    Predictions for new design rows.

    Regression: fitted values. Binary: probability of the larger label;
    linear learners give their 0/1 regression fit clipped to [0, 1].
    Multiclass: n x C matrix of one-vs-rest scores.

    Raises:
        DataError: design width differs from training
    """
    q = as_array(Q_new)
    if q.ndim == 1:
        q = q.reshape(1, -1)
    if q.shape[1] != model.n_features:
        raise DataError(f"Design has {q.shape[1]} columns, model was trained on {model.n_features}")

    if model.members:
        scores = np.column_stack([predict(member, q) for member in model.members])
        if model.spec.task == "binary":
            return np.clip(scores[:, 0], 0.0, 1.0)
        return scores
    if model.network is not None:
        output = model.network.predict_raw((q - model.input_center) / model.input_scale)
        if model.classes is None:
            return output[:, 0]
        probabilities = expit(output)
        return probabilities[:, 0] if model.spec.task == "binary" else probabilities
    if model.spec.kind == "external":
        client = ExternalLearnerClient(model.spec.command, model.spec.timeout)
        return client.fit_predict(model.train_design, model.train_labels, q)
    return q @ model.coef + model.intercept


def predict_labels(model: FittedLearner, Q_new: MatrixLike) -> np.ndarray:
    """Class labels: threshold 0.5 for binary, argmax for multiclass."""
    scores = predict(model, Q_new)
    if model.classes is None:
        raise ValueError("Labels are only defined for classification learners")
    if scores.ndim == 1:
        return np.where(scores > 0.5, model.classes[1], model.classes[0])
    return model.classes[np.argmax(scores, axis=1)]


def penalty_grid(kind: str, grid: Union[str, Sequence[float]] = "standard") -> Tuple[float, ...]:
    """Penalty values for a learner kind: 'standard' (15 lasso / 10 ridge points), 'fine' or explicit."""
    if not isinstance(grid, str):
        values = tuple(float(g) for g in grid)
        if not values:
            raise ValueError("Penalty grid is empty")
        if any(v < 0 for v in values):
            raise ValueError("Penalties must be >= 0")
        return values
    if grid == "fine":
        return FINE_GRID
    if grid == "standard":
        return STANDARD_LASSO_GRID if kind == "lasso" else STANDARD_RIDGE_GRID
    raise ValueError(f"Unknown grid '{grid}'")


def expand_grid(spec: LearnerSpec, grid: Union[str, Sequence[float]] = "standard") -> List[LearnerSpec]:
    """One spec per penalty value; fnn/external specs are returned as a single-point grid."""
    if spec.kind == "lasso":
        return [spec.model_copy(update={"gamma1": g}) for g in penalty_grid("lasso", grid)]
    if spec.kind == "ridge":
        return [spec.model_copy(update={"gamma2": g}) for g in penalty_grid("ridge", grid)]
    return [spec]


def fold_indices(n: int, folds: int, time_ordered: bool = True, seed: int = 0) -> List[np.ndarray]:
    """
    Validation index sets: contiguous blocks for time-ordered data, shuffled otherwise.

    Raises:
        DataError: a fold would hold fewer than 2 samples
    """
    if folds < 2:
        raise ValueError(f"Cross-validation needs at least 2 folds, got {folds}")
    order = np.arange(n) if time_ordered else np.random.default_rng(seed).permutation(n)
    blocks = np.array_split(order, folds)
    if min(len(block) for block in blocks) < 2:
        raise DataError(f"{n} samples cannot fill {folds} folds with at least 2 samples each")
    return [np.sort(block) for block in blocks]


def _validation_loss(Q: np.ndarray, y: np.ndarray, spec: LearnerSpec, valid: np.ndarray) -> float:
    train = np.setdiff1d(np.arange(Q.shape[0]), valid)
    model = fit_learner(Q[train], y[train], spec)
    predictions = predict(model, Q[valid])
    target = y[valid]
    if model.classes is not None:
        _, onehot = _class_targets(y, spec.task)
        target = onehot[valid]
        if predictions.ndim == 1:
            target = target[:, 0]
    return float(np.mean((predictions - target) ** 2))


def cross_validate(Q: MatrixLike, y: np.ndarray, grid: Sequence[LearnerSpec], folds: int = DEFAULT_FOLDS,
                   time_ordered: bool = True, seed: int = 0, n_jobs: int = 1) -> CVResult:
    """
    Pick the spec with the smallest mean validation loss (mean squared error).

    Ties go to the earlier grid entry (the smaller penalty for ascending grids).

    Returns:
        CVResult with the best spec and a table of mean / sd loss per grid point
    """
    if not grid:
        raise ValueError("Cross-validation grid is empty")
    q = as_array(Q)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(grid) == 1:
        table = pd.DataFrame({"index": [0], "penalty": [grid[0].penalty],
                              "mean_loss": [np.nan], "sd_loss": [np.nan]})
        return CVResult(grid[0], table)

    blocks = fold_indices(q.shape[0], folds, time_ordered, seed)
    losses = Parallel(n_jobs=n_jobs)(
        delayed(_validation_loss)(q, y, spec, valid) for spec in grid for valid in blocks
    )
    losses = np.array(losses).reshape(len(grid), len(blocks))
    mean_loss = losses.mean(axis=1)
    best = int(np.argmin(mean_loss))
    table = pd.DataFrame({
        "index": np.arange(len(grid)),
        "penalty": [spec.penalty for spec in grid],
        "mean_loss": mean_loss,
        "sd_loss": losses.std(axis=1, ddof=1) if len(blocks) > 1 else np.zeros(len(grid)),
    })
    logger.info(f"Cross-validation picked {grid[best].kind} penalty {grid[best].penalty:g}")
    return CVResult(grid[best], table)


def learner_state(model: FittedLearner) -> Dict[str, np.ndarray]:
    """Arrays to persist a fitted learner in a model bundle."""
    if model.members:
        state = {}
        for c, member in enumerate(model.members):
            state.update({f"class{c}_{k}": v for k, v in learner_state(member).items()})
        return state
    if model.network is not None:
        state = dict(model.network.weights())
        state["input_center"] = model.input_center
        state["input_scale"] = model.input_scale
        return state
    if model.coef is not None:
        return {"theta": model.theta}
    return {}
