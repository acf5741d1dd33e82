"""
Decorrelated screening: rank residual columns by their marginal
contribution to y given the factors, and keep the top m.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Literal, Optional

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg
from scipy.special import expit

from factorAug.constants import DEFAULT_SCREEN_M_OTHER, LOGISTIC_GRAD_TOL, LOGISTIC_MAX_ITER
from factorAug.errors import DataError
from factorAug.matrixio import MatrixLike, as_array
from factorAug.network import binary_targets

logger = logging.getLogger(__name__)

LossKind = Literal["squared", "logistic"]


class ScreenSpec(BaseModel):
    """Screening configuration; loss 'auto' picks logistic for two-valued y."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    enabled: bool = False
    m: int = Field(DEFAULT_SCREEN_M_OTHER, ge=1)
    loss: Literal["auto", "squared", "logistic"] = "auto"
    n_jobs: int = 1


@dataclass(frozen=True)
class ThetaFit:
    theta: float
    converged: bool = True


@dataclass(frozen=True, eq=False)
class ScreenResult:
    """Absolute marginal coefficients and the kept column indices (ascending)."""

    theta_abs: np.ndarray
    kept: np.ndarray
    loss_kind: str
    n_unconverged: int = 0

    def to_json(self, include_theta: bool = True) -> Dict[str, Any]:
        payload = {
            "kept": self.kept.tolist(),
            "loss_kind": self.loss_kind,
            "n_unconverged": self.n_unconverged,
        }
        if include_theta:
            payload["theta_abs"] = self.theta_abs.tolist()
        return payload


def resolve_loss(y: np.ndarray, loss: str = "auto") -> str:
    if loss != "auto":
        return loss
    return "logistic" if np.unique(y).size == 2 else "squared"


def _standardize_column(u: np.ndarray) -> Optional[np.ndarray]:
    """Mean 0, unit sample sd; None for a constant column."""
    centered = u - u.mean()
    sd = np.std(centered, ddof=1) if u.shape[0] > 1 else 0.0
    if sd <= 1e-14 * max(np.abs(u).max(initial=0.0), 1.0):
        return None
    return centered / sd


def _controls(F: Optional[MatrixLike], n: int) -> np.ndarray:
    ones = np.ones((n, 1))
    if F is None:
        return ones
    f = as_array(F)
    if f.shape[0] != n:
        raise DataError(f"Factor matrix has {f.shape[0]} rows, expected {n}")
    return np.hstack([ones, f])


def _logistic_fit(D: np.ndarray, y01: np.ndarray) -> ThetaFit:
    """Newton iterations on the mean log-loss; theta is the last coefficient."""
    n = D.shape[0]
    beta = np.zeros(D.shape[1])
    for _ in range(LOGISTIC_MAX_ITER):
        prob = expit(D @ beta)
        grad = D.T @ (prob - y01) / n
        if np.linalg.norm(grad) < LOGISTIC_GRAD_TOL:
            return ThetaFit(float(beta[-1]), True)
        weights = prob * (1.0 - prob)
        hessian = (D * weights[:, None]).T @ D / n
        try:
            step = linalg.solve(hessian, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(hessian, grad)[0]
        beta = beta - step
    prob = expit(D @ beta)
    converged = np.linalg.norm(D.T @ (prob - y01) / n) < LOGISTIC_GRAD_TOL
    return ThetaFit(float(beta[-1]), bool(converged))


def marginal_theta(y: np.ndarray, F: Optional[MatrixLike], u_j: np.ndarray, loss_kind: str = "squared") -> ThetaFit:
    """
    Coefficient of the standardized column u_j in a fit of y on (1, F, u_j).

    Args:
        y: Responses (two-valued for logistic loss)
        F: Factor controls, or None for an intercept-only control set
        u_j: Residual column (standardized internally)
        loss_kind: 'squared' (OLS) or 'logistic' (Newton, flagged if not converged)
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    u = _standardize_column(np.asarray(u_j, dtype=np.float64).ravel())
    if u is None:
        return ThetaFit(0.0, True)
    D = np.hstack([_controls(F, y.shape[0]), u[:, None]])

    if loss_kind == "squared":
        coefficients = linalg.lstsq(D, y)[0]
        return ThetaFit(float(coefficients[-1]), True)
    if loss_kind == "logistic":
        y01 = binary_targets(y)
        if y01 is None:
            raise DataError("Logistic screening needs a two-valued response")
        return _logistic_fit(D, y01)
    raise ValueError(f"Unknown loss '{loss_kind}'")


def _squared_thetas(y: np.ndarray, C: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Frisch-Waugh coefficients column by column against the QR basis of C."""
    Q, _ = linalg.qr(C, mode="economic")
    y_resid = y - Q @ (Q.T @ y)
    thetas = np.zeros(R.shape[1])
    for j in range(R.shape[1]):
        u = _standardize_column(R[:, j])
        if u is None:
            continue
        u_resid = u - Q @ (Q.T @ u)
        denominator = u_resid @ u_resid
        if denominator > 1e-12 * u.shape[0]:
            thetas[j] = (u_resid @ y_resid) / denominator
    return thetas


def screen(y: np.ndarray, F: Optional[MatrixLike], U: MatrixLike, m: int,
           loss_kind: str = "squared", n_jobs: int = 1) -> ScreenResult:
    """
    Keep the m residual columns with the largest |theta_j|.

    Ties are broken by the lower column index; kept indices are returned ascending.

    Raises:
        DataError: m > p
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    R = as_array(U)
    n, p = R.shape
    if y.shape[0] != n:
        raise DataError(f"Response has {y.shape[0]} rows, residual block has {n}")
    if m > p:
        raise DataError(f"Cannot keep m={m} columns out of p={p}")

    unconverged = 0
    if loss_kind == "squared":
        thetas = _squared_thetas(y, _controls(F, n), R)
    elif loss_kind == "logistic":
        fits = Parallel(n_jobs=n_jobs)(
            delayed(marginal_theta)(y, F, R[:, j], "logistic") for j in range(p)
        )
        thetas = np.array([fit.theta for fit in fits])
        unconverged = sum(not fit.converged for fit in fits)
        if unconverged:
            logger.warning(f"{unconverged} of {p} logistic screening fits did not converge")
    else:
        raise ValueError(f"Unknown loss '{loss_kind}'")

    theta_abs = np.abs(thetas)
    order = np.argsort(-theta_abs, kind="stable")
    kept = np.sort(order[:m])
    logger.info(f"Screening kept {m} of {p} columns ({loss_kind} loss)")
    return ScreenResult(theta_abs, kept, loss_kind, unconverged)
