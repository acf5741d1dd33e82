"""
Augmented designs: factor blocks, idiosyncratic residuals and extras,
built identically for training rows and for new samples.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg

from factorAug.constants import CONDITION_LIMIT, CONDITION_QR_SWITCH
from factorAug.errors import DataError, NumericalError
from factorAug.factors import FactorModel, FactorSpec, fit_factor_model, project_new
from factorAug.matrixio import Matrix, MatrixLike, as_array
from factorAug.screening import ScreenResult, ScreenSpec, resolve_loss, screen
from factorAug.transforms import FittedTransform, TransformSpec, fit_transform, lr_features_fit
from factorAug.utils import derive_seed

logger = logging.getLogger(__name__)

BLOCK_ORDER = ("F0", "F", "U", "Utilde", "X", "LR")
RESIDUAL_LABELS = ("U", "Utilde")
IDENTITY_SOURCE = "identity"

Layout = Literal["X", "F_U", "F0_F_U", "F0_F_Utilde"]


class DesignSpec(BaseModel):
    """
    One design to evaluate.

    layout X is the raw-feature benchmark; the other layouts name the
    transforms whose factors make up the F block.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    layout: Layout = "F_U"
    sources: List[str] = Field(default_factory=list)
    lr: bool = False
    factors: Optional[FactorSpec] = None

    @model_validator(mode="after")
    def check_sources(self) -> "DesignSpec":
        if self.layout == "X" and self.sources:
            raise ValueError("layout X takes no factor sources")
        if self.layout != "X" and not self.sources:
            raise ValueError(f"layout {self.layout} needs at least one factor source")
        return self


@dataclass(frozen=True, eq=False)
class DesignBlock:
    label: str
    data: np.ndarray
    name: Optional[str] = None
    column_ids: Optional[Tuple[int, ...]] = None

    def tags(self) -> List[str]:
        prefix = self.label if self.name is None else f"{self.label}.{self.name}"
        ids = self.column_ids if self.column_ids is not None else range(self.data.shape[1])
        return [f"{prefix}:{j}" for j in ids]


@dataclass(frozen=True, eq=False)
class AugmentedDesign:
    """Ordered labeled blocks, their column concatenation and per-column tags."""

    blocks: Tuple[DesignBlock, ...]
    assembled: Matrix
    provenance: Tuple[str, ...]
    residual_free: bool = False

    @property
    def width(self) -> int:
        return self.assembled.cols

    def provenance_sidecar(self) -> Dict[str, str]:
        return {str(j): tag for j, tag in enumerate(self.provenance)}


@dataclass(frozen=True, eq=False)
class FactorSource:
    name: str
    transform: FittedTransform
    model: FactorModel

    def factors(self, Xc: np.ndarray) -> np.ndarray:
        return project_new(self.model, self.transform.apply(Xc))


@dataclass(frozen=True, eq=False)
class FittedAugmentation:
    """Everything fitted on one training window that augment_new needs."""

    layout: str
    x_center: np.ndarray
    sources: Tuple[FactorSource, ...] = ()
    loading: Optional[np.ndarray] = None
    f0_source: Optional[FactorSource] = None
    f0_loading: Optional[np.ndarray] = None
    residual_keep: Optional[np.ndarray] = None
    lr_transform: Optional[FittedTransform] = None
    screen_result: Optional[ScreenResult] = None
    weights: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.x_center.shape[0]


def _coefficients(F: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Least-squares C with F C ~ X; QR once F is ill conditioned."""
    singular_values = linalg.svdvals(F)
    if singular_values.size == 0:
        return np.zeros((0, X.shape[1]))
    smallest = singular_values[-1]
    cond = np.inf if smallest == 0 else singular_values[0] / smallest
    if not np.isfinite(cond) or cond >= CONDITION_LIMIT:
        raise NumericalError(f"Factor matrix is rank deficient (condition number {cond:.3g})")
    if cond > CONDITION_QR_SWITCH:
        Q, R = linalg.qr(F, mode="economic")
        return linalg.solve_triangular(R, Q.T @ X)
    return linalg.solve(F.T @ F, F.T @ X, assume_a="pos")


def regress_out(X: MatrixLike, F: MatrixLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project X off the column span of F.

    Returns:
        (B_hat of shape p x K, U = X - F B_hat')

    Raises:
        NumericalError: F rank deficient (condition estimate reported)
    """
    x = as_array(X)
    f = as_array(F)
    if f.shape[0] != x.shape[0]:
        raise DataError(f"F has {f.shape[0]} rows but X has {x.shape[0]}")
    C = _coefficients(f, x)
    return C.T, x - f @ C


def decorrelate_residual(U: MatrixLike, F0: MatrixLike) -> np.ndarray:
    """Remove the F0 component from the residual block."""
    return regress_out(U, F0)[1]


def assemble(blocks: Sequence[DesignBlock], residual_free: bool = False) -> AugmentedDesign:
    """
    Concatenate blocks in the fixed order F0 | F | residual | X | LR.

    Raises:
        DataError: row counts differ, an unknown label, or the residual block
            is missing / duplicated on a design that is not residual-free
    """
    if not blocks:
        raise DataError("A design needs at least one block")
    rows = {block.data.shape[0] for block in blocks}
    if len(rows) != 1:
        raise DataError(f"Blocks have differing row counts {sorted(rows)}")
    for block in blocks:
        if block.label not in BLOCK_ORDER:
            raise DataError(f"Unknown block label '{block.label}'")

    n_residual = sum(block.label in RESIDUAL_LABELS for block in blocks)
    if not residual_free and n_residual != 1:
        raise DataError(f"Expected exactly one residual block, got {n_residual}")

    ordered = tuple(sorted(blocks, key=lambda b: BLOCK_ORDER.index(b.label)))
    data = np.hstack([block.data for block in ordered])
    provenance = tuple(tag for block in ordered for tag in block.tags())
    return AugmentedDesign(ordered, Matrix(data), provenance, residual_free)


def _design_blocks(x: np.ndarray, aug: FittedAugmentation) -> List[DesignBlock]:
    if x.shape[1] != aug.input_dim:
        raise DataError(f"Expected rows of length {aug.input_dim}, got {x.shape[1]}")
    Xc = x - aug.x_center
    keep = aug.residual_keep
    keep_ids = None if keep is None else tuple(int(j) for j in keep)

    blocks = []
    if aug.layout == "X":
        blocks.append(DesignBlock("X", Xc if keep is None else Xc[:, keep], column_ids=keep_ids))
    else:
        factor_blocks = [source.factors(Xc) for source in aug.sources]
        F = np.hstack(factor_blocks)
        residual = Xc - F @ aug.loading.T
        label = "U"

        if aug.f0_source is not None:
            F0 = aug.f0_source.factors(Xc)
            blocks.append(DesignBlock("F0", F0))
            if aug.layout == "F0_F_Utilde":
                residual = residual - F0 @ aug.f0_loading.T
                label = "Utilde"

        for source, block in zip(aug.sources, factor_blocks):
            blocks.append(DesignBlock("F", block, name=source.name))
        blocks.append(DesignBlock(label, residual if keep is None else residual[:, keep], column_ids=keep_ids))

    if aug.lr_transform is not None:
        blocks.append(DesignBlock("LR", aug.lr_transform.apply(Xc)))
    return blocks


def build_design(X: MatrixLike, aug: FittedAugmentation) -> AugmentedDesign:
    """Augmented design of the rows of X under a fitted augmentation."""
    x = as_array(X)
    return assemble(_design_blocks(x, aug), residual_free=aug.layout == "X")


def augment_new(x_new: MatrixLike, aug: FittedAugmentation) -> np.ndarray:
    """
    Augmented row(s) for new samples, using only training-window fits.

    Factors come from project_new on the transformed, training-centered row;
    the residual uses the training loading (and the training F0 coefficients
    for the decorrelated layout).
    """
    x = as_array(x_new)
    single = x.ndim == 1
    rows = x.reshape(1, -1) if single else x
    out = build_design(rows, aug).assembled.data
    return out[0] if single else out


def fit_augmentation(X: MatrixLike, y: np.ndarray, design: DesignSpec,
                     transforms: Dict[str, TransformSpec], factor_spec: FactorSpec,
                     screen_spec: Optional[ScreenSpec] = None, seed: int = 0,
                     frozen_weights: Optional[Dict[str, np.ndarray]] = None
                     ) -> Tuple[FittedAugmentation, AugmentedDesign]:
    """
    Fit transforms, factor models, loadings and screening on training rows.

    Args:
        X: Standardized training features
        y: Training responses (used by fnn/lr transforms and screening)
        design: Layout, factor sources and extras
        transforms: Transform specs by name ('identity' is always available)
        factor_spec: Factor estimation settings (a design-level override wins)
        screen_spec: Screening of the residual (or X) block
        seed: Window seed
        frozen_weights: Diversified weights by source name to reuse

    Returns:
        (FittedAugmentation, training AugmentedDesign)
    """
    x = as_array(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != x.shape[0]:
        raise DataError(f"Response has {y.shape[0]} rows but X has {x.shape[0]}")
    frozen_weights = frozen_weights or {}
    factor_spec = design.factors or factor_spec
    x_center = x.mean(axis=0)
    Xc = x - x_center
    weights: Dict[str, np.ndarray] = {}

    def fit_source(name: str, index: int) -> FactorSource:
        if name == IDENTITY_SOURCE:
            spec = transforms.get(name, TransformSpec(kind="identity"))
        elif name in transforms:
            spec = transforms[name]
        else:
            raise DataError(f"Design '{design.name}' names unknown transform '{name}'")
        spec = spec.model_copy(update={"seed": derive_seed(seed, spec.seed, index)})
        transform = fit_transform(spec, Xc, y)
        Z = transform.apply(Xc)
        model = fit_factor_model(Z, factor_spec, seed=derive_seed(seed, index, 1),
                                 weights=frozen_weights.get(name))
        if model.W is not None:
            weights[name] = model.W
        logger.info(f"Design '{design.name}': source '{name}' gives {model.K} factor(s)")
        return FactorSource(name, transform, model)

    sources: Tuple[FactorSource, ...] = ()
    loading = f0_source = f0_loading = None
    residual = Xc
    controls = None

    if design.layout != "X":
        sources = tuple(fit_source(name, i) for i, name in enumerate(design.sources))
        F = np.hstack([source.factors(Xc) for source in sources])
        loading, residual = regress_out(Xc, F)
        controls = F
        if design.layout in ("F0_F_U", "F0_F_Utilde"):
            f0_source = fit_source(IDENTITY_SOURCE, len(sources))
            F0 = f0_source.factors(Xc)
            controls = np.hstack([F0, F])
            if design.layout == "F0_F_Utilde":
                f0_loading, residual = regress_out(residual, F0)

    screen_result = None
    residual_keep = None
    if screen_spec is not None and screen_spec.enabled:
        m = min(screen_spec.m, residual.shape[1])
        if m < screen_spec.m:
            logger.warning(f"Screening m={screen_spec.m} exceeds {residual.shape[1]} columns; keeping all")
        loss = resolve_loss(y, screen_spec.loss)
        screen_result = screen(y, controls, residual, m, loss, n_jobs=screen_spec.n_jobs)
        residual_keep = screen_result.kept

    lr_transform = None
    if design.lr:
        lr_spec = transforms.get("lr", TransformSpec(kind="lr"))
        lr_transform = lr_features_fit(Xc, y, lr_spec.epsilon_floor, lr_spec.bandwidth, spec=lr_spec)

    aug = FittedAugmentation(
        layout=design.layout,
        x_center=x_center,
        sources=sources,
        loading=loading,
        f0_source=f0_source,
        f0_loading=f0_loading,
        residual_keep=residual_keep,
        lr_transform=lr_transform,
        screen_result=screen_result,
        weights=weights,
    )
    return aug, build_design(x, aug)
