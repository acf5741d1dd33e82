"""
Unit tests for augmented design construction.
"""

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import linalg

from factorAug.augment import (
    DesignBlock,
    DesignSpec,
    assemble,
    augment_new,
    build_design,
    decorrelate_residual,
    fit_augmentation,
    regress_out,
)
from factorAug.errors import DataError, NumericalError
from factorAug.factors import FactorSpec
from factorAug.screening import ScreenSpec
from factorAug.transforms import TransformSpec


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(21)


@pytest.fixture
def factor_data(rng):
    """Small planted two-factor matrix and a response."""
    F = rng.standard_normal((80, 2))
    X = F @ rng.standard_normal((2, 6)) + 0.5 * rng.standard_normal((80, 6))
    y = X[:, 0] * X[:, 1] + 0.1 * rng.standard_normal(80)
    return X, y


TRANSFORMS = {"inter": TransformSpec(kind="interactions")}
FIXED_K = FactorSpec(mode="pca", k=2)


class TestRegressOut:
    """Test projection off the factor span."""

    def test_orthogonal_input(self, rng):
        """Test that X orthogonal to F is returned unchanged."""
        Q, _ = linalg.qr(rng.standard_normal((30, 5)), mode="economic")
        B, U = regress_out(Q[:, 2:], Q[:, :2])
        np.testing.assert_allclose(B, 0.0, atol=1e-12)
        np.testing.assert_allclose(U, Q[:, 2:], atol=1e-12)

    def test_exact_factor_structure(self, rng):
        """Test that X = F C' leaves a zero residual."""
        F = rng.standard_normal((30, 3))
        C = rng.standard_normal((7, 3))
        B, U = regress_out(F @ C.T, F)
        np.testing.assert_allclose(U, 0.0, atol=1e-10)
        np.testing.assert_allclose(B, C, atol=1e-10)

    def test_idempotent(self, rng):
        """Test that regressing the residual again changes nothing."""
        F = rng.standard_normal((40, 3))
        X = rng.standard_normal((40, 8))
        _, U = regress_out(X, F)
        np.testing.assert_allclose(regress_out(U, F)[1], U, atol=1e-10)

    def test_orthogonality_and_span(self, rng):
        """Test F'U ~ 0 and that OLS on (F, U) matches OLS on (F, X)."""
        F = rng.standard_normal((50, 3))
        X = rng.standard_normal((50, 6))
        target = rng.standard_normal(50)
        _, U = regress_out(X, F)
        assert np.abs(F.T @ U).max() < 1e-8 * linalg.norm(X)

        def rss(design):
            coef = linalg.lstsq(design, target)[0]
            return float(np.sum((target - design @ coef) ** 2))

        assert rss(np.hstack([F, U])) <= rss(np.hstack([F, X])) + 1e-8

    def test_rank_deficient(self, rng):
        """Test that a rank-deficient F reports its condition number."""
        f = rng.standard_normal((20, 1))
        with pytest.raises(NumericalError, match="condition number"):
            regress_out(rng.standard_normal((20, 3)), np.hstack([f, f]))

    def test_row_mismatch(self, rng):
        """Test that differing row counts are rejected."""
        with pytest.raises(DataError):
            regress_out(np.zeros((5, 2)), rng.standard_normal((4, 1)))


class TestDecorrelateResidual:
    """Test removal of the F0 component."""

    def test_orthogonal_unchanged(self, rng):
        """Test that U orthogonal to F0 is unchanged."""
        Q, _ = linalg.qr(rng.standard_normal((25, 4)), mode="economic")
        np.testing.assert_allclose(decorrelate_residual(Q[:, 1:], Q[:, :1]), Q[:, 1:], atol=1e-12)

    def test_u_equal_f0(self, rng):
        """Test that U = F0 decorrelates to zero."""
        F0 = rng.standard_normal((25, 2))
        np.testing.assert_allclose(decorrelate_residual(F0, F0), 0.0, atol=1e-10)

    def test_idempotent_and_orthogonal(self, rng):
        """Test twice = once and F0' Utilde ~ 0."""
        F0 = rng.standard_normal((25, 2))
        U = rng.standard_normal((25, 5))
        once = decorrelate_residual(U, F0)
        np.testing.assert_allclose(decorrelate_residual(once, F0), once, atol=1e-10)
        assert np.abs(F0.T @ once).max() < 1e-8 * linalg.norm(U)


class TestAssemble:
    """Test block ordering and widths."""

    def test_f_u_width(self, rng):
        """Test K=3, p=10 gives 13 columns."""
        design = assemble([DesignBlock("U", rng.standard_normal((5, 10))),
                           DesignBlock("F", rng.standard_normal((5, 3)))])
        assert design.width == 13
        assert [b.label for b in design.blocks] == ["F", "U"]
        assert design.provenance[0] == "F:0"
        assert design.provenance[-1] == "U:9"

    def test_f0_f_utilde_width(self, rng):
        """Test K0=2, K=3, p=10 gives 15 columns in fixed order."""
        design = assemble([DesignBlock("Utilde", rng.standard_normal((5, 10))),
                           DesignBlock("F", rng.standard_normal((5, 3)), name="inter"),
                           DesignBlock("F0", rng.standard_normal((5, 2)))])
        assert design.width == 15
        assert [b.label for b in design.blocks] == ["F0", "F", "Utilde"]
        assert design.provenance[2] == "F.inter:0"
        assert len(design.provenance_sidecar()) == 15

    def test_benchmark_pass_through(self, rng):
        """Test that a single X block is the benchmark design."""
        X = rng.standard_normal((5, 4))
        design = assemble([DesignBlock("X", X)], residual_free=True)
        np.testing.assert_array_equal(design.assembled.data, X)

    def test_row_mismatch(self, rng):
        """Test that blocks with different row counts are rejected."""
        with pytest.raises(DataError):
            assemble([DesignBlock("F", np.zeros((4, 1))), DesignBlock("U", np.zeros((5, 2)))])

    def test_residual_required(self):
        """Test that a non-benchmark design needs one residual block."""
        with pytest.raises(DataError, match="residual"):
            assemble([DesignBlock("F", np.zeros((4, 1)))])


class TestDesignSpec:
    """Test design validation."""

    def test_x_takes_no_sources(self):
        """Test that the benchmark layout rejects sources."""
        with pytest.raises(ValidationError):
            DesignSpec(name="bad", layout="X", sources=["inter"])

    def test_factor_layout_needs_sources(self):
        """Test that factor layouts need at least one source."""
        with pytest.raises(ValidationError):
            DesignSpec(name="bad", layout="F_U")


class TestFitAugmentation:
    """Test fitted augmentations on training and new rows."""

    @pytest.mark.parametrize("layout", ["F_U", "F0_F_U", "F0_F_Utilde"])
    def test_new_rows_match_training_design(self, factor_data, layout):
        """Test that augment_new on a training row reproduces its design row."""
        X, y = factor_data
        design = DesignSpec(name="d", layout=layout, sources=["inter"])
        aug, train = fit_augmentation(X, y, design, TRANSFORMS, FIXED_K, seed=1)
        for i in (0, 17, 79):
            np.testing.assert_allclose(augment_new(X[i], aug), train.assembled.data[i], atol=1e-8)

    def test_widths(self, factor_data):
        """Test (F0, F, Utilde) width K0 + K + p."""
        X, y = factor_data
        design = DesignSpec(name="d", layout="F0_F_Utilde", sources=["inter"])
        _, train = fit_augmentation(X, y, design, TRANSFORMS, FIXED_K)
        assert train.width == 2 + 2 + 6
        assert [b.label for b in train.blocks] == ["F0", "F", "Utilde"]

    def test_training_orthogonality(self, factor_data):
        """Test F0' Utilde below 1e-8 relative on the training window."""
        X, y = factor_data
        design = DesignSpec(name="d", layout="F0_F_Utilde", sources=["inter"])
        _, train = fit_augmentation(X, y, design, TRANSFORMS, FIXED_K)
        blocks = {b.label: b.data for b in train.blocks}
        scale = linalg.norm(X - X.mean(axis=0))
        assert np.abs(blocks["F0"].T @ blocks["Utilde"]).max() < 1e-8 * scale

    def test_f_u_orthogonality(self, factor_data):
        """Test that the training F block is orthogonal to U."""
        X, y = factor_data
        design = DesignSpec(name="d", layout="F_U", sources=["inter", "identity"])
        _, train = fit_augmentation(X, y, design, TRANSFORMS, FIXED_K)
        F = np.hstack([b.data for b in train.blocks if b.label == "F"])
        U = next(b.data for b in train.blocks if b.label == "U")
        assert F.shape[1] == 4
        assert np.abs(F.T @ U).max() < 1e-8 * linalg.norm(X - X.mean(axis=0))

    def test_identity_source_is_affine(self, factor_data, rng):
        """Test augment_new(a + 2d) - base = 2 (augment_new(a + d) - base)."""
        X, y = factor_data
        design = DesignSpec(name="d", layout="F_U", sources=["identity"])
        aug, _ = fit_augmentation(X, y, design, {}, FIXED_K)
        base = augment_new(aug.x_center, aug)
        delta = rng.standard_normal(6)
        np.testing.assert_allclose(augment_new(aug.x_center + 2 * delta, aug) - base,
                                   2 * (augment_new(aug.x_center + delta, aug) - base), atol=1e-10)
        np.testing.assert_allclose(base, 0.0, atol=1e-12)

    def test_benchmark_is_centered_x(self, factor_data):
        """Test that the X layout passes the centered features through."""
        X, y = factor_data
        aug, train = fit_augmentation(X, y, DesignSpec(name="b", layout="X"), {}, FIXED_K)
        np.testing.assert_allclose(train.assembled.data, X - X.mean(axis=0))
        assert train.residual_free

    def test_screening_keeps_m_columns(self, factor_data):
        """Test that screening restricts the residual to m tagged columns."""
        X, y = factor_data
        design = DesignSpec(name="d", layout="F_U", sources=["inter"])
        aug, train = fit_augmentation(X, y, design, TRANSFORMS, FIXED_K, ScreenSpec(enabled=True, m=3))
        assert aug.residual_keep.size == 3
        residual = train.blocks[-1]
        assert residual.data.shape[1] == 3
        assert [int(tag.split(":")[1]) for tag in residual.tags()] == aug.residual_keep.tolist()

    def test_screening_m_clamped(self, factor_data):
        """Test that m above the residual width keeps every column."""
        X, y = factor_data
        aug, _ = fit_augmentation(X, y, DesignSpec(name="b", layout="X"), {}, FIXED_K,
                                  ScreenSpec(enabled=True, m=100))
        assert aug.residual_keep.tolist() == list(range(6))

    def test_lr_block(self, factor_data):
        """Test that binary designs can append likelihood-ratio features."""
        X, y = factor_data
        labels = (y > np.median(y)).astype(float)
        design = DesignSpec(name="d", layout="F_U", sources=["identity"], lr=True)
        aug, train = fit_augmentation(X, labels, design, {}, FIXED_K)
        assert train.blocks[-1].label == "LR"
        assert train.width == 2 + 6 + 6
        np.testing.assert_allclose(augment_new(X[5], aug), train.assembled.data[5], atol=1e-8)

    def test_design_factor_override(self, factor_data):
        """Test that a design-level factor spec wins over the default."""
        X, y = factor_data
        design = DesignSpec(name="d", layout="F_U", sources=["identity"],
                            factors=FactorSpec(mode="dp", n_prime=30, k_prime=2))
        aug, _ = fit_augmentation(X, y, design, {}, FIXED_K)
        assert aug.sources[0].model.mode == "dp"
        assert "identity" in aug.weights

    def test_frozen_weights_reused(self, factor_data):
        """Test that given diversified weights are used as-is."""
        X, y = factor_data
        spec = FactorSpec(mode="dp", n_prime=30, k_prime=2)
        design = DesignSpec(name="d", layout="F_U", sources=["identity"])
        first, _ = fit_augmentation(X, y, design, {}, spec, seed=1)
        second, _ = fit_augmentation(X[10:], y[10:], design, {}, spec, seed=2, frozen_weights=first.weights)
        np.testing.assert_array_equal(second.weights["identity"], first.weights["identity"])

    def test_wrong_width(self, factor_data):
        """Test that rows of the wrong length are rejected."""
        X, y = factor_data
        aug, _ = fit_augmentation(X, y, DesignSpec(name="b", layout="X"), {}, FIXED_K)
        with pytest.raises(DataError):
            build_design(np.zeros((2, 5)), aug)
