"""
Unit tests for decorrelated screening.
"""

import numpy as np
import pytest
from scipy import linalg
from scipy.special import expit

from factorAug.errors import DataError
from factorAug.screening import marginal_theta, resolve_loss, screen


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(5)


def planted(seed, n=500, p=200):
    """y = 3 u_5 - 2 u_17 + F gamma + noise."""
    gen = np.random.default_rng(seed)
    F = gen.standard_normal((n, 2))
    U = gen.standard_normal((n, p))
    y = 3.0 * U[:, 5] - 2.0 * U[:, 17] + F @ np.array([1.0, -0.5]) + 0.1 * gen.standard_normal(n)
    return y, F, U


class TestMarginalTheta:
    """Test the single-column fit."""

    def test_orthogonal_column(self, rng):
        """Test that u orthogonal to y and F gives theta 0."""
        Q, _ = linalg.qr(np.hstack([np.ones((30, 1)), rng.standard_normal((30, 4))]), mode="economic")
        F = Q[:, 1:3]
        y = 2.0 + Q[:, 3]
        fit = marginal_theta(y, F, Q[:, 4])
        assert fit.theta == pytest.approx(0.0, abs=1e-10)
        assert fit.converged

    def test_response_equals_column(self, rng):
        """Test that y = u gives the sample sd of u."""
        u = rng.normal(1.0, 3.0, 40)
        fit = marginal_theta(u, rng.standard_normal((40, 2)), u)
        assert fit.theta == pytest.approx(np.std(u, ddof=1), rel=1e-10)

    def test_normal_equations_oracle(self, rng):
        """Test against a dense (K + 2)-variable normal-equations solve."""
        F = rng.standard_normal((20, 2))
        u = rng.standard_normal(20)
        y = rng.standard_normal(20)
        u_std = (u - u.mean()) / np.std(u, ddof=1)
        D = np.column_stack([np.ones(20), F, u_std])
        expected = linalg.solve(D.T @ D, D.T @ y)[-1]
        assert marginal_theta(y, F, u).theta == pytest.approx(expected, abs=1e-8)

    def test_invariant_to_factor_reparameterization(self, rng):
        """Test that an invertible change of F leaves theta unchanged."""
        F = rng.standard_normal((50, 3))
        u = rng.standard_normal(50)
        y = u + F[:, 0] + rng.standard_normal(50)
        A = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        assert marginal_theta(y, F @ A, u).theta == pytest.approx(marginal_theta(y, F, u).theta, abs=1e-10)

    def test_constant_column(self, rng):
        """Test that a constant column scores 0."""
        assert marginal_theta(rng.standard_normal(10), None, np.full(10, 4.0)).theta == 0.0

    def test_logistic(self, rng):
        """Test a logistic fit recovers the sign of a planted effect."""
        u = rng.standard_normal(400)
        y = (rng.uniform(size=400) < expit(1.5 * u)).astype(float)
        fit = marginal_theta(y, rng.standard_normal((400, 2)), u, "logistic")
        assert fit.converged
        assert fit.theta > 0.5

    def test_logistic_needs_two_values(self, rng):
        """Test that logistic loss rejects a continuous response."""
        with pytest.raises(DataError):
            marginal_theta(rng.standard_normal(10), None, rng.standard_normal(10), "logistic")


class TestScreen:
    """Test top-m selection."""

    def test_keep_everything(self, rng):
        """Test that m = p keeps every index."""
        result = screen(rng.standard_normal(30), None, rng.standard_normal((30, 6)), 6)
        assert result.kept.tolist() == list(range(6))

    def test_too_many(self, rng):
        """Test that m > p is an error."""
        with pytest.raises(DataError):
            screen(rng.standard_normal(30), None, rng.standard_normal((30, 6)), 7)

    def test_tie_goes_to_lower_index(self, rng):
        """Test that identical columns rank the lower index first."""
        U = rng.standard_normal((60, 6))
        U[:, 4] = U[:, 2]
        y = U[:, 2] + 0.01 * rng.standard_normal(60)
        result = screen(y, None, U, 1)
        assert result.kept.tolist() == [2]
        assert result.theta_abs[2] == result.theta_abs[4]

    @pytest.mark.parametrize("seed", range(10))
    def test_planted_recovery(self, seed):
        """Test that both active columns land in the top 20."""
        y, F, U = planted(seed)
        kept = set(screen(y, F, U, 20).kept.tolist())
        assert {5, 17} <= kept

    def test_nested_kept_sets(self):
        """Test that top-m sets are nested."""
        y, F, U = planted(99)
        small = set(screen(y, F, U, 5).kept.tolist())
        large = set(screen(y, F, U, 30).kept.tolist())
        assert small <= large

    def test_permuting_columns(self, rng):
        """Test that permuting columns permutes theta_abs."""
        y, F, U = planted(3, n=100, p=20)
        order = rng.permutation(20)
        base = screen(y, F, U, 3).theta_abs
        np.testing.assert_allclose(screen(y, F, U[:, order], 3).theta_abs, base[order], atol=1e-12)

    def test_deterministic(self):
        """Test identical inputs give identical results."""
        y, F, U = planted(1, n=100, p=20)
        a, b = screen(y, F, U, 4), screen(y, F, U, 4)
        np.testing.assert_array_equal(a.theta_abs, b.theta_abs)
        np.testing.assert_array_equal(a.kept, b.kept)

    def test_logistic_screen(self, rng):
        """Test logistic screening finds the driving column."""
        U = rng.standard_normal((300, 8))
        y = (rng.uniform(size=300) < expit(2.0 * U[:, 3])).astype(float)
        result = screen(y, None, U, 1, "logistic")
        assert result.kept.tolist() == [3]
        assert result.loss_kind == "logistic"

    def test_to_json(self, rng):
        """Test serialization with and without the theta vector."""
        result = screen(rng.standard_normal(20), None, rng.standard_normal((20, 3)), 2)
        assert "theta_abs" in result.to_json()
        payload = result.to_json(include_theta=False)
        assert "theta_abs" not in payload
        assert payload["kept"] == result.kept.tolist()


class TestResolveLoss:
    """Test automatic loss selection."""

    def test_two_valued(self):
        """Test that a two-valued response picks logistic."""
        assert resolve_loss(np.array([0.0, 1.0, 1.0])) == "logistic"

    def test_continuous(self):
        """Test that a continuous response picks squared."""
        assert resolve_loss(np.array([0.1, 0.2, 0.3])) == "squared"

    def test_explicit(self):
        """Test that an explicit loss is kept."""
        assert resolve_loss(np.array([0.0, 1.0]), "squared") == "squared"
