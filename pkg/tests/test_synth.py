"""
Unit tests for the synthetic data generators.
"""

import json

import numpy as np
import pandas as pd
import pytest

from factorAug.errors import ConfigError
from factorAug.synth import (
    EVENT_EFFECT,
    SPARSE_ACTIVE,
    event_panel,
    factor_regression,
    generate,
    interaction_signal,
    portfolio_fixture,
    screening_sparse,
    write_synthetic,
)


class TestGenerators:
    """Test the individual generators."""

    def test_factor_regression_shapes(self):
        """Test frame shapes and the emitted true factors."""
        dataset = factor_regression(60, 8, seed=1)
        assert dataset.frames["X"].shape == (60, 8)
        assert dataset.frames["y"].shape == (60, 1)
        assert dataset.frames["F"].shape == (60, 3)
        assert dataset.params["K"] == 3

    def test_deterministic(self):
        """Test that equal seeds give equal data and different seeds do not."""
        a = interaction_signal(40, 5, seed=3)
        b = interaction_signal(40, 5, seed=3)
        c = interaction_signal(40, 5, seed=4)
        pd.testing.assert_frame_equal(a.frames["X"], b.frames["X"])
        assert not np.allclose(a.frames["X"].to_numpy(), c.frames["X"].to_numpy())

    def test_interaction_signal_binary(self):
        """Test that the binary variant emits 0/1 labels."""
        dataset = interaction_signal(100, 4, seed=0, binary=True)
        assert set(np.unique(dataset.frames["y"]["y"])) <= {0.0, 1.0}
        assert dataset.params["binary"] is True

    def test_interaction_signal_formula(self):
        """Test that the stored signal is the planted quadratic in the latent factors."""
        dataset = interaction_signal(50, 4, seed=2)
        g = dataset.frames["G"].to_numpy()
        expected = g[:, 0] ** 2 + g[:, 0] * g[:, 1] - g[:, 1] ** 2
        np.testing.assert_allclose(dataset.frames["signal"]["signal"], expected)

    def test_screening_sparse_actives(self):
        """Test that the active set is sorted, distinct and explains y with the factors."""
        dataset = screening_sparse(80, 30, seed=5, noise=0.0)
        active = dataset.params["active"]
        assert len(active) == SPARSE_ACTIVE
        assert list(active) == sorted(set(active.tolist()))
        F = dataset.frames["F"].to_numpy()
        U = dataset.frames["U"].to_numpy()
        y = dataset.frames["y"]["y"].to_numpy()
        rebuilt = F @ dataset.params["gamma"] + U[:, active] @ dataset.params["coefficients"]
        np.testing.assert_allclose(y, rebuilt, atol=1e-12)

    def test_event_panel_layout(self):
        """Test long-format panels and the planted effect size."""
        dataset = event_panel(30, 10, seed=0)
        returns = dataset.frames["returns"]
        scores = dataset.frames["scores"]
        assert len(returns) == 300
        assert list(returns.columns) == ["asset_id", "date", "ret"]
        assert list(scores.columns) == ["asset_id", "date", "score"]
        assert dataset.params["effect"] == EVENT_EFFECT
        assert scores["score"].between(0.0, 1.0).all()

    def test_event_panel_scores_mark_events(self):
        """Test that event days carry the extreme scores."""
        dataset = event_panel(50, 20, seed=1, event_rate=0.05)
        high = (dataset.frames["scores"]["score"] >= 0.9).sum()
        assert high == dataset.params["n_events"]

    def test_portfolio_fixture(self):
        """Test the hand-checkable portfolio fixture."""
        dataset = portfolio_fixture()
        assert dataset.params == {"top_n": 2, "cost_bps": 13.0}
        assert set(dataset.frames) == {"scores", "returns", "caps"}
        assert len(dataset.frames["scores"]) == 6


class TestGenerate:
    """Test the generate dispatcher."""

    @pytest.mark.parametrize("kind", ["factor-regression", "interaction-signal", "screening-sparse"])
    def test_dispatch(self, kind):
        """Test that each matrix kind is produced with the requested shape."""
        dataset = generate(kind, n=30, p=6, seed=0)
        assert dataset.kind == kind
        assert dataset.frames["X"].shape == (30, 6)

    def test_event_panel_dimensions(self):
        """Test that n and p mean days and assets for the event panel."""
        dataset = generate("event-panel", n=12, p=3, seed=0)
        assert dataset.params["n_days"] == 12
        assert dataset.params["n_assets"] == 3

    def test_unknown_kind(self):
        """Test that an unknown kind is a config error."""
        with pytest.raises(ConfigError, match="unknown synthetic kind"):
            generate("nonsense")


class TestWriteSynthetic:
    """Test writing a dataset to disk."""

    def test_files(self, tmp_path):
        """Test CSV frames, params.json and the manifest."""
        dataset = generate("factor-regression", n=20, p=4, seed=9)
        artifacts = write_synthetic(dataset, tmp_path, seed=9)
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "F.csv", "X.csv", "manifest.json", "params.json", "y.csv"]
        params = json.loads((tmp_path / "params.json").read_text())
        assert params["kind"] == "factor-regression"
        assert params["seed"] == 9
        assert params["config_hash"] == artifacts.config_hash
        X = pd.read_csv(tmp_path / "X.csv", comment="#")
        assert X.shape == (20, 4)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert "X.csv" in manifest["files"]

    def test_same_seed_same_hash(self, tmp_path):
        """Test that rewriting the same dataset gives the same hash."""
        first = write_synthetic(generate("screening-sparse", n=20, p=8, seed=1), tmp_path / "a", seed=1)
        second = write_synthetic(generate("screening-sparse", n=20, p=8, seed=1), tmp_path / "b", seed=1)
        assert first.config_hash == second.config_hash
        assert (tmp_path / "a" / "y.csv").read_text() == (tmp_path / "b" / "y.csv").read_text()
