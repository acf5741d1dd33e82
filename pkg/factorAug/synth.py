"""
Synthetic data generators with planted structure, used by tests, the
bundled configs and the `synth` command.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from factorAug.artifacts import ArtifactManager
from factorAug.constants import SYNTH_KINDS
from factorAug.errors import ConfigError
from factorAug.utils import hash_payload

logger = logging.getLogger(__name__)

EVENT_EFFECT = 0.02
EVENT_EFFECT_OFFSET = 1
EVENT_NOISE_SD = 0.001
SPARSE_ACTIVE = 5
SPARSE_COEFFICIENT = 2.0


@dataclass
class SyntheticDataset:
    kind: str
    frames: Dict[str, pd.DataFrame]
    params: Dict[str, Any] = field(default_factory=dict)


def _columns(prefix: str, count: int) -> List[str]:
    return [f"{prefix}{j}" for j in range(count)]


def factor_regression(n: int, p: int, seed: int, K: int = 3, noise: float = 0.5) -> SyntheticDataset:
    """X = F B' + U with y = F gamma + U beta + noise; the true F is emitted."""
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((n, K))
    B = rng.standard_normal((p, K))
    U = rng.standard_normal((n, p))
    X = F @ B.T + U
    gamma = rng.uniform(0.5, 1.5, K) * rng.choice([-1.0, 1.0], K)
    beta = np.zeros(p)
    beta[:3] = [1.0, -0.5, 0.5]
    y = F @ gamma + U @ beta + noise * rng.standard_normal(n)
    frames = {
        "X": pd.DataFrame(X, columns=_columns("x", p)),
        "y": pd.DataFrame({"y": y}),
        "F": pd.DataFrame(F, columns=_columns("f", K)),
    }
    params = {"n": n, "p": p, "K": K, "gamma": gamma, "beta_nonzero": beta[:3], "noise": noise}
    return SyntheticDataset("factor-regression", frames, params)


def interaction_signal(n: int, p: int, seed: int, binary: bool = False, noise: float = 0.5) -> SyntheticDataset:
    """
    Two latent factors g drive X linearly; y is quadratic in g.

    signal = g1^2 + g1 g2 - g2^2 has no linear correlation with X, but is
    spanned by the leading factors of the interaction matrix of X.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, 2))
    loadings = rng.standard_normal((p, 2))
    X = g @ loadings.T + rng.standard_normal((n, p))
    coefficients = {"g0_sq": 1.0, "g0_g1": 1.0, "g1_sq": -1.0}
    signal = (coefficients["g0_sq"] * g[:, 0] ** 2
              + coefficients["g0_g1"] * g[:, 0] * g[:, 1]
              + coefficients["g1_sq"] * g[:, 1] ** 2)
    y = signal + noise * rng.standard_normal(n)
    if binary:
        y = (y > 0).astype(np.float64)
    frames = {
        "X": pd.DataFrame(X, columns=_columns("x", p)),
        "y": pd.DataFrame({"y": y}),
        "G": pd.DataFrame(g, columns=["g0", "g1"]),
        "signal": pd.DataFrame({"signal": signal}),
    }
    params = {"n": n, "p": p, "coefficients": coefficients, "noise": noise, "binary": binary}
    return SyntheticDataset("interaction-signal", frames, params)


def screening_sparse(n: int, p: int, seed: int, K: int = 2, noise: float = 0.1) -> SyntheticDataset:
    """X = F B' + U with y = F gamma + sum over 5 active residual columns + noise."""
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((n, K))
    B = rng.standard_normal((p, K))
    U = rng.standard_normal((n, p))
    X = F @ B.T + U
    active = np.sort(rng.choice(p, SPARSE_ACTIVE, replace=False))
    signs = rng.choice([-1.0, 1.0], SPARSE_ACTIVE)
    gamma = rng.standard_normal(K)
    y = F @ gamma + U[:, active] @ (SPARSE_COEFFICIENT * signs) + noise * rng.standard_normal(n)
    frames = {
        "X": pd.DataFrame(X, columns=_columns("x", p)),
        "y": pd.DataFrame({"y": y}),
        "F": pd.DataFrame(F, columns=_columns("f", K)),
        "U": pd.DataFrame(U, columns=_columns("u", p)),
    }
    params = {"n": n, "p": p, "K": K, "active": active, "coefficients": SPARSE_COEFFICIENT * signs,
              "gamma": gamma, "noise": noise}
    return SyntheticDataset("screening-sparse", frames, params)


def event_panel(n_days: int, n_assets: int, seed: int, event_rate: float = 0.02) -> SyntheticDataset:
    """
    Two-way fixed-effects return panel with planted positive news events.

    returns = 0.02 on the event day (offset 1) + asset effect + day effect + N(0, 0.001).
    Event days carry extreme positive scores; other days score near 0.5.
    """
    rng = np.random.default_rng(seed)
    assets = np.array([f"A{i:04d}" for i in range(n_assets)])
    dates = np.arange(1, n_days + 1)
    asset_effect = rng.normal(0.0, 0.01, n_assets)
    day_effect = rng.normal(0.0, 0.01, n_days)
    events = rng.random((n_assets, n_days)) < event_rate

    returns = (asset_effect[:, None] + day_effect[None, :]
               + EVENT_NOISE_SD * rng.standard_normal((n_assets, n_days)))
    returns = returns + EVENT_EFFECT * events
    scores = 0.5 + 0.01 * rng.uniform(-1.0, 1.0, (n_assets, n_days))
    scores[events] = 0.9 + 0.05 * rng.random(int(events.sum()))

    asset_col = np.repeat(assets, n_days)
    date_col = np.tile(dates, n_assets)
    frames = {
        "returns": pd.DataFrame({"asset_id": asset_col, "date": date_col, "ret": returns.ravel()}),
        "scores": pd.DataFrame({"asset_id": asset_col, "date": date_col, "score": scores.ravel()}),
    }
    params = {"n_days": n_days, "n_assets": n_assets, "effect": EVENT_EFFECT,
              "effect_offset": EVENT_EFFECT_OFFSET, "noise_sd": EVENT_NOISE_SD,
              "n_events": int(events.sum())}
    return SyntheticDataset("event-panel", frames, params)


def portfolio_fixture() -> SyntheticDataset:
    """Three assets over two trading days with hand-checkable scores, returns and caps."""
    frames = {
        "scores": pd.DataFrame({
            "asset_id": ["A", "B", "C", "A", "B", "C"],
            "date": [1, 1, 1, 2, 2, 2],
            "score": [0.8, 0.7, 0.2, 0.9, 0.3, 0.6],
        }),
        "returns": pd.DataFrame({
            "asset_id": ["A", "B", "C", "A", "B", "C"],
            "date": [1, 1, 1, 2, 2, 2],
            "ret": [0.01, 0.02, -0.01, -0.02, 0.01, 0.03],
        }),
        "caps": pd.DataFrame({
            "asset_id": ["A", "B", "C", "A", "B", "C"],
            "date": [0, 0, 0, 1, 1, 1],
            "cap": [2.0, 1.0, 1.0, 2.0, 1.0, 1.0],
        }),
    }
    return SyntheticDataset("portfolio-fixture", frames, {"top_n": 2, "cost_bps": 13.0})


def generate(kind: str, n: int = 3000, p: int = 100, seed: int = 0, binary: bool = False,
             noise: Optional[float] = None) -> SyntheticDataset:
    """
    Build a synthetic dataset.

    For event-panel, n is the number of days and p the number of assets.

    Raises:
        ConfigError: unknown kind
    """
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind '{kind}'; choose one of {', '.join(SYNTH_KINDS)}")
    logger.info(f"Generating synthetic '{kind}' data (n={n}, p={p}, seed={seed})")
    if kind == "factor-regression":
        return factor_regression(n, p, seed, noise=0.5 if noise is None else noise)
    if kind == "interaction-signal":
        return interaction_signal(n, p, seed, binary=binary, noise=0.5 if noise is None else noise)
    if kind == "screening-sparse":
        return screening_sparse(n, p, seed, noise=0.1 if noise is None else noise)
    if kind == "event-panel":
        return event_panel(n, p, seed)
    return portfolio_fixture()


def write_synthetic(dataset: SyntheticDataset, out_dir: Union[str, Path], seed: int) -> ArtifactManager:
    """Write every frame as CSV plus params.json and manifest.json."""
    identity = {"kind": dataset.kind, "params": dataset.params}
    artifacts = ArtifactManager(out_dir, hash_payload(identity), seed)
    for name, frame in sorted(dataset.frames.items()):
        artifacts.write_csv(f"{name}.csv", frame)
    artifacts.write_json("params.json", {"kind": dataset.kind, "params": dataset.params})
    artifacts.write_manifest("synth", {"kind": dataset.kind})
    return artifacts
