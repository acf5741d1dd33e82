"""
Evaluation harness: rolling-window and static splits, out-of-sample R^2
and classification error, and the end-to-end pipeline over all designs.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from factorAug.artifacts import ArtifactManager
from factorAug.augment import AugmentedDesign, DesignSpec, FittedAugmentation, build_design, fit_augmentation
from factorAug.config import PipelineConfig, settings
from factorAug.errors import DataError, FactorAugError, NumericalError, PipelineStageError
from factorAug.finance import scores_from_probabilities, scores_from_regression
from factorAug.learners import FittedLearner, cross_validate, expand_grid, fit_learner, learner_state, predict, predict_labels
from factorAug.matrixio import Matrix, apply_standardization, load_csv, load_panel_csv, standardize, top_frequency_columns
from factorAug.synth import generate
from factorAug.utils import derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Window:
    """One train/test split; indices are 0-based row positions."""

    index: int
    train: np.ndarray
    test: np.ndarray


@dataclass(frozen=True, eq=False)
class WindowPlan:
    n_total: int
    m: int
    h: int
    windows: Tuple[Window, ...]

    def test_blocks(self) -> List[List[int]]:
        """Test blocks as 1-based positions."""
        return [[int(i) + 1 for i in w.test] for w in self.windows]


def plan_windows(n_total: int, m: int, h: int) -> WindowPlan:
    """
    Rolling windows: train on the m rows before s, test on [s, s+h), s = m, m+h, ...

    The last test block may be shorter than h.

    Raises:
        DataError: m >= n_total, m < 2 or h < 1
    """
    if m < 2:
        raise DataError(f"Window size must be >= 2, got {m}")
    if h < 1:
        raise DataError(f"Stride must be >= 1, got {h}")
    if m >= n_total:
        raise DataError(f"Window size {m} leaves no test rows out of {n_total}")
    windows = []
    for index, start in enumerate(range(m, n_total, h)):
        windows.append(Window(index, np.arange(start - m, start), np.arange(start, min(start + h, n_total))))
    return WindowPlan(n_total, m, h, tuple(windows))


def plan_static(n_total: int, test_fraction: float, shuffle: bool = False, seed: int = 0) -> WindowPlan:
    """A single split holding out ceil(test_fraction * n) rows (the last ones unless shuffled)."""
    n_test = math.ceil(test_fraction * n_total)
    if n_test < 1 or n_test >= n_total - 1:
        raise DataError(f"Test fraction {test_fraction} gives an unusable split of {n_total} rows")
    order = np.random.default_rng(seed).permutation(n_total) if shuffle else np.arange(n_total)
    train, test = np.sort(order[:-n_test]), np.sort(order[-n_test:])
    return WindowPlan(n_total, len(train), n_test, (Window(0, train, test),))


def oos_r2_rolling(y_true: np.ndarray, y_pred: np.ndarray, y_bar: np.ndarray) -> float:
    """
    1 - sum (y - y_hat)^2 / sum (y - y_bar)^2 with per-point training means.

    Sums use math.fsum, so row order and memory layout do not change the value.

    Raises:
        NumericalError: 'constant-baseline degenerate' when the denominator is 0
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    y_bar = np.broadcast_to(np.asarray(y_bar, dtype=np.float64), y_true.shape)
    if y_true.shape != y_pred.shape:
        raise DataError(f"Length mismatch: {y_true.shape[0]} truths, {y_pred.shape[0]} predictions")
    denominator = math.fsum((y_true - y_bar) ** 2)
    if denominator == 0:
        raise NumericalError("constant-baseline degenerate: sum of squares around the baseline is 0")
    return 1.0 - math.fsum((y_true - y_pred) ** 2) / denominator


def oos_r2_static(y_true: np.ndarray, y_pred: np.ndarray, train_mean: float) -> float:
    return oos_r2_rolling(y_true, y_pred, np.full(np.shape(y_true), float(train_mean)))


def classification_error(labels_true: np.ndarray, labels_pred: np.ndarray) -> float:
    """Fraction of mismatched labels."""
    labels_true = np.asarray(labels_true)
    labels_pred = np.asarray(labels_pred)
    if labels_true.size == 0:
        raise DataError("Classification error of an empty sample is undefined")
    if labels_true.shape != labels_pred.shape:
        raise DataError(f"Length mismatch: {labels_true.size} truths, {labels_pred.size} predictions")
    return float(np.mean(labels_true != labels_pred))


@dataclass(frozen=True, eq=False)
class Dataset:
    X: Matrix
    y: np.ndarray
    records: Optional[pd.DataFrame] = None


def load_dataset(config: PipelineConfig) -> Dataset:
    """Read (or generate) the features and responses named by the config."""
    data = config.data
    records = None
    if data.panel is not None:
        panel = load_panel_csv(data.panel)
        order = np.argsort(panel.records["date"].to_numpy(), kind="stable")
        records = panel.records.iloc[order].reset_index(drop=True)
        X = panel.features.take_rows(order)
        y = records["y"].to_numpy(dtype=np.float64)
    elif data.synthetic is not None:
        spec = data.synthetic
        dataset = generate(spec.kind, spec.n, spec.p, config.seed if spec.seed is None else spec.seed,
                           binary=spec.binary, noise=spec.noise)
        X = Matrix(dataset.frames["X"].to_numpy(), tuple(dataset.frames["X"].columns))
        y = dataset.frames["y"]["y"].to_numpy(dtype=np.float64)
    else:
        X = load_csv(data.features, data.has_header)
        response = load_csv(data.response, data.has_header)
        if response.cols != 1:
            raise DataError(f"{data.response}: expected one response column, got {response.cols}")
        if response.rows != X.rows:
            raise DataError(f"{data.response}: {response.rows} responses for {X.rows} feature rows")
        y = response.data[:, 0].copy()

    if data.frequency_top is not None:
        X = X.take_columns(top_frequency_columns(X, data.frequency_top))
    logger.info(f"Dataset: n={X.rows}, p={X.cols}")
    return Dataset(X, y, records)


@dataclass(frozen=True, eq=False)
class WindowResult:
    index: int
    test_rows: np.ndarray
    predictions: np.ndarray
    truths: np.ndarray
    baseline: float
    augmentation: FittedAugmentation
    model: FittedLearner
    design: AugmentedDesign
    cv_table: pd.DataFrame
    scores: Optional[np.ndarray] = None

    @property
    def sse(self) -> float:
        return math.fsum((self.truths - self.predictions) ** 2)

    @property
    def sst(self) -> float:
        return math.fsum((self.truths - self.baseline) ** 2)


def _stage(window: int, stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineStageError:
        raise
    except Exception as e:
        raise PipelineStageError(window, stage, e) from e


def evaluate_window(X: np.ndarray, y: np.ndarray, window: Window, config: PipelineConfig,
                    design: DesignSpec, seed: int,
                    frozen_weights: Optional[Dict[str, np.ndarray]] = None) -> WindowResult:
    """
    Fit everything on the window's training rows and predict its test rows.

    Only X[window.train], y[window.train] and X[window.test] are read.
    """
    w = window.index
    x_train, y_train = X[window.train], y[window.train]
    x_test, y_test = X[window.test], y[window.test]

    if config.standardize == "none":
        centers, scales = np.zeros(X.shape[1]), np.ones(X.shape[1])
    else:
        _, centers, scales = _stage(w, "standardize", standardize, x_train, config.standardize)
    x_train_s = apply_standardization(x_train, centers, scales)
    x_test_s = apply_standardization(x_test, centers, scales)

    aug, train_design = _stage(
        w, "augment", fit_augmentation, x_train_s, y_train, design, config.transforms,
        config.factors, config.screen, seed, frozen_weights,
    )
    Q = train_design.assembled.data

    base_spec = config.learner.as_spec().model_copy(update={"seed": derive_seed(seed, config.learner.seed)})
    grid = expand_grid(base_spec, config.learner.grid)
    cv = _stage(w, "cross-validate", cross_validate, Q, y_train, grid, config.learner.folds,
                config.learner.time_ordered, seed)
    model = _stage(w, "fit", fit_learner, Q, y_train, cv.best)

    test_design = _stage(w, "predict", build_design, x_test_s, aug)
    task = config.learner.task
    scores = None
    if task == "regression":
        predictions = _stage(w, "predict", predict, model, test_design.assembled.data)
    else:
        predictions = _stage(w, "predict", predict_labels, model, test_design.assembled.data)
        if task == "binary":
            scores = _stage(w, "predict", predict, model, test_design.assembled.data)

    logger.info(f"Window {w} ({design.name}): trained on {len(window.train)} rows, "
                f"predicted {len(window.test)}, penalty {cv.best.penalty:g}")
    return WindowResult(w, window.test, np.asarray(predictions, dtype=np.float64), y_test,
                        float(y_train.mean()), aug, model, train_design, cv.table, scores)


@dataclass
class EvalReport:
    """Metric of one design in one repetition, with everything needed to recompute it."""

    design: str
    metric: str
    value: float
    seed: int
    per_window: List[Dict[str, Any]]
    rows: np.ndarray
    predictions: np.ndarray
    truths: np.ndarray
    baselines: np.ndarray
    scores: Optional[np.ndarray] = None

    def to_json(self) -> Dict[str, Any]:
        return {"design": self.design, "metric": self.metric, "value": self.value,
                "seed": self.seed, "per_window": self.per_window}


def compute_metric(metric: str, truths: np.ndarray, predictions: np.ndarray, baselines: np.ndarray) -> float:
    if metric == "err":
        return classification_error(truths, predictions)
    return oos_r2_rolling(truths, predictions, baselines)


def _report(design: DesignSpec, metric: str, seed: int, results: List[WindowResult]) -> EvalReport:
    rows = np.concatenate([r.test_rows for r in results])
    predictions = np.concatenate([r.predictions for r in results])
    truths = np.concatenate([r.truths for r in results])
    baselines = np.concatenate([np.full(len(r.test_rows), r.baseline) for r in results])
    scores = None
    if all(r.scores is not None for r in results):
        scores = np.concatenate([r.scores for r in results])

    per_window = []
    for r in results:
        entry = {"window": r.index, "n_test": int(len(r.test_rows)), "baseline": r.baseline,
                 "penalty": float(r.model.spec.penalty), "width": r.design.width}
        if metric == "err":
            entry["err"] = classification_error(r.truths, r.predictions)
        else:
            entry["sse"] = r.sse
            entry["sst"] = r.sst
        per_window.append(entry)
    value = compute_metric(metric, truths, predictions, baselines)
    return EvalReport(design.name, metric, value, seed, per_window, rows, predictions, truths, baselines, scores)


def _persist_window(artifacts: ArtifactManager, design: DesignSpec, repetition: int, result: WindowResult) -> None:
    aug = result.augmentation
    arrays = {f"learner_{k}": v for k, v in learner_state(result.model).items()}
    arrays["x_center"] = aug.x_center
    if aug.loading is not None:
        arrays["loading"] = aug.loading
    if aug.f0_loading is not None:
        arrays["f0_loading"] = aug.f0_loading
    if aug.residual_keep is not None:
        arrays["residual_keep"] = aug.residual_keep
    sources = list(aug.sources) + ([aug.f0_source] if aug.f0_source is not None else [])
    for i, source in enumerate(sources):
        arrays.update({f"source{i}_transform_{k}": v for k, v in source.transform.state().items()})
        arrays.update({f"source{i}_factors_{k}": v for k, v in source.model.state().items()})
    meta = {
        "design": design.name,
        "layout": aug.layout,
        "window": result.index,
        "repetition": repetition,
        "sources": [{"name": s.name, "transform": s.transform.spec.model_dump(mode="json"),
                     "mode": s.model.mode, "K": s.model.K} for s in sources],
        "learner": result.model.spec.model_dump(mode="json"),
        "provenance": result.design.provenance_sidecar(),
    }
    artifacts.write_bundle(f"{design.name}_r{repetition}_w{result.index:04d}", arrays, meta, subdir="models")


@dataclass
class PipelineResult:
    metric: str
    benchmark: str
    reports: Dict[str, List[EvalReport]] = field(default_factory=dict)

    def summary(self) -> Dict[str, Dict[str, Any]]:
        """Mean / sd over repetitions per design, plus the ratio to the benchmark mean."""
        means = {name: float(np.mean([r.value for r in reps])) for name, reps in self.reports.items()}
        reference = means.get(self.benchmark)
        out = {}
        for name, reps in self.reports.items():
            values = [r.value for r in reps]
            ratio = None
            if reference is not None and reference != 0:
                ratio = means[name] / reference
            out[name] = {
                "value": means[name],
                "sd": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
                "values": values,
                "ratio_to_benchmark": ratio,
            }
        return out


def _metric_for(config: PipelineConfig) -> str:
    if config.learner.task != "regression":
        return "err"
    return "oos_r2_rolling" if config.evaluation.mode == "rolling" else "oos_r2"


def _run_design(X: np.ndarray, y: np.ndarray, plan: WindowPlan, config: PipelineConfig,
                design: DesignSpec, seed: int, n_jobs: int) -> List[WindowResult]:
    windows = list(plan.windows)
    frozen = None
    first: List[WindowResult] = []
    if config.factors.freeze_w or (design.factors is not None and design.factors.freeze_w):
        head = evaluate_window(X, y, windows[0], config, design, derive_seed(seed, 0))
        frozen = head.augmentation.weights
        first, windows = [head], windows[1:]

    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(evaluate_window)(X, y, window, config, design, derive_seed(seed, window.index), frozen)
        for window in windows
    )
    return first + list(results)


def run_pipeline(config: PipelineConfig, dataset: Optional[Dataset] = None,
                 artifacts: Optional[ArtifactManager] = None, n_jobs: Optional[int] = None) -> PipelineResult:
    """
    Evaluate every configured design over the window plan, for every repetition.

    Repetition r uses seed config.seed + r; window w uses a seed derived from both.

    Raises:
        PipelineStageError: a stage failed (window and stage named)
    """
    dataset = dataset or load_dataset(config)
    X, y = dataset.X.data, dataset.y
    n_jobs = n_jobs or config.evaluation.n_jobs or settings.THREADS
    evaluation = config.evaluation
    metric = _metric_for(config)
    result = PipelineResult(metric, config.benchmark_design)

    for repetition in range(evaluation.repetitions):
        seed = config.seed + repetition
        if evaluation.mode == "rolling":
            plan = plan_windows(X.shape[0], evaluation.window, evaluation.stride)
        else:
            plan = plan_static(X.shape[0], evaluation.test_fraction, evaluation.shuffle, seed)
        logger.info(f"Repetition {repetition} (seed {seed}): {len(plan.windows)} window(s)")

        for design in config.designs:
            windows = _run_design(X, y, plan, config, design, seed, n_jobs)
            report = _report(design, metric, seed, windows)
            result.reports.setdefault(design.name, []).append(report)
            logger.info(f"Design '{design.name}' repetition {repetition}: {metric} = {report.value:.6g}")
            if artifacts is not None and evaluation.persist_models:
                for window_result in windows:
                    _persist_window(artifacts, design, repetition, window_result)

    if artifacts is not None:
        write_reports(result, config, dataset, artifacts)
    return result


def write_reports(result: PipelineResult, config: PipelineConfig, dataset: Dataset,
                  artifacts: ArtifactManager) -> None:
    """metrics.json, one metrics/predictions file per design, and panel scores."""
    artifacts.write_json("metrics.json", {
        "metric": result.metric,
        "benchmark": result.benchmark,
        "repetitions": config.evaluation.repetitions,
        "designs": result.summary(),
    })
    for name, reports in result.reports.items():
        artifacts.write_json(f"metrics_{name}.json", {
            "metric": result.metric,
            "value": float(np.mean([r.value for r in reports])),
            "per_window": reports[0].per_window,
            "repetitions": [r.to_json() for r in reports],
        })
        frames = []
        for repetition, report in enumerate(reports):
            frames.append(pd.DataFrame({
                "repetition": repetition,
                "row": report.rows,
                "y_true": report.truths,
                "y_pred": report.predictions,
                "y_bar": report.baselines,
            }))
        artifacts.write_csv(f"predictions_{name}.csv", pd.concat(frames, ignore_index=True))

        if dataset.records is not None:
            first = reports[0]
            records = dataset.records.iloc[first.rows]
            if config.learner.task == "regression":
                scores = scores_from_regression(records["asset_id"], records["date"],
                                                first.predictions, first.baselines)
            elif first.scores is not None:
                scores = scores_from_probabilities(records["asset_id"], records["date"], first.scores)
            else:
                continue
            artifacts.write_csv(f"scores_{name}.csv", scores)


def recompute_metric(predictions: pd.DataFrame, metric: str, repetition: int = 0) -> float:
    """Metric from a persisted predictions CSV (same formula as the report)."""
    rows = predictions.loc[predictions["repetition"] == repetition]
    columns = [np.ascontiguousarray(rows[c].to_numpy(dtype=np.float64)) for c in ("y_true", "y_pred", "y_bar")]
    return compute_metric(metric, *columns)


def describe_failure(error: FactorAugError) -> str:
    if isinstance(error, PipelineStageError):
        return f"Pipeline failed in window {error.window} at stage '{error.stage}': {error.cause}"
    return str(error)
