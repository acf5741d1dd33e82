"""
Configuration management for factorAug.
Runtime settings come from the environment (.env); pipeline settings come
from a YAML file validated against the PipelineConfig schema.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from factorAug.augment import IDENTITY_SOURCE, DesignSpec
from factorAug.constants import (
    DEFAULT_COST_BPS,
    DEFAULT_EVENT_QUANTILE,
    DEFAULT_EXTERNAL_TIMEOUT,
    DEFAULT_FOLDS,
    DEFAULT_SCORE_THRESHOLD,
    DEFAULT_TOP_N,
)
from factorAug.errors import ConfigError
from factorAug.factors import FactorSpec
from factorAug.learners import LearnerSpec
from factorAug.screening import ScreenSpec
from factorAug.transforms import TransformSpec
from factorAug.utils import hash_payload

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)


class Settings:
    """Runtime settings read from environment variables."""

    def __init__(self):
        """Initialize settings with environment variables and validation."""
        # Logging
        self.LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
        self.LOG_FILE: str = os.getenv("LOG_FILE", "factoraug.log")

        # Outputs
        self.OUTPUT_DIRECTORY: Path = Path(os.getenv("OUTPUT_DIRECTORY", "output"))

        # Computation
        self.THREADS: int = int(os.getenv("THREADS", str(os.cpu_count() or 1)))
        self.DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", "0"))
        self.EXTERNAL_LEARNER_TIMEOUT: float = float(
            os.getenv("EXTERNAL_LEARNER_TIMEOUT", str(DEFAULT_EXTERNAL_TIMEOUT))
        )

        self._validate_required_config()

    def _validate_required_config(self) -> None:
        """Validate the runtime settings."""
        if self.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"LOG_LEVEL must be a logging level name, got {self.LOG_LEVEL}")

        if self.THREADS <= 0:
            raise ValueError("THREADS must be a positive integer")

        if self.EXTERNAL_LEARNER_TIMEOUT <= 0:
            raise ValueError("EXTERNAL_LEARNER_TIMEOUT must be positive")


# Global settings instance
settings = Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticDataSpec(_Section):
    kind: Literal["factor-regression", "interaction-signal", "screening-sparse"] = "interaction-signal"
    n: int = Field(3000, ge=4)
    p: int = Field(100, ge=2)
    binary: bool = False
    noise: float = Field(0.5, ge=0)
    seed: Optional[int] = None


class DataSpec(_Section):
    """Exactly one source: features + response CSVs, a panel CSV, or a synthetic generator."""

    features: Optional[str] = None
    response: Optional[str] = None
    panel: Optional[str] = None
    has_header: bool = True
    frequency_top: Optional[int] = Field(None, ge=1)
    synthetic: Optional[SyntheticDataSpec] = None

    @model_validator(mode="after")
    def check_source(self) -> "DataSpec":
        pair = self.features is not None or self.response is not None
        if pair and (self.features is None or self.response is None):
            raise ValueError("features and response must be given together")
        chosen = sum([pair, self.panel is not None, self.synthetic is not None])
        if chosen != 1:
            raise ValueError("give exactly one of features+response, panel or synthetic")
        return self


class LearnerConfig(LearnerSpec):
    """Learner spec plus its cross-validation settings."""

    grid: Union[Literal["standard", "fine"], List[float]] = "standard"
    folds: int = Field(DEFAULT_FOLDS, ge=2)
    time_ordered: bool = True

    def as_spec(self) -> LearnerSpec:
        return LearnerSpec(**self.model_dump(include=set(LearnerSpec.model_fields)))


class EvaluationSpec(_Section):
    mode: Literal["rolling", "static"] = "rolling"
    window: Optional[int] = Field(None, ge=2)
    stride: int = Field(1, ge=1)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    shuffle: bool = False
    repetitions: int = Field(1, ge=1)
    persist_models: bool = False
    n_jobs: Optional[int] = None

    @model_validator(mode="after")
    def check_window(self) -> "EvaluationSpec":
        if self.mode == "rolling" and self.window is None:
            raise ValueError("rolling evaluation needs a window size")
        return self


class BacktestSpec(_Section):
    scores: Optional[str] = None
    returns: Optional[str] = None
    caps: Optional[str] = None
    top_n: int = Field(DEFAULT_TOP_N, ge=1)
    threshold: float = DEFAULT_SCORE_THRESHOLD
    cost_bps: float = Field(DEFAULT_COST_BPS, ge=0)
    weighting: Literal["value", "equal"] = "value"


class EventStudySpec(_Section):
    scores: Optional[str] = None
    returns: Optional[str] = None
    quantile: float = Field(DEFAULT_EVENT_QUANTILE, gt=0, le=1)
    threshold: float = DEFAULT_SCORE_THRESHOLD


class FactorsReportSpec(_Section):
    source: str = IDENTITY_SOURCE
    top: int = Field(10, ge=1)


class PipelineConfig(_Section):
    """Top-level pipeline configuration (see README for the YAML schema)."""

    data: DataSpec
    standardize: Literal["zscore", "demean", "none"] = "zscore"
    transforms: Dict[str, TransformSpec] = Field(default_factory=dict)
    factors: FactorSpec = Field(default_factory=FactorSpec)
    designs: List[DesignSpec] = Field(default_factory=lambda: [DesignSpec(name="benchmark", layout="X")])
    benchmark: Optional[str] = None
    screen: ScreenSpec = Field(default_factory=ScreenSpec)
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    evaluation: EvaluationSpec = Field(default_factory=lambda: EvaluationSpec(window=None, mode="static"))
    backtest: BacktestSpec = Field(default_factory=BacktestSpec)
    event_study: EventStudySpec = Field(default_factory=EventStudySpec)
    factors_report: FactorsReportSpec = Field(default_factory=FactorsReportSpec)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    output_dir: str = Field(default_factory=lambda: str(settings.OUTPUT_DIRECTORY))

    @model_validator(mode="after")
    def check_references(self) -> "PipelineConfig":
        if not self.designs:
            raise ValueError("at least one design is required")
        names = [design.name for design in self.designs]
        if len(set(names)) != len(names):
            raise ValueError(f"design names must be unique, got {names}")
        for design in self.designs:
            for source in design.sources:
                if source != IDENTITY_SOURCE and source not in self.transforms:
                    raise ValueError(f"design '{design.name}' names unknown transform '{source}'")
            if design.lr and self.learner.task != "binary":
                raise ValueError(f"design '{design.name}' adds LR features, which need a binary task")
        if self.benchmark is not None and self.benchmark not in names:
            raise ValueError(f"benchmark '{self.benchmark}' is not a design name")
        report_source = self.factors_report.source
        if report_source != IDENTITY_SOURCE and report_source not in self.transforms:
            raise ValueError(f"factors_report names unknown transform '{report_source}'")
        return self

    @property
    def benchmark_design(self) -> str:
        if self.benchmark is not None:
            return self.benchmark
        for design in self.designs:
            if design.layout == "X":
                return design.name
        return self.designs[0].name

    def with_seed(self, seed: Optional[int]) -> "PipelineConfig":
        return self if seed is None else self.model_copy(update={"seed": seed})


def config_hash(config: PipelineConfig) -> str:
    """SHA-256 of the canonical JSON of the validated configuration."""
    return hash_payload(config.model_dump(mode="json"))


def _line_of(node: Optional[yaml.Node], location: Sequence[Any]) -> Optional[int]:
    """1-based line of the deepest YAML node reachable along a validation location."""
    line = None if node is None else node.start_mark.line + 1
    for part in location:
        if isinstance(node, yaml.MappingNode):
            match = next(((k, v) for k, v in node.value if k.value == str(part)), None)
            if match is None:
                break
            line = match[0].start_mark.line + 1
            node = match[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    return line


def parse_pipeline_config(text: str) -> PipelineConfig:
    """
    Parse and validate YAML text.

    Raises:
        ConfigError: invalid YAML, unknown keys or schema violations (key and line reported)
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(e, 'problem', e)}",
                          line=None if mark is None else mark.line + 1)
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping at the top level", line=1)

    try:
        return PipelineConfig.model_validate(raw)
    except ValidationError as e:
        error = e.errors()[0]
        location = [part for part in error["loc"]]
        key = ".".join(str(part) for part in location) or None
        line = _line_of(yaml.compose(text), location)
        message = "unknown key" if error["type"] == "extra_forbidden" else error["msg"]
        raise ConfigError(message, key=key, line=line)


def load_pipeline_config(path: Union[str, Path]) -> PipelineConfig:
    """Load and validate a pipeline YAML file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    config = parse_pipeline_config(path.read_text(encoding="utf-8"))
    logger.info(f"Loaded configuration {path} (hash {config_hash(config)[:12]})")
    return config
