"""
Command-line surface: factors, run, backtest, event-study, synth and screen.
"""

import argparse
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from factorAug.artifacts import ArtifactManager
from factorAug.augment import DesignSpec, IDENTITY_SOURCE, fit_augmentation
from factorAug.config import PipelineConfig, config_hash, load_pipeline_config, settings
from factorAug.constants import (
    BACKTEST_SUMMARY_MESSAGE,
    DEFAULT_COST_BPS,
    EXIT_OK,
    EXIT_UNEXPECTED,
    FACTORS_SUMMARY_MESSAGE,
    NO_POSITIONS_MESSAGE,
    RUN_SUMMARY_MESSAGE,
    SYNTH_KINDS,
)
from factorAug.errors import ConfigError, FactorAugError
from factorAug.evaluate import describe_failure, load_dataset, run_pipeline
from factorAug.factors import eigen_ratio_bounds, eigen_spectrum, fit_factor_model
from factorAug.finance import event_study_fit, leg_summary, load_keyed_csv, portfolio_backtest, select_events
from factorAug.matrixio import standardize
from factorAug.synth import generate, write_synthetic
from factorAug.transforms import TransformSpec, fit_transform

logger = logging.getLogger(__name__)


def spectrum_table(values: np.ndarray) -> pd.DataFrame:
    """index, eigenvalue, ratio (lambda_j / lambda_{j+1}) and cumulative variance explained."""
    values = np.asarray(values, dtype=np.float64)
    following = np.append(values[1:], np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(following > 0, values / following, np.nan)
    total = values.sum()
    cumulative = np.cumsum(values) / total if total > 0 else np.zeros_like(values)
    return pd.DataFrame({
        "index": np.arange(1, values.size + 1),
        "eigenvalue": values,
        "ratio": ratio,
        "cum_var_explained": cumulative,
    })


def _format_metric(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


class FactorAugCLI:
    """Command handlers; each returns the process exit code."""

    def __init__(self, threads: Optional[int] = None):
        self.threads = threads or settings.THREADS

    def _load(self, args: argparse.Namespace) -> PipelineConfig:
        if not args.config:
            raise ConfigError("this command needs --config")
        config = load_pipeline_config(args.config).with_seed(args.seed)
        if args.out:
            config = config.model_copy(update={"output_dir": args.out})
        return config

    def _artifacts(self, config: PipelineConfig) -> ArtifactManager:
        return ArtifactManager(config.output_dir, config_hash(config), config.seed)

    def factors_command(self, args: argparse.Namespace) -> int:
        """Scree report and fitted factor model of one transform of the data."""
        config = self._load(args)
        if args.dry_run:
            logger.info(f"Configuration {args.config} is valid")
            return EXIT_OK
        report = config.factors_report
        dataset = load_dataset(config)
        x = dataset.X.data
        if config.standardize != "none":
            x = standardize(x, config.standardize)[0].data
        x = x - x.mean(axis=0)

        spec = config.transforms.get(report.source, TransformSpec(kind="identity"))
        transform = fit_transform(spec, x, dataset.y)
        Z = transform.apply(x)
        spectrum = eigen_spectrum(Z)
        model = fit_factor_model(Z, config.factors, seed=config.seed)
        k_min, k_max = eigen_ratio_bounds(spectrum.rank_bound, config.factors.k_min, config.factors.k_max)

        artifacts = self._artifacts(config)
        table = spectrum_table(spectrum.values)
        artifacts.write_csv("spectrum.csv", table)
        artifacts.write_json("factors.json", {
            "source": report.source,
            "mode": model.mode,
            "K": model.K,
            "k_min": k_min,
            "k_max": k_max,
            "n": int(Z.shape[0]),
            "p": int(Z.shape[1]),
            "eigenvalues": table["eigenvalue"].head(report.top).tolist(),
        })
        arrays = {f"factors_{k}": v for k, v in model.state().items()}
        arrays.update({f"transform_{k}": v for k, v in transform.state().items()})
        artifacts.write_bundle("factor_model", arrays, {
            "source": report.source,
            "transform": spec.model_dump(mode="json"),
            "mode": model.mode,
            "K": model.K,
        })
        artifacts.write_manifest("factors")

        top = ", ".join(f"{v:.4g}" for v in spectrum.values[:report.top])
        print(FACTORS_SUMMARY_MESSAGE.format(
            source=report.source, n=Z.shape[0], p=Z.shape[1], mode=model.mode,
            k_min=k_min, k_max=k_max, k=model.K, top=top,
            files=", ".join(artifacts.list_artifacts()),
        ))
        return EXIT_OK

    def run_command(self, args: argparse.Namespace) -> int:
        """Run the evaluation pipeline and write metrics and predictions."""
        config = self._load(args)
        if args.dry_run:
            logger.info(f"Configuration {args.config} is valid ({len(config.designs)} design(s))")
            return EXIT_OK
        artifacts = self._artifacts(config)
        result = run_pipeline(config, artifacts=artifacts, n_jobs=self.threads)
        artifacts.write_manifest("run", {"metric": result.metric})

        summary = result.summary()
        lines = []
        for name, entry in summary.items():
            ratio = entry["ratio_to_benchmark"]
            ratio_text = "" if ratio is None else f" (x{ratio:.3f} vs {result.benchmark})"
            lines.append(f"  {name}: {result.metric} = {entry['value']:.6g} +/- {entry['sd']:.3g}{ratio_text}")
        print(RUN_SUMMARY_MESSAGE.format(
            n_designs=len(summary), repetitions=config.evaluation.repetitions,
            lines="\n".join(lines), path=Path(config.output_dir) / "metrics.json",
        ))
        return EXIT_OK

    def backtest_command(self, args: argparse.Namespace) -> int:
        """Long-short backtest of a score file."""
        config = self._load(args)
        spec = config.backtest
        if spec.scores is None or spec.returns is None:
            raise ConfigError("backtest needs scores and returns files", key="backtest")
        if spec.weighting == "value" and spec.caps is None:
            raise ConfigError("value weighting needs a caps file", key="backtest.caps")
        if args.dry_run:
            return EXIT_OK
        cost_bps = spec.cost_bps if args.cost_bps is None else args.cost_bps

        scores = load_keyed_csv(spec.scores, "score")
        returns = load_keyed_csv(spec.returns, "ret")
        caps = load_keyed_csv(spec.caps, "cap") if spec.caps is not None else None
        ledger = portfolio_backtest(scores, returns, caps, top_n=spec.top_n, threshold=spec.threshold,
                                    cost_bps=cost_bps, weighting=spec.weighting)

        artifacts = self._artifacts(config)
        ledger_path = artifacts.write_csv("ledger.csv", ledger.daily)
        artifacts.write_csv("holdings.csv", ledger.holdings)
        opened = int(ledger.daily[["n_long", "n_short"]].to_numpy().sum()) if not ledger.daily.empty else 0
        legs = leg_summary(ledger) if opened else {label: {"APR": None, "SR": None} for label in ("L", "S", "L+S")}
        artifacts.write_json("backtest.json", {
            "cost_bps": cost_bps,
            "top_n": spec.top_n,
            "weighting": spec.weighting,
            "n_days": int(len(ledger.daily)),
            "APR": legs["L+S"]["APR"],
            "SR": legs["L+S"]["SR"],
            "legs": legs,
            "no_positions": not opened,
        })
        artifacts.write_manifest("backtest")

        if not opened:
            print(NO_POSITIONS_MESSAGE)
            return EXIT_OK
        print(BACKTEST_SUMMARY_MESSAGE.format(
            n_days=len(ledger.daily), cost_bps=cost_bps,
            ls_apr=_format_metric(legs["L+S"]["APR"]), ls_sr=_format_metric(legs["L+S"]["SR"]),
            l_apr=_format_metric(legs["L"]["APR"]), l_sr=_format_metric(legs["L"]["SR"]),
            s_apr=_format_metric(legs["S"]["APR"]), s_sr=_format_metric(legs["S"]["SR"]),
            path=ledger_path,
        ))
        return EXIT_OK

    def event_study_command(self, args: argparse.Namespace) -> int:
        """Fixed-effects event study, run separately for positive and negative events."""
        config = self._load(args)
        spec = config.event_study
        if spec.scores is None or spec.returns is None:
            raise ConfigError("event study needs scores and returns files", key="event_study")
        if args.dry_run:
            return EXIT_OK

        scores = load_keyed_csv(spec.scores, "score")
        returns = load_keyed_csv(spec.returns, "ret")
        events = select_events(scores, spec.quantile, spec.threshold)
        artifacts = self._artifacts(config)
        artifacts.write_csv("events.csv", events)

        for sign, label in ((1, "positive"), (-1, "negative")):
            subset = events.loc[events["sign"] == sign]
            if subset.empty:
                logger.warning(f"No {label} events selected; skipping")
                continue
            fit = event_study_fit(returns, subset)
            artifacts.write_csv(f"event_study_{label}.csv", fit.to_frame())
            artifacts.write_json(f"event_study_{label}.json", {
                "sign": sign,
                "n_events": int(len(subset)),
                "offsets": list(fit.offsets),
                "beta": fit.beta.tolist(),
                "se": fit.se.tolist(),
                "n_obs": fit.n_obs,
                "n_assets": fit.n_assets,
                "n_dates": fit.n_dates,
                "dof": fit.dof,
                "sigma2": fit.sigma2,
            })
            print(f"{label} events: {len(subset)}, beta by offset written to event_study_{label}.csv")
        artifacts.write_manifest("event-study")
        return EXIT_OK

    def synth_command(self, args: argparse.Namespace) -> int:
        """Write a synthetic dataset."""
        if args.kind not in SYNTH_KINDS:
            raise ConfigError(f"unknown synthetic kind '{args.kind}'; choose one of {', '.join(SYNTH_KINDS)}")
        seed = settings.DEFAULT_SEED if args.seed is None else args.seed
        out = args.out or str(settings.OUTPUT_DIRECTORY / args.kind)
        if args.dry_run:
            return EXIT_OK
        dataset = generate(args.kind, n=args.n, p=args.p, seed=seed, binary=args.binary)
        artifacts = write_synthetic(dataset, out, seed)
        print(f"Wrote {args.kind} data to {out}: {', '.join(artifacts.list_artifacts())}")
        return EXIT_OK

    def screen_command(self, args: argparse.Namespace) -> int:
        """Screen the residual block of one design on the full dataset."""
        config = self._load(args)
        design = self._screen_design(config, args.design)
        if args.dry_run:
            return EXIT_OK
        dataset = load_dataset(config)
        x = dataset.X.data
        if config.standardize != "none":
            x = standardize(x, config.standardize)[0].data
        screen_spec = config.screen.model_copy(update={"enabled": True})
        aug, _ = fit_augmentation(x, dataset.y, design, config.transforms, config.factors,
                                  screen_spec, seed=config.seed)
        result = aug.screen_result

        artifacts = self._artifacts(config)
        payload = result.to_json(include_theta=args.with_theta)
        payload.update({"design": design.name, "m": int(result.kept.size)})
        if dataset.X.col_names is not None:
            payload["kept_names"] = [dataset.X.col_names[j] for j in result.kept]
        artifacts.write_json("screen.json", payload)
        artifacts.write_manifest("screen")
        print(f"Kept {result.kept.size} of {result.theta_abs.size} columns ({result.loss_kind} loss)")
        return EXIT_OK

    @staticmethod
    def _screen_design(config: PipelineConfig, name: Optional[str]) -> DesignSpec:
        if name is not None:
            for design in config.designs:
                if design.name == name:
                    return design
            raise ConfigError(f"no design named '{name}'", key="designs")
        for design in config.designs:
            if design.layout != "X":
                return design
        return DesignSpec(name="screen", layout="F_U", sources=[IDENTITY_SOURCE])

    def error_handler(self, error: Exception) -> int:
        """Log an error and return its exit code."""
        if isinstance(error, FactorAugError):
            logger.error(describe_failure(error))
            return error.exit_code
        logger.error(f"Unexpected error: {error}", exc_info=error)
        return EXIT_UNEXPECTED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factoraug", description="Factor augmentation pipelines")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_command(name: str, help_text: str, needs_config: bool = True) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=needs_config, help="Pipeline YAML file")
        sub.add_argument("--seed", type=int, default=None, help="Override the config seed")
        sub.add_argument("--threads", type=int, default=None, help="Parallel workers (default: all cores)")
        sub.add_argument("--out", default=None, help="Output directory")
        sub.add_argument("--dry-run", action="store_true", help="Validate inputs without computing")
        return sub

    add_command("factors", "Eigenvalue spectrum and factor model of one transform")
    add_command("run", "Run the evaluation pipeline")
    backtest = add_command("backtest", "Long-short portfolio backtest")
    backtest.add_argument("--cost-bps", type=float, default=None,
                          help=f"Round-trip cost in basis points (default {DEFAULT_COST_BPS:g})")
    add_command("event-study", "Fixed-effects event study of extreme scores")
    synth = add_command("synth", "Write a synthetic dataset", needs_config=False)
    synth.add_argument("kind", help=f"One of {', '.join(SYNTH_KINDS)}")
    synth.add_argument("--n", type=int, default=3000, help="Rows (days for event-panel)")
    synth.add_argument("--p", type=int, default=100, help="Columns (assets for event-panel)")
    synth.add_argument("--binary", action="store_true", help="Binary response (interaction-signal)")
    screen = add_command("screen", "Marginal screening of a design's residual block")
    screen.add_argument("--design", default=None, help="Design whose residual is screened")
    screen.add_argument("--with-theta", action="store_true", help="Include every |theta| in screen.json")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch the command and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    cli = FactorAugCLI(threads=args.threads)
    handlers: Dict[str, Callable[[argparse.Namespace], int]] = {
        "factors": cli.factors_command,
        "run": cli.run_command,
        "backtest": cli.backtest_command,
        "event-study": cli.event_study_command,
        "synth": cli.synth_command,
        "screen": cli.screen_command,
    }
    logger.info(f"Running '{args.command}'")
    try:
        return handlers[args.command](args)
    except Exception as e:
        return cli.error_handler(e)
