"""
Render figures from a factorAug output directory.

Reads whatever plot-ready files are present (spectrum.csv, event_study_*.csv,
ledger.csv, metrics.json) and writes PNGs next to them.

Usage: python scripts/plot_report.py OUTPUT_DIR
"""

import argparse
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)


def _read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def plot_spectrum(directory: Path) -> None:
    table = _read_csv(directory / "spectrum.csv").head(30)
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    left.plot(table["index"], table["eigenvalue"], marker="o")
    left.set_xlabel("component")
    left.set_ylabel("eigenvalue")
    left.set_title("Scree plot")
    right.plot(table["index"], table["ratio"], marker="o")
    right.set_xlabel("j")
    right.set_ylabel("eigenvalue ratio")
    fig.tight_layout()
    fig.savefig(directory / "spectrum.png", dpi=120)
    plt.close(fig)


def plot_event_study(directory: Path) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    for path in sorted(directory.glob("event_study_*.csv")):
        table = _read_csv(path)
        label = path.stem.replace("event_study_", "")
        ax.errorbar(table["offset"], table["beta"], yerr=1.96 * table["se"], marker="o", capsize=2, label=label)
    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("trading days relative to event")
    ax.set_ylabel("abnormal return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(directory / "event_study.png", dpi=120)
    plt.close(fig)


def plot_ledger(directory: Path) -> None:
    ledger = _read_csv(directory / "ledger.csv")
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(ledger["date"], ledger["cum_log2"])
    ax.set_xlabel("date")
    ax.set_ylabel("cumulative log2 net return (L+S)")
    fig.tight_layout()
    fig.savefig(directory / "ledger.png", dpi=120)
    plt.close(fig)


def plot_metrics(directory: Path) -> None:
    document = json.loads((directory / "metrics.json").read_text(encoding="utf-8"))
    designs = document["designs"]
    names = sorted(designs)
    fig, ax = plt.subplots(figsize=(max(4, len(names) * 1.2), 4))
    ax.bar(names, [designs[name]["value"] for name in names],
           yerr=[designs[name]["sd"] for name in names], capsize=3)
    ax.set_ylabel(document["metric"])
    fig.tight_layout()
    fig.savefig(directory / "metrics.png", dpi=120)
    plt.close(fig)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("directory", type=Path)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO)

    plots = {
        "spectrum.csv": plot_spectrum,
        "ledger.csv": plot_ledger,
        "metrics.json": plot_metrics,
    }
    for name, plot in plots.items():
        if (args.directory / name).exists():
            plot(args.directory)
            logger.info(f"Plotted {name}")
    if any(args.directory.glob("event_study_*.csv")):
        plot_event_study(args.directory)
        logger.info("Plotted event study")


if __name__ == '__main__':
    main()
