"""
Sentiment scores, event studies with asset and date fixed effects, and
long-short portfolio backtests with transaction costs.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from factorAug.constants import (
    DEFAULT_COST_BPS,
    DEFAULT_EVENT_QUANTILE,
    DEFAULT_SCORE_THRESHOLD,
    DEFAULT_TOP_N,
    DEMEAN_MAX_ITER,
    DEMEAN_TOL,
    EVENT_OFFSETS,
    RANK_TOLERANCE,
    TRADING_DAYS_PER_YEAR,
)
from factorAug.errors import DataError, NumericalError

logger = logging.getLogger(__name__)

KEYS = ["asset_id", "date"]


def load_keyed_csv(path: Union[str, Path], value_column: str) -> pd.DataFrame:
    """
    Load an (asset_id, date, value) CSV.

    Raises:
        DataError: missing file or columns, or unparsable values
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={"asset_id": str}, comment="#")
    except pd.errors.EmptyDataError:
        return pd.DataFrame({"asset_id": pd.Series(dtype=str), "date": pd.Series(dtype=np.int64),
                             value_column: pd.Series(dtype=np.float64)})
    missing = [c for c in KEYS + [value_column] if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    frame = frame[KEYS + [value_column]].copy()
    for column in ("date", value_column):
        parsed = pd.to_numeric(frame[column], errors="coerce")
        if parsed.isna().any():
            row = int(np.argmax(parsed.isna().to_numpy()))
            raise DataError(f"{path}: cannot parse column '{column}' at row {row + 1}")
        frame[column] = parsed
    frame["date"] = frame["date"].astype(np.int64)
    return frame


def _average_same_day(asset_ids: Sequence, dates: Sequence, values: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame({"asset_id": np.asarray(asset_ids).astype(str),
                          "date": np.asarray(dates, dtype=np.int64),
                          "score": np.asarray(values, dtype=np.float64)})
    return frame.groupby(KEYS, as_index=False, sort=True)["score"].mean()


def scores_from_regression(asset_ids: Sequence, dates: Sequence, preds: np.ndarray,
                           train_mean: Union[float, np.ndarray]) -> pd.DataFrame:
    """Recentred predictions pred - train_mean + 0.5, averaged per asset-day."""
    values = np.asarray(preds, dtype=np.float64) - np.asarray(train_mean, dtype=np.float64) + 0.5
    return _average_same_day(asset_ids, dates, values)


def scores_from_probabilities(asset_ids: Sequence, dates: Sequence, probabilities: np.ndarray) -> pd.DataFrame:
    """Positive-class probabilities, averaged per asset-day."""
    values = np.asarray(probabilities, dtype=np.float64)
    if np.any((values < 0) | (values > 1)):
        raise DataError("Classification scores must lie in [0, 1]")
    return _average_same_day(asset_ids, dates, values)


def select_events(scores: pd.DataFrame, quantile: float = DEFAULT_EVENT_QUANTILE,
                  threshold: float = DEFAULT_SCORE_THRESHOLD) -> pd.DataFrame:
    """
    Extreme positive and negative events.

    Positive candidates have score > threshold; the top ceil(q * count) by
    distance from the threshold are kept (ties by asset_id, then date).
    Negative events mirror this below the threshold.

    Returns:
        DataFrame with asset_id, event_date, sign (+1 / -1), score
    """
    if not (0 < quantile <= 1):
        raise ValueError(f"quantile must lie in (0, 1], got {quantile}")
    selected = []
    for sign in (1, -1):
        distance = sign * (scores["score"] - threshold)
        candidates = scores.loc[distance > 0].assign(magnitude=distance[distance > 0])
        if candidates.empty:
            continue
        k = math.ceil(quantile * len(candidates) - 1e-9)
        ranked = candidates.sort_values(["magnitude", "asset_id", "date"],
                                        ascending=[False, True, True], kind="mergesort")
        top = ranked.head(k)
        selected.append(pd.DataFrame({
            "asset_id": top["asset_id"].to_numpy(),
            "event_date": top["date"].to_numpy(dtype=np.int64),
            "sign": sign,
            "score": top["score"].to_numpy(),
        }))
    if not selected:
        return pd.DataFrame({"asset_id": pd.Series(dtype=str), "event_date": pd.Series(dtype=np.int64),
                             "sign": pd.Series(dtype=np.int64), "score": pd.Series(dtype=np.float64)})
    events = pd.concat(selected, ignore_index=True)
    logger.info(f"Selected {int((events['sign'] > 0).sum())} positive and "
                f"{int((events['sign'] < 0).sum())} negative events")
    return events


@dataclass(frozen=True, eq=False)
class EventStudyFit:
    offsets: Tuple[int, ...]
    beta: np.ndarray
    se: np.ndarray
    n_obs: int
    n_assets: int
    n_dates: int
    dof: int
    sigma2: float
    iterations: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"offset": list(self.offsets), "beta": self.beta, "se": self.se})


def day_indicators(returns: pd.DataFrame, events: pd.DataFrame,
                   offsets: Sequence[int] = EVENT_OFFSETS) -> np.ndarray:
    """
    Event-day indicators: column p is 1 where the date lies p - 1 trading days
    after an event of the same asset (offset 1 is the event day). Overlaps set 1.
    """
    offsets = tuple(offsets)
    D = np.zeros((len(returns), len(offsets)))
    if events.empty:
        return D
    index = pd.DataFrame({"asset_id": returns["asset_id"].to_numpy(),
                          "date": returns["date"].to_numpy(), "row": np.arange(len(returns))})
    shifted = pd.concat(
        [pd.DataFrame({"asset_id": events["asset_id"].to_numpy(),
                       "date": events["event_date"].to_numpy() + p - 1,
                       "column": c})
         for c, p in enumerate(offsets)],
        ignore_index=True,
    )
    hits = shifted.merge(index, on=KEYS, how="inner")
    D[hits["row"].to_numpy(), hits["column"].to_numpy()] = 1.0
    return D


def two_way_demean(values: np.ndarray, asset_codes: np.ndarray, date_codes: np.ndarray,
                   tol: float = DEMEAN_TOL, max_iter: int = DEMEAN_MAX_ITER) -> Tuple[np.ndarray, int]:
    """
    Remove asset and date means by alternating projections until the largest
    remaining group mean is below tol.
    """
    v = np.array(values, dtype=np.float64, copy=True)
    if v.ndim == 1:
        v = v[:, None]
    asset_counts = np.bincount(asset_codes)
    date_counts = np.bincount(date_codes)

    def group_means(codes: np.ndarray, counts: np.ndarray) -> np.ndarray:
        sums = np.stack([np.bincount(codes, weights=v[:, j], minlength=counts.size)
                         for j in range(v.shape[1])], axis=1)
        return sums / counts[:, None]

    for iteration in range(1, max_iter + 1):
        v -= group_means(asset_codes, asset_counts)[asset_codes]
        date_means = group_means(date_codes, date_counts)
        v -= date_means[date_codes]
        remaining = np.abs(group_means(asset_codes, asset_counts)).max(initial=0.0)
        if max(remaining, np.abs(date_means).max(initial=0.0)) < tol:
            return v, iteration
    logger.warning(f"Two-way demeaning stopped at {max_iter} iterations")
    return v, max_iter


def event_study_fit(returns: pd.DataFrame, events: pd.DataFrame,
                    offsets: Sequence[int] = EVENT_OFFSETS) -> EventStudyFit:
    """
    Regress returns on event-day indicators with asset and date fixed effects.

    The fixed effects are absorbed by two-way demeaning; standard errors are
    conventional OLS errors with N - assets - dates + 1 - P degrees of freedom.

    Raises:
        DataError: fewer than 2 assets or 2 dates
        NumericalError: collinear indicators (offending offsets listed)
    """
    offsets = tuple(offsets)
    asset_codes, assets = pd.factorize(returns["asset_id"], sort=True)
    date_codes, dates = pd.factorize(returns["date"], sort=True)
    if len(assets) < 2 or len(dates) < 2:
        raise DataError(f"Event study needs at least 2 assets and 2 dates, got {len(assets)} and {len(dates)}")

    D = day_indicators(returns, events, offsets)
    stacked = np.column_stack([returns["ret"].to_numpy(dtype=np.float64), D])
    demeaned, iterations = two_way_demean(stacked, asset_codes, date_codes)
    y_t, D_t = demeaned[:, 0], demeaned[:, 1:]

    _, R, pivots = linalg.qr(D_t, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(R))
    scale = diagonal[0] if diagonal.size else 0.0
    rank = 0 if scale == 0 else int(np.sum(diagonal > RANK_TOLERANCE * scale * max(D_t.shape)))
    if rank < len(offsets):
        offending = sorted(offsets[i] for i in pivots[rank:])
        raise NumericalError(f"collinear event-day indicators at offsets {offending}")

    beta = linalg.lstsq(D_t, y_t)[0]
    residual = y_t - D_t @ beta
    dof = len(returns) - len(assets) - len(dates) + 1 - len(offsets)
    if dof <= 0:
        raise NumericalError(f"No residual degrees of freedom ({dof})")
    sigma2 = float(residual @ residual / dof)
    covariance = sigma2 * linalg.inv(D_t.T @ D_t)
    se = np.sqrt(np.diag(covariance))
    logger.info(f"Event study on {len(returns)} observations converged in {iterations} demeaning passes")
    return EventStudyFit(offsets, beta, se, len(returns), len(assets), len(dates), dof, sigma2, iterations)


@dataclass(frozen=True, eq=False)
class BacktestLedger:
    """Per-date leg accounting plus the holdings behind it."""

    daily: pd.DataFrame
    holdings: pd.DataFrame
    cost_rate: float


def _leg_weights(day: pd.DataFrame, leg: int, top_n: int, threshold: float, weighting: str,
                 caps: Dict[Tuple[str, int], float], date: int) -> Dict[str, float]:
    distance = leg * (day["score"] - threshold)
    candidates = day.loc[distance > 0].assign(distance=distance[distance > 0])
    if candidates.empty:
        return {}
    chosen = candidates.sort_values(["distance", "asset_id"], ascending=[False, True],
                                    kind="mergesort").head(top_n)
    names = chosen["asset_id"].tolist()
    invested = len(names) / top_n
    if weighting == "equal":
        return {name: 1.0 / top_n for name in names}

    values = []
    for name in names:
        key = (name, date - 1)
        if key not in caps:
            raise DataError(f"Missing market cap for asset {name} on date {date - 1}")
        values.append(caps[key])
    total = sum(values)
    if total <= 0:
        raise NumericalError(f"Selected assets have zero total market cap on date {date - 1}")
    return {name: invested * value / total for name, value in zip(names, values)}


def _turnover(new: Dict[str, float], old: Dict[str, float]) -> float:
    names = set(new) | set(old)
    return 0.5 * sum(abs(new.get(name, 0.0) - old.get(name, 0.0)) for name in sorted(names))


def portfolio_backtest(scores: pd.DataFrame, returns: pd.DataFrame, caps: Optional[pd.DataFrame] = None,
                       top_n: int = DEFAULT_TOP_N, threshold: float = DEFAULT_SCORE_THRESHOLD,
                       cost_bps: float = DEFAULT_COST_BPS, weighting: str = "value") -> BacktestLedger:
    """
    Daily rebalanced long and short legs, each managing unit capital.

    On date t the long leg holds up to top_n assets with score > threshold
    (highest first), weighted by market cap on t-1; each slot is 1/top_n of
    capital, so unfilled slots stay in cash. The short leg mirrors this
    below the threshold. Positions earn the date-t return. Costs are
    cost_bps / 1e4 per unit of turnover, turnover = 0.5 * sum |w_t - w_{t-1}|.
    The L+S series is the average of the two legs.

    Raises:
        DataError: a selected asset-date lacks a return or a prior-day cap
    """
    if weighting not in ("value", "equal"):
        raise ValueError(f"Unknown weighting '{weighting}'")
    rate = cost_bps / 1e4
    ret_lookup = {(str(a), int(d)): float(r) for a, d, r in
                  zip(returns["asset_id"], returns["date"], returns["ret"])}
    cap_lookup = {}
    if caps is not None:
        cap_lookup = {(str(a), int(d)): float(c) for a, d, c in zip(caps["asset_id"], caps["date"], caps["cap"])}
    elif weighting == "value":
        raise DataError("Value weighting needs market caps")

    scores = scores.assign(asset_id=scores["asset_id"].astype(str))
    rows, holdings = [], []
    previous = {1: {}, -1: {}}
    cum_log2 = 0.0

    for date in sorted(scores["date"].unique()):
        date = int(date)
        day = scores.loc[scores["date"] == date]
        record = {"date": date}
        for leg, label in ((1, "long"), (-1, "short")):
            weights = _leg_weights(day, leg, top_n, threshold, weighting, cap_lookup, date)
            gross = 0.0
            for name in sorted(weights):
                key = (name, date)
                if key not in ret_lookup:
                    raise DataError(f"Missing return for asset {name} on date {date}")
                gross += weights[name] * ret_lookup[key]
                holdings.append({"date": date, "leg": label, "asset_id": name, "weight": weights[name]})
            gross = leg * gross
            turnover = _turnover(weights, previous[leg])
            cost = rate * turnover
            record.update({
                f"n_{label}": len(weights),
                f"cash_{label}": 1.0 - sum(weights.values()),
                f"gross_{label}": gross,
                f"turnover_{label}": turnover,
                f"cost_{label}": cost,
                f"net_{label}": gross - cost,
            })
            previous[leg] = weights

        record["gross"] = 0.5 * (record["gross_long"] + record["gross_short"])
        record["cost"] = 0.5 * (record["cost_long"] + record["cost_short"])
        record["net"] = record["gross"] - record["cost"]
        cum_log2 += math.log2(1.0 + record["net"])
        record["cum_log2"] = cum_log2
        rows.append(record)

    columns = ["date", "n_long", "cash_long", "gross_long", "turnover_long", "cost_long", "net_long",
               "n_short", "cash_short", "gross_short", "turnover_short", "cost_short", "net_short",
               "gross", "cost", "net", "cum_log2"]
    daily = pd.DataFrame(rows, columns=columns)
    holdings_frame = pd.DataFrame(holdings, columns=["date", "leg", "asset_id", "weight"])
    logger.info(f"Backtest over {len(daily)} dates, {len(holdings_frame)} positions")
    return BacktestLedger(daily, holdings_frame, rate)


def apr_sharpe(net_returns: Union[np.ndarray, pd.Series]) -> Tuple[float, float]:
    """
    Annualized percentage return and Sharpe ratio of daily returns.

    APR = mean * 252 * 100; SR = mean / sd * sqrt(252) with the n-1 divisor.

    Raises:
        DataError: fewer than 2 returns
        NumericalError: zero standard deviation
    """
    r = np.asarray(net_returns, dtype=np.float64)
    if r.size < 2:
        raise DataError(f"APR/SR need at least 2 daily returns, got {r.size}")
    mean = float(r.mean())
    sd = float(r.std(ddof=1))
    if sd == 0:
        raise NumericalError("Daily returns have zero standard deviation; Sharpe ratio undefined")
    return mean * TRADING_DAYS_PER_YEAR * 100.0, mean / sd * math.sqrt(TRADING_DAYS_PER_YEAR)


def leg_summary(ledger: BacktestLedger) -> Dict[str, Dict[str, Optional[float]]]:
    """APR / SR for the long, short and combined series; None where undefined."""
    summary = {}
    for label, column in (("L", "net_long"), ("S", "net_short"), ("L+S", "net")):
        try:
            apr, sr = apr_sharpe(ledger.daily[column])
        except (DataError, NumericalError) as e:
            logger.warning(f"{label} leg: {e}")
            apr, sr = None, None
        summary[label] = {"APR": apr, "SR": sr}
    return summary
