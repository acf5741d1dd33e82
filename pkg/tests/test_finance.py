"""
Unit tests for scores, event studies and portfolio backtests.
"""

import math

import numpy as np
import pandas as pd
import pytest
from scipy import linalg

from factorAug.errors import DataError, NumericalError
from factorAug.finance import (
    apr_sharpe,
    day_indicators,
    event_study_fit,
    leg_summary,
    load_keyed_csv,
    portfolio_backtest,
    scores_from_probabilities,
    scores_from_regression,
    select_events,
    two_way_demean,
)
from factorAug.synth import event_panel, portfolio_fixture


def small_panel(seed=0, n_assets=5, n_days=40):
    """Returns with asset and date effects plus a few planted events."""
    rng = np.random.default_rng(seed)
    assets = [f"S{i}" for i in range(n_assets)]
    frame = pd.DataFrame({
        "asset_id": np.repeat(assets, n_days),
        "date": np.tile(np.arange(1, n_days + 1), n_assets),
    })
    effects = rng.normal(0, 0.01, n_assets)
    days = rng.normal(0, 0.01, n_days)
    frame["ret"] = (np.repeat(effects, n_days) + np.tile(days, n_assets)
                    + 0.001 * rng.standard_normal(len(frame)))
    events = pd.DataFrame({"asset_id": ["S0", "S1", "S3", "S4"], "event_date": [5, 12, 20, 31],
                           "sign": 1, "score": 0.9})
    return frame, events


class TestScores:
    """Test score construction."""

    def test_recentred_regression(self):
        """Test pred - mean + 0.5, and the 0.519 example."""
        scores = scores_from_regression(["A", "B"], [1, 1], np.array([0.02, 0.001]), 0.001)
        np.testing.assert_allclose(scores["score"], [0.519, 0.5])

    def test_same_day_average(self):
        """Test that same-day scores are averaged."""
        scores = scores_from_probabilities(["A", "A", "B"], [3, 3, 3], np.array([0.4, 0.6, 0.9]))
        assert scores["score"].tolist() == pytest.approx([0.5, 0.9])
        assert scores["asset_id"].tolist() == ["A", "B"]

    def test_probability_range(self):
        """Test that probabilities outside [0, 1] are rejected."""
        with pytest.raises(DataError):
            scores_from_probabilities(["A"], [1], np.array([1.2]))


class TestSelectEvents:
    """Test extreme event selection."""

    def test_no_extremes(self):
        """Test that scores all at 0.5 give no events."""
        scores = pd.DataFrame({"asset_id": list("ABCD"), "date": [1, 1, 2, 2], "score": 0.5})
        assert select_events(scores).empty

    def test_quantile_count(self):
        """Test 100 positive scores at quantile 0.05 give exactly 5 events."""
        scores = pd.DataFrame({"asset_id": [f"A{i:03d}" for i in range(100)], "date": 1,
                               "score": 0.5 + np.linspace(0.001, 0.4, 100)})
        events = select_events(scores, 0.05)
        assert len(events) == 5
        assert set(events["asset_id"]) == {f"A{i:03d}" for i in range(95, 100)}
        assert (events["sign"] == 1).all()

    def test_hand_enumerated(self):
        """Test a mixed-sign fixture at quantile 0.25."""
        values = [0.9, 0.1, 0.55, 0.45, 0.7, 0.3, 0.95, 0.05, 0.6, 0.4,
                  0.8, 0.2, 0.52, 0.48, 0.65, 0.35, 0.5, 0.99, 0.01, 0.75]
        scores = pd.DataFrame({"asset_id": [f"N{i:02d}" for i in range(20)], "date": 7, "score": values})
        events = select_events(scores, 0.25)
        positive = events.loc[events["sign"] == 1, "asset_id"].tolist()
        negative = events.loc[events["sign"] == -1, "asset_id"].tolist()
        assert positive == ["N17", "N06", "N00"]
        assert negative == ["N18", "N07", "N01"]

    def test_monotone_in_quantile(self):
        """Test that a smaller quantile never adds events."""
        rng = np.random.default_rng(2)
        scores = pd.DataFrame({"asset_id": [f"A{i}" for i in range(200)], "date": 1,
                               "score": rng.uniform(0, 1, 200)})
        small = set(map(tuple, select_events(scores, 0.05)[["asset_id", "sign"]].to_numpy()))
        large = set(map(tuple, select_events(scores, 0.2)[["asset_id", "sign"]].to_numpy()))
        assert small <= large


class TestEventStudy:
    """Test the two-way fixed-effects regression."""

    def test_indicators(self):
        """Test that offset 1 marks the event day and overlaps stay 1."""
        returns = pd.DataFrame({"asset_id": ["A"] * 5, "date": [1, 2, 3, 4, 5], "ret": 0.0})
        events = pd.DataFrame({"asset_id": ["A", "A"], "event_date": [2, 3], "sign": 1, "score": 0.9})
        D = day_indicators(returns, events, offsets=(0, 1, 2))
        np.testing.assert_array_equal(D[:, 1], [0, 1, 1, 0, 0])
        np.testing.assert_array_equal(D[:, 0], [1, 1, 0, 0, 0])
        np.testing.assert_array_equal(D[:, 2], [0, 0, 1, 1, 0])

    def test_demean_balanced(self):
        """Test that a balanced panel has zero asset and date means after demeaning."""
        rng = np.random.default_rng(0)
        values = rng.standard_normal(12)
        assets, dates = np.repeat(np.arange(3), 4), np.tile(np.arange(4), 3)
        out, _ = two_way_demean(values, assets, dates)
        for codes in (assets, dates):
            means = np.bincount(codes, weights=out[:, 0]) / np.bincount(codes)
            np.testing.assert_allclose(means, 0.0, atol=1e-10)

    def test_dummy_ols_oracle(self):
        """Test within estimation against OLS with asset and date dummies."""
        returns, events = small_panel()
        offsets = (0, 1, 2)
        fit = event_study_fit(returns, events, offsets)

        D = day_indicators(returns, events, offsets)
        assets = pd.get_dummies(returns["asset_id"]).to_numpy(dtype=float)
        dates = pd.get_dummies(returns["date"]).to_numpy(dtype=float)[:, 1:]
        design = np.hstack([D, assets, dates])
        oracle = linalg.lstsq(design, returns["ret"].to_numpy())[0][:3]
        np.testing.assert_allclose(fit.beta, oracle, atol=1e-8)
        assert fit.dof == 200 - 5 - 40 + 1 - 3

    def test_residuals_orthogonal_to_indicators(self):
        """Test that the within-residuals are orthogonal to the indicators."""
        returns, events = small_panel(1)
        offsets = (1, 2)
        fit = event_study_fit(returns, events, offsets)
        D = day_indicators(returns, events, offsets)
        asset_codes, _ = pd.factorize(returns["asset_id"], sort=True)
        date_codes, _ = pd.factorize(returns["date"], sort=True)
        stacked, _ = two_way_demean(np.column_stack([returns["ret"], D]), asset_codes, date_codes)
        residual = stacked[:, 0] - stacked[:, 1:] @ fit.beta
        assert np.abs(stacked[:, 1:].T @ residual).max() < 1e-8

    def test_fixed_effects_absorb_constants(self):
        """Test invariance to shifting one asset and one date."""
        returns, events = small_panel(2)
        base = event_study_fit(returns, events, (0, 1, 2)).beta
        shifted = returns.copy()
        shifted.loc[shifted["asset_id"] == "S2", "ret"] += 0.5
        shifted.loc[shifted["date"] == 17, "ret"] -= 0.3
        np.testing.assert_allclose(event_study_fit(shifted, events, (0, 1, 2)).beta, base, atol=1e-8)

    def test_planted_event_effect(self):
        """Test recovery of a 0.02 event-day effect with every other offset near 0."""
        data = event_panel(n_days=300, n_assets=200, seed=4)
        scores = data.frames["scores"]
        events = scores.loc[scores["score"] > 0.8, ["asset_id", "date"]].rename(columns={"date": "event_date"})
        fit = event_study_fit(data.frames["returns"], events)
        frame = fit.to_frame().set_index("offset")
        assert abs(frame.loc[1, "beta"] - 0.02) < 4 * frame.loc[1, "se"]
        others = frame.drop(index=1)
        assert len(others) == 27
        assert (np.abs(others["beta"]) < 4 * others["se"]).all()

    def test_no_events_is_collinear(self):
        """Test that all-zero indicators are reported with their offsets."""
        returns, _ = small_panel()
        empty = pd.DataFrame({"asset_id": [], "event_date": [], "sign": [], "score": []})
        with pytest.raises(NumericalError, match="collinear"):
            event_study_fit(returns, empty, (0, 1))

    def test_too_few_assets(self):
        """Test that one asset is rejected."""
        returns = pd.DataFrame({"asset_id": ["A"] * 3, "date": [1, 2, 3], "ret": [0.0, 0.1, 0.2]})
        with pytest.raises(DataError):
            event_study_fit(returns, pd.DataFrame({"asset_id": ["A"], "event_date": [2]}), (1,))


class TestPortfolioBacktest:
    """Test the long-short ledger."""

    @pytest.fixture
    def fixture(self):
        """Three assets over two days."""
        return portfolio_fixture().frames

    def test_hand_ledger(self, fixture):
        """Test every ledger entry of the hand-computed fixture."""
        ledger = portfolio_backtest(fixture["scores"], fixture["returns"], fixture["caps"], top_n=2)
        day1, day2 = ledger.daily.iloc[0], ledger.daily.iloc[1]
        rate = 13.0 / 1e4
        assert ledger.cost_rate == rate

        assert day1["n_long"] == 2 and day1["n_short"] == 1
        assert day1["gross_long"] == pytest.approx(2 / 3 * 0.01 + 1 / 3 * 0.02, abs=1e-15)
        assert day1["turnover_long"] == pytest.approx(0.5, abs=1e-15)
        assert day1["cost_long"] == pytest.approx(0.5 * rate, abs=1e-15)
        assert day1["cash_short"] == pytest.approx(0.5, abs=1e-15)
        assert day1["gross_short"] == pytest.approx(0.005, abs=1e-15)
        assert day1["turnover_short"] == pytest.approx(0.25, abs=1e-15)

        assert day2["gross_long"] == pytest.approx(2 / 3 * -0.02 + 1 / 3 * 0.03, abs=1e-15)
        assert day2["turnover_long"] == pytest.approx(1 / 3, abs=1e-15)
        assert day2["gross_short"] == pytest.approx(-0.005, abs=1e-15)
        assert day2["turnover_short"] == pytest.approx(0.5, abs=1e-15)

        holdings = ledger.holdings.loc[ledger.holdings["date"] == 2]
        weights = dict(zip(holdings["leg"] + ":" + holdings["asset_id"], holdings["weight"]))
        assert weights == pytest.approx({"long:A": 2 / 3, "long:C": 1 / 3, "short:B": 0.5})

    def test_ledger_identities(self, fixture):
        """Test net = gross - cost, the L+S average and cumulative log2 returns."""
        daily = portfolio_backtest(fixture["scores"], fixture["returns"], fixture["caps"], top_n=2).daily
        for leg in ("long", "short"):
            np.testing.assert_array_equal(daily[f"net_{leg}"], daily[f"gross_{leg}"] - daily[f"cost_{leg}"])
        np.testing.assert_allclose(daily["gross"], 0.5 * (daily["gross_long"] + daily["gross_short"]))
        np.testing.assert_allclose(daily["net"], daily["gross"] - daily["cost"])
        np.testing.assert_allclose(daily["cum_log2"], np.cumsum(np.log2(1 + daily["net"])))

    def test_caps_scale_equivariant(self, fixture):
        """Test that scaling every cap leaves weights unchanged."""
        scaled = fixture["caps"].assign(cap=fixture["caps"]["cap"] * 7.0)
        base = portfolio_backtest(fixture["scores"], fixture["returns"], fixture["caps"], top_n=2)
        other = portfolio_backtest(fixture["scores"], fixture["returns"], scaled, top_n=2)
        np.testing.assert_allclose(other.holdings["weight"], base.holdings["weight"], atol=1e-15)

    def test_no_positions(self, fixture):
        """Test that scores at the threshold open nothing."""
        scores = fixture["scores"].assign(score=0.5)
        ledger = portfolio_backtest(scores, fixture["returns"], fixture["caps"], top_n=2)
        assert ledger.holdings.empty
        assert (ledger.daily["net"] == 0).all()
        assert (ledger.daily["cost"] == 0).all()
        assert leg_summary(ledger)["L+S"] == {"APR": None, "SR": None}

    def test_equal_weighting_without_caps(self, fixture):
        """Test 1/top_n slots when caps are not used."""
        ledger = portfolio_backtest(fixture["scores"], fixture["returns"], top_n=2, weighting="equal")
        assert set(ledger.holdings["weight"]) == {0.5}

    def test_value_weighting_needs_caps(self, fixture):
        """Test that value weighting without caps is rejected."""
        with pytest.raises(DataError):
            portfolio_backtest(fixture["scores"], fixture["returns"], top_n=2)

    def test_missing_cap(self, fixture):
        """Test that a missing prior-day cap names the asset and date."""
        caps = fixture["caps"].iloc[1:]
        with pytest.raises(DataError, match="asset A on date 0"):
            portfolio_backtest(fixture["scores"], fixture["returns"], caps, top_n=2)

    def test_missing_return(self, fixture):
        """Test that a missing return names the asset and date."""
        returns = fixture["returns"].iloc[:-1]
        with pytest.raises(DataError, match="asset C on date 2"):
            portfolio_backtest(fixture["scores"], returns, fixture["caps"], top_n=2)


class TestAprSharpe:
    """Test annualized metrics."""

    def test_constant_returns(self):
        """Test that a zero sd is an error."""
        with pytest.raises(NumericalError):
            apr_sharpe(np.full(5, 0.001))

    def test_alternating(self):
        """Test +1% / -1% gives APR 0."""
        apr, _ = apr_sharpe(np.array([0.01, -0.01] * 5))
        assert apr == pytest.approx(0.0, abs=1e-12)

    def test_hand_series(self):
        """Test a 10-day series against direct arithmetic."""
        r = np.array([0.01, -0.005, 0.002, 0.0, 0.003, -0.001, 0.004, 0.002, -0.002, 0.001])
        mean = r.sum() / 10
        sd = math.sqrt(((r - mean) ** 2).sum() / 9)
        apr, sr = apr_sharpe(r)
        assert apr == pytest.approx(mean * 252 * 100, abs=1e-10)
        assert sr == pytest.approx(mean / sd * math.sqrt(252), abs=1e-10)

    def test_too_short(self):
        """Test that one return is rejected."""
        with pytest.raises(DataError):
            apr_sharpe(np.array([0.01]))


class TestLoadKeyedCsv:
    """Test keyed CSV loading."""

    def test_parse(self, tmp_path):
        """Test ids kept as strings and dates as integers."""
        path = tmp_path / "scores.csv"
        path.write_text("# config_hash=x, seed=0\nasset_id,date,score\n007,3,0.7\n")
        frame = load_keyed_csv(path, "score")
        assert frame["asset_id"].tolist() == ["007"]
        assert frame["date"].dtype == np.int64

    def test_empty(self, tmp_path):
        """Test that an empty file gives an empty frame."""
        path = tmp_path / "scores.csv"
        path.write_text("")
        assert load_keyed_csv(path, "score").empty

    def test_bad_value(self, tmp_path):
        """Test that an unparsable value reports its row."""
        path = tmp_path / "ret.csv"
        path.write_text("asset_id,date,ret\nA,1,0.1\nA,2,x\n")
        with pytest.raises(DataError, match="row 2"):
            load_keyed_csv(path, "ret")

    def test_missing_column(self, tmp_path):
        """Test that a missing value column is reported."""
        path = tmp_path / "ret.csv"
        path.write_text("asset_id,date\nA,1\n")
        with pytest.raises(DataError, match="missing columns"):
            load_keyed_csv(path, "ret")
