import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gncqr.evaluation import (
    SCHEMES,
    QuantileScorePanel,
    QwCrpsReport,
    compare_models,
    count_modes,
    density_from_quantiles,
    dm_test,
    newey_west_variance,
    qwcrps,
    quantile_score,
    scheme_weights,
    significance_stars,
)
from gncqr.solver import QuantileGrid, assemble_lp, solve

GRID = QuantileGrid()
G3 = QuantileGrid((0.25, 0.5, 0.75))


def test_quantile_score_examples():
    assert quantile_score(2.0, 2.0, 0.3) == 0.0
    assert quantile_score(1.0, 0.0, 0.9) == pytest.approx(0.9)
    assert quantile_score(0.0, 1.0, 0.9) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        quantile_score(0.0, 1.0, 1.0)


def test_qwcrps_hand_examples():
    qs = np.ones(3)
    assert qwcrps(qs, G3, "w2") == 0.1875 + 0.25 + 0.1875 == 0.625
    assert qwcrps(qs, G3, "w3") == 0.5625 + 0.25 + 0.0625 == 0.875
    assert qwcrps(qs, G3, "w4") == 0.0625 + 0.25 + 0.5625
    assert qwcrps(np.full(11, 0.7), GRID, "w1") == pytest.approx(0.7)


def test_perfect_forecast_scores_zero():
    y = np.array([1.0, -2.0, 3.5])
    panel = QuantileScorePanel.from_predictions(y, np.repeat(y[:, None], 11, axis=1), GRID)
    for s in SCHEMES:
        assert np.all(panel.qwcrps(s) == 0.0)


def test_unknown_scheme():
    with pytest.raises(ValueError):
        scheme_weights(GRID.taus, "w5")
    with pytest.raises(ValueError):
        qwcrps(np.ones(4), G3)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 11, elements=st.floats(0, 10)), arrays(float, 11, elements=st.floats(0, 5)))
def test_qwcrps_monotone(qs, extra):
    for s in SCHEMES:
        assert qwcrps(qs + extra, GRID, s) >= qwcrps(qs, GRID, s) - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_score_matches_solver_objective(seed):
    rng = np.random.default_rng(seed)
    T = 25
    design = np.column_stack([np.ones(T), rng.random(T)])
    y = rng.standard_normal(T)
    fit = solve(assemble_lp(design, y, G3))
    qs = quantile_score(y[:, None], fit.fitted, G3.array[None, :])
    # solver-side residual split: tau * u+ + (1 - tau) * u-
    u = y[:, None] - fit.fitted
    direct = G3.array * np.maximum(u, 0) + (1 - G3.array) * np.maximum(-u, 0)
    assert np.allclose(qs, direct, atol=1e-12)
    assert qs.sum() == pytest.approx(fit.objective_value, rel=1e-9, abs=1e-9)


def test_report_means_and_subset():
    y = np.array([0.0, 1.0, 2.0, 3.0])
    pred = np.zeros((4, 3))
    rep = QwCrpsReport.from_panel(QuantileScorePanel.from_predictions(y, pred, G3))
    assert rep.means["w1"] == pytest.approx(np.mean(y * 0.5))
    sub = rep.subset([True, True, False, False], "pre")
    assert sub.means["w1"] == pytest.approx(0.25)
    assert sub.label == "pre"


# --- Diebold-Mariano ----------------------------------------------------------------

def test_dm_identical_losses():
    a = np.random.default_rng(0).random(30)
    r = dm_test(a, a.copy())
    assert r.statistic == 0.0 and r.p_value == 1.0


def test_dm_alternating_zero_mean():
    d = np.tile([1.0, -1.0], 10)
    r = dm_test(np.zeros(20), d, hac_lags=0)
    assert r.statistic == 0.0


def test_dm_constant_differential_errors():
    with pytest.raises(ValueError, match="degenerate"):
        dm_test(np.zeros(20), np.ones(20), hac_lags=0)


def test_dm_short_series():
    with pytest.raises(ValueError, match="10"):
        dm_test(np.zeros(5), np.ones(5))


def _direct_dm(a, b, L):
    d = b - a
    n = len(d)
    m = d.mean()
    gam = [np.sum((d[k:] - m) * (d[: n - k] - m)) / n for k in range(L + 1)]
    lrv = gam[0] + 2 * sum((1 - k / (L + 1)) * gam[k] for k in range(1, L + 1))
    return m / math.sqrt(lrv / n)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(10, 80), st.integers(0, 4))
def test_dm_matches_direct_and_antisymmetric(seed, n, L):
    rng = np.random.default_rng(seed)
    a, b = rng.random(n), rng.random(n) + 0.1
    r = dm_test(a, b, L)
    assert abs(r.statistic - _direct_dm(a, b, L)) <= 1e-10
    assert dm_test(b, a, L).statistic == -r.statistic
    assert 0.0 <= r.p_value <= 1.0


def test_newey_west_lag_zero_is_variance():
    d = np.random.default_rng(1).standard_normal(50)
    assert newey_west_variance(d, 0) == pytest.approx(np.var(d))


def test_stars():
    assert significance_stars(0.005) == "***"
    assert significance_stars(0.03) == "**"
    assert significance_stars(0.07) == "*"
    assert significance_stars(0.2) == ""
    assert significance_stars(float("nan")) == ""


def test_compare_models_skips_reference():
    rng = np.random.default_rng(2)
    losses = {"a": rng.random(20), "b": rng.random(20)}
    out = compare_models(losses, "a", 1)
    assert set(out) == {"b"}


# --- densities ----------------------------------------------------------------------

def test_uniform_density():
    d = density_from_quantiles(GRID.array, GRID)
    inner = (d.support > 0.1) & (d.support < 0.9)
    assert np.all(np.abs(d.pdf[inner] - 1.0) < 5e-2)
    assert not d.crossing


def test_linear_quantile_function_constant_pdf():
    a, b = 2.0, 4.0
    d = density_from_quantiles(a + b * GRID.array, GRID)
    inner = (d.support > a + b * 0.12) & (d.support < a + b * 0.88)
    assert np.allclose(d.pdf[inner], 1.0 / b, rtol=2e-2)


def test_crossing_flagged_and_sorted():
    q = np.sort(np.random.default_rng(3).standard_normal(11))
    q[[4, 5]] = q[[5, 4]]
    d = density_from_quantiles(q, GRID)
    assert d.crossing
    assert np.all(np.diff(d.quantiles) >= 0)


def test_degenerate_spike():
    d = density_from_quantiles(np.full(11, 2.0), GRID)
    assert d.degenerate
    assert np.sum(d.pdf) * (d.support[1] - d.support[0]) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), arrays(float, 10, elements=st.floats(1e-3, 5)))
def test_cdf_brackets_outer_quantiles(start, gaps):
    q = start + np.concatenate([[0.0], np.cumsum(gaps)])
    d = density_from_quantiles(q, GRID)
    assert d.cdf[0] == pytest.approx(0.0, abs=1e-6)
    assert d.cdf[-1] == pytest.approx(1.0, abs=1e-6)
    lo, hi = GRID.taus[0], GRID.taus[-1]
    inside = (d.support >= q[0]) & (d.support <= q[-1])
    assert np.all(d.cdf[inside] >= lo - 1e-6) and np.all(d.cdf[inside] <= hi + 1e-6)
    assert np.all(d.cdf[d.support < q[0]] <= lo + 1e-6)
    assert np.all(d.cdf[d.support > q[-1]] >= hi - 1e-6)
    assert np.all(np.diff(d.cdf) >= 0)


def test_tied_quantiles_give_atom():
    q = np.array([0.0] + [1.0] * 10)
    d = density_from_quantiles(q, GRID)
    assert np.interp(1.0, d.support, d.cdf) == pytest.approx(GRID.taus[-1], abs=1e-6)
    assert np.all(np.diff(d.cdf) >= 0)


def test_mode_count():
    x = np.linspace(-5, 5, 401)
    two = np.exp(-(x - 2) ** 2) + np.exp(-(x + 2) ** 2)
    assert count_modes(two) == 2
    assert count_modes(np.exp(-x**2)) == 1
