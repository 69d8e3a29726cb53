import datetime as dt
import json
from fractions import Fraction

import numpy as np
import pytest

from gncqr.backtest import (
    BacktestConfig,
    BacktestError,
    HighFreqInput,
    SeriesSet,
    export_surface,
    format_table,
    last_known_quarter,
    read_csv,
    run_backtest,
    run_horizon,
    write_outputs,
)
from gncqr.evaluation import SCHEMES
from gncqr.solver import QuantileGrid
from gncqr.synthetic import simulate_raw


def series_set(n_quarters=80, seed=0):
    raw = simulate_raw(n_quarters, seed)
    return SeriesSet(raw["GDP"], (HighFreqInput("NFCI", raw["NFCI"], 12), HighFreqInput("IP", raw["IP"], 6)), 1)


@pytest.fixture(scope="module")
def small_run():
    cfg = BacktestConfig(
        horizons=(1, 4),
        start_size=50,
        models=("gncqr", "qr", "midas-qr", "umidas"),
        alpha_grid=(0.0, 1.0),
        cv_folds=4,
        density_quarters=("1990Q1",),
        pre_cutoff=dt.date(1985, 12, 31),
    )
    return run_backtest(cfg, series_set())


def test_last_known_quarter():
    s = 4 * 2000 + 2
    assert last_known_quarter(s, Fraction(1)) == s - 1
    assert last_known_quarter(s, Fraction(4)) == s - 4
    assert last_known_quarter(s, Fraction(1, 12)) == s - 1
    assert last_known_quarter(s, Fraction(11, 12)) == s - 1
    assert last_known_quarter(s, Fraction(13, 12)) == s - 2


def test_config_validation():
    with pytest.raises(ValueError):
        BacktestConfig(models=("gncqr", "lasso"))
    with pytest.raises(ValueError):
        BacktestConfig(alpha_mode="fixed")
    with pytest.raises(ValueError):
        BacktestConfig(horizons=(0,))
    assert BacktestConfig(models=("gncqr", "qr", "gncqr")).labels == ("gncqr", "qr", "gncqr_2")


def test_report_cells_and_table(small_run):
    rep = small_run.report
    assert rep.reference == "gncqr"
    # three scored models, two horizons, four schemes, two samples
    assert rep.n_cells == 3 * 2 * 4 * 2
    assert small_run.all_optimal
    text = format_table(rep)
    assert "h=1" in text and "h=4" in text and "DM reference: gncqr" in text


def test_origins_respect_information_set(small_run):
    for hr in small_run.horizons:
        assert len(hr.quarters) > 0
        assert np.all(np.diff(hr.quarters) > 0)
        assert hr.alpha in (0.0, 1.0)
        assert set(hr.predictions) == {"gncqr", "qr", "midas-qr"}
        assert set(hr.full_fits) == {"gncqr", "qr", "midas-qr", "umidas"}


def test_surface_shapes(small_run):
    hr = small_run.horizons[0]
    grid = small_run.config.grid
    surf = export_surface(hr.full_fits, hr.horizon, grid)
    nfci = surf["NFCI"]
    gn = [r for r in nfci.rows if r[0] == "gncqr"]
    assert len(gn) == 11 * 12
    # restricted profiles vanish at the longest lag
    assert all(abs(g) < 1e-8 for _, _, lag, g in gn if lag == 12)
    keys = lambda m: sorted((t, lag) for mm, t, lag, _ in nfci.rows if mm == m)
    assert keys("gncqr") == keys("umidas") == keys("midas-qr")
    assert not any(r[0] == "qr" for r in nfci.rows)
    assert nfci.grid_for("umidas").shape == (11, 12)


def test_outputs_parse_back_and_means_recompute(small_run, tmp_path):
    written = write_outputs(small_run, tmp_path)
    for p in written:
        if p.suffix == ".csv":
            rows = read_csv(p)
            assert rows, p.name
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["all_optimal"] is True
    assert (tmp_path / "density_1990Q1_1.csv").exists()
    assert (tmp_path / "cv_audit_4.csv").exists()

    per_obs = read_csv(tmp_path / "scores_per_obs.csv")
    scores = read_csv(tmp_path / "scores.csv")
    for row in scores:
        sel = [r for r in per_obs if r["horizon"] == row["horizon"] and r["model"] == row["model"]]
        for s in SCHEMES:
            mean = float(np.mean([float(r[s]) for r in sel]))
            assert repr(mean) == row[f"full_{s}"]


def test_duplicate_models_identical_and_p_one():
    cfg = BacktestConfig(horizons=(1,), start_size=55, models=("qr", "qr"), alpha_mode="fixed", alpha=1.0)
    res = run_backtest(cfg, series_set(70))
    hr = res.horizons[0]
    assert np.array_equal(hr.predictions["qr"], hr.predictions["qr_2"])
    row = [r for r in res.report.rows if r.model == "qr_2"][0]
    for s in SCHEMES:
        assert row.means["full"][s] == res.report.cell("qr", 1, s)
        assert row.dm["full"][s].p_value == 1.0


def test_insufficient_history():
    cfg = BacktestConfig(horizons=(1,), start_size=500, models=("qr",))
    with pytest.raises(BacktestError, match="insufficient data"):
        run_horizon(cfg, series_set(60), 1)


def test_nowcast_horizon_runs():
    cfg = BacktestConfig(horizons=(Fraction(5, 12),), start_size=55, models=("gncqr", "qr"), alpha_mode="fixed", alpha=1.0)
    res = run_backtest(cfg, series_set(70))
    assert res.all_optimal
    assert len(res.horizons[0].quarters) >= 10


def test_gncqr_beats_plain_qr_on_simulated_quarters():
    cfg = BacktestConfig(
        horizons=(1,), start_size=40, models=("gncqr", "qr"), alpha_mode="fixed", alpha=1.0, grid=QuantileGrid()
    )
    res = run_backtest(cfg, series_set(200, seed=11))
    assert res.report.cell("gncqr", 1, "w1") <= res.report.cell("qr", 1, "w1")
