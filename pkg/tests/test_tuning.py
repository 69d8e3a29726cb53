from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gncqr.almon import make_almon_map
from gncqr.evaluation import QuantileScorePanel
from gncqr.solver import QuantileGrid, fit_joint, predict_dataset
from gncqr.synthetic import GarDgp, simulate_panel
from gncqr.tuning import guard_size, make_plan, select_alpha

GRID = QuantileGrid()
MAPS = {"NFCI": make_almon_map(12, 3), "IP": make_almon_map(6, 3)}


def test_ten_fold_plan_sizes():
    plan = make_plan(100, 10, h=1)
    assert plan.n_folds == 10
    assert all(len(f.test) == 10 for f in plan.folds)
    sizes = [len(f.train) for f in plan.folds]
    assert set(sizes) == {88, 89}
    assert sizes[0] == sizes[-1] == 89


def test_uneven_blocks_are_contiguous():
    plan = make_plan(23, 5, h=1)
    starts = [f.test.start for f in plan.folds]
    assert [len(f.test) for f in plan.folds] == [5, 5, 5, 4, 4]
    assert starts == sorted(starts) and plan.folds[-1].test.stop == 23


@pytest.mark.parametrize("h,guard", [(Fraction(5, 12), 1), (0.42, 1), (1, 1), (4, 4), (Fraction(13, 12), 2)])
def test_guard_size(h, guard):
    assert guard_size(h) == guard


def test_leave_one_out():
    plan = make_plan(12, 12, h=1)
    assert all(len(f.test) == 1 for f in plan.folds)
    assert sorted({len(f.train) for f in plan.folds}) == [9, 10]


def test_too_small_reports_minimum():
    with pytest.raises(ValueError, match="need T >="):
        make_plan(8, 2, h=4)
    with pytest.raises(ValueError):
        make_plan(50, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 200), st.integers(2, 10), st.sampled_from([Fraction(1, 12), Fraction(1), Fraction(4)]))
def test_no_leakage(T, k, h):
    try:
        plan = make_plan(T, k, h)
    except ValueError:
        return
    for f in plan.folds:
        test = np.arange(f.test.start, f.test.stop)
        gaps = np.abs(f.train[:, None] - test[None, :])
        assert gaps.min() > plan.h_guard
        assert len(np.intersect1d(f.train, test)) == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(30, 150), st.integers(2, 8), st.integers(1, 5))
def test_larger_guard_never_grows_training(T, k, g):
    a = make_plan(T, k, h_guard=g)
    try:
        b = make_plan(T, k, h_guard=g + 1)
    except ValueError:
        return
    for fa, fb in zip(a.folds, b.folds):
        assert len(fb.train) <= len(fa.train)


def test_single_alpha_grid():
    ds = simulate_panel(40, seed=1)
    sel = select_alpha(ds, MAPS, GRID, (0.7,), make_plan(40, 4, 1))
    assert sel.chosen_alpha == 0.7
    assert sel.per_fold.shape == (4, 1)
    assert np.all(np.isfinite(sel.per_fold))


def test_matches_brute_force_and_reproducible(tmp_path):
    ds = simulate_panel(60, seed=2)
    plan = make_plan(60, 4, 1)
    grid3 = (0.0, 1.0, 2.0)
    sel = select_alpha(ds, MAPS, GRID, grid3, plan)
    brute = np.zeros(3)
    for f in plan.folds:
        train = ds.subset(f.train)
        test = ds.subset(np.arange(f.test.start, f.test.stop))
        for a, alpha in enumerate(grid3):
            fit = fit_joint(train, MAPS, GRID, "adaptive", alpha)
            brute[a] += QuantileScorePanel.from_predictions(test.target, predict_dataset(fit, test), GRID).qwcrps("w1").mean()
    assert np.allclose(sel.cv_scores, brute / plan.n_folds, rtol=1e-12)
    assert sel.chosen_alpha == grid3[int(np.argmin(brute))]

    again = select_alpha(ds, MAPS, GRID, grid3, plan)
    assert np.array_equal(again.per_fold, sel.per_fold)
    sel.write_audit(tmp_path / "audit.csv")
    lines = (tmp_path / "audit.csv").read_text().splitlines()
    assert lines[0] == "fold,alpha,loss" and len(lines) == 1 + 12


def test_location_shift_prefers_tight_end():
    ds = simulate_panel(80, seed=0, dgp=GarDgp(nfci_scale_effect=0.0))
    sel = select_alpha(ds, MAPS, GRID, (0.0, 1.0, 2.0), make_plan(80, 5, 1))
    assert sel.chosen_alpha == 2.0


def test_heteroskedastic_prefers_looser_alpha():
    ds = simulate_panel(80, seed=0, dgp=GarDgp(nfci_scale_effect=1.5))
    sel = select_alpha(ds, MAPS, GRID, (0.0, 1.0, 2.0), make_plan(80, 5, 1))
    assert sel.chosen_alpha < 2.0


def test_ties_go_to_smaller_alpha():
    ds = simulate_panel(40, seed=3)
    # a single quantile has no cross-quantile constraint, so every alpha scores the same
    sel = select_alpha(ds, MAPS, QuantileGrid((0.5,)), (1.5, 0.5, 1.0), make_plan(40, 4, 1))
    assert sel.chosen_alpha == 0.5


def test_plan_must_match_dataset():
    ds = simulate_panel(40, seed=3)
    with pytest.raises(ValueError, match="plan covers"):
        select_alpha(ds, MAPS, GRID, (1.0,), make_plan(50, 5, 1))
