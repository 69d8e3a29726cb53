"""hv-block cross-validation for the non-crossing tightness ``alpha``."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import MixedFrequencyDataset, as_horizon
from .evaluation import QuantileScorePanel
from .solver import DEFAULT_TOL, QuantileGrid, Transform, fit_joint, predict_dataset

log = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.25, 1.5, 2.0)


class TuningError(RuntimeError):
    pass


@dataclass(frozen=True)
class Fold:
    test: range
    train: np.ndarray
    gap: int


@dataclass(frozen=True)
class HvBlockPlan:
    folds: tuple[Fold, ...]
    T: int
    h_guard: int

    @property
    def n_folds(self) -> int:
        return len(self.folds)


def guard_size(h) -> int:
    h = as_horizon(h)
    return max(1, math.ceil(h))


def _blocks(T: int, n_folds: int) -> list[range]:
    base, extra = divmod(T, n_folds)
    out, start = [], 0
    for k in range(n_folds):
        size = base + (1 if k < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def _plan(T: int, n_folds: int, h_guard: int) -> Optional[HvBlockPlan]:
    idx = np.arange(T)
    folds = []
    for test in _blocks(T, n_folds):
        train = idx[(idx < test.start - h_guard) | (idx > test.stop - 1 + h_guard)]
        if len(train) == 0:
            return None
        folds.append(Fold(test, train, h_guard))
    return HvBlockPlan(tuple(folds), T, h_guard)


def make_plan(T: int, n_folds: int = 10, h=1, h_guard: Optional[int] = None) -> HvBlockPlan:
    """Contiguous test blocks with ``h_guard`` rows dropped from training on each side.

    The guard is ``ceil(h)``, and 1 for nowcasts with ``h < 1``.
    """
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if h_guard is None:
        h_guard = guard_size(h)
    plan = _plan(T, n_folds, h_guard) if T >= n_folds else None
    if plan is None:
        need = max(T, n_folds)
        while _plan(need, n_folds, h_guard) is None:
            need += 1
        raise ValueError(f"T={T} too small for {n_folds} folds with guard {h_guard}; need T >= {need}")
    return plan


@dataclass(frozen=True)
class AlphaSelection:
    grid: tuple[float, ...]
    cv_scores: np.ndarray
    chosen_alpha: float
    per_fold: np.ndarray
    loss: str = "w1"

    def audit_rows(self):
        for f in range(self.per_fold.shape[0]):
            for a, alpha in enumerate(self.grid):
                yield f, alpha, float(self.per_fold[f, a])

    def write_audit(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "alpha", "loss"])
            for f, alpha, loss in self.audit_rows():
                w.writerow([f, repr(alpha), repr(loss)])


def _fold_loss(args) -> float:
    dataset, maps, grid, alpha, fold, loss, tol = args
    train = dataset.subset(fold.train)
    test = dataset.subset(np.arange(fold.test.start, fold.test.stop))
    fit = fit_joint(train, maps, grid, "adaptive", alpha, tol=tol)
    pred = predict_dataset(fit, test)
    panel = QuantileScorePanel.from_predictions(test.target, pred, grid)
    return float(np.mean(panel.qwcrps(loss)))


def select_alpha(
    dataset: MixedFrequencyDataset,
    maps: Optional[Mapping[str, Transform]],
    grid: QuantileGrid,
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    plan: Optional[HvBlockPlan] = None,
    loss: str = "w1",
    jobs: int = 1,
    tol: float = DEFAULT_TOL,
) -> AlphaSelection:
    """Pick ``alpha`` minimising the mean out-of-fold qwCRPS; ties go to the smaller value."""
    alphas = tuple(sorted(float(a) for a in alpha_grid))
    if not alphas or alphas[0] < 0:
        raise ValueError("alpha grid must be non-empty and non-negative")
    if plan is None:
        plan = make_plan(len(dataset), 10, dataset.horizon)
    if plan.T != len(dataset):
        raise ValueError(f"plan covers {plan.T} rows, dataset has {len(dataset)}")

    tasks = [(dataset, maps, grid, a, fold, loss, tol) for fold in plan.folds for a in alphas]
    keys = [(f, a) for f in range(plan.n_folds) for a in range(len(alphas))]
    per_fold = np.empty((plan.n_folds, len(alphas)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_fold_loss, t) for t in tasks]
            for (f, a), fut in zip(keys, futures):
                try:
                    per_fold[f, a] = fut.result()
                except Exception as exc:
                    raise TuningError(f"fold {f} (alpha={alphas[a]}) failed: {exc}") from exc
    else:
        for (f, a), t in zip(keys, tasks):
            try:
                per_fold[f, a] = _fold_loss(t)
            except Exception as exc:
                raise TuningError(f"fold {f} (alpha={alphas[a]}) failed: {exc}") from exc

    scores = per_fold.mean(axis=0)
    best = int(np.flatnonzero(scores == scores.min())[0])
    log.info("alpha CV: chose %.3g (score %.6g)", alphas[best], scores[best])
    return AlphaSelection(alphas, scores, alphas[best], per_fold, loss)
