"""Expanding-window pseudo out-of-sample evaluation and result exports."""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .almon import LagAverage, make_almon_map
from .dataset import (
    DataError,
    MixedFrequencyDataset,
    RawSeries,
    as_horizon,
    build_panel,
    horizon_label,
    parse_quarter_label,
    quarter_end_date,
    quarter_label,
    quarter_start,
    to_calendar_weeks,
)
from .evaluation import SCHEMES, QuantileScorePanel, density_from_quantiles, dm_test
from .solver import DEFAULT_TOL, QuantileGrid, QuantilePanelFit, fit_joint, predict_dataset
from .tuning import DEFAULT_ALPHA_GRID, AlphaSelection, make_plan, select_alpha

log = logging.getLogger(__name__)

MODEL_KINDS = ("gncqr", "midas-qr", "qr", "umidas")
SCORED_KINDS = ("gncqr", "midas-qr", "qr")
ALPHA_MODES = ("cv-once", "cv-per-origin", "fixed")
DEFAULT_HORIZONS = tuple(Fraction(j, 12) for j in range(1, 12)) + (Fraction(1), Fraction(4))


class BacktestError(RuntimeError):
    pass


@dataclass(frozen=True)
class HighFreqInput:
    id: str
    series: RawSeries
    lags: int
    poly_order: int = 3
    restricted: bool = True


@dataclass(frozen=True)
class SeriesSet:
    target: RawSeries
    high_freq: tuple[HighFreqInput, ...]
    ar_lags: int = 1

    def aligned(self) -> list:
        out = []
        for hf in self.high_freq:
            if hf.series.frequency == "weekly":
                out.append(to_calendar_weeks(hf.series))
            elif hf.series.frequency == "monthly":
                out.append(hf.series)
            else:
                raise DataError(f"{hf.id}: high-frequency series must be weekly or monthly")
        return out

    def panel(self, h, aligned: Optional[list] = None) -> MixedFrequencyDataset:
        aligned = self.aligned() if aligned is None else aligned
        return build_panel(self.target, aligned, [hf.lags for hf in self.high_freq], h, self.ar_lags)

    def maps(self, kind: str) -> dict:
        """Per-variable lag transforms for a model kind."""
        out = {}
        for hf in self.high_freq:
            if kind in ("gncqr", "midas-qr"):
                out[hf.id] = make_almon_map(hf.lags, hf.poly_order, hf.restricted)
            elif kind == "qr":
                per_quarter = 12 if hf.series.frequency == "weekly" else 3
                out[hf.id] = LagAverage(hf.lags, min(per_quarter, hf.lags))
            elif kind == "umidas":
                out[hf.id] = None
            else:
                raise ValueError(f"unknown model {kind!r}")
        return out


@dataclass(frozen=True)
class BacktestConfig:
    horizons: tuple[Fraction, ...] = DEFAULT_HORIZONS
    start_size: int = 40
    models: tuple[str, ...] = ("gncqr", "midas-qr", "qr", "umidas")
    grid: QuantileGrid = QuantileGrid()
    alpha_mode: str = "cv-once"
    alpha: Optional[float] = None
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    cv_folds: int = 10
    cv_loss: str = "w1"
    pre_cutoff: dt.date = dt.date(2019, 12, 31)
    density_quarters: tuple[str, ...] = ("2008Q2",)
    tol: float = DEFAULT_TOL
    jobs: int = 1

    def __post_init__(self) -> None:
        hs = tuple(as_horizon(h) for h in self.horizons)
        if not hs or any(h <= 0 for h in hs):
            raise ValueError("horizons must be positive")
        object.__setattr__(self, "horizons", hs)
        if self.start_size < 2:
            raise ValueError("start_size must be at least 2")
        unknown = [m for m in self.models if m not in MODEL_KINDS]
        if unknown:
            raise ValueError(f"unknown models {unknown}; choose from {MODEL_KINDS}")
        if not self.models:
            raise ValueError("no models configured")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.alpha_mode == "fixed" and (self.alpha is None or self.alpha < 0):
            raise ValueError("fixed alpha mode needs a non-negative alpha")
        if self.cv_loss not in SCHEMES:
            raise ValueError(f"cv_loss must be one of {SCHEMES}")

    @property
    def labels(self) -> tuple[str, ...]:
        """Model labels; a repeated kind gets a numeric suffix."""
        seen: dict[str, int] = {}
        out = []
        for m in self.models:
            seen[m] = seen.get(m, 0) + 1
            out.append(m if seen[m] == 1 else f"{m}_{seen[m]}")
        return tuple(out)


def last_known_quarter(target_quarter: int, h: Fraction) -> int:
    """Latest quarter whose outcome is observed when forecasting ``target_quarter``."""
    avail_end = 12 * (target_quarter + 1) - int(12 * h)
    return avail_end // 12 - 1


def origin_cutoff(target_quarter: int, h: Fraction) -> dt.date:
    return quarter_end_date(last_known_quarter(target_quarter, h))


def _fit(kind: str, ds: MixedFrequencyDataset, maps, grid, alpha, tol) -> QuantilePanelFit:
    if kind == "gncqr":
        return fit_joint(ds, maps, grid, "adaptive", alpha, tol=tol)
    return fit_joint(ds, maps, grid, "plain", tol=tol)


@dataclass(frozen=True)
class HorizonResult:
    horizon: Fraction
    quarters: np.ndarray
    y: np.ndarray
    predictions: dict[str, np.ndarray]
    qs: dict[str, np.ndarray]
    per_obs: dict[str, dict[str, np.ndarray]]
    alpha: Optional[float]
    selection: Optional[AlphaSelection]
    full_fits: dict[str, QuantilePanelFit]
    maps: dict[str, dict]
    statuses: list[str] = field(default_factory=list)
    alphas_by_origin: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ScoreRow:
    horizon: Fraction
    model: str
    means: dict[str, dict[str, float]]
    dm: dict[str, dict[str, Optional[object]]]


@dataclass(frozen=True)
class ScoreReport:
    rows: tuple[ScoreRow, ...]
    reference: str
    pre_cutoff: dt.date

    def cell(self, model: str, h, scheme: str, sample: str = "full") -> float:
        h = as_horizon(h)
        for r in self.rows:
            if r.model == model and r.horizon == h:
                return r.means[sample][scheme]
        raise KeyError((model, h))

    @property
    def n_cells(self) -> int:
        return sum(len(r.means[s]) for r in self.rows for s in r.means)


@dataclass(frozen=True)
class SurfaceExport:
    variable: str
    horizon: Fraction
    rows: tuple[tuple[str, float, int, float], ...]

    def grid_for(self, model: str) -> np.ndarray:
        """``(Q, M)`` array of lag coefficients for one model."""
        sel = [r for r in self.rows if r[0] == model]
        taus = sorted({r[1] for r in sel})
        lags = sorted({r[2] for r in sel})
        out = np.full((len(taus), len(lags)), np.nan)
        for _, tau, lag, g in sel:
            out[taus.index(tau), lags.index(lag)] = g
        return out


def variable_coefficients(fit: QuantilePanelFit, variable: str) -> np.ndarray:
    """Raw-unit coefficients of one high-frequency variable's columns, ``(k, Q)``."""
    return fit.raw_coefficients[fit.columns_of(variable)]


def lag_coefficients(fit: QuantilePanelFit, variable: str) -> np.ndarray:
    """Per-lag effects ``gamma`` of one variable, ``(M, Q)``, in raw units."""
    tr = dict(fit.transforms)[variable]
    coef = variable_coefficients(fit, variable)
    if tr is None:
        return coef
    return tr.lag_weights @ coef


def export_surface(fits: dict[str, QuantilePanelFit], horizon, grid: QuantileGrid) -> dict[str, SurfaceExport]:
    """Coefficient surfaces ``(tau, lag, gamma)`` per variable across models."""
    out: dict[str, list] = {}
    for model, fit in fits.items():
        for var, tr in fit.transforms:
            if isinstance(tr, LagAverage):
                continue
            gamma = lag_coefficients(fit, var)
            rows = out.setdefault(var, [])
            for q, tau in enumerate(grid.taus):
                for m in range(gamma.shape[0]):
                    rows.append((model, tau, m + 1, float(gamma[m, q])))
    h = as_horizon(horizon)
    return {v: SurfaceExport(v, h, tuple(r)) for v, r in out.items()}


def overall_effects(fit: QuantilePanelFit, variable: str) -> np.ndarray:
    """Summed lag effect per quantile."""
    return lag_coefficients(fit, variable).sum(axis=0)


def _origin_task(args):
    kinds, labels, panel, i, train_idx, maps, grid, alpha, tol, cv = args
    train = panel.subset(train_idx)
    test = panel.subset([i])
    used_alpha = alpha
    if cv is not None:
        alpha_grid, folds, loss = cv
        sel = select_alpha(train, maps["gncqr"], grid, alpha_grid, make_plan(len(train), folds, panel.horizon), loss, tol=tol)
        used_alpha = sel.chosen_alpha
    preds, statuses = {}, []
    for kind, label in zip(kinds, labels):
        fit = _fit(kind, train, maps[kind], grid, used_alpha, tol)
        statuses.append(fit.solver_status)
        preds[label] = predict_dataset(fit, test)[0]
    return preds, statuses, used_alpha


def run_horizon(config: BacktestConfig, data: SeriesSet, h, aligned=None) -> HorizonResult:
    h = as_horizon(h)
    panel = data.panel(h, aligned)
    grid = config.grid
    kinds = config.models
    labels = config.labels
    maps = {k: data.maps(k) for k in set(kinds) | {"gncqr"}}
    scored = [(k, l) for k, l in zip(kinds, labels) if k in SCORED_KINDS]

    known = np.array([last_known_quarter(int(s), h) for s in panel.quarters])
    origins = []
    for i, s in enumerate(panel.quarters):
        train_idx = np.flatnonzero(panel.quarters <= known[i])
        if len(train_idx) >= config.start_size:
            origins.append((i, train_idx))
    if not origins:
        need = config.start_size + math.ceil(h) + 1
        raise BacktestError(
            f"h={h}: insufficient data for the first origin; the panel has {len(panel)} rows, "
            f"need at least {need} (start_size={config.start_size})"
        )
    for i, train_idx in origins:
        cutoff = origin_cutoff(int(panel.quarters[i]), h)
        if any(panel.info_cutoff[j] > cutoff or quarter_end_date(int(panel.quarters[j])) > cutoff for j in train_idx):
            raise BacktestError(f"look-ahead in training rows for origin {quarter_label(int(panel.quarters[i]))}")

    uses_alpha = "gncqr" in kinds
    selection = None
    alpha = config.alpha
    cv = None
    if uses_alpha and config.alpha_mode == "cv-once":
        first_train = panel.subset(origins[0][1])
        selection = select_alpha(
            first_train, maps["gncqr"], grid, config.alpha_grid,
            make_plan(len(first_train), config.cv_folds, h), config.cv_loss, config.jobs, config.tol,
        )
        alpha = selection.chosen_alpha
    elif uses_alpha and config.alpha_mode == "cv-per-origin":
        cv = (config.alpha_grid, config.cv_folds, config.cv_loss)

    eval_kinds = [k for k, _ in scored]
    eval_labels = [l for _, l in scored]
    tasks = [(eval_kinds, eval_labels, panel, i, tr, maps, grid, alpha, config.tol, cv) for i, tr in origins]
    results = []
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = [pool.submit(_origin_task, t) for t in tasks]
            for (i, _), fut in zip(origins, futures):
                results.append(_collect(fut.result, panel, i))
    else:
        for (i, _), t in zip(origins, tasks):
            results.append(_collect(lambda: _origin_task(t), panel, i))

    rows = np.array([i for i, _ in origins])
    y = panel.target[rows]
    predictions = {l: np.array([r[0][l] for r in results]) for l in eval_labels}
    statuses = [s for r in results for s in r[1]]
    qs, per_obs = {}, {}
    for l in eval_labels:
        p = QuantileScorePanel.from_predictions(y, predictions[l], grid, horizon_label(h))
        qs[l] = p.qs
        per_obs[l] = {s: p.qwcrps(s) for s in SCHEMES}

    full_fits = {}
    full_alpha = alpha if alpha is not None else (results[-1][2] if cv is not None else None)
    for kind, label in zip(kinds, labels):
        if kind == "gncqr" and full_alpha is None:
            raise BacktestError("gncqr needs an alpha; set alpha_mode or alpha")
        try:
            fit = _fit(kind, panel, maps[kind], grid, full_alpha, config.tol)
        except Exception as exc:
            raise BacktestError(f"h={h} model {label}: full-sample fit failed: {exc}") from exc
        statuses.append(fit.solver_status)
        full_fits[label] = fit
    log.info("h=%s: %d origins, alpha=%s", horizon_label(h), len(origins), full_alpha)
    return HorizonResult(
        horizon=h,
        quarters=panel.quarters[rows],
        y=y,
        predictions=predictions,
        qs=qs,
        per_obs=per_obs,
        alpha=full_alpha,
        selection=selection,
        full_fits=full_fits,
        maps={l: maps[k] for k, l in zip(kinds, labels)},
        statuses=statuses,
        alphas_by_origin=np.array([r[2] if r[2] is not None else np.nan for r in results]),
    )


def _collect(call, panel, i):
    try:
        return call()
    except Exception as exc:
        raise BacktestError(f"origin {quarter_label(int(panel.quarters[i]))} (h={horizon_label(panel.horizon)}): {exc}") from exc


def build_report(config: BacktestConfig, horizons: Sequence[HorizonResult]) -> ScoreReport:
    labels = [l for k, l in zip(config.models, config.labels) if k in SCORED_KINDS]
    reference = labels[0] if labels else ""
    rows = []
    for hr in horizons:
        pre = np.array([quarter_start(int(q)) <= config.pre_cutoff for q in hr.quarters])
        masks = {"full": np.ones(len(hr.quarters), dtype=bool), "pre": pre}
        hac = max(1, math.ceil(hr.horizon))
        for l in labels:
            means, dm = {}, {}
            for sample, mask in masks.items():
                means[sample] = {s: float(np.mean(hr.per_obs[l][s][mask])) if mask.any() else math.nan for s in SCHEMES}
                dm[sample] = {}
                for s in SCHEMES:
                    if l == reference or mask.sum() < 10:
                        dm[sample][s] = None
                        continue
                    try:
                        dm[sample][s] = dm_test(hr.per_obs[reference][s][mask], hr.per_obs[l][s][mask], hac, s)
                    except ValueError:
                        dm[sample][s] = None
            rows.append(ScoreRow(hr.horizon, l, means, dm))
    return ScoreReport(tuple(rows), reference, config.pre_cutoff)


@dataclass(frozen=True)
class BacktestResult:
    config: BacktestConfig
    horizons: tuple[HorizonResult, ...]
    report: ScoreReport

    @property
    def all_optimal(self) -> bool:
        return all(s == "optimal" for hr in self.horizons for s in hr.statuses)


def run_backtest(config: BacktestConfig, data: SeriesSet) -> BacktestResult:
    aligned = data.aligned()
    horizons = tuple(run_horizon(config, data, h, aligned) for h in config.horizons)
    return BacktestResult(config, horizons, build_report(config, horizons))


# --- output files -------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def score_table_rows(report: ScoreReport):
    header = ["horizon", "model"]
    header += [f"{sample}_{s}" for sample in ("full", "pre") for s in SCHEMES]
    header += [f"{sample}_{s}_dm" for sample in ("full", "pre") for s in SCHEMES]
    rows = []
    for r in report.rows:
        row = [horizon_label(r.horizon), r.model]
        row += [r.means[sample][s] for sample in ("full", "pre") for s in SCHEMES]
        row += [r.dm[sample][s].stars if r.dm[sample][s] is not None else "" for sample in ("full", "pre") for s in SCHEMES]
        rows.append(row)
    return header, rows


def format_table(report: ScoreReport) -> str:
    """Plain-text score table, one block per horizon."""
    lines = []
    head = f"{'':>4} {'model':<10}" + "".join(f"{'full ' + s:>11}" for s in SCHEMES) + "".join(f"{'pre ' + s:>11}" for s in SCHEMES)
    lines.append(head)
    current = None
    for r in report.rows:
        if r.horizon != current:
            current = r.horizon
            lines.append(f"h={horizon_label(r.horizon)}")
        cells = []
        for sample in ("full", "pre"):
            for s in SCHEMES:
                v = r.means[sample][s]
                d = r.dm[sample][s]
                txt = "nan" if not math.isfinite(v) else f"{v:.3f}"
                cells.append(f"{txt + (d.stars if d is not None else ''):>11}")
        lines.append(f"{'':>4} {r.model:<10}" + "".join(cells))
    lines.append(f"DM reference: {report.reference}; * 10%, ** 5%, *** 1%")
    return "\n".join(lines)


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def write_outputs(result: BacktestResult, out: Path, manifest_extra: Optional[dict] = None) -> list[Path]:
    """Write every result file under ``out``; returns the paths written."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    grid = cfg.grid
    written = []

    header, rows = score_table_rows(result.report)
    write_csv(out / "scores.csv", header, rows)
    written.append(out / "scores.csv")

    dm_rows = []
    for r in result.report.rows:
        for sample in ("full", "pre"):
            for s in SCHEMES:
                d = r.dm[sample][s]
                if d is not None:
                    dm_rows.append([horizon_label(r.horizon), r.model, result.report.reference, sample, s, d.statistic, d.p_value, d.stars])
    write_csv(out / "dm_tests.csv", ["horizon", "model", "reference", "sample", "scheme", "statistic", "p_value", "stars"], dm_rows)
    written.append(out / "dm_tests.csv")

    tau_cols = [f"{t:g}" for t in grid.taus]
    per_obs_rows = []
    for hr in result.horizons:
        for l in hr.predictions:
            for k, q in enumerate(hr.quarters):
                per_obs_rows.append(
                    [horizon_label(hr.horizon), l, quarter_label(int(q)), float(hr.y[k])]
                    + [float(v) for v in hr.predictions[l][k]]
                    + [float(v) for v in hr.qs[l][k]]
                    + [float(hr.per_obs[l][s][k]) for s in SCHEMES]
                )
    write_csv(
        out / "scores_per_obs.csv",
        ["horizon", "model", "quarter", "y"] + [f"q_{t}" for t in tau_cols] + [f"qs_{t}" for t in tau_cols] + list(SCHEMES),
        per_obs_rows,
    )
    written.append(out / "scores_per_obs.csv")

    for hr in result.horizons:
        hl = horizon_label(hr.horizon)
        for var, surf in export_surface(hr.full_fits, hr.horizon, grid).items():
            p = out / f"surface_{var}_{hl}.csv"
            write_csv(p, ["model", "variable", "tau", "lag", "gamma"], [(m, var, t, lag, g) for m, t, lag, g in surf.rows])
            written.append(p)
        variables = [v for v, _ in next(iter(hr.full_fits.values())).transforms] if hr.full_fits else []
        for var in variables:
            rows = []
            for l, fit in hr.full_fits.items():
                if isinstance(dict(fit.transforms)[var], LagAverage):
                    continue
                for tau, v in zip(grid.taus, overall_effects(fit, var)):
                    rows.append((l, var, tau, float(v)))
            p = out / f"overall_{var}_{hl}.csv"
            write_csv(p, ["model", "variable", "tau", "overall"], rows)
            written.append(p)
        for label in cfg.density_quarters:
            q = parse_quarter_label(label)
            hit = np.flatnonzero(hr.quarters == q)
            if not len(hit):
                continue
            rows = []
            for l, pred in hr.predictions.items():
                dens = density_from_quantiles(pred[hit[0]], grid)
                rows += [(l, float(x), float(f), float(c)) for x, f, c in zip(dens.support, dens.pdf, dens.cdf)]
            p = out / f"density_{quarter_label(q)}_{hl}.csv"
            write_csv(p, ["model", "y", "pdf", "cdf"], rows)
            written.append(p)
        if hr.selection is not None:
            p = out / f"cv_audit_{hl}.csv"
            hr.selection.write_audit(p)
            written.append(p)

    manifest = {
        "version": __version__,
        "solver": {"backend": "highs-ds", "tol": cfg.tol, "max_iter": "50 * columns"},
        "horizons": [horizon_label(h) for h in cfg.horizons],
        "models": list(cfg.labels),
        "alpha": {horizon_label(hr.horizon): hr.alpha for hr in result.horizons},
        "all_optimal": result.all_optimal,
        "files": sorted(p.name for p in written),
    }
    manifest.update(manifest_extra or {})
    p = out / "run_manifest.json"
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(p)
    return written
