"""Command-line entry point: ``gncqr {prepare,fit,tune,backtest,export,simulate}``.

Exit codes: 0 success, 1 data/config/solver error, 2 usage error, 3 when a
run finished but some fit did not reach an optimal solver status.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .almon import LagAverage
from .backtest import (
    MODEL_KINDS,
    BacktestError,
    config_hash,
    export_surface,
    format_table,
    overall_effects,
    run_backtest,
    write_csv,
    write_outputs,
)
from .config import LOG_LEVELS, ConfigError, RunConfig, example_config, load_config
from .dataset import DataError, as_horizon, horizon_label, quarter_label, write_series_csv
from .solver import SolverError, fit_from_dict, fit_joint, fit_to_dict, predict_dataset
from .synthetic import GarDgp, simulate_raw
from .tuning import TuningError, make_plan, select_alpha

log = logging.getLogger("gncqr")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NOT_OPTIMAL = 0, 1, 2, 3


def _horizon_arg(text: str):
    try:
        return as_horizon(text)
    except (ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="run configuration (JSON)")
    common.add_argument("--h", type=_horizon_arg, action="append", help="horizon in quarters, e.g. 1, 4, 0.42 or 5/12; repeatable")
    common.add_argument("--model", choices=MODEL_KINDS, help="model kind")
    common.add_argument("--alpha", type=_nonneg_float, help="fixed non-crossing tightness")
    common.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1, help="worker processes")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--dry-run", action="store_true", help="validate and print the plan without solving")

    p = argparse.ArgumentParser(prog="gncqr", description="Mixed-frequency joint quantile regression.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="write aligned weekly series and panels")
    sub.add_parser("fit", parents=[common], help="fit one model on the full sample")
    sub.add_parser("tune", parents=[common], help="select alpha by hv-block cross-validation")
    sub.add_parser("backtest", parents=[common], help="expanding-window evaluation")
    ex = sub.add_parser("export", parents=[common], help="surfaces and overall effects from a saved fit")
    ex.add_argument("--fit", type=Path, required=True, help="fit JSON written by 'fit'")
    sim = sub.add_parser("simulate", parents=[common], help="write synthetic series and a config at --config")
    sim.add_argument("--quarters", type=_positive_int, default=200)
    return p


def _setup_logging(level: Optional[str]) -> None:
    env = os.environ.get("GNCQR_LOG")
    name = (env or level or "warning").lower()
    if name not in LOG_LEVELS:
        name = "warning"
    root = logging.getLogger("gncqr")
    root.setLevel(getattr(logging, name.upper()))
    for h in [h for h in root.handlers if getattr(h, "_gncqr", False)]:
        root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._gncqr = True
    root.addHandler(handler)


def _out_dir(args, cfg: RunConfig) -> Path:
    return (args.out if args.out is not None else cfg.output_dir).resolve()


def _horizons(args, cfg: RunConfig):
    return tuple(args.h) if args.h else cfg.backtest.horizons


def _single_horizon(args, cfg: RunConfig):
    hs = _horizons(args, cfg)
    if args.h and len(hs) > 1:
        raise ConfigError("this command takes a single --h")
    return hs[0] if args.h else as_horizon(1)


def _fmt_row(values) -> list:
    return [float(v) for v in values]


# --- prepare ----------------------------------------------------------------------------

def cmd_prepare(args, cfg: RunConfig) -> int:
    data = cfg.load_data()
    out = _out_dir(args, cfg)
    hs = _horizons(args, cfg)
    if args.dry_run:
        print(f"would write {len(data.high_freq)} aligned series and {len(hs)} panels to {out}")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    aligned = data.aligned()
    for hf, series in zip(data.high_freq, aligned):
        if hf.series.frequency == "weekly":
            write_csv(out / f"weekly_{hf.id}.csv", ["year", "month", "week", "value"], series.rows())
    for h in hs:
        panel = data.panel(h, aligned)
        header = ["quarter", "info_cutoff", "y"] + list(panel.low_freq_names)
        for b in panel.high_freq_blocks:
            header += [f"{b.id}_lag{m}" for m in range(1, b.M + 1)]
        rows = []
        for i in range(len(panel)):
            row = [quarter_label(int(panel.quarters[i])), panel.info_cutoff[i].isoformat(), float(panel.target[i])]
            row += _fmt_row(panel.low_freq_block[i])
            for b in panel.high_freq_blocks:
                row += _fmt_row(b.W[i])
            rows.append(row)
        write_csv(out / f"panel_{horizon_label(h)}.csv", header, rows)
        log.info("h=%s: %d panel rows", horizon_label(h), len(panel))
    return EXIT_OK


# --- fit / tune / export ----------------------------------------------------------------

def _select(cfg: RunConfig, panel, maps, jobs: int):
    bt = cfg.backtest
    plan = make_plan(len(panel), bt.cv_folds, panel.horizon)
    return select_alpha(panel, maps, bt.grid, bt.alpha_grid, plan, bt.cv_loss, jobs, bt.tol)


def _write_fit_files(out: Path, fit, label: str, h, panel=None) -> list[Path]:
    hl = horizon_label(h)
    grid = fit.grid
    taus = [f"{t:g}" for t in grid.taus]
    written = []
    p = out / f"coefficients_{label}_{hl}.csv"
    raw = fit.raw_coefficients
    write_csv(p, ["column"] + [f"tau_{t}" for t in taus], [[n] + _fmt_row(raw[j]) for j, n in enumerate(fit.column_names)])
    written.append(p)
    for var, surf in export_surface({label: fit}, h, grid).items():
        p = out / f"surface_{var}_{hl}.csv"
        write_csv(p, ["model", "variable", "tau", "lag", "gamma"], [(m, var, t, lag, g) for m, t, lag, g in surf.rows])
        written.append(p)
    for var, tr in fit.transforms:
        if isinstance(tr, LagAverage):
            continue
        p = out / f"overall_{var}_{hl}.csv"
        write_csv(p, ["model", "variable", "tau", "overall"], [(label, var, t, float(v)) for t, v in zip(grid.taus, overall_effects(fit, var))])
        written.append(p)
    if panel is not None:
        pred = predict_dataset(fit, panel)
        p = out / f"fitted_{label}_{hl}.csv"
        rows = [[quarter_label(int(q)), float(y)] + _fmt_row(pr) for q, y, pr in zip(panel.quarters, panel.target, pred)]
        write_csv(p, ["quarter", "y"] + [f"q_{t}" for t in taus], rows)
        written.append(p)
    return written


def cmd_fit(args, cfg: RunConfig) -> int:
    kind = args.model or "gncqr"
    h = _single_horizon(args, cfg)
    if kind != "gncqr" and args.alpha is not None:
        log.warning("--alpha is ignored for model %s", kind)
    data = cfg.load_data()
    panel = data.panel(h)
    maps = data.maps(kind)
    out = _out_dir(args, cfg)
    hl = horizon_label(h)
    alpha = None
    if kind == "gncqr":
        alpha = args.alpha if args.alpha is not None else cfg.backtest.alpha
    if args.dry_run:
        how = f"alpha={alpha}" if kind != "gncqr" or alpha is not None else "alpha by CV"
        print(f"would fit {kind} at h={hl} on {len(panel)} rows ({how}) into {out}")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    if kind == "gncqr" and alpha is None:
        sel = _select(cfg, panel, maps, args.jobs)
        sel.write_audit(out / f"cv_audit_{hl}.csv")
        alpha = sel.chosen_alpha
    mode = "adaptive" if kind == "gncqr" else "plain"
    fit = fit_joint(panel, maps, cfg.backtest.grid, mode, alpha, tol=cfg.backtest.tol)
    (out / f"fit_{kind}_{hl}.json").write_text(json.dumps(fit_to_dict(fit), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _write_fit_files(out, fit, kind, h, panel)
    print(f"{kind} h={hl}: status={fit.solver_status} objective={fit.objective_value:.6g}" + (f" alpha={alpha:g}" if alpha is not None else ""))
    return EXIT_OK if fit.solver_status == "optimal" else EXIT_NOT_OPTIMAL


def cmd_tune(args, cfg: RunConfig) -> int:
    data = cfg.load_data()
    out = _out_dir(args, cfg)
    hs = _horizons(args, cfg)
    if args.dry_run:
        bt = cfg.backtest
        print(f"would run {bt.cv_folds}-fold CV over {len(bt.alpha_grid)} alphas at {len(hs)} horizon(s)")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    maps = data.maps("gncqr")
    aligned = data.aligned()
    for h in hs:
        sel = _select(cfg, data.panel(h, aligned), maps, args.jobs)
        sel.write_audit(out / f"cv_audit_{horizon_label(h)}.csv")
        print(f"h={horizon_label(h)}: alpha={sel.chosen_alpha:g} cv={sel.cv_scores.min():.6g}")
    return EXIT_OK


def cmd_export(args, cfg: RunConfig) -> int:
    d = json.loads(args.fit.read_text(encoding="utf-8"))
    fit = fit_from_dict(d)
    h = _single_horizon(args, cfg)
    label = args.model or d.get("mode", "fit")
    out = _out_dir(args, cfg)
    if args.dry_run:
        print(f"would export {label} from {args.fit} into {out}")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    _write_fit_files(out, fit, label, h)
    return EXIT_OK


# --- backtest ---------------------------------------------------------------------------

def _backtest_config(args, cfg: RunConfig):
    bt = replace(cfg.backtest, jobs=args.jobs)
    if args.h:
        bt = replace(bt, horizons=tuple(args.h))
    if args.model:
        bt = replace(bt, models=(args.model,))
    if args.alpha is not None:
        bt = replace(bt, alpha_mode="fixed", alpha=args.alpha)
    return bt


def cmd_backtest(args, cfg: RunConfig) -> int:
    bt = _backtest_config(args, cfg)
    data = cfg.load_data()
    out = _out_dir(args, cfg)
    if args.dry_run:
        aligned = data.aligned()
        for h in bt.horizons:
            panel = data.panel(h, aligned)
            n_origins = max(0, len(panel) - bt.start_size)
            print(f"h={horizon_label(h)}: {len(panel)} rows, about {n_origins} origins x {len(bt.models)} models, alpha {bt.alpha_mode}")
        return EXIT_OK

    if out.exists() and any(out.iterdir()) and not (out / "run_manifest.json").exists():
        raise ConfigError(f"{out} exists and is not a previous run directory; refusing to replace it")
    tmp = out.parent / f".{out.name}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        result = run_backtest(bt, data)
        hashed = cfg.hashable()
        hashed["cli"] = {"h": [horizon_label(h) for h in args.h] if args.h else None, "model": args.model, "alpha": args.alpha}
        extra = {"config_hash": config_hash(hashed), "seed": args.seed if args.seed is not None else cfg.seed}
        write_outputs(result, tmp, extra)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)
    print(format_table(result.report))
    if not result.all_optimal:
        log.error("some fits did not reach an optimal solution")
        return EXIT_NOT_OPTIMAL
    return EXIT_OK


# --- simulate ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else 0
    path = args.config.resolve()
    base = path.parent
    if args.dry_run:
        print(f"would write {args.quarters} quarters of synthetic data and {path}")
        return EXIT_OK
    base.mkdir(parents=True, exist_ok=True)
    raw = simulate_raw(args.quarters, seed, GarDgp())
    for name, series in raw.items():
        write_series_csv(series, base / f"{name}.csv")
    cfg = example_config("GDP.csv", "NFCI.csv", "IP.csv", [horizon_label(h) for h in args.h] if args.h else None)
    cfg["seed"] = seed
    path.write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "fit": cmd_fit, "tune": cmd_tune, "backtest": cmd_backtest, "export": cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(None)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        cfg = load_config(args.config)
        _setup_logging(cfg.log_level)
        return COMMANDS[args.command](args, cfg)
    except FileNotFoundError as exc:
        log.error("%s: %s", exc.filename, exc.strerror)
    except (ConfigError, DataError, BacktestError, TuningError, SolverError, KeyError, ValueError) as exc:
        log.error("%s", exc)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
