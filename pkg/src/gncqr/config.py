"""Run configuration files (JSON)."""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from .backtest import ALPHA_MODES, BacktestConfig, HighFreqInput, SeriesSet
from .dataset import as_horizon, horizon_label, parse_quarter_label, read_series_csv
from .solver import DEFAULT_TOL, QuantileGrid
from .tuning import DEFAULT_ALPHA_GRID

TOP_KEYS = {
    "target", "target_id", "ar_lags", "high_freq", "horizons", "start_size", "models", "quantiles",
    "alpha", "pre_cutoff", "density_quarters", "output_dir", "seed", "log_level", "tol",
}
HF_KEYS = {"id", "path", "frequency", "lags", "poly_order", "restricted"}
ALPHA_KEYS = {"mode", "value", "grid", "folds", "loss"}
LOG_LEVELS = ("error", "warning", "info", "debug")


class ConfigError(ValueError):
    pass


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")


@dataclass(frozen=True)
class HighFreqSpec:
    id: str
    path: Path
    frequency: str
    lags: int
    poly_order: int = 3
    restricted: bool = True


@dataclass(frozen=True)
class RunConfig:
    target: Path
    target_id: str
    ar_lags: int
    high_freq: tuple[HighFreqSpec, ...]
    backtest: BacktestConfig
    output_dir: Path
    seed: int
    log_level: str
    raw: dict

    def load_data(self) -> SeriesSet:
        target = read_series_csv(self.target, self.target_id, "quarterly")
        hf = tuple(
            HighFreqInput(s.id, read_series_csv(s.path, s.id, s.frequency), s.lags, s.poly_order, s.restricted)
            for s in self.high_freq
        )
        return SeriesSet(target, hf, self.ar_lags)

    def hashable(self) -> dict:
        """Config content that determines results (paths and output location excluded)."""
        out = {k: v for k, v in self.raw.items() if k not in ("output_dir", "log_level", "target")}
        out["high_freq"] = [{k: v for k, v in hf.items() if k != "path"} for hf in self.raw.get("high_freq", [])]
        return out


def _int(obj, key, default, where, minimum=None) -> int:
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}.{key}: must be >= {minimum}")
    return v


def parse_config(raw: dict[str, Any], base: Path = Path(".")) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, TOP_KEYS, "config")
    if "target" not in raw:
        raise ConfigError("config: missing 'target'")
    hf_raw = raw.get("high_freq", [])
    if not isinstance(hf_raw, list):
        raise ConfigError("config.high_freq: expected a list")
    hfs = []
    for i, item in enumerate(hf_raw):
        where = f"config.high_freq[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{where}: expected an object")
        _reject_unknown(item, HF_KEYS, where)
        for key in ("id", "path", "frequency", "lags"):
            if key not in item:
                raise ConfigError(f"{where}: missing {key!r}")
        if item["frequency"] not in ("weekly", "monthly"):
            raise ConfigError(f"{where}.frequency: must be 'weekly' or 'monthly'")
        hfs.append(
            HighFreqSpec(
                id=str(item["id"]),
                path=(base / item["path"]).resolve(),
                frequency=item["frequency"],
                lags=_int(item, "lags", None, where, 1),
                poly_order=_int(item, "poly_order", 3, where, 0),
                restricted=bool(item.get("restricted", True)),
            )
        )
    ids = [h.id for h in hfs]
    target_id = str(raw.get("target_id", "GDP"))
    if len(set(ids)) != len(ids) or target_id in ids:
        raise ConfigError("config: series ids must be unique")

    alpha = raw.get("alpha", {})
    if not isinstance(alpha, dict):
        raise ConfigError("config.alpha: expected an object")
    _reject_unknown(alpha, ALPHA_KEYS, "config.alpha")
    mode = alpha.get("mode", "cv-once")
    if mode not in ALPHA_MODES:
        raise ConfigError(f"config.alpha.mode: must be one of {ALPHA_MODES}")
    try:
        horizons = tuple(as_horizon(h) for h in raw["horizons"]) if "horizons" in raw else None
        pre_cutoff = dt.date.fromisoformat(raw.get("pre_cutoff", "2019-12-31"))
        for q in raw.get("density_quarters", []):
            parse_quarter_label(q)
        kwargs = dict(
            start_size=_int(raw, "start_size", 40, "config", 2),
            models=tuple(raw.get("models", ("gncqr", "midas-qr", "qr", "umidas"))),
            grid=QuantileGrid(tuple(raw["quantiles"])) if "quantiles" in raw else QuantileGrid(),
            alpha_mode=mode,
            alpha=None if alpha.get("value") is None else float(alpha["value"]),
            alpha_grid=tuple(float(a) for a in alpha.get("grid", DEFAULT_ALPHA_GRID)),
            cv_folds=_int(alpha, "folds", 10, "config.alpha", 2),
            cv_loss=alpha.get("loss", "w1"),
            pre_cutoff=pre_cutoff,
            density_quarters=tuple(raw.get("density_quarters", ("2008Q2",))),
            tol=float(raw.get("tol", DEFAULT_TOL)),
        )
        if horizons is not None:
            kwargs["horizons"] = horizons
        bt = BacktestConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config: {exc}") from None
    log_level = raw.get("log_level", "warning")
    if log_level not in LOG_LEVELS:
        raise ConfigError(f"config.log_level: must be one of {LOG_LEVELS}")
    return RunConfig(
        target=(base / raw["target"]).resolve(),
        target_id=target_id,
        ar_lags=_int(raw, "ar_lags", 1, "config", 0),
        high_freq=tuple(hfs),
        backtest=bt,
        output_dir=(base / raw.get("output_dir", "out")).resolve(),
        seed=_int(raw, "seed", 0, "config"),
        log_level=log_level,
        raw=raw,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return parse_config(raw, path.parent)


def example_config(target: str, nfci: str, ip: str, horizons: Optional[list] = None) -> dict:
    return {
        "target": target,
        "ar_lags": 1,
        "high_freq": [
            {"id": "NFCI", "path": nfci, "frequency": "weekly", "lags": 12, "poly_order": 3},
            {"id": "IP", "path": ip, "frequency": "monthly", "lags": 6, "poly_order": 3},
        ],
        "horizons": horizons or [horizon_label(h) for h in BacktestConfig().horizons],
        "start_size": 40,
        "models": ["gncqr", "midas-qr", "qr", "umidas"],
        "alpha": {"mode": "cv-once", "folds": 10},
        "output_dir": "out",
        "seed": 0,
    }
