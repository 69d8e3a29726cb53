"""Forecast scoring: quantile scores, quantile-weighted CRPS and Diebold-Mariano tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.stats import norm

from .solver import QuantileGrid, pinball

SCHEMES = ("w1", "w2", "w3", "w4")


def quantile_score(y, q_pred, tau):
    """Pinball loss of a quantile prediction; works elementwise on arrays."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any((tau_arr <= 0) | (tau_arr >= 1)):
        raise ValueError("tau must lie in (0, 1)")
    out = pinball(np.asarray(y, dtype=float) - np.asarray(q_pred, dtype=float), tau_arr)
    return float(out) if np.ndim(out) == 0 else out


def scheme_weights(taus, scheme: str) -> np.ndarray:
    """Quantile weights; ``w1`` averages, ``w2``-``w4`` are raw weighted sums."""
    taus = np.asarray(taus, dtype=float)
    if scheme == "w1":
        return np.full(len(taus), 1.0 / len(taus))
    if scheme == "w2":
        return taus * (1.0 - taus)
    if scheme == "w3":
        return (1.0 - taus) ** 2
    if scheme == "w4":
        return taus**2
    raise ValueError(f"unknown weighting scheme {scheme!r}")


def qwcrps(qs_row, grid: QuantileGrid, scheme: str = "w1"):
    """Quantile-weighted CRPS of one QS vector, or of each row of a QS matrix."""
    qs = np.asarray(qs_row, dtype=float)
    if qs.shape[-1] != len(grid):
        raise ValueError(f"QS has {qs.shape[-1]} quantiles, grid has {len(grid)}")
    out = qs @ scheme_weights(grid.taus, scheme)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class QuantileScorePanel:
    qs: np.ndarray
    grid: QuantileGrid
    horizon: str = ""

    @classmethod
    def from_predictions(cls, y, pred, grid: QuantileGrid, horizon: str = "") -> "QuantileScorePanel":
        y = np.asarray(y, dtype=float)
        pred = np.atleast_2d(np.asarray(pred, dtype=float))
        return cls(quantile_score(y[:, None], pred, grid.array[None, :]), grid, horizon)

    def qwcrps(self, scheme: str = "w1") -> np.ndarray:
        return qwcrps(self.qs, self.grid, scheme)


@dataclass(frozen=True)
class QwCrpsReport:
    per_obs: dict[str, np.ndarray]
    label: str = "full"

    @classmethod
    def from_panel(cls, panel: QuantileScorePanel, label: str = "full") -> "QwCrpsReport":
        return cls({s: panel.qwcrps(s) for s in SCHEMES}, label)

    @property
    def means(self) -> dict[str, float]:
        return {s: float(np.mean(v)) if len(v) else math.nan for s, v in self.per_obs.items()}

    def subset(self, mask, label: str) -> "QwCrpsReport":
        mask = np.asarray(mask, dtype=bool)
        return QwCrpsReport({s: v[mask] for s, v in self.per_obs.items()}, label)


@dataclass(frozen=True)
class DmResult:
    statistic: float
    p_value: float
    loss_label: str = ""
    hac_lags: int = 0

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


def significance_stars(p: float) -> str:
    if not math.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


def newey_west_variance(d: np.ndarray, lags: int) -> float:
    """Long-run variance of ``d`` with Bartlett weights ``1 - k / (lags + 1)``."""
    d = np.asarray(d, dtype=float)
    n = len(d)
    e = d - d.mean()
    var = e @ e / n
    for k in range(1, lags + 1):
        var += 2.0 * (1.0 - k / (lags + 1)) * (e[k:] @ e[:-k]) / n
    return float(var)


def dm_test(loss_a, loss_b, hac_lags: int = 1, loss_label: str = "") -> DmResult:
    """Diebold-Mariano test; a positive statistic favours model ``a``."""
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("loss series must be 1-d and of equal length")
    if len(a) < 10:
        raise ValueError(f"need at least 10 observations, got {len(a)}")
    if hac_lags < 0:
        raise ValueError("hac_lags must be non-negative")
    d = b - a
    n = len(d)
    mean = float(d.mean())
    var = newey_west_variance(d, hac_lags)
    size = float(np.max(np.abs(d)))
    if var <= (1e-12 * size) ** 2:
        if abs(mean) <= 1e-12 * size or size == 0.0:
            return DmResult(0.0, 1.0, loss_label, hac_lags)
        raise ValueError("degenerate differential: zero variance with non-zero mean")
    stat = mean / math.sqrt(var / n)
    p = float(2.0 * norm.sf(abs(stat)))
    return DmResult(stat, min(1.0, p), loss_label, hac_lags)


@dataclass(frozen=True)
class DensityCurve:
    support: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    crossing: bool = False
    degenerate: bool = False
    quantiles: np.ndarray = field(default=None, repr=False)

    def n_modes(self) -> int:
        return count_modes(self.pdf)


def count_modes(pdf, rel_height: float = 1e-3) -> int:
    """Number of strict local maxima of a sampled density."""
    pdf = np.asarray(pdf, dtype=float)
    if len(pdf) < 3:
        return int(pdf.max() > 0)
    floor = rel_height * pdf.max()
    # collapse plateaus before comparing neighbours
    keep = np.concatenate([[True], np.diff(pdf) != 0])
    v = pdf[keep]
    if len(v) < 3:
        return 1
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:]) & (v[1:-1] > floor)
    return int(inner.sum() + (v[0] > v[1] and v[0] > floor) + (v[-1] > v[-2] and v[-1] > floor))


def density_from_quantiles(
    q_vec, grid: QuantileGrid, n_points: int = 401, tail: float = 0.5, spike_width: float = 1.0
) -> DensityCurve:
    """Density implied by a vector of predicted quantiles.

    The quantile function is interpolated with a monotone cubic on
    ``[tau_1, tau_Q]`` and inverted on an even support grid that extends
    ``tail * IQR`` beyond the outer quantiles.  Outside the outer quantiles
    the remaining probability ``tau_1`` and ``1 - tau_Q`` is spread uniformly
    over the tail segments.  Crossing inputs are sorted and flagged.
    """
    q = np.asarray(q_vec, dtype=float)
    taus = grid.array
    if q.shape != taus.shape:
        raise ValueError("quantile vector does not match the grid")
    crossing = bool(np.any(np.diff(q) < 0))
    if crossing:
        q = np.sort(q)

    if q[-1] == q[0]:
        support = np.linspace(q[0] - spike_width / 2, q[0] + spike_width / 2, n_points)
        dx = support[1] - support[0]
        pdf = np.zeros(n_points)
        mid = n_points // 2
        pdf[mid] = 1.0 / dx
        cdf = (np.arange(n_points) >= mid).astype(float)
        return DensityCurve(support, pdf, cdf, crossing, True, q)

    qf = PchipInterpolator(taus, q)
    lo_t, hi_t = taus[0], taus[-1]
    iqr_lo = float(qf(np.clip(0.25, lo_t, hi_t)))
    iqr_hi = float(qf(np.clip(0.75, lo_t, hi_t)))
    iqr = iqr_hi - iqr_lo
    if iqr <= 0:
        iqr = q[-1] - q[0]
    left, right = q[0] - tail * iqr, q[-1] + tail * iqr
    support = np.linspace(left, right, n_points)

    cdf = np.empty(n_points)
    below = support < q[0]
    above = support > q[-1]
    inside = ~below & ~above
    cdf[below] = lo_t * (support[below] - left) / (q[0] - left)
    cdf[above] = hi_t + (1.0 - hi_t) * (support[above] - q[-1]) / (right - q[-1])
    cdf[inside] = _invert_monotone(qf, support[inside], lo_t, hi_t)
    cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))

    # exact slopes where the quantile function is strictly increasing,
    # finite differences only across flat stretches (atoms)
    pdf = np.maximum(np.gradient(cdf, support), 0.0)
    pdf[below] = lo_t / (q[0] - left)
    pdf[above] = (1.0 - hi_t) / (right - q[-1])
    slope = qf.derivative()(cdf[inside])
    steep = slope > 1e-12 * (q[-1] - q[0])
    idx = np.flatnonzero(inside)[steep]
    pdf[idx] = 1.0 / slope[steep]
    return DensityCurve(support, pdf, cdf, crossing, False, q)


def _invert_monotone(qf, values: np.ndarray, lo: float, hi: float, iters: int = 60) -> np.ndarray:
    """Largest tau with ``qf(tau) <= value`` (a right-continuous CDF), by vectorised bisection."""
    a = np.full(len(values), lo)
    b = np.full(len(values), hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        up = qf(mid) > values
        b = np.where(up, mid, b)
        a = np.where(up, a, mid)
    return 0.5 * (a + b)


def score_sample_means(per_obs: dict[str, np.ndarray], mask=None) -> dict[str, float]:
    out = {}
    for s in SCHEMES:
        v = per_obs[s] if mask is None else per_obs[s][np.asarray(mask, dtype=bool)]
        out[s] = float(np.mean(v)) if len(v) else math.nan
    return out


def compare_models(losses: dict[str, np.ndarray], reference: str, hac_lags: int) -> dict[str, DmResult]:
    """DM test of every other model against ``reference``."""
    out = {}
    for name, loss in losses.items():
        if name == reference:
            continue
        out[name] = dm_test(losses[reference], loss, hac_lags, loss_label=name)
    return out
