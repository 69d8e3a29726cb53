"""Synthetic mixed-frequency growth-at-risk data.

The generating process has a weekly financial-conditions index whose lags
shift both the location and the spread of next quarter's growth, and a
monthly activity index that only shifts the location.  Lag weights follow a
tail-restricted Almon shape ``(M - m)^2`` so effects fade to zero at the
longest lag.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dataset import HighFrequencyBlock, MixedFrequencyDataset, RawSeries, quarter_start, week_end_date


@dataclass(frozen=True)
class GarDgp:
    mu: float = 2.0
    rho: float = 0.3
    nfci_effect: float = -1.5
    nfci_scale_effect: float = 0.6
    ip_effect: float = 1.0
    sigma: float = 1.0
    nfci_ar: float = 0.7
    ip_ar: float = 0.3
    nfci_lags: int = 12
    ip_lags: int = 6


def tail_weights(M: int) -> np.ndarray:
    """Lag weights proportional to ``(M - m)^2`` for ``m = 1..M``, summing to one."""
    m = np.arange(1, M + 1)
    w = (M - m) ** 2.0
    return w / w.sum()


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    e = rng.standard_normal(n) * np.sqrt(1.0 - phi**2)
    x = np.empty(n)
    x[0] = rng.standard_normal()
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    return x


def _simulate(dgp: GarDgp, n_quarters: int, rng: np.random.Generator, burn: int = 20):
    """Weekly/monthly paths on the 12-weeks-per-quarter grid and the target."""
    total = n_quarters + burn
    weeks = _ar1(rng, 12 * total, dgp.nfci_ar)
    months = _ar1(rng, 3 * total, dgp.ip_ar)
    wn = tail_weights(dgp.nfci_lags)
    wi = tail_weights(dgp.ip_lags)
    y = np.zeros(total)
    first = max(-(-dgp.nfci_lags // 12), -(-dgp.ip_lags // 3)) + 1
    for s in range(first, total):
        wlags = weeks[12 * s - 1 :: -1][: dgp.nfci_lags]
        mlags = months[3 * s - 1 :: -1][: dgp.ip_lags]
        fin = wlags @ wn
        scale = dgp.sigma * np.exp(dgp.nfci_scale_effect * fin)
        y[s] = (
            dgp.mu * (1 - dgp.rho)
            + dgp.rho * y[s - 1]
            + dgp.nfci_effect * fin
            + dgp.ip_effect * (mlags @ wi)
            + scale * rng.standard_normal()
        )
    return weeks, months, y, burn


def simulate_panel(n_rows: int, seed: int = 0, dgp: GarDgp = GarDgp(), start_quarter: int = 4 * 1970) -> MixedFrequencyDataset:
    """One-quarter-ahead MIDAS panel drawn directly from the generating process."""
    rng = np.random.default_rng(seed)
    weeks, months, y, burn = _simulate(dgp, n_rows, rng)
    rows = np.arange(burn, burn + n_rows)
    W = np.array([weeks[12 * s - 1 :: -1][: dgp.nfci_lags] for s in rows])
    V = np.array([months[3 * s - 1 :: -1][: dgp.ip_lags] for s in rows])
    quarters = np.arange(start_quarter, start_quarter + n_rows)
    cut = tuple(week_end_date(12 * int(q) - 1) for q in quarters)
    return MixedFrequencyDataset(
        target=y[rows],
        low_freq_block=np.column_stack([np.ones(n_rows), y[rows - 1]]),
        low_freq_names=("const", "GDP_lag1"),
        high_freq_blocks=(
            HighFrequencyBlock("NFCI", "weekly", W, cut),
            HighFrequencyBlock("IP", "monthly", V, cut),
        ),
        horizon=Fraction(1),
        quarters=quarters,
        info_cutoff=cut,
        regressor_last_date=cut,
    )


def simulate_raw(n_quarters: int = 200, seed: int = 0, dgp: GarDgp = GarDgp(), start_year: int = 1973):
    """Raw series as they would arrive from a data provider.

    Returns quarterly ``GDP`` dated on the first day of each quarter, weekly
    ``NFCI`` reported every Friday and monthly ``IP`` dated on the first of
    the month.  Weekly reports are the calendar-week path held piecewise
    constant, so re-aligning them recovers values close to the generating path.
    """
    rng = np.random.default_rng(seed)
    weeks, months, y, burn = _simulate(dgp, n_quarters, rng)
    weeks, months, y = weeks[12 * burn :], months[3 * burn :], y[burn:]
    q0 = 4 * start_year
    gdp = RawSeries.from_pairs("GDP", "quarterly", [(quarter_start(q0 + i), float(y[i])) for i in range(n_quarters)])

    ip = []
    for g in range(3 * n_quarters):
        year, month = divmod(12 * start_year + g, 12)
        ip.append((dt.date(year, month + 1, 1), float(months[g])))

    # week k of the grid covers a stretch of calendar days; sample it on Fridays
    first = dt.date(start_year, 1, 1)
    last = week_end_date(4 * (12 * start_year) + 12 * n_quarters - 1)
    day = first + dt.timedelta(days=(4 - first.weekday()) % 7)
    nfci = []
    while day <= last:
        g = 12 * (day.year - start_year) + day.month - 1
        k = 4 * g + min((day.day - 1) // 7, 3)
        nfci.append((day, float(weeks[k])))
        day += dt.timedelta(days=7)
    return {
        "GDP": gdp,
        "NFCI": RawSeries.from_pairs("NFCI", "weekly", nfci),
        "IP": RawSeries.from_pairs("IP", "monthly", ip),
    }
