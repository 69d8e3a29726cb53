"""Raw series ingestion, calendar-week alignment and MIDAS panel construction.

Time is indexed on a common grid where a quarter holds 3 months and a month
holds exactly 4 calendar weeks, so a quarter holds 12 weeks.  Global indices:

* quarter ``q = 4 * year + (month - 1) // 3``
* month ``g = 12 * year + month - 1`` (quarter ``q`` spans months ``3q .. 3q+2``)
* week ``k = 4 * g + week - 1`` (quarter ``q`` spans weeks ``12q .. 12q+11``)

A horizon ``h`` (in quarters, a multiple of 1/12) for target quarter ``s`` makes
every week with index below ``12 * (s + 1) - 12 * h`` available.
"""
from __future__ import annotations

import calendar
import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

import numpy as np

FREQUENCIES = ("quarterly", "monthly", "weekly")
WEEK_WINDOWS = ((1, 7), (8, 14), (15, 21), (22, None))
MAX_REPORT_GAP_DAYS = 28


class DataError(ValueError):
    """Raised for malformed or insufficient input data."""


@dataclass(frozen=True)
class RawSeries:
    id: str
    frequency: str
    dates: tuple[dt.date, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.frequency not in FREQUENCIES:
            raise DataError(f"{self.id}: unknown frequency {self.frequency!r}")
        values = np.asarray(self.values, dtype=float)
        if len(values) != len(self.dates):
            raise DataError(f"{self.id}: {len(self.dates)} dates but {len(values)} values")
        if not np.all(np.isfinite(values)):
            raise DataError(f"{self.id}: non-finite values")
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise DataError(f"{self.id}: dates must be strictly increasing ({a} then {b})")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_pairs(cls, id: str, frequency: str, pairs) -> "RawSeries":
        """Build a series from unsorted ``(date, value)`` pairs."""
        pairs = sorted(pairs, key=lambda p: p[0])
        for (a, _), (b, _) in zip(pairs, pairs[1:]):
            if a == b:
                raise DataError(f"{id}: duplicate date {a}")
        return cls(id, frequency, tuple(p[0] for p in pairs), np.array([p[1] for p in pairs], dtype=float))

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class CalendarWeeklySeries:
    id: str
    year: np.ndarray
    month: np.ndarray
    week: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def rows(self):
        return zip(self.year.tolist(), self.month.tolist(), self.week.tolist(), self.values.tolist())

    @property
    def week_index(self) -> np.ndarray:
        return (12 * self.year + self.month - 1) * 4 + self.week - 1


def read_series_csv(path: Union[str, Path], id: str, frequency: str) -> RawSeries:
    """Read a ``date,value`` CSV file.  Rows may be in any order."""
    path = Path(path)
    pairs = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "value"]:
            raise DataError(f"{path}: line 1: expected header 'date,value', got {header!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}: line {line}: expected 2 fields, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise DataError(f"{path}: line {line}: bad date {row[0]!r}") from None
            try:
                value = float(row[1])
            except ValueError:
                raise DataError(f"{path}: line {line}: bad value {row[1]!r}") from None
            if not math.isfinite(value):
                raise DataError(f"{path}: line {line}: non-finite value")
            pairs.append((date, value))
    if not pairs:
        raise DataError(f"{path}: no observations")
    try:
        return RawSeries.from_pairs(id, frequency, pairs)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_series_csv(series: RawSeries, path: Union[str, Path]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "value"])
        for d, v in zip(series.dates, series.values.tolist()):
            w.writerow([d.isoformat(), repr(v)])


def to_calendar_weeks(s: RawSeries) -> CalendarWeeklySeries:
    """Convert a weekly series to four calendar weeks per month.

    Each report is copied to every day from its date until the day before the
    next report; the last report is carried to the end of its month.  Week
    values are means over days 1-7, 8-14, 15-21 and 22-end of month.  Only
    months in which every day has a value are emitted.
    """
    if len(s) == 0:
        raise DataError(f"{s.id}: empty input")
    if s.frequency != "weekly":
        raise DataError(f"{s.id}: expected weekly series, got {s.frequency}")
    dates = list(s.dates)
    for a, b in zip(dates, dates[1:]):
        if (b - a).days > MAX_REPORT_GAP_DAYS:
            raise DataError(f"{s.id}: coverage gap of {(b - a).days} days after {a}")

    first, last = dates[0], dates[-1]
    end = dt.date(last.year, last.month, calendar.monthrange(last.year, last.month)[1])
    n_days = (end - first).days + 1
    offsets = np.array([(d - first).days for d in dates])
    # index of the report in force on each day
    which = np.searchsorted(offsets, np.arange(n_days), side="right") - 1
    daily = s.values[which]

    years, months, weeks, out = [], [], [], []
    y, m = first.year, first.month
    if first.day != 1:
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    while dt.date(y, m, 1) <= end:
        month_len = calendar.monthrange(y, m)[1]
        start = (dt.date(y, m, 1) - first).days
        for k, (lo, hi) in enumerate(WEEK_WINDOWS, start=1):
            hi = month_len if hi is None else hi
            years.append(y)
            months.append(m)
            weeks.append(k)
            out.append(float(np.mean(daily[start + lo - 1:start + hi])))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    if not out:
        raise DataError(f"{s.id}: no fully covered calendar month")
    return CalendarWeeklySeries(
        s.id,
        np.array(years, dtype=int),
        np.array(months, dtype=int),
        np.array(weeks, dtype=int),
        np.array(out, dtype=float),
    )


def quarter_index(d: dt.date) -> int:
    return 4 * d.year + (d.month - 1) // 3


def quarter_label(q: int) -> str:
    return f"{q // 4}Q{q % 4 + 1}"


def quarter_start(q: int) -> dt.date:
    return dt.date(q // 4, 3 * (q % 4) + 1, 1)


def parse_quarter_label(label: str) -> int:
    year, _, qq = label.upper().partition("Q")
    return 4 * int(year) + int(qq) - 1


def week_end_date(k: int) -> dt.date:
    """Last calendar day of global week ``k``."""
    g, w = divmod(k, 4)
    year, month = divmod(g, 12)
    month += 1
    day = calendar.monthrange(year, month)[1] if w == 3 else 7 * (w + 1)
    return dt.date(year, month, day)


def month_end_date(g: int) -> dt.date:
    year, month = divmod(g, 12)
    return dt.date(year, month + 1, calendar.monthrange(year, month + 1)[1])


def quarter_end_date(q: int) -> dt.date:
    return month_end_date(3 * q + 2)


def as_horizon(h) -> Fraction:
    """Normalise a horizon to a multiple of 1/12 quarter.

    Decimal inputs such as ``0.08`` or ``0.42`` snap to the nearest twelfth
    when within 0.05 of it.
    """
    if isinstance(h, str):
        h = h.strip()
        frac = Fraction(h) if "/" in h else None
        if frac is None:
            h = float(h)
        else:
            h = frac
    if isinstance(h, (int, Fraction)):
        frac = Fraction(h)
    else:
        if not math.isfinite(h):
            raise DataError(f"invalid horizon {h!r}")
        twelfths = round(h * 12)
        if abs(h * 12 - twelfths) > 0.05 * 12:
            raise DataError(f"horizon {h} is not a multiple of 1/12 quarter")
        frac = Fraction(twelfths, 12)
    if frac < 0:
        raise DataError(f"horizon must be non-negative, got {h}")
    if (frac * 12).denominator != 1:
        raise DataError(f"horizon {frac} is not a multiple of 1/12 quarter")
    return frac


def horizon_label(h) -> str:
    h = as_horizon(h)
    if h.denominator == 1:
        return str(h.numerator)
    return f"{float(h):.2f}"


@dataclass(frozen=True)
class HighFrequencyBlock:
    id: str
    frequency: str
    W: np.ndarray
    last_date: tuple[dt.date, ...]

    @property
    def M(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class MixedFrequencyDataset:
    """Aligned estimation panel for one horizon.

    ``W`` blocks hold lags most recent first.  ``info_cutoff`` is the last day
    of information available for the row and ``regressor_last_date`` the date
    of the newest regressor actually used.
    """

    target: np.ndarray
    low_freq_block: np.ndarray
    low_freq_names: tuple[str, ...]
    high_freq_blocks: tuple[HighFrequencyBlock, ...]
    horizon: Fraction
    quarters: np.ndarray
    info_cutoff: tuple[dt.date, ...]
    regressor_last_date: tuple[dt.date, ...]

    def __len__(self) -> int:
        return len(self.target)

    @property
    def t_index(self) -> list[str]:
        return [quarter_label(int(q)) for q in self.quarters]

    def block(self, id: str) -> HighFrequencyBlock:
        for b in self.high_freq_blocks:
            if b.id == id:
                return b
        raise KeyError(id)

    def subset(self, rows) -> "MixedFrequencyDataset":
        rows = np.asarray(rows, dtype=int)
        return MixedFrequencyDataset(
            target=self.target[rows],
            low_freq_block=self.low_freq_block[rows],
            low_freq_names=self.low_freq_names,
            high_freq_blocks=tuple(
                HighFrequencyBlock(b.id, b.frequency, b.W[rows], tuple(b.last_date[i] for i in rows))
                for b in self.high_freq_blocks
            ),
            horizon=self.horizon,
            quarters=self.quarters[rows],
            info_cutoff=tuple(self.info_cutoff[i] for i in rows),
            regressor_last_date=tuple(self.regressor_last_date[i] for i in rows),
        )


def _monthly_lookup(s: RawSeries) -> dict[int, float]:
    out = {}
    for d, v in zip(s.dates, s.values.tolist()):
        g = 12 * d.year + d.month - 1
        if g in out:
            raise DataError(f"{s.id}: two observations in month {d.year}-{d.month:02d}")
        out[g] = v
    return out


def _quarterly_lookup(s: RawSeries) -> dict[int, float]:
    out = {}
    for d, v in zip(s.dates, s.values.tolist()):
        q = quarter_index(d)
        if q in out:
            raise DataError(f"{s.id}: two observations in quarter {quarter_label(q)}")
        out[q] = v
    return out


def build_panel(
    target: RawSeries,
    hf: Sequence[Union[CalendarWeeklySeries, RawSeries]],
    lags: Sequence[int],
    horizon,
    ar_lags: int = 1,
) -> MixedFrequencyDataset:
    """Assemble the MIDAS estimation panel for one horizon.

    Rows pair ``y`` of target quarter ``s`` with the ``ar_lags`` most recent
    fully observed quarters of ``y`` and the ``M`` most recent available
    high-frequency observations.  Rows with any missing cell are dropped.
    """
    h = as_horizon(horizon)
    if len(hf) != len(lags):
        raise DataError("one lag count per high-frequency series is required")
    if ar_lags < 0:
        raise DataError("ar_lags must be non-negative")
    shift = int(h * 12)

    y = _quarterly_lookup(target)
    sources = []
    for s, M in zip(hf, lags):
        if M < 1:
            raise DataError(f"{s.id}: lag count must be positive")
        if isinstance(s, CalendarWeeklySeries):
            sources.append(("weekly", s.id, dict(zip(s.week_index.tolist(), s.values.tolist())), M))
        elif s.frequency == "monthly":
            sources.append(("monthly", s.id, _monthly_lookup(s), M))
        else:
            raise DataError(f"{s.id}: high-frequency series must be calendar-weekly or monthly")

    rows = []
    for s_q in sorted(y):
        avail_end = 12 * (s_q + 1) - shift
        last_q = avail_end // 12
        ar = [last_q - l for l in range(1, ar_lags + 1)]
        if any(q not in y for q in ar):
            continue
        newest = [quarter_end_date(ar[0])] if ar else []
        blocks = []
        ok = True
        for kind, _, lookup, M in sources:
            top = avail_end if kind == "weekly" else avail_end // 4
            idx = [top - m for m in range(1, M + 1)]
            if any(i not in lookup for i in idx):
                ok = False
                break
            blocks.append([lookup[i] for i in idx])
            newest.append(week_end_date(idx[0]) if kind == "weekly" else month_end_date(idx[0]))
        if not ok:
            continue
        rows.append((s_q, [y[q] for q in ar], blocks, week_end_date(avail_end - 1), max(newest) if newest else None))

    if not rows:
        raise DataError(
            f"no feasible panel rows for h={h}: lags {list(lags)} exceed available history; "
            f"first feasible target quarter would be {quarter_label(_first_feasible(y, sources, shift, ar_lags))}"
        )

    T = len(rows)
    X = np.ones((T, 1 + ar_lags))
    for i, r in enumerate(rows):
        X[i, 1:] = r[1]
    blocks = tuple(
        HighFrequencyBlock(
            id=src[1],
            frequency=src[0],
            W=np.array([r[2][j] for r in rows], dtype=float).reshape(T, src[3]),
            last_date=tuple(_newest_date(src[0], 12 * (r[0] + 1) - shift) for r in rows),
        )
        for j, src in enumerate(sources)
    )
    return MixedFrequencyDataset(
        target=np.array([y[r[0]] for r in rows]),
        low_freq_block=X,
        low_freq_names=("const",) + tuple(f"{target.id}_lag{l}" for l in range(1, ar_lags + 1)),
        high_freq_blocks=blocks,
        horizon=h,
        quarters=np.array([r[0] for r in rows], dtype=int),
        info_cutoff=tuple(r[3] for r in rows),
        regressor_last_date=tuple(r[4] if r[4] is not None else r[3] for r in rows),
    )


def _newest_date(kind: str, avail_end: int) -> dt.date:
    if kind == "weekly":
        return week_end_date(avail_end - 1)
    return month_end_date(avail_end // 4 - 1)


def _first_feasible(y, sources, shift, ar_lags) -> int:
    """Earliest target quarter whose lag windows start inside every series."""
    need = min(y) + ar_lags - 1 + math.ceil(shift / 12)
    for kind, _, lookup, M in sources:
        start = min(lookup) if lookup else 0
        if kind == "weekly":
            need = max(need, math.ceil((start + M + shift) / 12) - 1)
        else:
            need = max(need, math.ceil((start + M + math.ceil(shift / 4)) / 3) - 1)
    return need


@dataclass(frozen=True)
class ScalingMap:
    """Min-max scaling of a design matrix.

    ``raw_min``/``raw_max`` are the training extremes used to scale new rows;
    ``mean`` is the column mean after scaling (the constraint centre), so the
    scaled ``min`` and ``max`` are 0 and 1 for every non-intercept column.
    """

    raw_min: np.ndarray
    raw_max: np.ndarray
    mean: np.ndarray
    intercept: np.ndarray = field(repr=False)

    @property
    def min(self) -> np.ndarray:
        return np.where(self.intercept, 1.0, 0.0)

    @property
    def max(self) -> np.ndarray:
        return np.ones_like(self.mean)

    def apply(self, design: np.ndarray) -> np.ndarray:
        design = np.asarray(design, dtype=float)
        if design.ndim != 2 or design.shape[1] != len(self.mean):
            raise ValueError(f"design has {np.shape(design)[-1]} columns, scaling expects {len(self.mean)}")
        rng = np.where(self.intercept, 1.0, self.raw_max - self.raw_min)
        lo = np.where(self.intercept, 0.0, self.raw_min)
        out = (design - lo) / rng
        out[:, self.intercept] = 1.0
        return out

    def unscale_coefficients(self, delta: np.ndarray) -> np.ndarray:
        """Map coefficients on the scaled design back to raw regressor units."""
        delta = np.asarray(delta, dtype=float)
        rng = np.where(self.intercept, 1.0, self.raw_max - self.raw_min)
        raw = delta / rng[:, None]
        shift = (np.where(self.intercept, 0.0, self.raw_min)[:, None] * raw).sum(axis=0)
        icpt = np.flatnonzero(self.intercept)
        if len(icpt):
            raw[icpt[0]] -= shift
        return raw


def minmax_fit_apply(design: np.ndarray) -> tuple[np.ndarray, ScalingMap]:
    """Scale every non-intercept column to [0, 1].

    A column of all ones is treated as the intercept and left untouched; any
    other constant column is rejected.
    """
    design = np.asarray(design, dtype=float)
    lo = design.min(axis=0)
    hi = design.max(axis=0)
    intercept = (lo == 1.0) & (hi == 1.0)
    degenerate = (hi <= lo) & ~intercept
    if degenerate.any():
        raise DataError(f"constant regressor in column(s) {np.flatnonzero(degenerate).tolist()}")
    partial = ScalingMap(lo, hi, np.zeros(design.shape[1]), intercept)
    scaled = partial.apply(design)
    return scaled, ScalingMap(lo, hi, scaled.mean(axis=0), intercept)
