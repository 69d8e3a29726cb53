import datetime as dt
import sys

import numpy as np
import pytest

from gncqr.dataset import CalendarWeeklySeries, RawSeries, minmax_fit_apply, quarter_start


def calendar_weeks(id, first_month, n_months, value=lambda k: float(k)):
    """Calendar-weekly series whose value at global week ``k`` is ``value(k)``."""
    g = np.repeat(np.arange(first_month, first_month + n_months), 4)
    week = np.tile(np.arange(1, 5), n_months)
    k = 4 * g + week - 1
    return CalendarWeeklySeries(id, g // 12, g % 12 + 1, week, np.array([value(int(i)) for i in k]))


def monthly_series(id, first_month, n_months, value=lambda g: float(g)):
    pairs = [(dt.date(g // 12, g % 12 + 1, 1), value(g)) for g in range(first_month, first_month + n_months)]
    return RawSeries.from_pairs(id, "monthly", pairs)


def quarterly_series(id, first_quarter, n, value=lambda q: float(q)):
    return RawSeries.from_pairs(id, "quarterly", [(quarter_start(q), value(q)) for q in range(first_quarter, first_quarter + n)])


def random_instance(rng, T, K, noise="hetero"):
    """Unscaled design with an intercept in column 0 and a response."""
    X = rng.standard_normal((T, K))
    beta = rng.standard_normal(K)
    e = rng.standard_normal(T)
    if noise == "hetero":
        e = e * (1.0 + 0.5 * np.abs(X[:, 0]))
    y = X @ beta + e
    return np.column_stack([np.ones(T), X]), y


def scaled_instance(rng, T, K):
    design, y = random_instance(rng, T, K)
    scaled, scaling = minmax_fit_apply(design)
    return scaled, y, scaling


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = sorted(getattr(mod, "CRITERIA_LINES", []), key=lambda s: s[len("[PASS] criterion "):][:2])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
