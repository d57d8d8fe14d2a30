from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest

from immcausal.market_data import MarketMeta, ReturnPanel, Zone, load_market_meta


def make_markets(n: int, zone: Zone = Zone.AMERICA) -> tuple[MarketMeta, ...]:
    return tuple(MarketMeta(f"M{i + 1}", f"Market {i + 1}", zone, i + 1) for i in range(n))


def daily_dates(start: str, end: str) -> np.ndarray:
    """Weekdays between two ISO dates inclusive."""
    days = np.arange(np.datetime64(start, "D"), np.datetime64(end, "D") + 1)
    return days[np.is_busday(days)]


@pytest.fixture
def canonical_markets():
    return load_market_meta()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_return_panel(rng, n_markets: int, start: str, end: str) -> ReturnPanel:
    dates = daily_dates(start, end)
    return ReturnPanel(make_markets(n_markets), dates, rng.normal(0, 0.01, (n_markets, len(dates))))


def brute_force_te(xs, ys, lag):
    """H(Y|Y1) - H(Y|Y1,X) by enumerating the aligned samples."""
    start = max(lag, 1)
    samples = [(ys[t], ys[t - 1], xs[t - lag]) for t in range(start, len(ys))]
    n = len(samples)
    yy1 = Counter((a, b) for a, b, _ in samples)
    y1 = Counter(b for _, b, _ in samples)
    full = Counter(samples)
    y1x = Counter((b, c) for _, b, c in samples)
    h_own = -sum(c / n * math.log(c / y1[b]) for (a, b), c in yy1.items())
    h_both = -sum(c / n * math.log(c / y1x[(b, x)]) for (a, b, x), c in full.items())
    return h_own - h_both
