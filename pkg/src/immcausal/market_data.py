"""Ingestion, alignment and calendar segmentation of daily index panels.

Time axis convention
--------------------
Prices are indexed by trading day. A log return ``r[t] = ln P[t+1] - ln P[t]``
is stamped with the date of the later price, so a return panel is one day
shorter than the price panel it came from.

Segments are calendar-month windows. Window ``s`` (1-based) covers the
``window_months`` consecutive calendar months starting ``(s - 1) * step_months``
months after the month of the first return. Because months hold different
numbers of trading days, segments have unequal lengths.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigError, DataError, InsufficientDataError

MISSING_POLICIES = ("intersect", "forward-fill")
_MISSING_TOKENS = ("", "NA", "NaN", "nan", "null", ".")


class Zone(str, enum.Enum):
    ASIA = "Asia"
    EUROPE = "Europe"
    AMERICA = "America"


@dataclass(frozen=True)
class MarketMeta:
    market_id: str
    display_name: str
    zone: Zone
    order_index: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "zone", Zone(self.zone))
        if self.order_index < 1:
            raise ConfigError(f"order_index must be >= 1, got {self.order_index} for {self.market_id}")


def _check_markets(markets: Sequence[MarketMeta]) -> tuple[MarketMeta, ...]:
    markets = tuple(markets)
    if not markets:
        raise ConfigError("market metadata is empty")
    ids = [m.market_id for m in markets]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate market ids: {ids}")
    if sorted(m.order_index for m in markets) != list(range(1, len(markets) + 1)):
        raise ConfigError("order_index values must be a permutation of 1..M")
    return markets


def _as_dates(dates: Iterable) -> np.ndarray:
    return np.array(dates, dtype="datetime64[D]")


@dataclass(frozen=True, eq=False)
class PricePanel:
    markets: tuple[MarketMeta, ...]
    dates: np.ndarray
    prices: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "markets", _check_markets(self.markets))
        dates = _as_dates(self.dates)
        prices = np.array(self.prices, dtype=float)
        if prices.ndim != 2 or prices.shape != (len(self.markets), len(dates)):
            raise DataError(f"prices shape {prices.shape} does not match {len(self.markets)} markets x {len(dates)} dates")
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise DataError("prices must be finite and strictly positive")
        dates.flags.writeable = False
        prices.flags.writeable = False
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "prices", prices)

    @property
    def ids(self) -> list[str]:
        return [m.market_id for m in self.markets]


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    markets: tuple[MarketMeta, ...]
    dates: np.ndarray
    returns: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "markets", _check_markets(self.markets))
        dates = _as_dates(self.dates)
        returns = np.array(self.returns, dtype=float)
        if returns.ndim != 2 or returns.shape != (len(self.markets), len(dates)):
            raise DataError(f"returns shape {returns.shape} does not match {len(self.markets)} markets x {len(dates)} dates")
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise DataError("dates must be strictly increasing")
        dates.flags.writeable = False
        returns.flags.writeable = False
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "returns", returns)

    @property
    def ids(self) -> list[str]:
        return [m.market_id for m in self.markets]


@dataclass(frozen=True, eq=False)
class Segment:
    index: int
    start_month: np.datetime64
    end_month: np.datetime64
    dates: np.ndarray
    returns: np.ndarray

    @property
    def start_date(self) -> np.datetime64:
        return self.dates[0]

    @property
    def end_date(self) -> np.datetime64:
        return self.dates[-1]

    @property
    def length(self) -> int:
        return self.returns.shape[1]


@dataclass(frozen=True, eq=False)
class SegmentSeries:
    markets: tuple[MarketMeta, ...]
    segments: list[Segment] = field(default_factory=list)
    window_months: int = 12
    step_months: int = 1

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i: int) -> Segment:
        return self.segments[i]


def market_from_dict(d: dict) -> MarketMeta:
    try:
        return MarketMeta(
            market_id=str(d["id"]),
            display_name=str(d.get("name", d["id"])),
            zone=Zone(d["zone"]),
            order_index=int(d["order_index"]),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad market entry {d!r}: {exc}") from exc


def load_market_meta(path: str | Path | None = None) -> tuple[MarketMeta, ...]:
    """Read market metadata from YAML; ``None`` loads the packaged ten-market default."""
    if path is None:
        text = resources.files("immcausal.data").joinpath("markets.yaml").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read market metadata {path}: {exc}") from exc
    entries = yaml.safe_load(text)
    if not isinstance(entries, list):
        raise ConfigError("market metadata must be a list of {id, name, zone, order_index}")
    return _check_markets(market_from_dict(e) for e in entries)


def sort_markets(markets: Sequence[MarketMeta]) -> tuple[MarketMeta, ...]:
    return tuple(sorted(_check_markets(markets), key=lambda m: m.order_index))


def load_price_panel(
    source: str | Path,
    meta: Sequence[MarketMeta],
    policy: str = "intersect",
) -> PricePanel:
    """Load a ``date,<id1>,...`` CSV into a panel ordered by ``order_index``.

    ``intersect`` keeps only dates where every market has a value.
    ``forward-fill`` takes the union of dates and carries the last observation
    forward; dates before a market's first observation are still dropped.
    """
    if policy not in MISSING_POLICIES:
        raise ConfigError(f"unknown missing-data policy {policy!r}; expected one of {MISSING_POLICIES}")
    markets = sort_markets(meta)
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read price file {source}: {exc}") from exc
    if "date" not in frame.columns:
        raise ConfigError(f"{source}: missing 'date' column")
    ids = [m.market_id for m in markets]
    unknown = [i for i in ids if i not in frame.columns]
    if unknown:
        raise ConfigError(f"{source}: no column for market(s) {unknown}")

    try:
        dates = pd.to_datetime(frame["date"], format="%Y-%m-%d")
    except ValueError as exc:
        raise DataError(f"{source}: unparseable date: {exc}") from exc
    raw = frame[ids].apply(lambda col: col.str.strip())
    missing = raw.isin(_MISSING_TOKENS)
    try:
        # astype(float) parses with Python's float(), which round-trips %.17g exactly
        values = raw.mask(missing).astype(float)
    except ValueError:
        bad_text = raw.mask(missing).apply(pd.to_numeric, errors="coerce").isna() & ~missing
        row, col = _first_true(bad_text)
        raise DataError(f"{source}: non-numeric price at row {row + 2}, column {col!r}") from None
    nonpos = values.le(0)
    if nonpos.any().any():
        row, col = _first_true(nonpos)
        raise DataError(f"{source}: non-positive price {values.iloc[row][col]} at row {row + 2} ({frame['date'].iloc[row]}), column {col!r}")

    values.index = dates.dt.normalize()
    if values.index.has_duplicates:
        raise DataError(f"{source}: duplicate dates")
    values = values.sort_index()
    if policy == "forward-fill":
        values = values.ffill()
    values = values.dropna(how="any")
    if values.empty:
        raise DataError(f"{source}: no dates with a value for every market")
    return PricePanel(
        markets=markets,
        dates=values.index.values.astype("datetime64[D]"),
        prices=values.to_numpy(dtype=float).T.copy(),
    )


def _first_true(mask: pd.DataFrame) -> tuple[int, str]:
    rows, cols = np.nonzero(mask.to_numpy())
    return int(rows[0]), str(mask.columns[cols[0]])


def compute_log_returns(panel: PricePanel) -> ReturnPanel:
    if panel.prices.shape[1] < 2:
        raise InsufficientDataError("need at least two price records to form a return")
    logp = np.log(panel.prices)
    return ReturnPanel(markets=panel.markets, dates=panel.dates[1:], returns=np.diff(logp, axis=1))


def returns_to_prices(rp: ReturnPanel, base_date, base_prices: float | Sequence[float] = 100.0) -> PricePanel:
    """Inverse of :func:`compute_log_returns` given the first price and its date."""
    base = np.broadcast_to(np.asarray(base_prices, dtype=float), (len(rp.markets),))
    cum = np.concatenate([np.zeros((len(rp.markets), 1)), np.cumsum(rp.returns, axis=1)], axis=1)
    dates = np.concatenate([_as_dates([base_date]), rp.dates])
    return PricePanel(markets=rp.markets, dates=dates, prices=base[:, None] * np.exp(cum))


def _month_index(dates: np.ndarray) -> np.ndarray:
    return dates.astype("datetime64[M]").astype(np.int64)


def count_windows(total_months: int, window_months: int, step_months: int) -> int:
    if total_months < window_months:
        return 0
    return (total_months - window_months) // step_months + 1


def segment_by_calendar(rp: ReturnPanel, window_months: int = 12, step_months: int = 1) -> SegmentSeries:
    if window_months < 1 or step_months < 1:
        raise ConfigError(f"window_months and step_months must be >= 1, got {window_months}, {step_months}")
    if len(rp.dates) == 0:
        raise InsufficientDataError("return panel is empty")
    months = _month_index(rp.dates)
    first, last = int(months[0]), int(months[-1])
    total = last - first + 1
    n_windows = count_windows(total, window_months, step_months)
    if n_windows == 0:
        raise InsufficientDataError(
            f"returns span {total} calendar month(s), shorter than one {window_months}-month window"
        )
    segments = []
    for s in range(1, n_windows + 1):
        lo = first + (s - 1) * step_months
        hi = lo + window_months - 1
        i0, i1 = np.searchsorted(months, [lo, hi + 1], side="left")
        if i1 <= i0:
            raise InsufficientDataError(f"segment {s} contains no trading days")
        segments.append(
            Segment(
                index=s,
                start_month=np.datetime64(lo, "M"),
                end_month=np.datetime64(hi, "M"),
                dates=rp.dates[i0:i1],
                returns=rp.returns[:, i0:i1],
            )
        )
    return SegmentSeries(markets=rp.markets, segments=segments, window_months=window_months, step_months=step_months)


def write_panel_csv(path: str | Path, ids: Sequence[str], dates: np.ndarray, values: np.ndarray) -> None:
    """Write the ``date,<id1>,...`` tabular form used for both prices and returns."""
    frame = pd.DataFrame(np.asarray(values).T, columns=list(ids))
    frame.insert(0, "date", np.datetime_as_string(_as_dates(dates), unit="D"))
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
