"""Plug-in transfer entropy between discretized return series.

For a source ``x`` and target ``y`` the estimator is

    TE(x -> y) = H(Y | Y1) - H(Y | Y1, X_lag)

where ``Y1`` is the target one step back and ``X_lag`` the source ``lag`` steps
back (``lag`` is 0 or 1). Both conditional entropies are evaluated on the same
aligned sample set ``t = max(lag, 1) .. L-1`` with relative-frequency
probabilities and natural logs, so values are in nats.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, DomainError, InsufficientDataError
from .market_data import MarketMeta, Segment, SegmentSeries, Zone, market_from_dict

SCHEMES = ("quantile", "equal-width")
THREADS_ENV = "IMMCAUSAL_THREADS"
TE_SERIES_FORMAT = "immcausal-te-series"
TE_SERIES_VERSION = 1

# trading-session order within a calendar day
_SESSION_ORDER = {Zone.ASIA: 0, Zone.EUROPE: 1, Zone.AMERICA: 2}


def default_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
        return n
    return min(8, os.cpu_count() or 1)


@dataclass(frozen=True)
class LagPolicy:
    """Maps (source zone, target zone) to the source lag used in TE.

    A market whose session opens later in the same calendar day sees the
    earlier market's same-day return (lag 0); everything else, including
    pairs inside one zone, uses the previous day (lag 1).
    """

    zone_rule: Mapping[tuple[Zone, Zone], int]

    def __post_init__(self) -> None:
        rule = {(Zone(a), Zone(b)): int(v) for (a, b), v in dict(self.zone_rule).items()}
        missing = [(a, b) for a in Zone for b in Zone if (a, b) not in rule]
        if missing:
            raise ConfigError(f"lag policy missing zone pairs: {missing}")
        bad = {k: v for k, v in rule.items() if v not in (0, 1)}
        if bad:
            raise ConfigError(f"lags must be 0 or 1, got {bad}")
        object.__setattr__(self, "zone_rule", rule)

    @classmethod
    def immediate(cls) -> LagPolicy:
        rule = {
            (a, b): 0 if _SESSION_ORDER[a] < _SESSION_ORDER[b] else 1
            for a in Zone
            for b in Zone
        }
        return cls(rule)

    def lag(self, source: Zone, target: Zone) -> int:
        return self.zone_rule[(Zone(source), Zone(target))]

    def to_dict(self) -> dict[str, int]:
        return {f"{a.value}->{b.value}": self.zone_rule[(a, b)] for a in Zone for b in Zone}

    @classmethod
    def from_dict(cls, d: Mapping[str, int] | None) -> LagPolicy:
        """Start from the immediate rule and override the listed ``"A->B": lag`` entries."""
        rule = dict(cls.immediate().zone_rule)
        for key, value in (d or {}).items():
            try:
                a, b = (Zone(part.strip()) for part in key.split("->"))
            except ValueError:
                raise ConfigError(f"bad lag policy key {key!r}; expected 'Zone->Zone'") from None
            rule[(a, b)] = value
        return cls(rule)


def lag_for_pair(source: MarketMeta, target: MarketMeta, policy: LagPolicy | None = None) -> int:
    return (policy or LagPolicy.immediate()).lag(source.zone, target.zone)


@dataclass(frozen=True, eq=False)
class SymbolSeries:
    symbols: np.ndarray
    n_bins: int
    scheme: str

    def __len__(self) -> int:
        return len(self.symbols)


def discretize(x: Sequence[float], n_bins: int = 3, scheme: str = "quantile") -> SymbolSeries:
    """Map a real series to symbols ``0..n_bins-1``.

    Quantile edges sit at the empirical ``k/n_bins`` quantiles (linear
    interpolation); a value equal to an edge goes to the lower bin. Equal-width
    bins span ``[min, max]`` with the maximum in the top bin. A constant series
    maps to all zeros under either scheme.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown discretization scheme {scheme!r}; expected one of {SCHEMES}")
    if n_bins < 2:
        raise ConfigError(f"need at least 2 bins, got {n_bins}")
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise InsufficientDataError("cannot discretize an empty series")
    if not np.all(np.isfinite(x)):
        raise DataError("series contains non-finite values")
    lo, hi = x.min(), x.max()
    if lo == hi:
        return SymbolSeries(np.zeros(x.size, dtype=np.int64), n_bins, scheme)
    if scheme == "quantile":
        if x.size < n_bins:
            raise InsufficientDataError(f"quantile binning needs >= {n_bins} values, got {x.size}")
        edges = np.quantile(x, np.arange(1, n_bins) / n_bins)
        symbols = np.searchsorted(edges, x, side="left")
    else:
        width = (hi - lo) / n_bins
        symbols = np.minimum(np.floor((x - lo) / width), n_bins - 1)
    return SymbolSeries(symbols.astype(np.int64), n_bins, scheme)


def conditional_entropy(joint_counts, miller_madow: bool = False) -> float:
    """H(Y | C) in nats from a count table with rows indexed by y and columns by c.

    Zero cells contribute nothing. With ``miller_madow`` the first-order bias
    term ``(K_yc - K_c) / 2N`` is added, ``K`` being the number of occupied cells.
    """
    counts = np.asarray(joint_counts, dtype=float)
    if counts.ndim == 1:
        counts = counts[:, None]
    if np.any(counts < 0):
        raise DataError("counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise InsufficientDataError("count table is empty")
    marginal = counts.sum(axis=0)
    occupied = counts > 0
    joint = counts[occupied]
    cond = np.broadcast_to(marginal, counts.shape)[occupied]
    h = -np.sum((joint / total) * np.log(joint / cond))
    if miller_madow:
        h += (occupied.sum() - np.count_nonzero(marginal)) / (2.0 * total)
    return float(h) + 0.0


def _count_table(target: np.ndarray, cond: np.ndarray, n_target: int, n_cond: int) -> np.ndarray:
    flat = np.bincount(target * n_cond + cond, minlength=n_target * n_cond)
    return flat.reshape(n_target, n_cond)


def te_from_symbols(
    xs: Sequence[int],
    ys: Sequence[int],
    lag: int,
    n_symbols: int | None = None,
    min_samples: int = 30,
    miller_madow: bool = False,
) -> float:
    """Transfer entropy from symbol sequence ``xs`` to ``ys``."""
    if lag not in (0, 1):
        raise DomainError(f"lag must be 0 or 1, got {lag}")
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise DataError(f"source and target must be equal-length 1-D sequences, got {xs.shape} and {ys.shape}")
    start = max(lag, 1)
    n_eff = len(ys) - start
    if n_eff < max(min_samples, 1):
        raise InsufficientDataError(f"{n_eff} aligned samples, need at least {max(min_samples, 1)}")
    if xs.min() < 0 or ys.min() < 0:
        raise DataError("symbols must be non-negative")
    q = int(max(xs.max(), ys.max())) + 1 if n_symbols is None else int(n_symbols)

    y_now = ys[start:]
    y_prev = ys[start - 1 : -1]
    x_lagged = xs[start - lag : len(xs) - lag]

    h_own = conditional_entropy(_count_table(y_now, y_prev, q, q), miller_madow)
    h_both = conditional_entropy(_count_table(y_now, y_prev * q + x_lagged, q, q * q), miller_madow)
    te = h_own - h_both
    return te if te > 0.0 else 0.0


@dataclass(frozen=True)
class TEConfig:
    n_bins: int = 3
    scheme: str = "quantile"
    min_samples: int = 30
    miller_madow: bool = False

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown discretization scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.n_bins < 2:
            raise ConfigError(f"n_bins must be >= 2, got {self.n_bins}")
        if self.min_samples < 1:
            raise ConfigError(f"min_samples must be >= 1, got {self.min_samples}")


def transfer_entropy(
    x: Sequence[float],
    y: Sequence[float],
    lag: int,
    n_bins: int = 3,
    scheme: str = "quantile",
    min_samples: int = 30,
    miller_madow: bool = False,
) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DataError(f"source and target lengths differ: {x.shape} vs {y.shape}")
    xs = discretize(x, n_bins, scheme).symbols
    ys = discretize(y, n_bins, scheme).symbols
    return te_from_symbols(xs, ys, lag, n_bins, min_samples, miller_madow)


@dataclass(frozen=True, eq=False)
class TEMatrix:
    """``values[m, n]`` is the influence of market ``m`` on market ``n``.

    The diagonal and any cell with too few samples hold NaN and are False in
    ``valid``.
    """

    segment_index: int
    values: np.ndarray
    valid: np.ndarray
    start_date: np.datetime64 | None = None
    end_date: np.datetime64 | None = None
    end_month: np.datetime64 | None = None

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def off_diagonal(self) -> np.ndarray:
        return self.values[self.valid]


def _segment_symbols(returns: np.ndarray, cfg: TEConfig) -> list[np.ndarray | None]:
    out: list[np.ndarray | None] = []
    for row in returns:
        try:
            out.append(discretize(row, cfg.n_bins, cfg.scheme).symbols)
        except InsufficientDataError:
            out.append(None)
    return out


def _matrix_from_returns(
    returns: np.ndarray,
    markets: Sequence[MarketMeta],
    policy: LagPolicy,
    cfg: TEConfig,
) -> tuple[np.ndarray, np.ndarray]:
    m = len(markets)
    if returns.shape[0] != m:
        raise DataError(f"segment has {returns.shape[0]} rows but {m} markets")
    values = np.full((m, m), np.nan)
    valid = np.zeros((m, m), dtype=bool)
    symbols = _segment_symbols(returns, cfg)
    for i in range(m):
        for j in range(m):
            if i == j or symbols[i] is None or symbols[j] is None:
                continue
            lag = policy.lag(markets[i].zone, markets[j].zone)
            try:
                values[i, j] = te_from_symbols(symbols[i], symbols[j], lag, cfg.n_bins, cfg.min_samples, cfg.miller_madow)
            except InsufficientDataError:
                continue
            valid[i, j] = True
    return values, valid


def te_matrix(
    segment: Segment,
    markets: Sequence[MarketMeta],
    policy: LagPolicy | None = None,
    config: TEConfig | None = None,
) -> TEMatrix:
    values, valid = _matrix_from_returns(
        np.asarray(segment.returns, dtype=float), markets, policy or LagPolicy.immediate(), config or TEConfig()
    )
    return TEMatrix(
        segment_index=segment.index,
        values=values,
        valid=valid,
        start_date=segment.start_date,
        end_date=segment.end_date,
        end_month=segment.end_month,
    )


@dataclass(frozen=True, eq=False)
class TEMatrixSeries:
    markets: tuple[MarketMeta, ...]
    matrices: list[TEMatrix]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        m = len(self.markets)
        for mat in self.matrices:
            if mat.values.shape != (m, m):
                raise DataError(f"segment {mat.segment_index}: matrix shape {mat.values.shape} != ({m}, {m})")

    def __len__(self) -> int:
        return len(self.matrices)

    def __iter__(self):
        return iter(self.matrices)

    def stack(self) -> np.ndarray:
        """(W, M, M) array of values; invalid cells are NaN."""
        return np.stack([mat.values for mat in self.matrices])

    @property
    def end_dates(self) -> list[np.datetime64]:
        return [mat.end_date for mat in self.matrices]

    @property
    def end_months(self) -> list[np.datetime64]:
        return [mat.end_month for mat in self.matrices]

    @property
    def ids(self) -> list[str]:
        return [m.market_id for m in self.markets]


def te_series(
    segments: SegmentSeries,
    policy: LagPolicy | None = None,
    config: TEConfig | None = None,
    workers: int | None = None,
) -> TEMatrixSeries:
    """One TE matrix per segment, computed as a parallel map over segments."""
    if len(segments) == 0:
        raise InsufficientDataError("no segments to analyse")
    policy = policy or LagPolicy.immediate()
    config = config or TEConfig()
    workers = workers or default_workers()

    def one(seg: Segment) -> TEMatrix:
        try:
            return te_matrix(seg, segments.markets, policy, config)
        except DataError as exc:
            raise type(exc)(f"segment {seg.index}: {exc}") from exc

    if workers > 1 and len(segments) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            matrices = list(pool.map(one, segments.segments))
    else:
        matrices = [one(seg) for seg in segments.segments]

    provenance = {
        "estimator": "plug-in",
        **asdict(config),
        "lag_policy": policy.to_dict(),
        "window_months": segments.window_months,
        "step_months": segments.step_months,
    }
    return TEMatrixSeries(markets=segments.markets, matrices=matrices, provenance=provenance)


def _market_dict(m: MarketMeta) -> dict:
    return {"id": m.market_id, "name": m.display_name, "zone": m.zone.value, "order_index": m.order_index}


def _date_str(d) -> str | None:
    return None if d is None else str(np.datetime64(d, "D"))


def write_te_series(path: str | Path, series: TEMatrixSeries) -> None:
    """JSON-lines: a header record, then one record per segment.

    Cell values are row-major with ``null`` standing in for the diagonal and
    invalid cells.
    """
    lines = [
        json.dumps(
            {
                "format": TE_SERIES_FORMAT,
                "version": TE_SERIES_VERSION,
                "markets": [_market_dict(m) for m in series.markets],
                "provenance": series.provenance,
            },
            sort_keys=True,
        )
    ]
    for mat in series.matrices:
        cells = [float(v) if ok else None for v, ok in zip(mat.values.ravel(), mat.valid.ravel())]
        lines.append(
            json.dumps(
                {
                    "segment": mat.segment_index,
                    "start_date": _date_str(mat.start_date),
                    "end_date": _date_str(mat.end_date),
                    "end_month": None if mat.end_month is None else str(np.datetime64(mat.end_month, "M")),
                    "M": mat.size,
                    "values": cells,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_te_series(path: str | Path) -> TEMatrixSeries:
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records or records[0].get("format") != TE_SERIES_FORMAT:
        raise DataError(f"{path}: not a TE series file")
    header = records[0]
    if header.get("version") != TE_SERIES_VERSION:
        raise DataError(f"{path}: unsupported version {header.get('version')}")
    markets = tuple(market_from_dict(d) for d in header["markets"])
    matrices = []
    for rec in records[1:]:
        m = rec["M"]
        cells = np.array([np.nan if v is None else v for v in rec["values"]], dtype=float).reshape(m, m)
        valid = np.array([v is not None for v in rec["values"]]).reshape(m, m)
        matrices.append(
            TEMatrix(
                segment_index=rec["segment"],
                values=cells,
                valid=valid,
                start_date=None if rec.get("start_date") is None else np.datetime64(rec["start_date"], "D"),
                end_date=None if rec.get("end_date") is None else np.datetime64(rec["end_date"], "D"),
                end_month=None if rec.get("end_month") is None else np.datetime64(rec["end_month"], "M"),
            )
        )
    return TEMatrixSeries(markets=markets, matrices=matrices, provenance=header.get("provenance", {}))
