"""Scalar diagnostics over a TE-matrix series, the low-pass trend and crisis lead times."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import ConfigError, InsufficientDataError, UndefinedMetricError
from .te import TEMatrix, TEMatrixSeries

KINDS = ("AVI", "ASI", "trend")


@dataclass(frozen=True, eq=False)
class MetricSeries:
    segment_end_dates: list
    values: np.ndarray
    kind: str
    segment_end_months: list | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown metric kind {self.kind!r}")
        values = np.array(self.values, dtype=float)
        if len(values) != len(self.segment_end_dates):
            raise ConfigError("values and dates differ in length")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def months(self) -> list[np.datetime64]:
        if self.segment_end_months is not None:
            return list(self.segment_end_months)
        return [np.datetime64(d, "M") for d in self.segment_end_dates]


def average_influence(mat: TEMatrix) -> float:
    cells = mat.off_diagonal()
    if cells.size == 0:
        raise InsufficientDataError(f"segment {mat.segment_index}: no valid TE cells")
    return float(cells.mean())


def asymmetry(mat: TEMatrix) -> float:
    v, ok = mat.values, mat.valid
    lower = np.tril(ok & ok.T, k=-1)
    a, b = v[lower], v.T[lower]
    denom = float(np.sum(a + b))
    if denom <= 0.0:
        raise UndefinedMetricError(f"segment {mat.segment_index}: asymmetry undefined, total influence is zero")
    return float(np.sum(np.abs(a - b))) / denom


def avi_series(series: TEMatrixSeries) -> MetricSeries:
    return MetricSeries(series.end_dates, [average_influence(m) for m in series], "AVI", series.end_months)


def asi_series(series: TEMatrixSeries) -> MetricSeries:
    return MetricSeries(series.end_dates, [asymmetry(m) for m in series], "ASI", series.end_months)


@dataclass(frozen=True, eq=False)
class ActivityStats:
    a_str: np.ndarray
    a_flu: np.ndarray
    grand_mean: float


def activity(series: TEMatrixSeries) -> ActivityStats:
    """Per ordered pair, the time mean and population standard deviation of TE.

    Segments where a cell is invalid are left out of that cell's statistics.
    """
    if len(series) < 2:
        raise InsufficientDataError(f"activity needs at least 2 segments, got {len(series)}")
    stack = series.stack()
    counts = np.sum(np.isfinite(stack), axis=0)
    defined = counts > 0
    a_str = np.full(stack.shape[1:], np.nan)
    a_flu = np.full(stack.shape[1:], np.nan)
    safe = np.where(np.isfinite(stack), stack, 0.0)
    a_str[defined] = safe.sum(axis=0)[defined] / counts[defined]
    dev = np.where(np.isfinite(stack), stack - a_str, 0.0)
    a_flu[defined] = np.sqrt((dev**2).sum(axis=0)[defined] / counts[defined])
    off = ~np.eye(len(series.markets), dtype=bool) & defined
    if not off.any():
        raise InsufficientDataError("no pair has a valid TE value in any segment")
    np.fill_diagonal(a_str, np.nan)
    np.fill_diagonal(a_flu, np.nan)
    return ActivityStats(a_str=a_str, a_flu=a_flu, grand_mean=float(a_str[off].mean()))


def lowpass_trend(s: MetricSeries, cutoff_months: float = 12) -> MetricSeries:
    """Remove every Fourier component with period shorter than ``cutoff_months``.

    One sample per month is assumed. The mean is taken out before the
    transform and restored afterwards, so it is preserved exactly.
    """
    x = np.asarray(s.values, dtype=float)
    n = len(x)
    if n < 4:
        raise InsufficientDataError(f"trend filter needs at least 4 points, got {n}")
    if cutoff_months < 2:
        raise ConfigError(f"cutoff_months={cutoff_months} is below the 2-month Nyquist resolution")
    mean = x.mean()
    spectrum = np.fft.fft(x - mean)
    harmonic = np.abs(np.fft.fftfreq(n, d=1.0 / n)).round().astype(np.int64)
    # period n/h shorter than cutoff  <=>  h * cutoff > n; DC (h = 0) is always kept
    spectrum[harmonic * cutoff_months > n] = 0.0
    filtered = np.fft.ifft(spectrum).real
    filtered = filtered - filtered.mean() + mean
    return MetricSeries(s.segment_end_dates, filtered, "trend", s.segment_end_months)


@dataclass(frozen=True)
class CrisisEvent:
    id: str
    start_date: dt.date
    label: str


@dataclass(frozen=True)
class CrisisCalendar:
    events: tuple[CrisisEvent, ...]

    def __post_init__(self) -> None:
        ids = [e.id for e in self.events]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate crisis ids: {ids}")
        dates = [e.start_date for e in self.events]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ConfigError("crisis start dates must be strictly increasing")


def load_crisis_calendar(path: str | Path | None = None) -> CrisisCalendar:
    """YAML list of ``{id, start_date, label}``; ``None`` loads the packaged table."""
    if path is None:
        text = resources.files("immcausal.data").joinpath("crises.yaml").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read crisis calendar {path}: {exc}") from exc
    entries = yaml.safe_load(text) or []
    events = []
    for e in entries:
        try:
            start = e["start_date"]
            if not isinstance(start, dt.date):
                start = dt.date.fromisoformat(str(start))
            events.append(CrisisEvent(str(e["id"]), start, str(e.get("label", ""))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad crisis entry {e!r}: {exc}") from exc
    return CrisisCalendar(tuple(events))


def _month_number(d) -> int:
    return int(np.datetime64(d, "M").astype(np.int64))


@dataclass
class PeakReport:
    peaks: list[dict] = field(default_factory=list)
    matches: list[dict] = field(default_factory=list)
    unmatched_peaks: list[dict] = field(default_factory=list)
    unmatched_events: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "peaks": self.peaks,
            "matches": self.matches,
            "unmatched_peaks": self.unmatched_peaks,
            "unmatched_events": self.unmatched_events,
        }


def local_maxima(values: Sequence[float]) -> list[int]:
    """Indices of strict local maxima; a flat-topped peak reports its last index."""
    v = np.asarray(values, dtype=float)
    peaks = []
    i = 1
    while i < len(v) - 1:
        if v[i] > v[i - 1]:
            j = i
            while j < len(v) - 1 and v[j + 1] == v[i]:
                j += 1
            if j < len(v) - 1 and v[j + 1] < v[i]:
                peaks.append(j)
            i = j + 1
        else:
            i += 1
    return peaks


def detect_peaks(trend: MetricSeries, calendar: CrisisCalendar, max_lead_months: int = 24) -> PeakReport:
    """Find trend peaks and pair each crisis with the nearest peak at or before it.

    Lead time is counted in calendar months between the peak's month and the
    event's month. A peak already taken by an earlier event is not reused, and
    the later event stays unmatched.
    """
    months = trend.months()
    idx = local_maxima(trend.values)
    peaks = [
        {
            "peak_date": str(np.datetime64(trend.segment_end_dates[i], "D")),
            "peak_month": str(np.datetime64(months[i], "M")),
            "trend_value": float(trend.values[i]),
            "segment": i + 1,
        }
        for i in idx
    ]
    peak_months = [_month_number(months[i]) for i in idx]
    taken: set[int] = set()
    report = PeakReport(peaks=peaks)
    for event in calendar.events:
        ev_month = _month_number(event.start_date)
        best = None
        for k, pm in enumerate(peak_months):
            lead = ev_month - pm
            if 0 <= lead <= max_lead_months:
                best = k
        if best is None or best in taken:
            report.unmatched_events.append(event.id)
            continue
        taken.add(best)
        report.matches.append(
            {
                "event": event.id,
                "event_date": event.start_date.isoformat(),
                "peak_date": peaks[best]["peak_date"],
                "lead_months": ev_month - peak_months[best],
            }
        )
    report.unmatched_peaks = [p for k, p in enumerate(peaks) if k not in taken]
    return report


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if denom == 0.0:
        return float("nan")
    return float(np.clip(np.sum(da * db) / denom, -1.0, 1.0))


def write_metric_csv(path: str | Path, s: MetricSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["end_date", "value"])
        for d, v in zip(s.segment_end_dates, s.values):
            w.writerow([str(np.datetime64(d, "D")), repr(float(v))])


def read_metric_csv(path: str | Path, kind: str) -> MetricSeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return MetricSeries(
        [np.datetime64(r["end_date"], "D") for r in rows], [float(r["value"]) for r in rows], kind
    )
