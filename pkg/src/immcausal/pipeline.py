"""End-to-end run: ingest, TE series, metrics, networks, exports and manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .config import RunConfig
from .errors import ImmCausalError
from .market_data import compute_log_returns, load_market_meta, load_price_panel, segment_by_calendar, write_panel_csv
from .metrics import (
    activity,
    asi_series,
    avi_series,
    detect_peaks,
    load_crisis_calendar,
    lowpass_trend,
    pearson,
    write_metric_csv,
)
from .netgraph import (
    export_graph,
    influential_network,
    influential_pair_network,
    link_kind_counts,
    pair_correlations,
    pair_id,
)
from .te import TEConfig, te_series, write_te_series

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"

# Values reported for the ten-index 1992-2017 panel, for side-by-side comparison only.
REFERENCE_VALUES = {
    "te_mean": 0.214,
    "te_std": 0.043,
    "avi_range": [0.190, 0.255],
    "asi_range": [0.01, 0.04],
    "activity_grand_mean": 0.214,
    "pair_corr_mean": 0.074,
    "pair_corr_std": 0.3225,
    "pair_network_links": 20,
    "pair_network_shared_market_links": 13,
    "segments": 292,
    "crisis_leads": {"C1": 8, "C2": 3, "C3": 16, "C4": 20, "C5": 17, "C6": 3, "C7": 0, "C8": None},
}


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return getattr(self.cause, "exit_code", 4)


class _Run:
    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.artifacts: list[str] = []
        self.provenance: dict = {"version": __version__}

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def manifest(self, status: str, stage: str | None = None, error: str | None = None) -> dict:
        return {
            "status": status,
            "failed_stage": stage,
            "error": error,
            "config": self.cfg.echo(),
            "provenance": self.provenance,
            "artifacts": {name: sha256(self.out / name) for name in sorted(set(self.artifacts)) if (self.out / name).exists()},
        }


def run_pipeline(cfg: RunConfig, out: Path | None = None) -> Path:
    """Execute every stage and write artifacts plus ``manifest.json`` into the run directory.

    On failure the artifacts written so far are kept, the manifest names the
    failing stage, and :class:`StageError` is raised.
    """
    out = Path(out or cfg.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, out)
    stage = "config"
    try:
        cfg.validate()
        stage = "ingest"
        markets = load_market_meta(cfg.markets)
        panel = load_price_panel(cfg.input, markets, cfg.missing_policy)
        log.info("loaded %d markets x %d dates", len(panel.markets), len(panel.dates))

        stage = "returns"
        rp = compute_log_returns(panel)
        if cfg.dump_returns:
            write_panel_csv(run.path("returns.csv"), rp.ids, rp.dates, rp.returns)

        stage = "segment"
        segs = segment_by_calendar(rp, cfg.window_months, cfg.step_months)
        log.info("%d segments", len(segs))

        stage = "te_series"
        te_cfg = TEConfig(cfg.n_bins, cfg.scheme, cfg.min_samples, cfg.miller_madow)
        series = te_series(segs, cfg.lag(), te_cfg)
        run.provenance.update(series.provenance)
        run.provenance["segments"] = len(series)
        run.provenance["markets"] = series.ids
        write_te_series(run.path("te_series.jsonl"), series)

        stage = "metrics"
        avi = avi_series(series)
        asi = asi_series(series)
        trend = lowpass_trend(avi, cfg.trend_cutoff_months)
        act = activity(series)
        peaks = detect_peaks(trend, load_crisis_calendar(cfg.crises), cfg.max_lead_months)
        write_metric_csv(run.path("avi.csv"), avi)
        write_metric_csv(run.path("asi.csv"), asi)
        write_metric_csv(run.path("avi_trend.csv"), trend)
        _write_activity(run.path("activity.csv"), act, series.markets)
        _write_json(run.path("peaks.json"), peaks.to_dict())

        stage = "networks"
        inn = influential_network(act, series.markets, cfg.influence_threshold)
        corr = pair_correlations(series)
        ipn = influential_pair_network(corr, cfg.pair_band, cfg.pair_mode, cfg.pair_k)
        _write_pair_corr(run.path("pair_correlations.csv"), corr)

        stage = "export"
        for fmt in cfg.export_formats:
            export_graph(inn, run.path(f"influential_network.{fmt}"), fmt)
            export_graph(ipn, run.path(f"pair_network.{fmt}"), fmt)
        _write_json(
            run.path("reference_comparison.json"),
            reference_comparison(series, avi, asi, act, corr, ipn, peaks),
        )
    except ImmCausalError as exc:
        _write_json(out / MANIFEST, run.manifest("failed", stage, str(exc)))
        raise StageError(stage, exc) from exc
    except Exception as exc:
        _write_json(out / MANIFEST, run.manifest("failed", stage, f"{type(exc).__name__}: {exc}"))
        raise StageError(stage, exc) from exc

    _write_json(out / MANIFEST, run.manifest("ok"))
    return out


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else repr(float(v))


def _write_activity(path: Path, act, markets) -> None:
    m = len(markets)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "source", "target", "a_str", "a_flu"])
        for i in range(m):
            for j in range(m):
                if i != j:
                    pid = pair_id(i + 1, j + 1, m).id
                    w.writerow([pid, markets[i].market_id, markets[j].market_id, _fmt(act.a_str[i, j]), _fmt(act.a_flu[i, j])])


def _write_pair_corr(path: Path, corr) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id"] + [p.id for p in corr.pairs])
        for p, row in zip(corr.pairs, corr.values):
            w.writerow([p.id] + [_fmt(v) for v in row])


def _distribution(values: np.ndarray, bins: int = 30) -> dict:
    counts, edges = np.histogram(values, bins=bins)
    return {
        "n": int(values.size),
        "mean": float(values.mean()),
        "std": float(values.std()),
        "skewness": float(stats.skew(values)),
        "excess_kurtosis": float(stats.kurtosis(values)),
        "histogram": {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
    }


def reference_comparison(series, avi, asi, act, corr, ipn, peaks) -> dict:
    """Side-by-side of this run's summary figures and the reference values."""
    pooled = np.concatenate([m.off_diagonal() for m in series])
    kinds = link_kind_counts(ipn)
    leads = {m["event"]: m["lead_months"] for m in peaks.matches}
    ref = REFERENCE_VALUES
    n_events = len(ref["crisis_leads"])
    preceded = sum(1 for e in ref["crisis_leads"] if e in leads)
    return {
        "segments": {"value": len(series), "reference": ref["segments"]},
        "te_distribution": {**_distribution(pooled), "reference": {"mean": ref["te_mean"], "std": ref["te_std"]}},
        "avi_range": {"value": [float(avi.values.min()), float(avi.values.max())], "reference": ref["avi_range"]},
        "asi_range": {"value": [float(asi.values.min()), float(asi.values.max())], "reference": ref["asi_range"]},
        "avi_asi_pearson": pearson(avi.values, asi.values),
        "activity_grand_mean": {"value": act.grand_mean, "reference": ref["activity_grand_mean"]},
        "pair_correlation": {
            "value": {"mean": corr.mean, "std": corr.std},
            "reference": {"mean": ref["pair_corr_mean"], "std": ref["pair_corr_std"]},
        },
        "pair_network": {
            "links": len(ipn.edges),
            "kinds": kinds,
            "reference": {"links": ref["pair_network_links"], "shared_market": ref["pair_network_shared_market_links"]},
        },
        "crisis_leads": [
            {"event": e, "lead_months": leads.get(e), "reference": r} for e, r in ref["crisis_leads"].items()
        ],
        "qualitative": {
            "crises_preceded_by_peak": preceded,
            "crises_total": n_events,
            "majority_preceded": preceded * 2 > n_events,
        },
    }


def load_manifest(run_dir: Path) -> dict:
    return json.loads((Path(run_dir) / MANIFEST).read_text())
