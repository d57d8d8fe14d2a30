"""Acceptance criteria. Each test prints one PASS/FAIL line with the measured value."""

import time

import numpy as np
import pytest

from conftest import brute_force_te, daily_dates, make_markets
from immcausal.cli import cmd_report, cmd_run, cmd_synth
from immcausal.config import RunConfig
from immcausal.market_data import ReturnPanel, segment_by_calendar
from immcausal.metrics import MetricSeries, asymmetry, lowpass_trend
from immcausal.netgraph import CANONICAL_ORDER, pair_id
from immcausal.pipeline import load_manifest
from immcausal.synthetic import CouplingSpec, directionality_benchmark
from immcausal.te import TEMatrix, te_from_symbols, transfer_entropy


@pytest.fixture
def report(capsys):
    def emit(n, name, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {n}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    return emit


def monthly(values):
    months = np.datetime64("2000-01", "M") + np.arange(len(values))
    return MetricSeries(list((months + 1).astype("datetime64[D]") - 1), values, "AVI", list(months))


def test_1_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        q = int(rng.integers(2, 5))
        n = int(rng.integers(3, 201))
        lag = int(rng.integers(0, 2))
        xs = rng.integers(0, q, n)
        ys = rng.integers(0, q, n)
        got = te_from_symbols(xs, ys, lag, q, min_samples=1)
        worst = max(worst, abs(got - brute_force_te(xs.tolist(), ys.tolist(), lag)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 60
    assert report(1, "oracle equivalence", ok, f"max |diff| = {worst:.3g}, {elapsed:.2f} s")


def test_2_non_negativity_and_bounds(report):
    rng = np.random.default_rng(77)
    min_te = np.inf
    for _ in range(10_000):
        n = int(rng.integers(40, 160))
        q = int(rng.integers(2, 5))
        x = rng.standard_normal(n)
        y = 0.5 * np.roll(x, int(rng.integers(0, 2))) + rng.standard_normal(n) if rng.random() < 0.5 else rng.standard_normal(n)
        min_te = min(min_te, transfer_entropy(x, y, int(rng.integers(0, 2)), q))
    asi = []
    for _ in range(2000):
        m = int(rng.integers(2, 11))
        v = rng.exponential(1.0, (m, m)) * (rng.random((m, m)) < 0.8)
        v[0, 1] = 1.0
        valid = ~np.eye(m, dtype=bool)
        v[~valid] = np.nan
        asi.append(asymmetry(TEMatrix(1, v, valid)))
    idem = mean_err = 0.0
    for _ in range(500):
        s = rng.standard_normal(int(rng.integers(4, 400)))
        cutoff = int(rng.integers(2, 60))
        f = lowpass_trend(monthly(s), cutoff).values
        ff = lowpass_trend(monthly(f), cutoff).values
        idem = max(idem, float(np.max(np.abs(ff - f))))
        mean_err = max(mean_err, abs(f.mean() - s.mean()))
    ok = min_te >= 0 and 0 <= min(asi) and max(asi) <= 1 and idem <= 1e-9 and mean_err <= 1e-9
    detail = (f"min TE = {min_te:.3g}, ASI in [{min(asi):.3f}, {max(asi):.3f}], "
              f"idempotence {idem:.2g}, mean shift {mean_err:.2g}")
    assert report(2, "non-negativity and bounds", ok, detail)


def test_3_directionality_recovery(report):
    c = np.zeros((4, 4))
    c[0, 1] = 0.8
    spec = CouplingSpec(c, 0.0, 1.0, (), seed=1000)
    t0 = time.perf_counter()
    rep = directionality_benchmark(spec, trials=100, length=3000, n_bins=3)
    elapsed = time.perf_counter() - t0
    rate = rep.edges[0]["detection_rate"]
    nulls = [p["rate"] for p in rep.null_pairs]
    in_bounds = all(p["within_bounds"] for p in rep.null_pairs)
    ok = rate >= 0.95 and in_bounds and elapsed < 300
    detail = (f"detection rate {rate:.2f}, null rates {nulls} within {rep.null_pairs[0]['bounds']}: "
              f"{in_bounds}, {elapsed:.1f} s")
    assert report(3, "directionality recovery", ok, detail)


def test_4_segment_count(report):
    dates = daily_dates("1992-01-01", "2017-03-31")
    rp = ReturnPanel(make_markets(2), dates, np.zeros((2, len(dates))))
    n = len(segment_by_calendar(rp, 12, 1))
    assert report(4, "segment count", n == 292, f"{n} segments (expected 292)")


def test_5_pair_ids(report):
    idx = {k: i + 1 for i, k in enumerate(CANONICAL_ORDER)}
    expected = {("DJI", "NASD"): 1, ("NASD", "DJI"): 10, ("SHI", "SZI"): 41, ("SZI", "SHI"): 50,
                ("SZI", "NASD"): 47, ("DAX", "CAC"): 72, ("CAC", "DAX"): 89}
    got = {k: pair_id(idx[k[0]], idx[k[1]], 10).id for k in expected}
    assert report(5, "pair id regression", got == expected, str(sorted(got.values())))


def test_6_trend_filter(report):
    t = np.arange(288)
    slow = 0.03 * np.sin(2 * np.pi * t / 48 + 0.4)
    fast = 0.02 * np.cos(2 * np.pi * t / 3)
    out = lowpass_trend(monthly(0.2 + slow + fast), 12).values
    err = float(np.max(np.abs(out - (0.2 + slow))[12:-12]))
    assert report(6, "trend filter", err <= 1e-9, f"max interior error {err:.3g}")


def test_7_end_to_end_determinism(report, tmp_path):
    panel = cmd_synth(RunConfig(seed=3), tmp_path / "prices.csv")
    sums = []
    for k in range(2):
        cfg = RunConfig(input=panel, out=tmp_path / f"run{k}")
        sums.append(load_manifest(cmd_run(cfg))["artifacts"])
    ok = sums[0] == sums[1] and len(sums[0]) > 0
    assert report(7, "end-to-end determinism", ok, f"{len(sums[0])} artifacts, checksums identical: {sums[0] == sums[1]}")


def test_8_reference_comparison_report(report, tmp_path):
    # Non-gating beyond producing the report: agreement with the reference
    # figures needs the original index data.
    panel = cmd_synth(RunConfig(seed=0), tmp_path / "prices.csv")
    run = cmd_run(RunConfig(input=panel, out=tmp_path / "run"))
    text = cmd_report(run)
    ok = "comparison with reference values" in text and (run / "reference_comparison.json").is_file()
    assert report(8, "reference comparison report produced", ok, "see report output for values")
