import json

import numpy as np
import pytest
import yaml

from immcausal.cli import cmd_report, main
from immcausal.market_data import load_market_meta, load_price_panel
from immcausal.pipeline import load_manifest

ARTIFACTS = [
    "te_series.jsonl", "avi.csv", "asi.csv", "avi_trend.csv", "activity.csv", "peaks.json",
    "pair_correlations.csv", "influential_network.json", "influential_network.dot",
    "influential_network.graphml", "pair_network.json", "pair_network.dot", "pair_network.graphml",
    "reference_comparison.json",
]


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("synth") / "prices.csv"
    assert main(["synth", "--out", str(path), "--seed", "7", "--quiet"]) == 0
    return path


@pytest.fixture(scope="module")
def default_run(synth_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "--input", str(synth_csv), "--out", str(out), "--quiet"]) == 0
    return out


def test_synth_output_loads(synth_csv):
    panel = load_price_panel(synth_csv, load_market_meta())
    assert panel.prices.shape[0] == 10
    assert str(panel.dates[0].astype("datetime64[M]")) == "1992-01"
    assert str(panel.dates[-1].astype("datetime64[M]")) == "2017-03"


def test_synth_is_seeded(synth_csv, tmp_path):
    again = tmp_path / "again.csv"
    assert main(["synth", "--out", str(again), "--seed", "7", "--quiet"]) == 0
    assert again.read_bytes() == synth_csv.read_bytes()


def test_default_run_artifacts(default_run):
    m = load_manifest(default_run)
    assert m["status"] == "ok" and m["failed_stage"] is None
    assert m["provenance"]["segments"] == 292
    for name in ARTIFACTS:
        assert (default_run / name).is_file(), name
        assert name in m["artifacts"]
    with open(default_run / "te_series.jsonl") as fh:
        assert sum(1 for _ in fh) == 293  # header + segments
    avi = np.loadtxt(default_run / "avi.csv", delimiter=",", skiprows=1, usecols=1)
    assert avi.shape == (292,) and np.all(avi >= 0)


def test_rerun_identical_checksums(default_run, synth_csv, tmp_path):
    assert main(["run", "--input", str(synth_csv), "--out", str(tmp_path), "--quiet"]) == 0
    assert load_manifest(tmp_path)["artifacts"] == load_manifest(default_run)["artifacts"]


def test_report_on_run(default_run, capsys):
    assert main(["report", str(default_run)]) == 0
    text = capsys.readouterr().out
    assert "segments: 292" in text
    assert "AVI trend peaks" in text and "comparison with reference values" in text
    ipn = json.loads((default_run / "pair_network.json").read_text())
    kinds = {}
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 2 and parts[0] in ("mutual", "europe-america", "shared-market", "other"):
            kinds[parts[0]] = int(parts[1])
    assert sum(kinds.values()) == len(ipn["edges"])


def test_window_longer_than_data(synth_csv, tmp_path):
    code = main(["run", "--input", str(synth_csv), "--out", str(tmp_path), "--window-months", "400", "--quiet"])
    assert code == 3
    m = load_manifest(tmp_path)
    assert m["status"] == "failed" and m["failed_stage"] == "segment"
    assert "failed stage: segment" in cmd_report(tmp_path)


def test_empty_pair_network_report(synth_csv, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"input": str(synth_csv), "pair_band": [-2.0, 2.0], "export_formats": ["json"]}))
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert "pair network: zero strong links" in cmd_report(out)
    assert not (out / "pair_network.dot").exists()


def test_report_missing_manifest(tmp_path):
    assert main(["report", str(tmp_path), "--quiet"]) == 2


def test_bad_configs(tmp_path, synth_csv):
    unknown = tmp_path / "a.yaml"
    unknown.write_text("input: x.csv\nwindow_monthz: 12\n")
    assert main(["run", "--config", str(unknown), "--quiet"]) == 2
    bad_range = tmp_path / "b.yaml"
    bad_range.write_text(yaml.safe_dump({"input": str(synth_csv), "n_bins": 1}))
    assert main(["run", "--config", str(bad_range), "--out", str(tmp_path / "r"), "--quiet"]) == 2
    assert main(["run", "--out", str(tmp_path / "r2"), "--quiet"]) == 2  # no input
    assert main(["synth", "--quiet"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--quiet"]) == 2


def test_relative_paths_in_config(tmp_path, synth_csv):
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "p.csv").write_bytes(synth_csv.read_bytes())
    cfg = tmp_path / "c.yaml"
    cfg.write_text("input: data/p.csv\nout: out\nwindow_months: 120\nstep_months: 60\n")
    assert main(["run", "--config", str(cfg), "--quiet"]) == 0
    assert load_manifest(tmp_path / "out")["provenance"]["segments"] == 4


def test_bad_price_data_exit_code(tmp_path):
    ids = [m.market_id for m in load_market_meta()]
    src = tmp_path / "p.csv"
    src.write_text("date," + ",".join(ids) + "\n2000-01-03," + ",".join(["1"] * 9 + ["-1"]) + "\n")
    assert main(["run", "--input", str(src), "--out", str(tmp_path / "o"), "--quiet"]) == 3
    assert load_manifest(tmp_path / "o")["failed_stage"] == "ingest"
