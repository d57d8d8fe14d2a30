"""Command line: ``immcausal run | synth | report``.

Exit codes: 0 ok, 2 configuration or usage error, 3 data error, 4 internal error.
The worker thread count comes from ``IMMCAUSAL_THREADS``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import ImmCausalError, UsageError
from .market_data import write_panel_csv
from .pipeline import MANIFEST, StageError, run_pipeline
from .synthetic import DEFAULT_SYNTH_LENGTH, default_synthetic_spec, generate_price_panel, load_coupling_spec

log = logging.getLogger("immcausal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def cmd_run(cfg: RunConfig) -> Path:
    return run_pipeline(cfg)


def cmd_synth(cfg: RunConfig, out: Path) -> Path:
    cfg.validate(need_input=False)
    if cfg.synthetic_spec is not None:
        spec = load_coupling_spec(cfg.synthetic_spec).with_seed(cfg.seed)
    else:
        spec = default_synthetic_spec(cfg.seed)
    panel = generate_price_panel(spec, cfg.synthetic_length or DEFAULT_SYNTH_LENGTH)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_panel_csv(out, panel.ids, panel.dates, panel.prices)
    return out


def _load(run_dir: Path, name: str):
    p = run_dir / name
    return json.loads(p.read_text()) if p.is_file() else None


def cmd_report(run_dir: Path) -> str:
    """Plain-text summary of a finished (or failed) run directory."""
    run_dir = Path(run_dir)
    manifest = _load(run_dir, MANIFEST)
    if manifest is None:
        raise UsageError(f"{run_dir}: no {MANIFEST}; not a run directory")
    lines = [f"run directory: {run_dir}", f"status: {manifest['status']}"]
    if manifest["status"] != "ok":
        lines.append(f"failed stage: {manifest['failed_stage']}: {manifest['error']}")
    prov = manifest.get("provenance", {})
    if "segments" in prov:
        lines.append(
            f"segments: {prov['segments']}  markets: {', '.join(prov.get('markets', []))}  "
            f"bins: {prov.get('n_bins')} ({prov.get('scheme')})"
        )

    peaks = _load(run_dir, "peaks.json")
    if peaks is not None:
        lines += ["", "AVI trend peaks and crisis lead times:"]
        if peaks["matches"]:
            lines.append(f"  {'event':<6} {'start':<11} {'peak':<11} lead (months)")
            for m in peaks["matches"]:
                lines.append(f"  {m['event']:<6} {m['event_date']:<11} {m['peak_date']:<11} {m['lead_months']}")
        else:
            lines.append("  no crisis matched a preceding peak")
        if peaks["unmatched_events"]:
            lines.append(f"  unmatched events: {', '.join(peaks['unmatched_events'])}")
        lines.append(f"  peaks found: {len(peaks['peaks'])}, unmatched: {len(peaks['unmatched_peaks'])}")

    inn = _load(run_dir, "influential_network.json")
    if inn is not None:
        edges = sorted(inn["edges"], key=lambda e: -e["weight"])
        lines += ["", f"influential network: {len(edges)} edge(s) above threshold {inn['meta']['threshold']:.4f}"]
        for e in edges[:10]:
            lines.append(f"  {e['source']:>5} -> {e['target']:<5} {e['weight']:.4f}")

    ipn = _load(run_dir, "pair_network.json")
    if ipn is not None:
        counts: dict[str, int] = {}
        for e in ipn["edges"]:
            kind = next((t for t in e["tags"] if t != "low-band"), "other")
            counts[kind] = counts.get(kind, 0) + 1
        total = len(ipn["edges"])
        if total == 0:
            lines += ["", "pair network: zero strong links"]
        else:
            lines += ["", f"pair network: {total} strong link(s)"]
            for kind in ("mutual", "europe-america", "shared-market", "other"):
                lines.append(f"  {kind:<15} {counts.get(kind, 0)}")
            low = sum("low-band" in e["tags"] for e in ipn["edges"])
            if low:
                lines.append(f"  ({low} of them below the discard band)")

    cmp_ = _load(run_dir, "reference_comparison.json")
    if cmp_ is not None:
        te = cmp_["te_distribution"]
        pc = cmp_["pair_correlation"]
        lines += [
            "",
            "comparison with reference values:",
            f"  TE mean/std     {te['mean']:.4f} / {te['std']:.4f}   (ref {te['reference']['mean']} / {te['reference']['std']})",
            f"  AVI range       [{cmp_['avi_range']['value'][0]:.4f}, {cmp_['avi_range']['value'][1]:.4f}]   (ref {cmp_['avi_range']['reference']})",
            f"  ASI range       [{cmp_['asi_range']['value'][0]:.4f}, {cmp_['asi_range']['value'][1]:.4f}]   (ref {cmp_['asi_range']['reference']})",
            f"  pair corr mean/std {pc['value']['mean']:.4f} / {pc['value']['std']:.4f}   (ref {pc['reference']['mean']} / {pc['reference']['std']})",
            "  crisis leads    "
            + ", ".join(f"{c['event']}={c['lead_months']} (ref {c['reference']})" for c in cmp_["crisis_leads"]),
        ]
    return "\n".join(lines) + "\n"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="immcausal", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--out", type=Path, help="output directory (run) or file (synth)")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="run the full pipeline")
    p_run.add_argument("--input", type=Path, help="price CSV (overrides config)")
    p_run.add_argument("--markets", type=Path, help="market metadata YAML (overrides config)")
    p_run.add_argument("--window-months", type=int)
    p_run.add_argument("--step-months", type=int)
    p_run.add_argument("--bins", type=int, dest="n_bins")
    p_run.add_argument("--scheme", choices=["quantile", "equal-width"])
    p_run.add_argument("--cutoff-months", type=int, dest="trend_cutoff_months")

    p_syn = sub.add_parser("synth", parents=[common], help="write a synthetic VAR(1) price panel")
    p_syn.add_argument("--length", type=int, dest="synthetic_length", help="number of returns")
    p_syn.add_argument("--seed", type=int)
    p_syn.add_argument("--spec", type=Path, dest="synthetic_spec", help="coupling spec YAML")

    p_rep = sub.add_parser("report", parents=[common], help="summarise a run directory")
    p_rep.add_argument("run_dir", nargs="?", type=Path)
    return parser


_OVERRIDES = ("input", "markets", "window_months", "step_months", "n_bins", "scheme", "trend_cutoff_months",
              "synthetic_length", "seed", "synthetic_spec")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        for key in _OVERRIDES:
            val = getattr(args, key, None)
            if val is not None:
                setattr(cfg, key, val)
        if args.command == "run":
            if args.out is not None:
                cfg.out = args.out
            out = cmd_run(cfg)
            if not args.quiet:
                print(out)
        elif args.command == "synth":
            if args.out is None:
                raise UsageError("synth needs --out <file.csv>")
            path = cmd_synth(cfg, args.out)
            if not args.quiet:
                print(path)
        else:
            run_dir = args.run_dir or args.out or cfg.out
            if run_dir is None:
                raise UsageError("report needs a run directory")
            sys.stdout.write(cmd_report(run_dir))
    except StageError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except ImmCausalError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
