"""Run configuration: one YAML file drives a run, command-line flags override it."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .market_data import MISSING_POLICIES
from .netgraph import EXPORT_FORMATS, PAIR_MODES
from .te import SCHEMES, LagPolicy

_PATH_KEYS = ("input", "markets", "crises", "out", "synthetic_spec")


@dataclass
class RunConfig:
    input: Path | None = None
    markets: Path | None = None
    missing_policy: str = "intersect"
    window_months: int = 12
    step_months: int = 1
    n_bins: int = 3
    scheme: str = "quantile"
    min_samples: int = 30
    miller_madow: bool = False
    lag_policy: dict = field(default_factory=dict)
    trend_cutoff_months: int = 12
    max_lead_months: int = 24
    influence_threshold: float | None = None
    pair_mode: str = "band"
    pair_band: list[float] | None = None
    pair_k: float = 1.0
    crises: Path | None = None
    out: Path | None = None
    export_formats: list[str] = field(default_factory=lambda: list(EXPORT_FORMATS))
    dump_returns: bool = False
    seed: int = 0
    synthetic_spec: Path | None = None
    synthetic_length: int | None = None

    def lag(self) -> LagPolicy:
        return LagPolicy.from_dict(self.lag_policy)

    def echo(self) -> dict:
        d = asdict(self)
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()}

    def validate(self, need_input: bool = True) -> RunConfig:
        if need_input and self.input is None:
            raise ConfigError("no input price file given (config 'input' or --input)")
        for key in ("input", "markets", "crises", "synthetic_spec"):
            p = getattr(self, key)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{key}: file not found: {p}")
        if self.missing_policy not in MISSING_POLICIES:
            raise ConfigError(f"missing_policy must be one of {MISSING_POLICIES}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.pair_mode not in PAIR_MODES:
            raise ConfigError(f"pair_mode must be one of {PAIR_MODES}")
        bad_fmt = [f for f in self.export_formats if f not in EXPORT_FORMATS]
        if bad_fmt:
            raise ConfigError(f"unknown export formats {bad_fmt}")
        ranges = {
            "window_months": (1, 600),
            "step_months": (1, 600),
            "n_bins": (2, 32),
            "min_samples": (1, 10**7),
            "trend_cutoff_months": (2, 10**4),
            "max_lead_months": (0, 10**4),
        }
        for key, (lo, hi) in ranges.items():
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or not lo <= v <= hi:
                raise ConfigError(f"{key}={v!r} outside [{lo}, {hi}]")
        if self.pair_band is not None:
            if len(self.pair_band) != 2 or self.pair_band[0] > self.pair_band[1]:
                raise ConfigError(f"pair_band must be [lo, hi] with lo <= hi, got {self.pair_band}")
        if self.synthetic_length is not None and self.synthetic_length < 100:
            raise ConfigError("synthetic_length must be >= 100")
        self.lag()
        return self


def config_from_dict(d: dict, base_dir: Path | None = None) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    values = dict(d)
    for key in _PATH_KEYS:
        if values.get(key) is not None:
            p = Path(values[key]).expanduser()
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            values[key] = p
    return RunConfig(**values)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML config; relative paths inside it resolve against the file's directory."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return config_from_dict(raw, path.parent)
