"""Pipeline configuration: defaults, flat key=value files, flag overrides.

Precedence is flags > file > defaults. The file format is one KEY=VALUE per
line with '#' comments; keys match the dataclass field names.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import DataValidationError


@dataclass
class PipelineConfig:
    events_path: str = ""
    profiles_path: str = ""
    out_dir: str = "out"
    events_format: str = "csv"
    overlap_policy: str = "reject"
    default_threshold_s: float = 60.0
    substitution_cost: float = 2.0
    indel_cost: float = 1.0
    expansion_cost: float = 0.5
    duration_unit_s: float = 60.0
    dedup: bool = True
    normalize: str = "none"
    kmin: int = 2
    kmax: int = 10
    slot_width_s: int = 60
    tz: str = "UTC"
    formula: str = (
        "rate ~ timespan*gender + timespan*age_group + timespan*education + occupation + (1|user)"
    )
    elogit: bool = False
    top_n_plot: int = 10
    jobs: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.overlap_policy not in ("reject", "clip"):
            raise DataValidationError(f"overlap_policy must be reject|clip, got {self.overlap_policy!r}")
        if self.events_format not in ("csv", "jsonl"):
            raise DataValidationError(f"events_format must be csv|jsonl, got {self.events_format!r}")
        if self.kmin < 2 or self.kmax < self.kmin:
            raise DataValidationError("need 2 <= kmin <= kmax")
        if self.slot_width_s <= 0 or self.default_threshold_s < 0:
            raise DataValidationError("slot width must be positive and threshold nonnegative")
        if self.jobs < 1:
            raise DataValidationError("jobs must be >= 1")

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind: type, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise DataValidationError(f"config key {name}: expected boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise DataValidationError(f"config key {name}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_file(path: str | Path) -> dict:
    """Read KEY=VALUE lines into a raw-string dict."""
    out: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataValidationError(f"config line {line_no}: expected KEY=VALUE, got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Merge defaults, an optional config file, and explicit overrides."""
    config = PipelineConfig()
    by_name = {f.name: f.type for f in fields(PipelineConfig)}
    kinds = {
        name: (bool if t in ("bool", bool) else int if t in ("int", int) else float if t in ("float", float) else str)
        for name, t in by_name.items()
    }
    if path is not None:
        for key, raw in parse_config_file(path).items():
            if key not in by_name:
                raise DataValidationError(f"unknown config key {key!r}")
            setattr(config, key, _coerce(key, kinds[key], raw))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in by_name:
            raise DataValidationError(f"unknown config key {key!r}")
        setattr(config, key, value)
    config.validate()
    return config
