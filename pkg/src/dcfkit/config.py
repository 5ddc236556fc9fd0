"""Run configuration and the reproducibility manifest.

Configuration comes from a flat key=value text file plus command-line
overrides; flags win over the file. The manifest written next to every
run's outputs echoes enough to re-run the pipeline bit-identically.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

from .data import AGPolicy
from .errors import ConfigError

ARTIFACT_VERSION = "0.1.0"

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_bool(value: str, key: str) -> bool:
    lowered = str(value).strip().lower()
    if lowered in _BOOL_TRUE:
        return True
    if lowered in _BOOL_FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(value).replace(" ", "").split(",") if v)


def _parse_ints(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(value).replace(" ", "").split(",") if v)


@dataclass
class RunConfig:
    """Everything a pipeline run needs, with CLI-matching field names."""

    input: str | None = None
    out: str = "out"
    attribute_columns: tuple[str, ...] = ()
    ag_mode: str = "median"
    ag_grade: str | None = None
    min_grades_per_student: int = 5
    min_students_per_course: int = 20
    require_variance: bool = True
    family: str = "1PL"
    dims: int = 1
    select_dims: tuple[int, ...] = (1, 2, 3)
    group_attr: str | None = None
    group_neg: str | None = None
    group_pos: str | None = None
    fdr_q: float = 0.05
    lrt_df: int = 2
    min_group_size: int = 10
    seed: int = 0
    override_rasch_guard: bool = False
    # power study grid
    beta1_grid: tuple[float, ...] = (0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4)
    group_sizes: tuple[int, ...] = tuple(range(50, 551, 50))
    group_ratio: float = 0.5
    replications: int = 1000
    power_alpha: float = 0.05
    power_lrt_df: int = 1
    n_courses: int = 50
    n_dcf_courses: int = 1
    fdr_replications: int = 200
    dataset_name: str = "dataset"

    def validate(self):
        if self.dims not in (1, 2, 3):
            raise ConfigError(f"dims must be 1-3, got {self.dims}")
        if any(d not in (1, 2, 3) for d in self.select_dims):
            raise ConfigError("select_dims entries must be within 1-3")
        if self.family not in ("1PL", "2PL"):
            raise ConfigError(f"family must be 1PL or 2PL, got {self.family!r}")
        if self.family == "1PL" and self.dims != 1:
            raise ConfigError("1PL is one-dimensional")
        if not 0.0 < self.fdr_q < 1.0:
            raise ConfigError("fdr_q must be in (0, 1)")
        if self.lrt_df not in (1, 2) or self.power_lrt_df not in (1, 2):
            raise ConfigError("lrt_df must be 1 or 2")
        if self.ag_mode not in ("median", "explicit"):
            raise ConfigError("ag_mode must be median or explicit")
        if self.ag_mode == "explicit" and not self.ag_grade:
            raise ConfigError("explicit ag_mode requires ag_grade")
        group_flags = (self.group_attr, self.group_neg, self.group_pos)
        if any(group_flags) and not all(group_flags):
            raise ConfigError("group_attr, group_neg, group_pos must be given together")
        return self

    def ag_policy(self) -> AGPolicy:
        return AGPolicy(mode=self.ag_mode, explicit_grade=self.ag_grade)

    def as_dict(self) -> dict:
        return asdict(self)


_CONVERTERS = {
    "attribute_columns": lambda v, k: tuple(s.strip() for s in str(v).split(",") if s.strip()),
    "select_dims": lambda v, k: _parse_ints(v),
    "beta1_grid": lambda v, k: _parse_floats(v),
    "group_sizes": lambda v, k: _parse_ints(v),
    "require_variance": _parse_bool,
    "override_rasch_guard": _parse_bool,
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read a flat key=value file; '#' starts a comment, blanks are skipped."""
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge config-file values with CLI overrides (overrides win)."""
    known = {f.name: f.type for f in fields(RunConfig)}
    config = RunConfig()
    merged: dict = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, value in merged.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {key!r}")
        current = getattr(config, key)
        if key in _CONVERTERS and isinstance(value, str):
            value = _CONVERTERS[key](value, key)
        elif isinstance(value, str):
            if isinstance(current, bool):
                value = _parse_bool(value, key)
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
        setattr(config, key, value)
    return config.validate()


@dataclass
class RunManifest:
    """Record of one pipeline run, sufficient to reproduce its artifacts."""

    command: str
    artifact_version: str = ARTIFACT_VERSION
    config: dict = field(default_factory=dict)
    seed: int = 0
    resolved_ag: str | None = None
    sizes_before: dict | None = None
    sizes_after: dict | None = None
    model_summary: dict | None = None
    selection_summary: dict | None = None
    notes: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    def start(self):
        self.started = datetime.now(timezone.utc).isoformat()
        return self

    def finish(self):
        self.finished = datetime.now(timezone.utc).isoformat()
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"
