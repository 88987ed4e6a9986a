"""Flat key=value run configuration with CLI overrides.

The config file format is plain text: one `key = value` per line, `#`
starts a comment. CLI flags override file values, which override the
defaults below. All randomness derives from the single root seed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .viewgeom import VALID_GRID_SIZES


@dataclass
class RunConfig:
    clouds_dir: str = "clouds"
    work_dir: str = "work"
    resolution: int = 256
    splat_radius: int = 1
    margin: float = 1.25
    grid_nv: int = 9
    kinds: str = "ot,cn,ds,ggn"
    levels: int = 4
    seed: int = 1234
    parallelism: int = 1
    tokens: int = 64
    rigs_per_cloud: int = 3  # extra random cube rigs per cloud in build-dov
    # pair-counting shape (used by `pairs` when set)
    pairs_clouds: int = 0
    pairs_views: int = 0
    pairs_kinds: int = 0
    pairs_levels: int = 0
    # training hyperparameters
    ssvrn_lr: float = 1e-4
    ssvrn_epochs: int = 100
    ssvrn_decay: float = 0.9
    ssvrn_decay_every: int = 10
    ssvrn_batch: int = 64
    ssvrn_split: float = 0.8
    cavgn_lr: float = 1e-5
    cavgn_epochs: int = 30
    cavgn_decay: float = 0.2
    cavgn_decay_every: int = 2
    cavgn_split: float = 0.8
    # model paths for evaluate
    ssvrn_model: str = ""
    cavgn_model: str = ""
    mos_file: str = ""

    def kind_list(self) -> list[str]:
        return [k.strip() for k in self.kinds.split(",") if k.strip()]

    def validate(self, require_paths: bool = False) -> None:
        if self.grid_nv not in VALID_GRID_SIZES:
            raise ValueError(f"grid_nv must be one of {VALID_GRID_SIZES}")
        if require_paths and not Path(self.clouds_dir).exists():
            raise ValueError(f"clouds_dir does not exist: {self.clouds_dir}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    t = _FIELD_TYPES.get(name)
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    """Parse key=value lines; unknown keys are an error."""
    values: dict = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected 'key = value', got '{raw.strip()}'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"config line {ln}: unknown key '{key}'")
        values[key] = _coerce(key, val)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key '{key}'")
        values[key] = _coerce(key, str(val)) if isinstance(val, str) else val
    return RunConfig(**values)
