"""Run configuration: a flat key=value file with CLI overrides on top."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ParameterError

BACKBONES = ("gcn", "gat", "sage")


@dataclass(frozen=True)
class RunConfig:
    # dataset
    edges: str = ""
    features: str = ""
    labels: str = ""
    # protocol
    seed: int = 0
    train_fraction: float = 0.8
    unlearn_fraction: float = 0.005
    strict_unlearn: bool = False
    skip_retrain: bool = False
    # community detection
    alpha: float = 0.05
    null_p: float = -1.0              # <= 0 means "use the graph's density"
    conductance_quantile: float = 0.75
    louvain_passes: int = 20
    refine_sweeps: int = 12
    # mapping
    variance_ratio: float = 0.95
    smoothing_scale: float = 1.0
    smoothing_shift: float = 0.0
    edge_threshold: float = 0.0
    invert_edge_weight: bool = False
    # model
    backbone: str = "gcn"
    hidden: int = 64
    learning_rate: float = 0.01
    weight_decay: float = 0.001
    epochs: int = 200
    # evaluation
    with_info_retention: bool = True
    with_utility: bool = True

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ParameterError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        checks = [
            (0.0 < self.train_fraction < 1.0, "train_fraction in (0,1)"),
            (0.0 <= self.unlearn_fraction < 1.0, "unlearn_fraction in [0,1)"),
            (0.0 < self.alpha < 1.0, "alpha in (0,1)"),
            (0.0 <= self.conductance_quantile <= 1.0, "conductance_quantile in [0,1]"),
            (0.0 < self.variance_ratio <= 1.0, "variance_ratio in (0,1]"),
            (self.smoothing_scale > 0.0, "smoothing_scale > 0"),
            (self.smoothing_shift >= 0.0, "smoothing_shift >= 0"),
            (self.hidden >= 1, "hidden >= 1"),
            (self.learning_rate > 0.0, "learning_rate > 0"),
            (self.weight_decay >= 0.0, "weight_decay >= 0"),
            (self.epochs >= 1, "epochs >= 1"),
            (self.louvain_passes >= 1, "louvain_passes >= 1"),
            (self.refine_sweeps >= 0, "refine_sweeps >= 0"),
        ]
        for ok, what in checks:
            if not ok:
                raise ParameterError(f"config value out of range: expected {what}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ParameterError(f"{name}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def parse_config_file(path: str | Path) -> dict:
    """Flat `key = value` lines; `#` starts a comment; unknown keys rejected."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ParameterError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ParameterError(f"{path}:{lineno}: {exc}") from exc
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    values = parse_config_file(path) if path else {}
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ParameterError(f"unknown config key {key!r}")
        values[key] = val
    return RunConfig(**values)


def with_updates(cfg: RunConfig, **updates) -> RunConfig:
    return replace(cfg, **updates)
