"""Run configuration: one JSON file plus ``key=value`` overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .bevgeom import GridSpec
from .net.model import ModelConfig
from .net.train import Schedule
from .scenegen import DatasetConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    bound: float = 6.4
    cell: float = 0.1
    resolution: int = 64
    train_count: int = 2000
    val_fraction: float = 0.1
    occlusion_target: float = 0.35
    model: dict = field(default_factory=dict)  # ModelConfig overrides
    schedule: dict = field(default_factory=dict)  # Schedule overrides
    paths: dict = field(default_factory=dict)

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.bound, self.cell)

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig(
            resolution=self.resolution, val_fraction=self.val_fraction, occlusion_target=self.occlusion_target
        )

    def model_config(self) -> ModelConfig:
        extra = dict(self.model)
        if "height_bins" in extra:
            extra["height_bins"] = tuple(extra["height_bins"])
        return ModelConfig(bound=self.bound, cell=self.cell, resolution=self.resolution, **extra)

    def schedule_config(self) -> Schedule:
        extra = dict(self.schedule)
        if "stages" in extra:
            extra["stages"] = tuple(extra["stages"])
        return Schedule(seed=self.seed, **extra)

    def to_json(self) -> dict:
        return asdict(self)


def _coerce(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """``["seed=3", "schedule.lr_b=0.01"]`` style overrides; dotted keys reach the nested dicts."""
    top = {f.name for f in fields(RunConfig)}
    updates = {}
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        value = _coerce(value)
        if "." in key:
            head, sub = key.split(".", 1)
            if head not in ("model", "schedule", "paths"):
                raise ValueError(f"unknown config section {head!r}")
            nested = dict(updates.get(head, getattr(cfg, head)))
            nested[sub] = value
            updates[head] = nested
        elif key in top:
            updates[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    return replace(cfg, **updates)


def load_config(path=None, overrides=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - {f.name for f in fields(RunConfig)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **raw)
    cfg = apply_overrides(cfg, overrides)
    # fail early on bad nested keys
    cfg.model_config()
    cfg.schedule_config()
    return cfg
