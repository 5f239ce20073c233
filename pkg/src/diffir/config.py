"""Experiment configuration (a single JSON document).

Schema (all keys optional except where noted)::

    {
      "task": "inpainting" | "sr" | "deblur",
      "seed": int,
      "out": "path/to/run",
      "model": {"preset": "toy" | "full", ...ModelConfig overrides},
      "data": {"source": "synthetic" | "folder", "folder": str,
               "n_train": int, "n_test": int, "size": int,
               "coverage": [lo, hi], "kernel_len": int},
      "s1": {...TrainConfig fields},
      "s2": {...TrainConfig fields}
    }

``model`` overrides are merged into the preset: ``cpen``, ``dirformer``
and ``denoiser`` sub-dicts update field by field.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from .model import ModelConfig
from .training import TrainConfig

TASKS = ("inpainting", "sr", "deblur")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synthetic"
    folder: Optional[str] = None
    n_train: int = 64
    n_test: int = 16
    size: int = 16
    coverage: List[float] = field(default_factory=lambda: [0.1, 0.4])
    kernel_len: int = 5


@dataclass
class ExperimentConfig:
    task: str = "inpainting"
    seed: int = 0
    out: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig.toy)
    data: DataConfig = field(default_factory=DataConfig)
    s1: TrainConfig = field(default_factory=lambda: TrainConfig(stage="s1"))
    s2: TrainConfig = field(default_factory=lambda: TrainConfig(stage="s2"))

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _only_known(cls, d: dict, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


def build_model_config(task: str, d: Optional[dict]) -> ModelConfig:
    d = dict(d or {})
    preset = d.pop("preset", "toy")
    if preset == "toy":
        base = ModelConfig.toy(task)
    elif preset == "full":
        base = ModelConfig.full(task)
    else:
        raise ConfigError(f"unknown model preset {preset!r}")
    merged = base.to_dict()
    for key, val in d.items():
        if key not in merged:
            raise ConfigError(f"unknown model key {key!r}")
        if isinstance(merged[key], dict):
            sub = dict(merged[key])
            for k in val:
                if k not in sub:
                    raise ConfigError(f"unknown key model.{key}.{k}")
            sub.update(val)
            merged[key] = sub
        else:
            merged[key] = val
    merged["task"] = task
    return ModelConfig.from_dict(merged)


def from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    _only_known(ExperimentConfig, d, "config")
    task = d.get("task", "inpainting")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    try:
        model = build_model_config(task, d.get("model"))
        data = DataConfig(**_only_known(DataConfig, d.get("data", {}), "data"))
        s1 = TrainConfig(**{**_only_known(TrainConfig, d.get("s1", {}), "s1"), "stage": "s1"})
        s2 = TrainConfig(**{**_only_known(TrainConfig, d.get("s2", {}), "s2"), "stage": "s2"})
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return ExperimentConfig(task, int(d.get("seed", 0)), d.get("out", "runs/default"), model, data, s1, s2)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    try:
        return from_dict(json.loads(text))
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e.msg}") from e
