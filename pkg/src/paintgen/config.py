"""Run configuration: typed sections, YAML/JSON loading with strict keys,
and resolved-config write-out next to every artifact."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core import DEFAULT_ALPHA


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str = "data"
    n_train: int = 64
    n_val: int = 8
    canvas_size: int = 64
    seed: int = 0


@dataclass
class ModelConfig:
    codec: str = "conv"  # "conv" (pretrained) or "block" (fixed, lossier)
    text_steps: int = 2500
    text_lr: float = 2e-3
    text_batch: int = 64
    mask_steps: int = 1000
    mask_lr: float = 4e-4
    mask_batch: int = 32
    mask_base_width: int = 48
    mask_use_text: bool = True
    renderer_steps: int = 4000
    renderer_lr: float = 2e-4
    renderer_batch: int = 16
    renderer_base_width: int = 64
    seed: int = 0


@dataclass
class GenerationSection:
    dt_s: float = 20.0
    max_steps: int = 60
    stop_epsilon: float = 1e-3
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    text_scale: float = 5.0
    mask_scale: float = 5.0
    time_scale: float = 5.0
    embed_scale: float = 2.0


@dataclass
class MetricsConfig:
    alpha: float = DEFAULT_ALPHA
    max_single_update_pairs: int = 0  # 0 means all


@dataclass
class PathsConfig:
    codec_checkpoint: str = "artifacts/codec.pt"
    text_checkpoint: str = "artifacts/text.pt"
    mask_checkpoint: str = "artifacts/mask.pt"
    renderer_checkpoint: str = "artifacts/renderer.pt"
    out_dir: str = "artifacts"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    generation: GenerationSection = field(default_factory=GenerationSection)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _build_section(cls, data: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")
    kwargs = {}
    section_types = {
        "data": DataConfig,
        "model": ModelConfig,
        "generation": GenerationSection,
        "metrics": MetricsConfig,
        "paths": PathsConfig,
    }
    for name, cls in section_types.items():
        if name in data:
            section = data[name]
            if not isinstance(section, dict):
                raise ConfigError(f"section {name} must be a mapping")
            kwargs[name] = _build_section(cls, section, name)
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    if data is None:
        data = {}
    return config_from_dict(data)


def write_resolved_config(cfg: RunConfig, out_dir: str | Path,
                          extra: dict | None = None) -> Path:
    """Every run writes the fully resolved config (plus provenance extras
    like checkpoint hashes) next to the outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"config": cfg.to_dict()}
    if extra:
        payload.update(extra)
    path = out_dir / "resolved_config.json"
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path
