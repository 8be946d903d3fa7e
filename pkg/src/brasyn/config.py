"""Pipeline configuration: scale profiles plus JSON overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import List, Optional, Tuple

from .refiner3d.model import RefinerConfig
from .refiner3d.train import RefinerTrainConfig
from .synth2d.losses import Stage1LossWeights
from .synth2d.model import GeneratorConfig
from .synth2d.train import Stage1TrainConfig

PROFILES = ("toy", "full")


@dataclass
class DataConfig:
    n_train: int = 32
    n_test: int = 8
    shape: Tuple[int, int, int] = (64, 64, 64)


@dataclass
class ProxyConfig:
    epochs: int = 30
    patch_size: int = 32
    batch_size: int = 4
    patches_per_case: int = 2
    lr: float = 3e-3
    widths: Tuple[int, ...] = (8, 16, 32)


@dataclass
class PipelineConfig:
    profile: str = "toy"
    seed: int = 0
    target: str = "t1ce"
    strategy: str = "mean"
    out: str = "runs/toy"
    # modalities treated as missing during refiner training, assigned round-robin
    # over training cases; empty means "the evaluated target only"
    refiner_targets: List[str] = field(default_factory=list)
    eval_workers: int = 4
    data: DataConfig = field(default_factory=DataConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    stage1: Stage1TrainConfig = field(default_factory=Stage1TrainConfig)
    loss_weights: Stage1LossWeights = field(default_factory=Stage1LossWeights)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    refiner_train: RefinerTrainConfig = field(default_factory=RefinerTrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def profile_defaults(profile: str) -> dict:
    """Nested override dict that a profile applies on top of the dataclass defaults."""
    if profile == "toy":
        # sized to finish on a single CPU core in well under half an hour
        return {
            "data": {"shape": [64, 64, 64], "n_train": 32, "n_test": 8},
            "generator": {"slice_size": [64, 64], "base_channels": 16, "latent_channels": 64},
            "stage1": {"epochs": 20, "batch_size": 16, "max_steps_per_epoch": 30},
            "proxy": {"epochs": 30, "patch_size": 32},
            "refiner": {"channels": 8, "unet_depth": 2, "patch_size": 32},
            "refiner_train": {"epochs": 10, "batch_size": 4, "patch_size": 32, "lr": 1e-3},
        }
    if profile == "full":
        return {
            "data": {"shape": [155, 240, 240], "n_train": 1251, "n_test": 219},
            "generator": {"slice_size": [240, 240], "base_channels": 64, "latent_channels": 256},
            "stage1": {"epochs": 20, "batch_size": 24},
            "refiner": {"channels": 64, "unet_depth": 3, "patch_size": 128},
            "refiner_train": {"epochs": 100, "batch_size": 4, "patch_size": 128},
            "proxy": {"epochs": 30, "patch_size": 128, "widths": [16, 32, 32]},
        }
    raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, values: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in values.items():
        current = getattr(defaults, name)
        if is_dataclass(current) and isinstance(value, dict):
            kwargs[name] = _build(type(current), value)
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def make_config(profile: str = "toy", overrides: Optional[dict] = None) -> PipelineConfig:
    values = _merge(profile_defaults(profile), overrides or {})
    values["profile"] = profile
    return _build(PipelineConfig, values)


def load_config(path=None, profile: Optional[str] = None, **overrides) -> PipelineConfig:
    """Profile defaults, then the JSON file at ``path``, then keyword overrides (``None`` skipped)."""
    file_values = {}
    if path is not None:
        file_values = json.loads(Path(path).read_text())
    profile = profile or file_values.pop("profile", "toy")
    file_values.pop("profile", None)
    extra = {k: v for k, v in overrides.items() if v is not None}
    return make_config(profile, _merge(file_values, extra))


def save_config(path, cfg: PipelineConfig) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
