"""Pipeline configuration: model geometry, stage schedules, and JSON parsing.

The JSON schema mirrors the dataclasses below: top-level keys are the
``PipelineConfig`` fields, with ``unet`` and ``adapter`` as nested objects.
Unknown keys anywhere are errors, never warnings.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Invalid configuration value, unknown key, or malformed config file."""


@dataclass(frozen=True)
class UNetConfig:
    """Geometry of the segmentation backbone.

    Stage i (1-based) has min(base_channels * 2**(i-1), channel_cap) output
    channels and spatial side input_side / 2**(i-1); inputs must therefore be
    divisible by 2**(n_stages-1).
    """

    n_stages: int = 8
    base_channels: int = 32
    channel_cap: int = 512
    conv_per_stage: int = 2
    input_channels: int = 1
    n_classes: int = 2
    fusion_channels: int = 32

    def __post_init__(self):
        if not 3 <= self.n_stages <= 8:
            raise ConfigError(f"n_stages must be in [3, 8], got {self.n_stages}")
        for name in ("base_channels", "channel_cap", "conv_per_stage"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.fusion_channels < 0:
            raise ConfigError(f"fusion_channels must be >= 0, got {self.fusion_channels}")

    def stage_channels(self, i: int) -> int:
        """Output channels of encoder stage i (1-based)."""
        return min(self.base_channels * 2 ** (i - 1), self.channel_cap)

    @property
    def downsample_factor(self) -> int:
        return 2 ** (self.n_stages - 1)


@dataclass(frozen=True)
class AdapterConfig:
    """Geometry of the ViT encoder and the three-conv embedding projector.

    ``projector_channels`` is (c1, c2, fusion_channels); the last entry must
    match ``UNetConfig.fusion_channels`` when the two are paired.
    """

    patch_size: int = 4
    embed_dim: int = 32
    depth: int = 2
    n_heads: int = 2
    projector_channels: tuple[int, int, int] = (32, 32, 32)
    vit_trainable: bool = False
    projector_trainable: bool = True

    def __post_init__(self):
        if self.patch_size < 1 or self.embed_dim < 1 or self.depth < 1 or self.n_heads < 1:
            raise ConfigError("patch_size, embed_dim, depth and n_heads must all be positive")
        if self.embed_dim % self.n_heads != 0:
            raise ConfigError(
                f"embed_dim ({self.embed_dim}) must be divisible by n_heads ({self.n_heads})"
            )
        object.__setattr__(self, "projector_channels", tuple(self.projector_channels))
        if len(self.projector_channels) != 3 or any(c < 1 for c in self.projector_channels):
            raise ConfigError(
                f"projector_channels must be 3 positive integers, got {self.projector_channels}"
            )

    @property
    def fusion_channels(self) -> int:
        return self.projector_channels[2]


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the three-stage pipeline needs, with reproducible defaults.

    ``epochs`` and ``learning_rates`` are per stage (supervised pretraining,
    unsupervised adaptation, few-shot finetuning). ``weight_decay`` is the
    optimizer's L2 regularization, applied in all stages.
    """

    unet: UNetConfig = field(default_factory=UNetConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    epochs: tuple[int, int, int] = (100, 10, 50)
    learning_rates: tuple[float, float, float] = (1e-2, 1e-2, 1e-3)
    weight_decay: float = 3e-5
    batch_size: int = 8
    patch_size: int = 256
    seed: int = 0
    shots: int = 10
    raw_pairs: int = 20
    w_feat: float = 1.0
    w_style: float = 1.0
    anchor_source_features: bool = True
    flips: bool = True

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(int(e) for e in self.epochs))
        object.__setattr__(self, "learning_rates", tuple(float(r) for r in self.learning_rates))
        if len(self.epochs) != 3 or any(e < 0 for e in self.epochs):
            raise ConfigError(f"epochs must be 3 nonnegative integers, got {self.epochs}")
        if len(self.learning_rates) != 3 or any(r <= 0 for r in self.learning_rates):
            raise ConfigError(f"learning_rates must be 3 positive reals, got {self.learning_rates}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        for name in ("batch_size", "patch_size", "shots", "raw_pairs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.seed < 0:
            raise ConfigError(f"seed must be unsigned, got {self.seed}")
        if self.w_feat < 0 or self.w_style < 0:
            raise ConfigError("w_feat and w_style must be nonnegative")
        if self.patch_size % self.unet.downsample_factor != 0:
            raise ConfigError(
                f"patch_size {self.patch_size} must be divisible by "
                f"2**(n_stages-1) = {self.unet.downsample_factor}"
            )
        if self.patch_size % self.adapter.patch_size != 0:
            raise ConfigError(
                f"patch_size {self.patch_size} must be divisible by the adapter "
                f"patch size {self.adapter.patch_size}"
            )
        if self.unet.fusion_channels != self.adapter.fusion_channels and self.unet.fusion_channels != 0:
            raise ConfigError(
                f"unet.fusion_channels ({self.unet.fusion_channels}) must equal "
                f"adapter projector output channels ({self.adapter.fusion_channels}), or be 0"
            )

    @property
    def bottleneck_side(self) -> int:
        return self.patch_size // self.unet.downsample_factor

    @property
    def vit_grid_side(self) -> int:
        return self.patch_size // self.adapter.patch_size

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["epochs"] = list(self.epochs)
        d["learning_rates"] = list(self.learning_rates)
        d["unet"] = dataclasses.asdict(self.unet)
        d["adapter"] = dataclasses.asdict(self.adapter)
        d["adapter"]["projector_channels"] = list(self.adapter.projector_channels)
        return d


def desk_config(**overrides) -> PipelineConfig:
    """Desk-scale configuration: 64x64 crops, 4-stage UNet, tiny ViT.

    This is the config the test and acceptance suites run on; it trains in
    seconds per stage on a laptop CPU. Keyword overrides replace top-level
    PipelineConfig fields.
    """
    base = dict(
        unet=UNetConfig(n_stages=4, base_channels=8, fusion_channels=32),
        adapter=AdapterConfig(),
        epochs=(30, 20, 30),
        patch_size=64,
        batch_size=8,
    )
    base.update(overrides)
    return PipelineConfig(**base)


def paper_fidelity_config(**overrides) -> PipelineConfig:
    """Full-scale configuration: 256x256 crops, 8-stage UNet, larger ViT."""
    base = dict(
        unet=UNetConfig(n_stages=8, base_channels=32, fusion_channels=64),
        adapter=AdapterConfig(
            patch_size=16, embed_dim=256, depth=6, n_heads=8,
            projector_channels=(128, 96, 64),
        ),
        patch_size=256,
        batch_size=2,
    )
    base.update(overrides)
    return PipelineConfig(**base)


_TUPLE_FIELDS = {"epochs", "learning_rates", "projector_channels"}


def _coerce(value: Any, target: Any, key: str) -> Any:
    if isinstance(target, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"key '{key}' expects a boolean, got {value!r}")
    if isinstance(target, int) and not isinstance(target, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"key '{key}' expects an integer, got {value!r}")
        return int(value)
    if isinstance(target, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{key}' expects a number, got {value!r}")
        return float(value)
    if isinstance(target, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"key '{key}' expects a list, got {value!r}")
        return tuple(value)
    return value


def config_from_dict(data: dict[str, Any]) -> PipelineConfig:
    """Build a PipelineConfig from a parsed JSON mapping, strictly.

    Unknown keys (top level or inside ``unet``/``adapter``) raise ConfigError
    naming the offending key.
    """
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
    defaults = PipelineConfig()
    top_fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in top_fields:
            raise ConfigError(f"unknown config key '{key}'")
        if key in ("unet", "adapter"):
            sub_cls = UNetConfig if key == "unet" else AdapterConfig
            if not isinstance(value, dict):
                raise ConfigError(f"key '{key}' expects an object, got {value!r}")
            sub_fields = {f.name for f in dataclasses.fields(sub_cls)}
            sub_defaults = sub_cls()
            sub_kwargs = {}
            for sub_key, sub_value in value.items():
                if sub_key not in sub_fields:
                    raise ConfigError(f"unknown config key '{key}.{sub_key}'")
                sub_kwargs[sub_key] = _coerce(
                    sub_value, getattr(sub_defaults, sub_key), f"{key}.{sub_key}"
                )
            kwargs[key] = sub_cls(**sub_kwargs)
        else:
            kwargs[key] = _coerce(value, getattr(defaults, key), key)
    return PipelineConfig(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    """Load and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file '{path}': {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file '{path}' is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def parse_override(item: str) -> tuple[str, Any]:
    """Parse a dotted-key override like ``unet.base_channels=16``.

    Values are parsed as JSON when possible, otherwise taken as strings.
    """
    if "=" not in item:
        raise ConfigError(f"override '{item}' must look like key=value")
    key, _, raw = item.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{item}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(config: PipelineConfig, overrides: list[str]) -> PipelineConfig:
    """Apply dotted-key=value overrides on top of a config.

    Unknown keys are errors. Returns a new PipelineConfig.
    """
    data = config.to_dict()
    for item in overrides:
        key, value = parse_override(item)
        parts = key.split(".")
        node: Any = data
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key '{key}'")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config key '{key}'")
        node[leaf] = value
    return config_from_dict(data)
