"""
Pydantic models for run configuration.

A run is fully described by one RunConfig, stored as config.cfg in its run
directory. Architecture sections reuse the models owned by their modules.
"""

import copy
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from backbone import BackboneConfig
from config_validator import (
    CONFIG_VERSION,
    ConfigValidator,
    coerce_model,
    format_flat_config,
    read_flat_config,
)
from e2vid import E2VID_PRESETS, E2VIDConfig
from errors import ConfigurationError, DataNotFoundError
from event_synth import DEFAULT_CONTRAST_THRESHOLD, DEFAULT_NUM_BINS, SceneConfig
from objectives import SiLogConfig
from tcfb import TCFBConfig

# =============================================================================
# Sections
# =============================================================================


class DataConfig(BaseModel):
    """Where the dataset lives and how it is encoded for the backbone."""

    model_config = ConfigDict(extra="forbid")

    data_dir: str = "data/synthetic"
    n_sequences: int = Field(24, ge=2)
    val_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    contrast_threshold: float = Field(DEFAULT_CONTRAST_THRESHOLD, gt=0.0)
    num_bins: int = Field(DEFAULT_NUM_BINS, ge=2)
    representation: Literal["e2vid", "frames", "voxel", "time_surface"] = "e2vid"
    unroll: int = Field(8, ge=1)
    n_jobs: int = 1


class E2VIDTrainConfig(BaseModel):
    """Reconstructor preset and its training budget."""

    model_config = ConfigDict(extra="forbid")

    preset: str = "B0"
    checkpoint: str | None = None
    lr: float = Field(1e-3, gt=0.0)
    iterations: int = Field(5000, ge=1)
    batch_size: int = Field(2, ge=1)
    unroll: int = Field(8, ge=1)
    log_interval: int = Field(100, ge=1)
    ssim_weight: float = Field(0.5, ge=0.0)

    @field_validator("preset")
    @classmethod
    def validate_preset(cls, v: str) -> str:
        if v not in E2VID_PRESETS:
            raise ValueError(f"unknown preset {v!r}, expected one of {list(E2VID_PRESETS)}")
        return v

    def architecture(self, num_bins: int) -> E2VIDConfig:
        return E2VIDConfig.from_preset(self.preset, num_bins=num_bins)


class OptimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(1e-4, ge=0.0)
    weight_decay: float = Field(0.0, ge=0.0)
    betas: tuple[float, float] = (0.9, 0.999)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(2000, ge=1)
    batch_size: int = Field(2, ge=1)
    log_interval: int = Field(50, ge=1)
    eval_interval: int = Field(500, ge=1)
    checkpoint_interval: int = Field(500, ge=1)
    teacher_checkpoint: str | None = None


# =============================================================================
# Run configuration
# =============================================================================


class RunConfig(BaseModel):
    """Everything needed to reproduce one run."""

    model_config = ConfigDict(extra="forbid")

    config_version: int = CONFIG_VERSION
    seed: int = Field(0, ge=0)
    name: str = "run"
    task: Literal["seg", "depth"] = "seg"
    mode: Literal["supervised", "distilled"] = "supervised"
    use_tcfb: bool = True
    data: DataConfig = Field(default_factory=DataConfig)
    e2vid: E2VIDTrainConfig = Field(default_factory=E2VIDTrainConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    tcfb: TCFBConfig = Field(default_factory=TCFBConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    silog: SiLogConfig = Field(default_factory=SiLogConfig)

    @field_validator("config_version")
    @classmethod
    def validate_version(cls, v: int) -> int:
        if v != CONFIG_VERSION:
            raise ValueError(f"unsupported config_version {v}, expected {CONFIG_VERSION}")
        return v

    def resolved_backbone(self) -> BackboneConfig:
        """Backbone config with resolution and input channels taken from the data section."""
        in_channels = {"voxel": self.data.num_bins, "time_surface": 2}.get(self.data.representation, 1)
        update = {"height": self.data.scene.height, "width": self.data.scene.width, "in_channels": in_channels}
        return coerce_model(BackboneConfig, {**self.backbone.model_dump(), **update}, path="backbone")

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def with_updates(self, updates: dict[str, Any]) -> "RunConfig":
        """Copy with dotted-key updates applied and re-validated."""
        return coerce_model(RunConfig, apply_overrides(self.to_dict(), updates))


def apply_overrides(config: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Set dotted keys ('train.iterations') in a nested mapping, returning a copy."""
    result = copy.deepcopy(config)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = result
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"{dotted}: {part} is not a section")
        node[leaf] = value
    return result


def load_run_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """
    Load a flat config.cfg (or start from defaults), apply overrides and validate.

    Raises:
        DataNotFoundError: the file does not exist
        ConfigurationError: a syntax error or failed validation
    """
    raw: dict[str, Any] = {"config_version": CONFIG_VERSION}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataNotFoundError(path, "Pass an existing config.cfg with --config or TGVFM_CONFIG.")
        raw = read_flat_config(path)

    raw = apply_overrides(raw, overrides or {})
    result = ConfigValidator().validate_mapping(raw)
    if not result.is_valid:
        raise ConfigurationError(str(result))
    return coerce_model(RunConfig, raw)


def dump_run_config(config: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_flat_config(config.to_dict()))
    return path
