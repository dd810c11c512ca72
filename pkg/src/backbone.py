"""
Toy ViT backbone with TCFB insertion sites and segmentation/depth heads.

Frames are tokenized by a patch convolution, run through pre-norm transformer
blocks and decoded by a small head whose penultimate activation doubles as
the guidance feature for the next frame. At each insertion site the TCFB
delta is added to the block output; the block input and, once the heads have
run, this frame's deep feature are pushed into that site's memory bank.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from checkpoint import load_container, save_container
from config_validator import coerce_model
from errors import ConfigurationError, ContractError
from logging_config import get_logger
from tcfb import MemoryBank, TCFBConfig, TCFBStack, memory_push

logger = get_logger(__name__)

TGV_MAGIC = b"TGV1"
INITIAL_DEPTH_M = 5.0


class BackboneConfig(BaseModel):
    """Backbone geometry; defaults are the desk-scale 6-block, 2-site model."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    height: int = Field(64, ge=1)
    width: int = Field(64, ge=1)
    in_channels: int = Field(1, ge=1)
    n_blocks: int = Field(6, ge=1)
    channels: int = Field(64, ge=1)
    n_heads: int = Field(4, ge=1)
    patch_size: int = Field(8, ge=1)
    n_tcfb_sites: int = Field(2, ge=1)
    n_classes: int = Field(4, ge=2)
    head_channels: int = Field(32, ge=1)
    guidance_stride: int = Field(2, ge=1)
    mlp_ratio: int = Field(4, ge=1)

    @model_validator(mode="after")
    def _check_geometry(self) -> "BackboneConfig":
        if self.n_blocks % self.n_tcfb_sites:
            raise ValueError(f"n_blocks ({self.n_blocks}) must be divisible by n_tcfb_sites ({self.n_tcfb_sites})")
        if self.channels % self.n_heads:
            raise ValueError(f"channels ({self.channels}) must be divisible by n_heads ({self.n_heads})")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ValueError(f"resolution {self.height}x{self.width} not divisible by patch_size {self.patch_size}")
        if self.patch_size % self.guidance_stride:
            raise ValueError("patch_size must be divisible by guidance_stride")
        return self

    @property
    def token_grid(self) -> tuple[int, int]:
        return self.height // self.patch_size, self.width // self.patch_size

    def default_sites(self) -> list[int]:
        """1-based block indices {s, 2s, ...} with s = n_blocks / n_tcfb_sites."""
        step = self.n_blocks // self.n_tcfb_sites
        return [step * (i + 1) for i in range(self.n_tcfb_sites)]


def insertion_sites(backbone: BackboneConfig, tcfb: TCFBConfig | None) -> list[int]:
    if tcfb is None or tcfb.insertion_sites is None:
        return backbone.default_sites()
    sites = sorted(tcfb.insertion_sites)
    if len(set(sites)) != len(sites) or sites[0] < 1 or sites[-1] > backbone.n_blocks:
        raise ConfigurationError(f"insertion_sites {tcfb.insertion_sites} must be distinct in [1, {backbone.n_blocks}]")
    return sites


@dataclass
class ModelOutput:
    """
    Per-frame predictions, channels first.

    seg_logits (B, n_classes, H, W); depth (B, 1, H, W) > 0;
    deep_feature (B, head_channels, H_tok * s, W_tok * s).
    """

    seg_logits: torch.Tensor
    depth: torch.Tensor
    deep_feature: torch.Tensor

    @property
    def seg_probs(self) -> torch.Tensor:
        return torch.softmax(self.seg_logits, dim=1)

    @property
    def seg_labels(self) -> torch.Tensor:
        return self.seg_logits.argmax(dim=1)


class ViTBlock(nn.Module):
    def __init__(self, channels: int, n_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(channels)
        self.attn = nn.MultiheadAttention(channels, n_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(
            nn.Linear(channels, channels * mlp_ratio),
            nn.GELU(),
            nn.Linear(channels * mlp_ratio, channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        tokens = x.reshape(b, h * w, c)
        normed = self.norm1(tokens)
        tokens = tokens + self.attn(normed, normed, normed, need_weights=False)[0]
        tokens = tokens + self.mlp(self.norm2(tokens))
        return tokens.reshape(b, h, w, c)


class TGVFMBackbone(nn.Module):
    """
    Backbone plus heads, with an optional TCFB stack.

    The stack is constructed after every backbone module, so two models built
    from the same seed share identical backbone weights whether or not they
    carry TCFBs.
    """

    def __init__(
        self,
        config: BackboneConfig | dict[str, Any] | None = None,
        tcfb_config: TCFBConfig | dict[str, Any] | None = None,
    ):
        super().__init__()
        self.config = coerce_model(BackboneConfig, config if config is not None else {}, path="backbone")
        self.tcfb_config = coerce_model(TCFBConfig, tcfb_config, path="tcfb") if tcfb_config is not None else None
        cfg = self.config
        grid_h, grid_w = cfg.token_grid

        self.patch_embed = nn.Conv2d(cfg.in_channels, cfg.channels, cfg.patch_size, stride=cfg.patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, grid_h, grid_w, cfg.channels))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(ViTBlock(cfg.channels, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.n_blocks))
        self.norm = nn.LayerNorm(cfg.channels)

        self.head_proj = nn.Linear(cfg.channels, cfg.head_channels)
        self.head_conv = nn.Conv2d(cfg.head_channels, cfg.head_channels, 3, padding=1)
        self.seg_head = nn.Conv2d(cfg.head_channels, cfg.n_classes, 1)
        self.depth_head = nn.Conv2d(cfg.head_channels, 1, 1)
        nn.init.constant_(self.depth_head.bias, math.log(INITIAL_DEPTH_M))

        self.sites = insertion_sites(cfg, self.tcfb_config)
        self.tcfb: TCFBStack | None = None
        if self.tcfb_config is not None:
            self.tcfb = TCFBStack(
                len(self.sites), cfg.channels, cfg.head_channels, cfg.guidance_stride, self.tcfb_config
            )

    @property
    def has_tcfb(self) -> bool:
        return self.tcfb is not None

    def reset_banks(self) -> list[MemoryBank]:
        k = self.tcfb_config.k if self.tcfb_config is not None else 1
        return [MemoryBank(k) for _ in self.sites]

    def _check_input(self, gray: torch.Tensor) -> torch.Tensor:
        if gray.dim() == 3:
            gray = gray.unsqueeze(0)
        _, channels, height, width = gray.shape
        if channels != self.config.in_channels:
            raise ContractError(f"input has {channels} channels, backbone expects {self.config.in_channels}")
        if height % self.config.patch_size or width % self.config.patch_size:
            raise ConfigurationError(f"input {height}x{width} not divisible by patch size {self.config.patch_size}")
        if (height, width) != (self.config.height, self.config.width):
            raise ConfigurationError(
                f"input {height}x{width} does not match configured {self.config.height}x{self.config.width}"
            )
        return gray

    def _heads(self, tokens: torch.Tensor, out_size: tuple[int, int]) -> ModelOutput:
        x = F.gelu(self.head_proj(self.norm(tokens))).permute(0, 3, 1, 2)
        x = F.interpolate(x, scale_factor=self.config.guidance_stride, mode="nearest")
        deep = F.gelu(self.head_conv(x))
        seg = F.interpolate(self.seg_head(deep), size=out_size, mode="bilinear", align_corners=False)
        log_depth = F.interpolate(self.depth_head(deep), size=out_size, mode="bilinear", align_corners=False)
        return ModelOutput(seg_logits=seg, depth=torch.exp(log_depth), deep_feature=deep)

    def forward_frame(
        self,
        gray: torch.Tensor,
        banks: list[MemoryBank] | None = None,
        use_tcfb: bool = True,
    ) -> tuple[ModelOutput, list[MemoryBank]]:
        """
        One frame through backbone, TCFB sites and heads.

        Returns the predictions and the successor banks; the given banks are
        not modified. Bank entries are detached from the autograd graph.
        """
        gray = self._check_input(gray)
        if banks is None:
            banks = self.reset_banks()
        if len(banks) != len(self.sites):
            raise ContractError(f"expected {len(self.sites)} banks, got {len(banks)}")
        active = use_tcfb and self.tcfb is not None

        x = self.patch_embed(gray).permute(0, 2, 3, 1) + self.pos_embed
        site_inputs: dict[int, torch.Tensor] = {}
        for index, block in enumerate(self.blocks, start=1):
            f_in = x
            x = block(x)
            if active and index in self.sites:
                site = self.sites.index(index)
                x = x + self.tcfb.block(site)(f_in, banks[site])
                site_inputs[site] = f_in

        output = self._heads(x, gray.shape[-2:])
        if not active:
            return output, banks
        deep = output.deep_feature.detach()
        new_banks = [memory_push(banks[s], site_inputs[s].detach(), deep) for s in range(len(self.sites))]
        return output, new_banks

    def forward(self, gray: torch.Tensor, banks: list[MemoryBank] | None = None, use_tcfb: bool = True):
        return self.forward_frame(gray, banks, use_tcfb)

    def forward_sequence(
        self,
        frames: torch.Tensor,
        banks: list[MemoryBank] | None = None,
        use_tcfb: bool = True,
    ) -> tuple[list[ModelOutput], list[MemoryBank]]:
        """Thread banks through frames shaped (T, B, C, H, W)."""
        outputs = []
        for frame in frames:
            output, banks = self.forward_frame(frame, banks, use_tcfb)
            outputs.append(output)
        return outputs, banks


def reset_banks(model: TGVFMBackbone) -> list[MemoryBank]:
    return model.reset_banks()


def save_model(model: TGVFMBackbone, path: str | Path) -> Path:
    config = {
        "backbone": model.config.model_dump(),
        "tcfb": model.tcfb_config.model_dump() if model.tcfb_config is not None else None,
    }
    path = save_container(path, TGV_MAGIC, config, model.state_dict())
    logger.info("Saved model checkpoint", extra={"path": str(path), "tcfb": model.has_tcfb})
    return path


def load_model(path: str | Path) -> TGVFMBackbone:
    config, tensors = load_container(path, TGV_MAGIC)
    model = TGVFMBackbone(config["backbone"], config.get("tcfb"))
    model.load_state_dict(tensors)
    return model
