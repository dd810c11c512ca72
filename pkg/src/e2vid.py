"""
Lightweight recurrent events-to-video reconstructor.

A U-Net with stride-2 encoders, one recurrent cell (ConvGRU or ConvLSTM) per
encoder stage, residual blocks at the bottleneck and nearest-upsampling
decoders joined by additive skips. Five presets (B0..B4) fix the cell type and
channel widths; the output head is a sigmoid so frames stay in [0, 1].
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from checkpoint import load_container, save_container
from config_validator import coerce_model
from errors import ConfigurationError, ContractError
from logging_config import get_logger

logger = get_logger(__name__)

E2VID_MAGIC = b"E2V1"

E2VID_PRESETS: dict[str, dict[str, Any]] = {
    "B0": {"recurrent_cell": "ConvGRU", "base_channels": 12, "encoder_channels": [24, 48], "n_residual_blocks": 1},
    "B1": {"recurrent_cell": "ConvGRU", "base_channels": 16, "encoder_channels": [32, 64, 128], "n_residual_blocks": 1},
    "B2": {"recurrent_cell": "ConvLSTM", "base_channels": 20, "encoder_channels": [40, 80, 160], "n_residual_blocks": 2},
    "B3": {"recurrent_cell": "ConvLSTM", "base_channels": 32, "encoder_channels": [64, 100, 200], "n_residual_blocks": 2},
    "B4": {
        "recurrent_cell": "ConvLSTM",
        "base_channels": 32,
        "encoder_channels": [64, 150, 300, 512],
        "n_residual_blocks": 3,
    },
}

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class E2VIDConfig(BaseModel):
    """Reconstructor architecture."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    preset: str | None = None
    recurrent_cell: Literal["ConvGRU", "ConvLSTM"] = "ConvGRU"
    base_channels: int = Field(12, ge=1)
    encoder_channels: list[int] = Field(default_factory=lambda: [24, 48], min_length=1)
    n_residual_blocks: int = Field(1, ge=0)
    num_bins: int = Field(5, ge=1)
    kernel_size: int = Field(5, ge=1)

    @model_validator(mode="after")
    def _check_preset(self) -> "E2VIDConfig":
        if self.preset is not None and self.preset not in E2VID_PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}, expected one of {list(E2VID_PRESETS)}")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return self

    @classmethod
    def from_preset(cls, preset: str, **overrides: Any) -> "E2VIDConfig":
        if preset not in E2VID_PRESETS:
            raise ConfigurationError(f"unknown E2VID preset {preset!r}, expected one of {list(E2VID_PRESETS)}")
        return coerce_model(cls, {"preset": preset, **E2VID_PRESETS[preset], **overrides}, path="e2vid")

    @property
    def n_stages(self) -> int:
        return len(self.encoder_channels)


@dataclass
class RecurrentState:
    """Per-stage hidden tensors, plus cell tensors for ConvLSTM."""

    hidden: tuple[torch.Tensor, ...]
    cell: tuple[torch.Tensor, ...] | None = None

    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(h.shape) for h in self.hidden]

    def detach(self) -> "RecurrentState":
        cell = tuple(c.detach() for c in self.cell) if self.cell is not None else None
        return RecurrentState(tuple(h.detach() for h in self.hidden), cell)

    def zeros_like(self) -> "RecurrentState":
        cell = tuple(torch.zeros_like(c) for c in self.cell) if self.cell is not None else None
        return RecurrentState(tuple(torch.zeros_like(h) for h in self.hidden), cell)

    def select(self, index: int) -> tuple[torch.Tensor, torch.Tensor | None]:
        return self.hidden[index], self.cell[index] if self.cell is not None else None


class ConvGRUCell(nn.Module):
    def __init__(self, input_size: int, hidden_size: int, kernel_size: int = 3):
        super().__init__()
        padding = kernel_size // 2
        self.hidden_size = hidden_size
        self.reset_gate = nn.Conv2d(input_size + hidden_size, hidden_size, kernel_size, padding=padding)
        self.update_gate = nn.Conv2d(input_size + hidden_size, hidden_size, kernel_size, padding=padding)
        self.out_gate = nn.Conv2d(input_size + hidden_size, hidden_size, kernel_size, padding=padding)

    def forward(self, input_: torch.Tensor, prev_hidden: torch.Tensor) -> torch.Tensor:
        stacked = torch.cat([input_, prev_hidden], dim=1)
        update = torch.sigmoid(self.update_gate(stacked))
        reset = torch.sigmoid(self.reset_gate(stacked))
        candidate = torch.tanh(self.out_gate(torch.cat([input_, prev_hidden * reset], dim=1)))
        return prev_hidden * (1 - update) + candidate * update


class ConvLSTMCell(nn.Module):
    def __init__(self, input_size: int, hidden_size: int, kernel_size: int = 3):
        super().__init__()
        self.hidden_size = hidden_size
        self.gates = nn.Conv2d(input_size + hidden_size, 4 * hidden_size, kernel_size, padding=kernel_size // 2)

    def forward(
        self, input_: torch.Tensor, prev_state: tuple[torch.Tensor, torch.Tensor]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        prev_hidden, prev_cell = prev_state
        gates = self.gates(torch.cat([input_, prev_hidden], dim=1))
        in_gate, remember_gate, out_gate, cell_gate = gates.chunk(4, dim=1)
        cell = torch.sigmoid(remember_gate) * prev_cell + torch.sigmoid(in_gate) * torch.tanh(cell_gate)
        hidden = torch.sigmoid(out_gate) * torch.tanh(cell)
        return hidden, cell


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class E2VIDLite(nn.Module):
    """Recurrent U-Net mapping (voxel grid, state) to (gray frame, state)."""

    def __init__(self, config: E2VIDConfig | dict[str, Any]):
        super().__init__()
        self.config = coerce_model(E2VIDConfig, config, path="e2vid")
        cfg = self.config
        pad = cfg.kernel_size // 2

        self.head = nn.Conv2d(cfg.num_bins, cfg.base_channels, cfg.kernel_size, padding=pad)

        widths = [cfg.base_channels, *cfg.encoder_channels]
        cell_cls = ConvGRUCell if cfg.recurrent_cell == "ConvGRU" else ConvLSTMCell
        self.encoders = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], cfg.kernel_size, stride=2, padding=pad) for i in range(cfg.n_stages)
        )
        self.cells = nn.ModuleList(cell_cls(w, w) for w in cfg.encoder_channels)
        self.resblocks = nn.Sequential(*(ResidualBlock(widths[-1]) for _ in range(cfg.n_residual_blocks)))
        # decoders[j] maps stage n-1-j back to the resolution (and width) of stage n-2-j
        self.decoders = nn.ModuleList(
            nn.Conv2d(widths[i + 1], widths[i], cfg.kernel_size, padding=pad) for i in reversed(range(cfg.n_stages))
        )
        self.pred = nn.Conv2d(cfg.base_channels, 1, 1)

    @property
    def is_lstm(self) -> bool:
        return self.config.recurrent_cell == "ConvLSTM"

    def init_state(
        self, height: int, width: int, batch_size: int = 1, dtype: torch.dtype | None = None
    ) -> RecurrentState:
        return init_state(
            self.config, height, width, batch_size, dtype=dtype or self.pred.weight.dtype, device=self.pred.weight.device
        )

    def forward(self, voxel: torch.Tensor, state: RecurrentState) -> tuple[torch.Tensor, RecurrentState]:
        head = F.relu(self.head(voxel))
        x = head
        skips, hidden, cells = [], [], []
        for i, (encoder, cell) in enumerate(zip(self.encoders, self.cells)):
            x = F.relu(encoder(x))
            prev_h, prev_c = state.select(i)
            if self.is_lstm:
                x, c = cell(x, (prev_h, prev_c))
                cells.append(c)
            else:
                x = cell(x, prev_h)
            hidden.append(x)
            skips.append(x)

        x = self.resblocks(x)
        for decoder, skip in zip(self.decoders, reversed(skips)):
            x = x + skip
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.relu(decoder(x))

        frame = torch.sigmoid(self.pred(x + head))
        return frame, RecurrentState(tuple(hidden), tuple(cells) if self.is_lstm else None)


def init_state(
    config: E2VIDConfig,
    height: int,
    width: int,
    batch_size: int = 1,
    dtype: torch.dtype = torch.float32,
    device: torch.device | str | None = None,
) -> RecurrentState:
    """
    All-zero recurrent state for a (height, width) input.

    Raises:
        ConfigurationError: if the resolution is not divisible by 2^stages
    """
    factor = 2**config.n_stages
    if height % factor or width % factor:
        raise ConfigurationError(
            f"resolution {height}x{width} must be divisible by {factor} for {config.n_stages} encoder stages"
        )
    hidden = []
    for i, channels in enumerate(config.encoder_channels):
        scale = 2 ** (i + 1)
        hidden.append(torch.zeros(batch_size, channels, height // scale, width // scale, dtype=dtype, device=device))
    cell = tuple(torch.zeros_like(h) for h in hidden) if config.recurrent_cell == "ConvLSTM" else None
    return RecurrentState(tuple(hidden), cell)


def reconstruct_step(
    model: E2VIDLite, voxel: torch.Tensor, state: RecurrentState
) -> tuple[torch.Tensor, RecurrentState]:
    """
    One reconstruction step.

    Args:
        voxel: (C, H, W) or (B, C, H, W)
        state: state whose stage shapes match the voxel's resolution

    Returns:
        (frame, next_state) with frame shaped (B, 1, H, W)
    """
    if voxel.dim() == 3:
        voxel = voxel.unsqueeze(0)
    batch, channels, height, width = voxel.shape
    if channels != model.config.num_bins:
        raise ContractError(f"voxel has {channels} bins, model expects {model.config.num_bins}")
    expected = init_state(model.config, height, width, batch, dtype=voxel.dtype, device="meta").shapes()
    if state.shapes() != expected:
        raise ContractError(f"state shapes {state.shapes()} do not match voxel {tuple(voxel.shape)}")
    return model(voxel, state)


def param_count(config: E2VIDConfig | str) -> int:
    """Exact learnable scalar count of the instantiated network."""
    if isinstance(config, str):
        config = E2VIDConfig.from_preset(config)
    with torch.device("meta"):
        model = E2VIDLite(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def _gaussian_window(size: int, sigma: float, dtype: torch.dtype, device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)[None, None]


def ssim(a: torch.Tensor, b: torch.Tensor, data_range: float = 1.0, reduction: str = "mean") -> torch.Tensor:
    """
    Structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Means over valid window positions only. Images smaller than the window
    use a window clipped to the image size. Accepts (H, W), (B, H, W) or
    (B, 1, H, W); with reduction="none" returns one value per image.
    """
    if a.shape != b.shape:
        raise ContractError(f"ssim inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    while a.dim() < 4:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    a = a.reshape(-1, 1, *a.shape[-2:])
    b = b.reshape(-1, 1, *b.shape[-2:])

    size = min(SSIM_WINDOW, a.shape[-2], a.shape[-1])
    window = _gaussian_window(size, SSIM_SIGMA, a.dtype, a.device)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    mu_a = F.conv2d(a, window)
    mu_b = F.conv2d(b, window)
    var_a = F.conv2d(a * a, window) - mu_a**2
    var_b = F.conv2d(b * b, window) - mu_b**2
    cov = F.conv2d(a * b, window) - mu_a * mu_b

    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    per_image = ssim_map.flatten(1).mean(dim=1)
    return per_image.mean() if reduction == "mean" else per_image


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor, ssim_weight: float = 0.5) -> torch.Tensor:
    """L1 plus weighted (1 - SSIM)."""
    return (pred - target).abs().mean() + ssim_weight * (1.0 - ssim(pred, target))


def save_e2vid(model: E2VIDLite, path: str | Path) -> Path:
    path = save_container(path, E2VID_MAGIC, model.config.model_dump(), model.state_dict())
    logger.info("Saved E2VID checkpoint", extra={"path": str(path), "preset": model.config.preset})
    return path


def load_e2vid(path: str | Path) -> E2VIDLite:
    config, tensors = load_container(path, E2VID_MAGIC)
    model = E2VIDLite(config)
    model.load_state_dict(tensors)
    return model
