"""
Temporal Context Fusion Block.

Token maps are channel-last tensors (B, H, W, C). A block combines three
attention operators over a sliding memory of previous inputs:

- long-range temporal attention (per location, along time)
- dual spatiotemporal attention: cross-attention with queries from the
  previous frame, then window attention over a (2*delta+1)^2 neighbourhood
  of the previous frame
- deep feature guidance: previous deep head features, patch-embedded and
  added to the stored shallow maps before they are attended to

The block's output goes through a zero-initialized linear layer, so a fresh
block contributes exactly nothing to its host network.
"""

import copy
import math
from collections import deque
from collections.abc import Sequence
from typing import Any, Literal

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from torch import nn

from config_validator import coerce_model
from errors import ConfigurationError, ContractError

Operator = Literal["lta", "cross", "window"]
DEFAULT_ORDER: list[Operator] = ["lta", "cross", "window"]


class TCFBConfig(BaseModel):
    """Memory window, window radius, projection width and component switches."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    k: int = Field(3, ge=1)
    delta: int = Field(1, ge=0)
    d: int | None = Field(None, ge=1, description="projection width; None means the site's channel count")
    insertion_sites: list[int] | None = None
    share_params: bool = True
    use_lta: bool = True
    use_dsa: bool = True
    use_dfgm: bool = True
    zero_init: bool = True
    order: list[Operator] = Field(default_factory=lambda: list(DEFAULT_ORDER))
    mlp_ratio: int = Field(2, ge=1)

    @field_validator("order")
    @classmethod
    def _check_order(cls, v: list[str]) -> list[str]:
        if sorted(v) != sorted(DEFAULT_ORDER):
            raise ValueError(f"order must be a permutation of {DEFAULT_ORDER}, got {v}")
        return v

    @model_validator(mode="after")
    def _check_guidance(self) -> "TCFBConfig":
        if self.use_dfgm and not (self.use_lta or self.use_dsa):
            raise ValueError("use_dfgm requires use_lta or use_dsa")
        return self

    def label(self) -> str:
        parts = [name for name, on in (("L", self.use_lta), ("D", self.use_dsa), ("G", self.use_dfgm)) if on]
        return "+".join(parts) or "none"


# =============================================================================
# Memory bank
# =============================================================================


class MemoryBank:
    """
    The last k TCFB inputs of one site and the deep features paired with them.

    Index 0 is the most recent entry. Deep entries are either always present
    or always None for a given bank.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ConfigurationError(f"memory window k must be >= 1, got {k}")
        self.k = k
        self.shallow: deque[torch.Tensor] = deque(maxlen=k)
        self.deep: deque[torch.Tensor | None] = deque(maxlen=k)
        self._shallow_shape: tuple[int, ...] | None = None
        self._deep_shape: tuple[int, ...] | None = None
        self._has_deep: bool | None = None

    def __len__(self) -> int:
        return len(self.shallow)

    def push(self, shallow: torch.Tensor, deep: torch.Tensor | None = None) -> None:
        shape = tuple(shallow.shape)
        if self._shallow_shape is not None and shape != self._shallow_shape:
            raise ContractError(f"shallow shape drift: {shape} vs established {self._shallow_shape}")
        has_deep = deep is not None
        if self._has_deep is not None and has_deep != self._has_deep:
            raise ContractError("deep entries must be pushed on every step or never")
        if has_deep:
            deep_shape = tuple(deep.shape)
            if self._deep_shape is not None and deep_shape != self._deep_shape:
                raise ContractError(f"deep shape drift: {deep_shape} vs established {self._deep_shape}")
            self._deep_shape = deep_shape
        self._shallow_shape = shape
        self._has_deep = has_deep
        self.shallow.appendleft(shallow)
        self.deep.appendleft(deep)

    def front(self) -> torch.Tensor | None:
        return self.shallow[0] if self.shallow else None

    def copy(self) -> "MemoryBank":
        return copy.copy(self)

    def __copy__(self) -> "MemoryBank":
        other = MemoryBank(self.k)
        other.shallow = deque(self.shallow, maxlen=self.k)
        other.deep = deque(self.deep, maxlen=self.k)
        other._shallow_shape = self._shallow_shape
        other._deep_shape = self._deep_shape
        other._has_deep = self._has_deep
        return other


def memory_push(bank: MemoryBank, shallow: torch.Tensor, deep: torch.Tensor | None = None) -> MemoryBank:
    """Return a new bank with (shallow, deep) at the front; the input bank is untouched."""
    new = bank.copy()
    new.push(shallow, deep)
    return new


# =============================================================================
# Parameters
# =============================================================================


class AttentionParams(nn.Module):
    """Single-head query/key/value projections (C -> d) and output projection (d -> C)."""

    def __init__(self, channels: int, d: int | None = None):
        super().__init__()
        d = d or channels
        self.d = d
        self.q = nn.Linear(channels, d, bias=False)
        self.k = nn.Linear(channels, d, bias=False)
        self.v = nn.Linear(channels, d, bias=False)
        self.out = nn.Linear(d, channels, bias=False)


class GuidanceEmbedder(nn.Module):
    """Strided non-overlapping convolution from deep head features to a token map."""

    def __init__(self, deep_channels: int, channels: int, stride: int):
        super().__init__()
        self.proj = nn.Conv2d(deep_channels, channels, kernel_size=stride, stride=stride)

    def forward(self, deep: torch.Tensor) -> torch.Tensor:
        # (B, C_deep, H, W) -> (B, H / s, W / s, C)
        return self.proj(deep).permute(0, 2, 3, 1)


class ZeroInitLinear(nn.Linear):
    def __init__(self, in_features: int, out_features: int, zero_init: bool = True):
        super().__init__(in_features, out_features)
        if zero_init:
            nn.init.zeros_(self.weight)
            nn.init.zeros_(self.bias)


class FeedForward(nn.Module):
    def __init__(self, channels: int, mlp_ratio: int = 2):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(channels, channels * mlp_ratio),
            nn.GELU(),
            nn.Linear(channels * mlp_ratio, channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.net(x)


# =============================================================================
# Operators
# =============================================================================


def _attend(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: torch.Tensor | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention; masked keys get -inf before the softmax."""
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


def _check_same(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ContractError(f"{what}: shape {tuple(b.shape)} does not match {tuple(a.shape)}")


def lta_forward(
    f_t: torch.Tensor,
    history: Sequence[torch.Tensor] | MemoryBank,
    params: AttentionParams,
    return_weights: bool = False,
):
    """
    Attention along time at every location.

    The key/value sequence is [f_t, history[0], ...]; only the current-frame
    query row is read out and added to f_t. history is most-recent-first and
    may be shorter than k (or empty) during cold start.
    """
    if isinstance(history, MemoryBank):
        history = list(history.shallow)
    for h in history:
        _check_same(f_t, h, "lta history")
    seq = torch.stack([f_t, *history], dim=-2)  # (B, H, W, L, C)
    q = params.q(f_t).unsqueeze(-2)
    out, weights = _attend(q, params.k(seq), params.v(seq))
    result = f_t + params.out(out.squeeze(-2))
    return (result, weights.squeeze(-2)) if return_weights else result


def cross_attention_forward(
    f_t: torch.Tensor,
    f_prev: torch.Tensor | None,
    params: AttentionParams,
    return_weights: bool = False,
):
    """
    Inter-frame cross-attention over flattened tokens.

    Queries come from f_prev, keys and values from f_t; the result is added
    to f_t. With no previous frame f_t is returned unchanged.
    """
    if f_prev is None:
        return (f_t, None) if return_weights else f_t
    _check_same(f_t, f_prev, "cross-attention previous frame")
    b, h, w, c = f_t.shape
    tokens = f_t.reshape(b, h * w, c)
    prev = f_prev.reshape(b, h * w, c)
    out, weights = _attend(params.q(prev), params.k(tokens), params.v(tokens))
    result = f_t + params.out(out).reshape(b, h, w, c)
    return (result, weights) if return_weights else result


def window_key_mask(height: int, width: int, delta: int, device=None) -> torch.Tensor:
    """
    Valid-key mask (H, W, 1 + (2*delta+1)^2) for window attention.

    Column 0 is the current token and always valid; the rest follow unfold's
    row-major kernel order and are False where the neighbour falls outside
    the grid.
    """
    if delta < 0:
        raise ConfigurationError(f"window radius delta must be >= 0, got {delta}")
    offsets = torch.arange(-delta, delta + 1, device=device)
    rows = torch.arange(height, device=device)[:, None, None, None] + offsets[None, None, :, None]
    cols = torch.arange(width, device=device)[None, :, None, None] + offsets[None, None, None, :]
    inside = ((rows >= 0) & (rows < height)) & ((cols >= 0) & (cols < width))
    inside = inside.reshape(height, width, -1)
    current = torch.ones(height, width, 1, dtype=torch.bool, device=device)
    return torch.cat([current, inside], dim=-1)


def _neighbourhood(x: torch.Tensor, delta: int) -> torch.Tensor:
    """(B, H, W, D) -> (B, H, W, (2*delta+1)^2, D), zero outside the grid."""
    b, h, w, d = x.shape
    size = 2 * delta + 1
    patches = F.unfold(x.permute(0, 3, 1, 2), kernel_size=size, padding=delta)
    return patches.reshape(b, d, size * size, h, w).permute(0, 3, 4, 2, 1)


def window_attention_forward(
    f_t: torch.Tensor,
    f_prev: torch.Tensor | None,
    delta: int,
    params: AttentionParams,
    return_weights: bool = False,
):
    """
    Local window attention into the previous (guidance-fused) frame.

    Keys/values at (h, w) are the current token followed by the in-bounds
    (2*delta+1)^2 neighbourhood of (h, w) in f_prev; the query is the current
    token. With no previous frame f_t is returned unchanged.
    """
    if delta < 0:
        raise ConfigurationError(f"window radius delta must be >= 0, got {delta}")
    if f_prev is None:
        return (f_t, None) if return_weights else f_t
    _check_same(f_t, f_prev, "window attention previous frame")
    _, h, w, _ = f_t.shape

    keys = torch.cat([params.k(f_t).unsqueeze(-2), _neighbourhood(params.k(f_prev), delta)], dim=-2)
    values = torch.cat([params.v(f_t).unsqueeze(-2), _neighbourhood(params.v(f_prev), delta)], dim=-2)
    mask = window_key_mask(h, w, delta, device=f_t.device).unsqueeze(-2)  # (H, W, 1, K)
    out, weights = _attend(params.q(f_t).unsqueeze(-2), keys, values, mask=mask)
    result = f_t + params.out(out.squeeze(-2))
    return (result, weights.squeeze(-2)) if return_weights else result


def dfgm_fuse(
    shallow_hist: Sequence[torch.Tensor],
    deep_hist: Sequence[torch.Tensor | None],
    embedder: GuidanceEmbedder,
) -> list[torch.Tensor]:
    """f~ = f + embed(F) for each stored timestep."""
    if len(shallow_hist) != len(deep_hist):
        raise ContractError(f"history lengths differ: {len(shallow_hist)} shallow vs {len(deep_hist)} deep")
    fused = []
    for f, deep in zip(shallow_hist, deep_hist):
        if deep is None:
            raise ContractError("guidance fusion needs a deep feature for every stored step")
        guidance = embedder(deep)
        _check_same(f, guidance, "guidance embedding")
        fused.append(f + guidance)
    return fused


def zero_init_linear(x: torch.Tensor, layer: ZeroInitLinear) -> torch.Tensor:
    return layer(x)


# =============================================================================
# Block
# =============================================================================


class TemporalFusionBlock(nn.Module):
    """
    One TCFB: the enabled operators in configured order, a residual
    feed-forward network and the zero-initialized output projection.

    forward() returns the delta the host adds to its block output.
    """

    def __init__(self, channels: int, deep_channels: int, guidance_stride: int, config: TCFBConfig | dict[str, Any]):
        super().__init__()
        self.config = coerce_model(TCFBConfig, config, path="tcfb")
        cfg = self.config
        self.channels = channels
        self.lta = AttentionParams(channels, cfg.d) if cfg.use_lta else None
        self.cross = AttentionParams(channels, cfg.d) if cfg.use_dsa else None
        self.window = AttentionParams(channels, cfg.d) if cfg.use_dsa else None
        self.embedder = GuidanceEmbedder(deep_channels, channels, guidance_stride) if cfg.use_dfgm else None
        self.ffn = FeedForward(channels, cfg.mlp_ratio)
        self.out = ZeroInitLinear(channels, channels, zero_init=cfg.zero_init)

    def forward(self, f_in: torch.Tensor, bank: MemoryBank) -> torch.Tensor:
        shallow = list(bank.shallow)
        if self.embedder is not None and shallow:
            fused = dfgm_fuse(shallow, list(bank.deep), self.embedder)
        else:
            fused = shallow

        x = f_in
        for op in self.config.order:
            if op == "lta" and self.lta is not None:
                x = lta_forward(x, fused, self.lta)
            elif op == "cross" and self.cross is not None:
                x = cross_attention_forward(x, shallow[0] if shallow else None, self.cross)
            elif op == "window" and self.window is not None:
                x = window_attention_forward(x, fused[0] if fused else None, self.config.delta, self.window)
        return zero_init_linear(self.ffn(x), self.out)


def tcfb_forward(
    f_in: torch.Tensor,
    bank: MemoryBank,
    block: TemporalFusionBlock,
    deep_feature: torch.Tensor | None = None,
) -> tuple[torch.Tensor, MemoryBank]:
    """
    Run one block and push f_in with its deep feature.

    Hosts that only know the deep feature after their heads have run call the
    block and memory_push separately.
    """
    delta = block(f_in, bank)
    return delta, memory_push(bank, f_in, deep_feature)


class TCFBStack(nn.Module):
    """
    Blocks for every insertion site.

    With sharing on, every site resolves to the same block instance, so the
    parameters exist once whatever the site count.
    """

    def __init__(
        self,
        n_sites: int,
        channels: int | Sequence[int],
        deep_channels: int,
        guidance_stride: int,
        config: TCFBConfig | dict[str, Any],
    ):
        super().__init__()
        if n_sites < 1:
            raise ConfigurationError(f"n_sites must be >= 1, got {n_sites}")
        self.config = coerce_model(TCFBConfig, config, path="tcfb")
        site_channels = [channels] * n_sites if isinstance(channels, int) else list(channels)
        if len(site_channels) != n_sites:
            raise ConfigurationError(f"got {len(site_channels)} channel widths for {n_sites} sites")
        if self.config.share_params and len(set(site_channels)) > 1:
            raise ConfigurationError(f"cannot share parameters across sites of widths {site_channels}")

        self.n_sites = n_sites
        n_blocks = 1 if self.config.share_params else n_sites
        self.blocks = nn.ModuleList(
            TemporalFusionBlock(site_channels[i], deep_channels, guidance_stride, self.config) for i in range(n_blocks)
        )

    def block(self, site: int) -> TemporalFusionBlock:
        if not 0 <= site < self.n_sites:
            raise ContractError(f"site {site} outside [0, {self.n_sites})")
        return self.blocks[0 if self.config.share_params else site]

    def new_banks(self) -> list[MemoryBank]:
        return [MemoryBank(self.config.k) for _ in range(self.n_sites)]


def count_parameters(module: nn.Module) -> int:
    """Learnable scalars, each shared tensor counted once."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def shared_param_count(
    n_sites: int,
    share: bool,
    channels: int | Sequence[int] = 64,
    deep_channels: int = 32,
    guidance_stride: int = 2,
    config: TCFBConfig | dict[str, Any] | None = None,
) -> int:
    """TCFB parameter count for n_sites sites with or without sharing."""
    base = coerce_model(TCFBConfig, config if config is not None else {}, path="tcfb")
    cfg = base.model_copy(update={"share_params": share})
    with torch.device("meta"):
        stack = TCFBStack(n_sites, channels, deep_channels, guidance_stride, cfg)
    return count_parameters(stack)
