"""Small convolutional video denoiser with optional frame-axis attention.

The network predicts the noise added to a conditioning canvas. It keeps a
constant spatial resolution (canvases are tiny at desk scale) and alternates
two kinds of mixing:

  * spatial residual conv blocks, applied per frame by folding the frame axis
    into the batch; their receptive field spans the width seam between the
    motion and identity halves, which is how identity information reaches the
    motion canvas;
  * temporal self-attention at fixed spatial locations, which is the only
    place information crosses frames. With it disabled the network is exactly
    frame-permutation-equivariant (GroupNorm statistics are per frame).

The binary canvas indicator travels as an extra input channel; the timestep
enters through a sinusoidal embedding added inside each residual block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 4
    base_width: int = 64
    depth: int = 3
    temporal_attention: bool = True
    frames_per_clip: int = 8

    def __post_init__(self):
        if self.frames_per_clip < 2:
            raise ValueError("frames_per_clip must be >= 2")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.latent_channels < 1 or self.base_width < 1:
            raise ValueError("channel widths must be >= 1")


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic alternating sin/cos position embedding for integer steps."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :].to(t.device)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _norm(width: int) -> nn.GroupNorm:
    groups = 8 if width % 8 == 0 else 1
    return nn.GroupNorm(groups, width)


class SpatialResBlock(nn.Module):
    """Pre-norm residual 3×3 conv block with an additive time embedding."""

    def __init__(self, width: int, time_dim: int):
        super().__init__()
        self.norm1 = _norm(width)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, width)
        self.norm2 = _norm(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(t_emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class TemporalAttention(nn.Module):
    """Self-attention over the frame axis at each spatial location.

    A fixed sinusoidal frame-position code is added before the qkv projection
    so the block can represent motion direction; without it the attention
    would be permutation-invariant over frames.
    """

    def __init__(self, width: int, heads: int = 4):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.width = width

    def forward(self, x: torch.Tensor, frames: int) -> torch.Tensor:
        # x: (B*F, C, H, W) -> sequences of length F per spatial site.
        bf, c, h, w = x.shape
        b = bf // frames
        seq = x.reshape(b, frames, c, h, w).permute(0, 3, 4, 1, 2)
        seq = seq.reshape(b * h * w, frames, c)
        pos = sinusoidal_embedding(torch.arange(frames, device=x.device), c)
        q = self.norm(seq + pos[None])
        out, _ = self.attn(q, q, q, need_weights=False)
        seq = seq + out
        seq = seq.reshape(b, h, w, frames, c).permute(0, 3, 4, 1, 2)
        return seq.reshape(bf, c, h, w)


class CanvasDenoiser(nn.Module):
    """Noise predictor over (B, C+1, F, H, 2W) canvases with mask channel."""

    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = config
        width = config.base_width
        self.time_dim = width
        self.time_mlp = nn.Sequential(
            nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width)
        )
        self.conv_in = nn.Conv2d(config.latent_channels + 1, width, 3, padding=1)
        self.spatial_blocks = nn.ModuleList(
            SpatialResBlock(width, width) for _ in range(config.depth)
        )
        self.temporal_blocks = nn.ModuleList(
            TemporalAttention(width) if config.temporal_attention else nn.Identity()
            for _ in range(config.depth)
        )
        self.norm_out = _norm(width)
        self.conv_out = nn.Conv2d(width, config.latent_channels, 3, padding=1)

    def forward(self, latent: torch.Tensor, mask: torch.Tensor,
                t: torch.Tensor) -> torch.Tensor:
        """latent (B, C, F, H, W2), mask (B, 1, F, H, W2), t (B,) → eps (B, C, F, H, W2)."""
        if latent.ndim != 5:
            raise ValueError(f"latent must be 5-axis, got shape {tuple(latent.shape)}")
        b, c, f, h, w2 = latent.shape
        if c != self.config.latent_channels:
            raise ValueError(f"expected {self.config.latent_channels} channels, got {c}")
        if mask.shape != (b, 1, f, h, w2):
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match latent")
        if t.shape != (b,):
            raise ValueError(f"t must be shape ({b},), got {tuple(t.shape)}")

        x = torch.cat([latent, mask], dim=1)
        # Fold frames into the batch for the spatial path: (B*F, C+1, H, W2).
        x = x.permute(0, 2, 1, 3, 4).reshape(b * f, c + 1, h, w2)
        t_emb = self.time_mlp(sinusoidal_embedding(t, self.time_dim))
        t_emb = t_emb.repeat_interleave(f, dim=0)

        x = self.conv_in(x)
        for spatial, temporal in zip(self.spatial_blocks, self.temporal_blocks):
            x = spatial(x, t_emb)
            if isinstance(temporal, TemporalAttention):
                x = temporal(x, f)
        x = self.conv_out(F.silu(self.norm_out(x)))
        return x.reshape(b, f, c, h, w2).permute(0, 2, 1, 3, 4)


def build_denoiser(config: DenoiserConfig, seed: int) -> CanvasDenoiser:
    """Construct a denoiser with seeded, reproducible initialization."""
    generator_state = torch.get_rng_state()
    try:
        torch.manual_seed(seed)
        model = CanvasDenoiser(config)
    finally:
        torch.set_rng_state(generator_state)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
