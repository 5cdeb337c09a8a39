"""Causal space-time convolutional compressor and its mirrored decompressor."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..tensor_core import CausalConv, CausalConvTranspose, RMSNorm, linear

BLOCK_KINDS = ("residual", "compress_space", "compress_time")


@dataclass
class CompressorConfig:
    spatial_dims: int = 1
    width_in: int = 64              # channels of the interpolated grid tokens
    hidden: int = 16                # lifted width
    kernel: int = 7
    kernel_in: int = 7
    kernel_out: int = 7
    blocks: List[str] = field(default_factory=lambda: [
        "compress_space", "residual", "compress_space", "residual",
        "compress_space", "residual", "compress_time", "residual"])
    token_dim: int = 4
    temporal_compression: bool = True

    def __post_init__(self):
        bad = [b for b in self.blocks if b not in BLOCK_KINDS]
        if bad:
            raise ValueError(f"unknown compressor blocks {bad}")

    @property
    def active_blocks(self) -> List[str]:
        if self.temporal_compression:
            return list(self.blocks)
        return [b for b in self.blocks if b != "compress_time"]

    @property
    def space_factor(self) -> int:
        return 2 ** self.active_blocks.count("compress_space")

    def time_lengths(self, t: int) -> List[int]:
        """Temporal extent after each compress_time stage, starting with ``t``."""
        out = [t]
        for b in self.active_blocks:
            if b == "compress_time":
                out.append((out[-1] - 1) // 2 + 1)
        return out

    def latent_steps(self, t: int) -> int:
        return self.time_lengths(t)[-1]

    def latent_extent(self, n: int) -> int:
        if n % self.space_factor:
            raise ValueError(f"spatial extent {n} not divisible by total stride {self.space_factor}")
        return n // self.space_factor


def _channels_last(fn, x):
    return fn(x.movedim(1, -1)).movedim(-1, 1)


class GlobalContext(nn.Module):
    """Per-frame attention-pooled spatial context added back to every position."""

    def __init__(self, c: int):
        super().__init__()
        mid = max(c // 4, 4)
        self.score = linear(c, 1)
        self.fc1 = linear(c, mid)
        self.norm = nn.LayerNorm(mid)
        self.fc2 = linear(mid, c)

    def forward(self, x):                       # [B, C, T, *S]
        xl = x.movedim(1, -1).flatten(2, -2)    # [B, T, S, C]
        w = torch.softmax(self.score(xl), dim=2)
        ctx = (w * xl).sum(2)                   # [B, T, C]
        ctx = self.fc2(F.silu(self.norm(self.fc1(ctx))))
        return x + ctx.movedim(-1, 1).reshape(*ctx.shape[:1], ctx.shape[-1], ctx.shape[1],
                                              *([1] * (x.dim() - 3)))


class ResidualBlock(nn.Module):
    """norm -> SiLU -> causal conv -> SiLU -> pointwise -> global context, plus skip."""

    def __init__(self, c_in: int, c_out: int, k: int, spatial_dims: int):
        super().__init__()
        self.norm = RMSNorm(c_in)
        self.conv = CausalConv(c_in, c_out, k, k, spatial_dims)
        self.point = linear(c_out, c_out)
        self.context = GlobalContext(c_out)
        self.skip = None if c_in == c_out else linear(c_in, c_out)

    def forward(self, x):
        h = self.conv(F.silu(_channels_last(self.norm, x)))
        h = _channels_last(self.point, F.silu(h))
        h = self.context(h)
        skip = x if self.skip is None else _channels_last(self.skip, x)
        return skip + h


class Compressor(nn.Module):
    """[B, T, n_grid, width] grid tokens -> (mean, logvar) each [B, T_e, *S_e, d]."""

    def __init__(self, cfg: CompressorConfig, grid_shape: tuple):
        super().__init__()
        self.cfg = cfg
        self.grid_shape = tuple(grid_shape)
        for n in self.grid_shape:
            cfg.latent_extent(n)
        sd, h, k = cfg.spatial_dims, cfg.hidden, cfg.kernel
        self.lift = CausalConv(cfg.width_in, h, cfg.kernel_in, cfg.kernel_in, sd)
        layers = []
        for b in cfg.active_blocks:
            if b == "residual":
                layers.append(ResidualBlock(h, h, k, sd))
            elif b == "compress_space":
                layers.append(CausalConv(h, h, k, k, sd, stride_s=2))
            else:
                layers.append(CausalConv(h, h, k, k, sd, stride_t=2))
        self.layers = nn.ModuleList(layers)
        self.final = ResidualBlock(h, h, k, sd)
        self.head = CausalConv(h, 2 * cfg.token_dim, cfg.kernel_out, cfg.kernel_out, sd)

    def forward(self, tokens: torch.Tensor):
        B, T = tokens.shape[:2]
        x = tokens.reshape(B, T, *self.grid_shape, tokens.shape[-1]).movedim(-1, 1)
        x = self.lift(x)
        for layer in self.layers:
            x = layer(x)
        x = self.head(self.final(x)).movedim(1, -1)       # [B, T_e, *S_e, 2d]
        mean, logvar = x.chunk(2, dim=-1)
        return mean, logvar


class Decompressor(nn.Module):
    """Mirror of :class:`Compressor`: latents [B, T_e, *S_e, d] -> [B, T, n_grid, width]."""

    def __init__(self, cfg: CompressorConfig, grid_shape: tuple):
        super().__init__()
        self.cfg = cfg
        self.grid_shape = tuple(grid_shape)
        sd, h, k = cfg.spatial_dims, cfg.hidden, cfg.kernel
        self.lift = CausalConv(cfg.token_dim, h, cfg.kernel_out, cfg.kernel_out, sd)
        self.first = ResidualBlock(h, h, k, sd)
        layers = []
        for b in reversed(cfg.active_blocks):
            if b == "residual":
                layers.append(ResidualBlock(h, h, k, sd))
            elif b == "compress_space":
                layers.append(CausalConvTranspose(h, h, 1, k, sd, stride_s=2))
            else:
                # frames 2j and 2j+1 both read latent step j
                layers.append(CausalConvTranspose(h, h, 2, 1, sd, stride_t=2, causal=True))
        self.layers = nn.ModuleList(layers)
        self.head = CausalConv(h, cfg.width_in, cfg.kernel_in, cfg.kernel_in, sd)

    def forward(self, z: torch.Tensor, out_t: int) -> torch.Tensor:
        lengths = self.cfg.time_lengths(out_t)
        if z.shape[1] != lengths[-1]:
            raise ValueError(f"{z.shape[1]} latent steps cannot decode to {out_t} frames")
        stage = len(lengths) - 1
        x = self.first(self.lift(z.movedim(-1, 1)))
        for kind, layer in zip(reversed(self.cfg.active_blocks), self.layers):
            if kind == "compress_time":
                stage -= 1
                x = layer(x, out_t=lengths[stage])
            elif kind == "compress_space":
                x = layer(x, out_t=x.shape[2])
            else:
                x = layer(x)
        x = self.head(x).movedim(1, -1)                    # [B, T, *grid, width]
        return x.flatten(2, -2)
