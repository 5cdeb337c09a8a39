"""Cross-attention interpolation between scattered points and the latent grid."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn

from ..tensor_core import MultiHeadAttention, RMSNorm, SwiGLU, attention_with_bias, linear


@dataclass
class InterpolatorConfig:
    spatial_dims: int = 1
    grid_size: int = 128            # per axis: 128 in 1-D, 16 (x16) in 2-D
    pe_freqs: int = 12
    pe_max_freq: float = 4.0
    heads: int = 4
    head_dim: int = 4
    hidden: int = 16                # key/value embedding width h
    width: int = 64                 # per-grid-point channels handed to the compressor
    slopes: tuple = (1.0, 2.0, 3.0, 4.0)
    bias_enabled: bool = True
    learn_slopes: bool = False
    learn_grid: bool = True
    refine_depth: int = 2
    refine_heads: int = 4
    refine_head_dim: int = 4
    mlp_ratio: int = 2

    @property
    def grid_shape(self) -> tuple:
        return (self.grid_size,) * self.spatial_dims

    @property
    def n_grid(self) -> int:
        return self.grid_size ** self.spatial_dims


def positional_encode(coords: torch.Tensor, n_freq: int = 12, max_freq: float = 4.0) -> torch.Tensor:
    """sin/cos features at geometrically spaced frequencies 1..max_freq per axis.

    coords are in units of the (unit) period, so the lowest frequency is
    periodic on the domain. Output width = n_axes * 2 * n_freq.
    """
    freqs = torch.logspace(0.0, math.log10(max_freq), n_freq, dtype=torch.float64).to(coords.dtype)
    ang = 2 * math.pi * coords[..., None] * freqs          # [..., D, F]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1).flatten(-2)


def periodic_distance(a: torch.Tensor, b: torch.Tensor, period: float = 1.0) -> torch.Tensor:
    """Euclidean norm of the minimum-image separation; a: [..., Na, D], b: [..., Nb, D]."""
    d = a[..., :, None, :] - b[..., None, :, :]
    d = d - period * torch.round(d / period)
    if d.shape[-1] == 1:
        return d[..., 0].abs()
    return torch.linalg.vector_norm(d, dim=-1)


def geometry_bias(queries: torch.Tensor, keys: torch.Tensor, slopes: torch.Tensor,
                  period: float = 1.0) -> torch.Tensor:
    """B[h, i, j] = -slopes[h] * dist(queries_i, keys_j); leading batch dims are kept."""
    dist = periodic_distance(queries, keys, period)
    return -slopes.view(-1, 1, 1) * dist[..., None, :, :]


class RefineBlock(nn.Module):
    """Pre-norm self-attention + SwiGLU block over grid tokens."""

    def __init__(self, width: int, heads: int, head_dim: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = RMSNorm(width)
        self.attn = MultiHeadAttention(width, heads, head_dim)
        self.norm2 = RMSNorm(width)
        self.mlp = SwiGLU(width, mlp_ratio * width)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class _SharedWeightAttention(nn.Module):
    """Cross-attention whose queries and keys are frame independent.

    Scores depend only on positions, so one weight matrix per sample serves
    every frame; the frames ride along in the value width.
    """

    def __init__(self, d_q: int, d_k: int, d_v: int, heads: int, head_dim: int, d_out: int):
        super().__init__()
        self.heads, self.head_dim = heads, head_dim
        inner = heads * head_dim
        self.q = linear(d_q, inner, bias=False, std="fan_in")
        self.k = linear(d_k, inner, bias=False, std="fan_in")
        self.v = linear(d_v, inner, bias=False, std="fan_in")
        self.out = linear(inner, d_out, std="fan_in")

    def split(self, t):
        return t.unflatten(-1, (self.heads, self.head_dim)).transpose(-2, -3)

    def forward(self, q_in, k_in, v_in, bias=None, mask=None):
        """q_in [Bq, Nq, d_q], k_in [Bk, Nk, d_k], v_in [B, T, Nk, d_v] -> [B, T, Nq, d_out]."""
        B, T, nk = v_in.shape[:3]
        q, k = self.split(self.q(q_in)), self.split(self.k(k_in))           # [., H, N, hd]
        v = self.v(v_in).unflatten(-1, (self.heads, self.head_dim))        # [B, T, Nk, H, hd]
        v = v.permute(0, 3, 2, 1, 4).reshape(B, self.heads, nk, T * self.head_dim)
        o = attention_with_bias(q, k, v, bias=bias, mask=mask)             # [B, H, Nq, T*hd]
        o = o.unflatten(-1, (T, self.head_dim)).permute(0, 3, 2, 1, 4).flatten(-2)
        return self.out(o)


def regular_grid(n: int, spatial_dims: int) -> torch.Tensor:
    x = torch.arange(n, dtype=torch.float32) / n
    if spatial_dims == 1:
        return x[:, None]
    return torch.stack(torch.meshgrid(x, x, indexing="ij"), dim=-1).reshape(-1, 2)


class _GridMixin:
    def _init_grid(self, cfg: InterpolatorConfig):
        grid = regular_grid(cfg.grid_size, cfg.spatial_dims)
        if cfg.learn_grid:
            self.grid = nn.Parameter(grid)
        else:
            self.register_buffer("grid", grid)
        slopes = torch.tensor(cfg.slopes, dtype=torch.float32)
        if cfg.learn_slopes:
            self.slopes = nn.Parameter(slopes)
        else:
            self.register_buffer("slopes", slopes)

    def bias_for(self, queries, keys):
        """Bias with distances counted in latent-grid spacings."""
        if not self.cfg.bias_enabled:
            return None
        n = self.cfg.grid_size
        return geometry_bias(queries * n, keys * n, self.slopes, period=float(n))


def canonical_order(coords: torch.Tensor, valid: Optional[torch.Tensor]) -> torch.Tensor:
    """Lexicographic order of points (padding last); makes the encoder order-blind."""
    n = coords.shape[-2]
    perm = torch.arange(n).expand(coords.shape[:-1]).clone()
    for a in reversed(range(coords.shape[-1])):
        key = torch.gather(coords[..., a], -1, perm)
        if valid is not None:
            key = torch.where(torch.gather(valid, -1, perm), key, torch.full_like(key, float("inf")))
        order = torch.sort(key, dim=-1, stable=True).indices
        perm = torch.gather(perm, -1, order)
    return perm


class InterpEncoder(nn.Module, _GridMixin):
    """Scattered (coords, values) per frame -> tokens on the latent grid.

    Learned grid-point queries attend to the observed points (keys from the
    positional encoding, values from the lifted field) with the geometry bias,
    then two self-attention blocks refine the grid tokens.
    """

    def __init__(self, cfg: InterpolatorConfig, channels: int):
        super().__init__()
        self.cfg = cfg
        self._init_grid(cfg)
        pe_dim = cfg.spatial_dims * 2 * cfg.pe_freqs
        self.query_embed = nn.Parameter(torch.zeros(cfg.n_grid, cfg.width))
        nn.init.trunc_normal_(self.query_embed, std=0.02, a=-0.04, b=0.04)
        self.query_pos = linear(pe_dim, cfg.width, std="fan_in")
        self.key_embed = linear(pe_dim, cfg.hidden, std="fan_in")
        self.value_embed = linear(channels, cfg.hidden, std="fan_in")
        self.norm_q = RMSNorm(cfg.width)
        self.cross = _SharedWeightAttention(cfg.width, cfg.hidden, cfg.hidden, cfg.heads, cfg.head_dim,
                                            cfg.width)
        self.norm_ff = RMSNorm(cfg.width)
        self.ff = SwiGLU(cfg.width, cfg.mlp_ratio * cfg.width)
        self.refine = nn.ModuleList(RefineBlock(cfg.width, cfg.refine_heads, cfg.refine_head_dim,
                                                cfg.mlp_ratio) for _ in range(cfg.refine_depth))

    def pe(self, coords):
        return positional_encode(coords, self.cfg.pe_freqs, self.cfg.pe_max_freq)

    def forward(self, coords: torch.Tensor, values: torch.Tensor,
                valid: Optional[torch.Tensor] = None) -> torch.Tensor:
        """coords [B, N, D] in unit-period units, values [B, T, N, C], valid [B, N].

        Returns grid tokens [B, T, n_grid, width].
        """
        if coords.shape[-2] == 0:
            raise ValueError("interpolation needs at least one input point")
        perm = canonical_order(coords, valid)
        coords = torch.gather(coords, 1, perm[..., None].expand_as(coords))
        values = torch.gather(values, 2, perm[:, None, :, None].expand_as(values))
        if valid is not None:
            valid = torch.gather(valid, 1, perm)
        B, T = values.shape[:2]
        x = self.query_embed + self.query_pos(self.pe(self.grid))          # [Q, W]
        keys = self.key_embed(self.pe(coords))                             # [B, N, h]
        vals = self.value_embed(values)                                    # [B, T, N, h]
        bias = self.bias_for(self.grid, coords)                            # [B, H, Q, N]
        mask = None if valid is None else valid[:, None, None, :]
        x = x + self.cross(self.norm_q(x)[None], keys, vals, bias=bias, mask=mask)
        x = x + self.ff(self.norm_ff(x))
        x = x.flatten(0, 1)
        for blk in self.refine:
            x = blk(x)
        return x.unflatten(0, (B, T))


class InterpDecoder(nn.Module, _GridMixin):
    """Grid tokens -> field values at arbitrary query coordinates (pointwise queries)."""

    def __init__(self, cfg: InterpolatorConfig, channels: int):
        super().__init__()
        self.cfg = cfg
        self._init_grid(cfg)
        pe_dim = cfg.spatial_dims * 2 * cfg.pe_freqs
        self.refine = nn.ModuleList(RefineBlock(cfg.width, cfg.refine_heads, cfg.refine_head_dim,
                                                cfg.mlp_ratio) for _ in range(cfg.refine_depth))
        self.grid_key = linear(pe_dim, cfg.width, std="fan_in")
        self.query_embed = linear(pe_dim, cfg.width, std="fan_in")
        self.norm_kv = RMSNorm(cfg.width)
        self.cross = _SharedWeightAttention(cfg.width, cfg.width, cfg.width, cfg.heads, cfg.head_dim,
                                            cfg.width)
        self.norm_ff = RMSNorm(cfg.width)
        self.ff = SwiGLU(cfg.width, cfg.mlp_ratio * cfg.width)
        self.norm_out = RMSNorm(cfg.width)
        self.head = linear(cfg.width, channels, std="fan_in")

    def forward(self, tokens: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        """tokens [B, T, n_grid, width], coords [B or 1, N, D] -> [B, T, N, C].

        Keys come from the grid positions, values from the tokens, so each
        output point is a position-weighted read of the refined tokens.
        """
        B, T = tokens.shape[:2]
        x = tokens.flatten(0, 1)
        for blk in self.refine:
            x = blk(x)
        vals = self.norm_kv(x).unflatten(0, (B, T))
        keys = self.grid_key(positional_encode(self.grid, self.cfg.pe_freqs, self.cfg.pe_max_freq))
        pe = positional_encode(coords, self.cfg.pe_freqs, self.cfg.pe_max_freq)
        q = self.query_embed(pe)                                           # [B|1, N, W]
        bias = self.bias_for(coords, self.grid)                            # [B|1, H, N, Q]
        y = self.cross(q, keys[None], vals, bias=bias)
        y = y + self.ff(self.norm_ff(y))
        return self.head(self.norm_out(y))
