"""Block-causal temporal transformer and masked spatial transformer over latent tokens."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from ..tensor_core import MultiHeadAttention, RMSNorm, SwiGLU, linear, sincos_embedding
from .flow import FlowHead


@dataclass
class GenConfig:
    token_dim: int = 4              # channels of one latent token before patching
    extents: tuple = (16,)          # latent spatial extents
    patch: int = 1
    hidden: int = 64
    causal_depth: int = 2
    spatial_depth: int = 2
    heads: int = 4
    head_dim: int = 16
    mlp_ratio: int = 2
    head_depth: int = 3
    head_width: int = 64
    decode_steps: int = 6
    fm_steps: int = 10
    mask_min: float = 0.75
    mask_max: float = 1.0
    separator: bool = False         # learned separator frame for the context layout

    def __post_init__(self):
        self.extents = tuple(int(e) for e in self.extents)
        for e in self.extents:
            if e % self.patch:
                raise ValueError(f"patch {self.patch} does not divide latent extent {e}")
        if not 0 < self.mask_min <= self.mask_max <= 1:
            raise ValueError("mask ratio range must lie in (0, 1]")
        if not 1 <= self.decode_steps <= self.n_tokens:
            raise ValueError("decode_steps must lie in [1, tokens per frame]")

    @property
    def patch_extents(self) -> tuple:
        return tuple(e // self.patch for e in self.extents)

    @property
    def n_tokens(self) -> int:
        n = 1
        for e in self.patch_extents:
            n *= e
        return n

    @property
    def patch_dim(self) -> int:
        return self.token_dim * self.patch ** len(self.extents)


def patchify(z: torch.Tensor, extents: tuple, p: int) -> torch.Tensor:
    """[..., M, d] with M laid out as ``extents`` -> [..., M / p^n, d * p^n]."""
    if p == 1:
        return z
    lead, d = z.shape[:-2], z.shape[-1]
    for e in extents:
        if e % p:
            raise ValueError(f"patch {p} does not divide extent {e}")
    x = z.reshape(*lead, *extents, d)
    nl = len(lead)
    if len(extents) == 1:
        (n,) = extents
        return x.reshape(*lead, n // p, p * d)
    h, w = extents
    x = x.reshape(*lead, h // p, p, w // p, p, d)
    x = x.permute(*range(nl), nl, nl + 2, nl + 1, nl + 3, nl + 4)
    return x.reshape(*lead, (h // p) * (w // p), p * p * d)


def unpatchify(z: torch.Tensor, extents: tuple, p: int) -> torch.Tensor:
    """Inverse of :func:`patchify`."""
    if p == 1:
        return z
    lead = z.shape[:-2]
    nl = len(lead)
    if len(extents) == 1:
        (n,) = extents
        return z.reshape(*lead, n, z.shape[-1] // p)
    h, w = extents
    d = z.shape[-1] // (p * p)
    x = z.reshape(*lead, h // p, w // p, p, p, d)
    x = x.permute(*range(nl), nl, nl + 2, nl + 1, nl + 3, nl + 4)
    return x.reshape(*lead, h * w, d)


def block_causal_mask(frames: int, tokens: int, past_frames: int = 0) -> torch.Tensor:
    """Boolean [frames*tokens, (past_frames+frames)*tokens]; True where frame(key) <= frame(query)."""
    q = torch.arange(frames).repeat_interleave(tokens) + past_frames
    k = torch.arange(past_frames + frames).repeat_interleave(tokens)
    return k[None, :] <= q[:, None]


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, head_dim: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = RMSNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, head_dim, qk_norm=True)
        self.norm2 = RMSNorm(dim)
        self.mlp = SwiGLU(dim, mlp_ratio * dim)

    def forward(self, x, mask=None, past=None):
        a, kv = self.attn(self.norm1(x), mask=mask, past=past, return_kv=True)
        x = x + a
        return x + self.mlp(self.norm2(x)), kv


class KvCache:
    """Per-layer projected keys/values of every frame block already processed."""

    def __init__(self, n_layers: int):
        self.layers: List[Optional[Tuple[torch.Tensor, torch.Tensor]]] = [None] * n_layers
        self.frames = 0

    def append(self, layer: int, kv):
        old = self.layers[layer]
        if old is None:
            self.layers[layer] = kv
        else:
            self.layers[layer] = (torch.cat([old[0], kv[0]], dim=-2), torch.cat([old[1], kv[1]], dim=-2))


class Generator(nn.Module):
    """Temporal (block-causal) transformer + spatial (masked) transformer + flow head."""

    def __init__(self, cfg: GenConfig):
        super().__init__()
        self.cfg = cfg
        h, m = cfg.hidden, cfg.n_tokens
        self.embed = linear(cfg.patch_dim, h, std="fan_in")
        self.bos = nn.Parameter(torch.randn(m, h) * 0.02)
        self.sep = nn.Parameter(torch.randn(m, h) * 0.02) if cfg.separator else None
        grid = torch.stack(torch.meshgrid(*[torch.arange(e, dtype=torch.float32)
                                            for e in cfg.patch_extents], indexing="ij"), -1)
        self.register_buffer("pos", sincos_embedding(grid.reshape(m, -1), h))
        self.causal = nn.ModuleList(Block(h, cfg.heads, cfg.head_dim, cfg.mlp_ratio)
                                    for _ in range(cfg.causal_depth))
        self.causal_norm = RMSNorm(h)
        self.mask_token = nn.Parameter(torch.randn(h) * 0.02)
        self.segment = nn.Parameter(torch.randn(2, h) * 0.02)
        self.spatial = nn.ModuleList(Block(h, cfg.heads, cfg.head_dim, cfg.mlp_ratio)
                                     for _ in range(cfg.spatial_depth))
        self.spatial_norm = RMSNorm(h)
        self.head = FlowHead(cfg.patch_dim, h, cfg.head_width, cfg.head_depth)

    # -- temporal transformer ----------------------------------------------------
    def frame_blocks(self, z: torch.Tensor) -> torch.Tensor:
        """Embed frames [B, T, M, d_p] as transformer blocks [B, T, M, h]."""
        return self.embed(z) + self.pos

    def bos_block(self, batch: int) -> torch.Tensor:
        return (self.bos + self.pos).expand(batch, -1, -1)[:, None]

    def sep_block(self, batch: int) -> torch.Tensor:
        if self.sep is None:
            raise ValueError("model was built without a separator frame")
        return (self.sep + self.pos).expand(batch, -1, -1)[:, None]

    def run_causal(self, blocks: torch.Tensor, cache: Optional[KvCache] = None) -> torch.Tensor:
        """blocks [B, n, M, h] -> outputs [B, n, M, h]; attends to cached blocks too."""
        B, n, m, h = blocks.shape
        if cache is not None:
            if len(cache.layers) != len(self.causal):
                raise ValueError(f"cache holds {len(cache.layers)} layers, model has {len(self.causal)}")
            if any((kv is None) != (cache.frames == 0) for kv in cache.layers):
                raise ValueError("cache frame count disagrees with its stored keys/values")
            if cache.frames and cache.layers[0][0].shape[-2] != cache.frames * m:
                raise ValueError("cache was filled with a different number of tokens per frame")
        past = 0 if cache is None else cache.frames
        mask = block_causal_mask(n, m, past)
        x = blocks.reshape(B, n * m, h)
        for i, blk in enumerate(self.causal):
            prev = None if cache is None else cache.layers[i]
            x, kv = blk(x, mask=mask, past=prev)
            if cache is not None:
                cache.append(i, kv)
        if cache is not None:
            cache.frames += n
        return self.causal_norm(x).reshape(B, n, m, h)

    def causal_forward(self, z: torch.Tensor, cache: Optional[KvCache] = None) -> torch.Tensor:
        """Conditioning for frames 0..L from [BOS, Z^0..Z^{L-1}]: [B, L+1, M, h].

        With a cache that already holds the BOS (and earlier frames), only the
        new frames ``z`` are processed and their output blocks returned.
        """
        blocks = self.frame_blocks(z)
        if cache is None or cache.frames == 0:
            blocks = torch.cat([self.bos_block(z.shape[0]), blocks], dim=1)
        return self.run_causal(blocks, cache)

    # -- spatial transformer -----------------------------------------------------
    def spatial_forward(self, cond: torch.Tensor, tokens: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
        """cond [N, M, h], tokens [N, M, d_p], masked [N, M] -> contextual embeddings [N, M, h]."""
        m = tokens.shape[-2]
        frame = torch.where(masked[..., None], self.mask_token, self.embed(tokens))
        x = torch.cat([cond + self.segment[0], frame + self.segment[1] + self.pos], dim=-2)
        for blk in self.spatial:
            x, _ = blk(x)
        return self.spatial_norm(x[..., m:, :])
