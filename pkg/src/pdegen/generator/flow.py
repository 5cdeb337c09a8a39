"""Per-token flow-matching head, its loss, the midpoint sampler and the decode schedule."""
from __future__ import annotations

import math
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..tensor_core import NonFiniteError, RMSNorm, RngStream, linear, sincos_embedding


def time_features(r: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of the flow time r in [0, 1] (scaled to a useful range)."""
    return sincos_embedding(r.reshape(-1, 1) * 1000.0, dim).to(r.dtype).reshape(*r.shape, dim)


class FlowHead(nn.Module):
    """Velocity MLP v(z_r, cond, r) with additive conditioning at every layer."""

    def __init__(self, token_dim: int, cond_dim: int, width: int = 64, depth: int = 3):
        super().__init__()
        self.width = width
        self.inp = linear(token_dim, width, std="fan_in")
        self.cond = nn.ModuleList(linear(cond_dim, width, std="fan_in") for _ in range(depth))
        self.time = nn.ModuleList(linear(width, width, std="fan_in") for _ in range(depth))
        self.norms = nn.ModuleList(RMSNorm(width) for _ in range(depth))
        self.fc1 = nn.ModuleList(linear(width, 2 * width, std="fan_in") for _ in range(depth))
        self.fc2 = nn.ModuleList(linear(2 * width, width) for _ in range(depth))
        self.norm_out = RMSNorm(width)
        self.out = linear(width, token_dim)

    def forward(self, z: torch.Tensor, cond: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
        """z [N, d], cond [N, c], r [N] or scalar -> velocity [N, d]."""
        if r.dim() == 0:
            r = r.expand(z.shape[0])
        t = time_features(r, self.width)
        h = self.inp(z)
        for i in range(len(self.fc1)):
            u = self.norms[i](h) + self.cond[i](cond) + self.time[i](t)
            h = h + self.fc2[i](F.silu(self.fc1[i](u)))
        return self.out(self.norm_out(h))


def flow_path(z: torch.Tensor, eps: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    """Linear path between noise (r = 0) and data (r = 1)."""
    r = r.reshape(*r.shape, *([1] * (z.dim() - r.dim())))
    return r * z + (1.0 - r) * eps


def fm_train_loss(head: nn.Module, z: torch.Tensor, cond: torch.Tensor,
                  rng: Optional[RngStream] = None, eps: Optional[torch.Tensor] = None,
                  r: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean over tokens of ||v(z_r, cond, r) - (z - eps)||^2.

    z [N, d] are the masked target tokens, cond [N, c] their contextual
    embeddings. eps ~ N(0, I) and r ~ U[0, 1] are drawn per token from ``rng``
    unless given explicitly.
    """
    if z.shape[0] == 0:
        raise ValueError("flow-matching loss needs at least one masked token")
    if eps is None:
        eps = rng.randn(*z.shape, dtype=z.dtype)
    if r is None:
        r = rng.rand(z.shape[0], dtype=z.dtype)
    v = head(flow_path(z, eps, r), cond, r)
    return (v - (z - eps)).pow(2).sum(-1).mean()


@torch.no_grad()
def fm_sample(head: nn.Module, cond: torch.Tensor, rng: RngStream, n_steps: int = 10,
              token_dim: Optional[int] = None, z0: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Integrate dz/dr = v(z, cond, r) from noise at r=0 to r=1 with the midpoint rule."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if z0 is None:
        z0 = rng.randn(cond.shape[0], token_dim, dtype=cond.dtype)
    z = z0
    h = 1.0 / n_steps
    for k in range(n_steps):
        r = torch.full((), k * h, dtype=z.dtype)
        v1 = head(z, cond, r)
        v2 = head(z + 0.5 * h * v1, cond, r + 0.5 * h)
        z = z + h * v2
        if not torch.isfinite(z).all():
            raise NonFiniteError(f"non-finite sample at flow step {k}")
    return z


def cosine_decode_counts(m: int, steps: int) -> List[int]:
    """Tokens decoded at each of ``steps`` masked-generation steps (sums to m, all >= 1).

    After step s, floor(m * cos^2(pi (s+1) / (2 steps))) tokens remain masked,
    clamped so that each step decodes at least one token.
    """
    if not 1 <= steps <= m:
        raise ValueError(f"need 1 <= steps <= tokens, got steps={steps}, tokens={m}")
    remaining_prev = m
    counts = []
    for s in range(steps):
        rem = math.floor(m * math.cos(math.pi * (s + 1) / (2 * steps)) ** 2 + 1e-9)
        rem = max(min(rem, remaining_prev - 1), steps - 1 - s)
        counts.append(remaining_prev - rem)
        remaining_prev = rem
    return counts
