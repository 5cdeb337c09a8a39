"""Variational tokenizer: scattered trajectories <-> compact latent token sequences."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn

from ..tensor_core import RngStream
from .compressor import Compressor, CompressorConfig, Decompressor
from .interp import InterpDecoder, InterpEncoder, InterpolatorConfig

LOGVAR_RANGE = (-30.0, 20.0)


@dataclass
class TokenizerConfig:
    channels: int = 1
    length: float = 1.0             # domain period; coordinates are divided by it
    interp: InterpolatorConfig = field(default_factory=InterpolatorConfig)
    comp: CompressorConfig = field(default_factory=CompressorConfig)

    def __post_init__(self):
        if self.interp.spatial_dims != self.comp.spatial_dims:
            raise ValueError("interpolator and compressor disagree on spatial dims")
        self.comp.width_in = self.interp.width

    @property
    def latent_shape(self) -> tuple:
        return tuple(self.comp.latent_extent(n) for n in self.interp.grid_shape)

    @property
    def n_tokens(self) -> int:
        m = 1
        for n in self.latent_shape:
            m *= n
        return m


@dataclass
class LatentSequence:
    """Latent tokens laid out [B, T_e, M, d] with the spatial extents of M kept."""

    tokens: torch.Tensor
    extents: tuple
    frames: int                     # physical frames the latents decode to

    @property
    def steps(self) -> int:
        return self.tokens.shape[1]

    def grid(self) -> torch.Tensor:
        """Tokens with the spatial layout restored: [B, T_e, *extents, d]."""
        return self.tokens.reshape(*self.tokens.shape[:2], *self.extents, self.tokens.shape[-1])


@dataclass
class VaeOutput:
    mean: torch.Tensor              # [B, T_e, *S_e, d]
    logvar: torch.Tensor
    tokens: torch.Tensor            # sampled (or mean when no rng was given)
    frames: int

    def latents(self, which: str = "tokens") -> LatentSequence:
        t = getattr(self, which)
        extents = tuple(t.shape[2:-1])
        return LatentSequence(t.flatten(2, -2), extents, self.frames)


def kl_to_standard_normal(mean: torch.Tensor, logvar: torch.Tensor, reduction: str = "sum"):
    """KL(N(mean, exp(logvar)) || N(0, I)) in closed form."""
    terms = 0.5 * (mean.pow(2) + torch.exp(logvar) - 1.0 - logvar)
    if reduction == "sum":
        return terms.sum()
    if reduction == "mean":
        return terms.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def relative_mse(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Per-sample ||pred - target||^2 / ||target||^2 averaged over the leading batch axis."""
    d = (pred - target).flatten(1).pow(2).sum(1)
    n = target.flatten(1).pow(2).sum(1)
    return (d / (n + eps)).mean()


def vae_loss(recon, target, mean, logvar, beta: float = 1e-4, kl_reduction: str = "mean"):
    """Relative-MSE reconstruction plus beta-weighted KL to the unit Gaussian."""
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(recon.shape)} vs {tuple(target.shape)}")
    if mean.shape != logvar.shape:
        raise ValueError("mean/logvar shape mismatch")
    return relative_mse(recon, target) + beta * kl_to_standard_normal(mean, logvar, kl_reduction)


class Tokenizer(nn.Module):
    """Interpolating encoder + causal compressor and the mirrored decoder."""

    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        self.cfg = cfg
        grid_shape = cfg.interp.grid_shape
        self.encoder = InterpEncoder(cfg.interp, cfg.channels)
        self.compressor = Compressor(cfg.comp, grid_shape)
        self.decompressor = Decompressor(cfg.comp, grid_shape)
        self.decoder = InterpDecoder(cfg.interp, cfg.channels)
        self.register_buffer("field_shift", torch.zeros(cfg.channels))
        self.register_buffer("field_scale", torch.ones(cfg.channels))
        d = cfg.comp.token_dim
        self.register_buffer("latent_shift", torch.zeros(d))
        self.register_buffer("latent_scale", torch.ones(d))

    # -- scaling -----------------------------------------------------------
    def set_field_stats(self, fields: torch.Tensor):
        flat = fields.reshape(-1, fields.shape[-1]).double()
        self.field_shift.copy_(flat.mean(0).float())
        self.field_scale.copy_(flat.std(0).clamp_min(1e-6).float())

    def standardize(self, z: torch.Tensor) -> torch.Tensor:
        return (z - self.latent_shift) / self.latent_scale

    def destandardize(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.latent_scale + self.latent_shift

    # -- encode / decode ---------------------------------------------------
    def interpolate(self, coords, values, valid=None):
        values = (values - self.field_shift) / self.field_scale
        return self.encoder(coords / self.cfg.length, values, valid)

    def encode(self, coords: torch.Tensor, values: torch.Tensor, valid: Optional[torch.Tensor] = None,
               rng: Optional[RngStream] = None) -> VaeOutput:
        """coords [B, N, D] (physical units), values [B, T, N, C], valid [B, N]."""
        grid_tokens = self.interpolate(coords, values, valid)
        mean, logvar = self.compressor(grid_tokens)
        logvar = logvar.clamp(*LOGVAR_RANGE)
        if rng is None:
            z = mean
        else:
            eps = rng.randn(*mean.shape, dtype=mean.dtype)
            z = mean + torch.exp(0.5 * logvar) * eps
        return VaeOutput(mean, logvar, z, values.shape[1])

    def decode(self, z: torch.Tensor, coords: torch.Tensor, frames: Optional[int] = None) -> torch.Tensor:
        """z [B, T_e, *S_e, d] -> fields at coords: [B, T, N_out, C]."""
        if frames is None:
            frames = z.shape[1] if self.cfg.comp.latent_steps(z.shape[1]) == z.shape[1] else None
            if frames is None:
                raise ValueError("frames must be given when decoding temporally compressed latents")
        grid_tokens = self.decompressor(z, frames)
        out = self.decoder(grid_tokens, coords / self.cfg.length)
        return out * self.field_scale + self.field_shift

    def forward(self, coords, values, out_coords, valid=None, rng=None):
        enc = self.encode(coords, values, valid, rng)
        return self.decode(enc.tokens, out_coords, enc.frames), enc
