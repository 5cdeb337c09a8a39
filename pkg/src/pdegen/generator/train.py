"""Teacher-forced training of the latent generator."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ..tensor_core import LrSchedule, NonFiniteError, ParamStore, RngStream, optimizer_step
from .flow import fm_train_loss
from .model import Generator
from .sampling import context_blocks


@dataclass
class GenTrainConfig:
    steps: int = 2000
    batch_size: int = 16
    peak_lr: float = 1e-3
    floor_lr: float = 1e-5
    warmup: int = 100
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    context_prob: float = 0.0       # share of batches trained in the context layout
    noise_repeats: int = 1          # flow-matching draws per masked token


def random_mask(n_frames: int, m: int, lo: float, hi: float, rng: np.random.Generator) -> torch.Tensor:
    """[n_frames, m] boolean; each row masks ceil(ratio * m) tokens with ratio ~ U[lo, hi]."""
    ratios = rng.uniform(lo, hi, size=n_frames)
    counts = np.maximum(np.ceil(ratios * m - 1e-9).astype(int), 1)
    ranks = np.argsort(np.argsort(rng.random((n_frames, m)), axis=1), axis=1)
    return torch.as_tensor(ranks < counts[:, None])


def teacher_forced_loss(model: Generator, z: torch.Tensor, mask_rng: np.random.Generator,
                        noise_rng: RngStream, context: Optional[torch.Tensor] = None,
                        use_sep: bool = True, noise_repeats: int = 1) -> torch.Tensor:
    """Flow-matching loss of every frame of z [B, T, M, d_p] given its true past.

    ``noise_repeats`` > 1 scores each masked token under several independent
    (noise, flow time) draws, which only costs extra head evaluations.
    """
    B, T, m, _ = z.shape
    if context is None:
        cond = model.causal_forward(z[:, :-1])                           # [B, T, M, h]
    else:
        blocks = context_blocks(model, context, z[:, :-1], use_sep)
        cond = model.run_causal(blocks)[:, -T:]
    masked = random_mask(B * T, m, model.cfg.mask_min, model.cfg.mask_max, mask_rng)
    flat = z.reshape(B * T, m, -1)
    ctx = model.spatial_forward(cond.reshape(B * T, m, -1), flat, masked)
    target, cond = flat[masked], ctx[masked]
    if noise_repeats > 1:
        target, cond = target.repeat(noise_repeats, 1), cond.repeat(noise_repeats, 1)
    return fm_train_loss(model.head, target, cond, noise_rng)


def train_generator(latents: torch.Tensor, model: Generator, cfg: GenTrainConfig, seed: int,
                    groups: Optional[Sequence[int]] = None, store: Optional[ParamStore] = None,
                    callback: Optional[Callable[[int, float], None]] = None):
    """latents [n, T, M, d_p] (standardized, patched). Returns (store, loss trace).

    ``groups[i]`` labels trajectories that share PDE parameters; it is needed
    only when ``cfg.context_prob > 0``.
    """
    rng = RngStream(seed)
    order_rng, mask_rng, noise_rng, ctx_rng = rng.spawn(0).np, rng.spawn(1).np, rng.spawn(2), rng.spawn(3).np
    if store is None:
        store = ParamStore(model, cfg.weight_decay, clip_norm=cfg.clip_norm)
    schedule = LrSchedule(cfg.peak_lr, cfg.floor_lr, cfg.warmup, cfg.steps)
    n = latents.shape[0]
    bs = min(cfg.batch_size, n)
    if cfg.context_prob > 0:
        if groups is None:
            raise ValueError("context training needs trajectory groups")
        groups = np.asarray(groups)
    perm, pos = order_rng.permutation(n), 0
    trace = []
    model.train()
    while store.step < cfg.steps:
        if pos + bs > n:
            perm, pos = order_rng.permutation(n), 0
        idx = np.sort(perm[pos:pos + bs])
        pos += bs
        context = None
        if cfg.context_prob > 0 and ctx_rng.random() < cfg.context_prob:
            partners = []
            for i in idx:
                same = np.flatnonzero((groups == groups[i]) & (np.arange(n) != i))
                partners.append(ctx_rng.choice(same) if len(same) else i)
            context = latents[np.asarray(partners)]
        loss = teacher_forced_loss(model, latents[idx], mask_rng, noise_rng, context,
                                   model.sep is not None, cfg.noise_repeats)
        if not torch.isfinite(loss):
            raise NonFiniteError(f"generator loss diverged at step {store.step}")
        loss.backward()
        optimizer_step(store, schedule)
        trace.append(loss.item())
        if callback is not None:
            callback(store.step, trace[-1])
    model.eval()
    return store, trace
