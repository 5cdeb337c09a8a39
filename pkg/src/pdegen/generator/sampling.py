"""Autoregressive rollout with cosine-scheduled masked decoding of each frame."""
from __future__ import annotations

from typing import Optional

import torch

from ..tensor_core import RngStream
from .flow import cosine_decode_counts, fm_sample
from .model import Generator, KvCache


@torch.no_grad()
def decode_frame(model: Generator, cond: torch.Tensor, rng: RngStream,
                 steps: Optional[int] = None, fm_steps: Optional[int] = None) -> torch.Tensor:
    """Generate one frame [B, M, d_p] given its conditioning blocks cond [B, M, h]."""
    cfg = model.cfg
    steps = cfg.decode_steps if steps is None else steps
    fm_steps = cfg.fm_steps if fm_steps is None else fm_steps
    B, m, _ = cond.shape
    counts = cosine_decode_counts(m, steps)
    tokens = torch.zeros(B, m, cfg.patch_dim, dtype=cond.dtype)
    masked = torch.ones(B, m, dtype=torch.bool)
    for n_s in counts:
        ctx = model.spatial_forward(cond, tokens, masked)
        chosen = []
        for b in range(B):
            pool = torch.nonzero(masked[b]).flatten()
            if len(pool) < n_s:
                raise RuntimeError("decode schedule asks for more tokens than remain masked")
            pick = torch.as_tensor(rng.np.permutation(len(pool))[:n_s])
            chosen.append(pool[pick])
        rows = torch.arange(B).repeat_interleave(n_s)
        cols = torch.cat(chosen)
        tokens[rows, cols] = fm_sample(model.head, ctx[rows, cols], rng, fm_steps, cfg.patch_dim)
        masked[rows, cols] = False
    if masked.any():
        raise RuntimeError("tokens left masked after the final decode step")
    return tokens


@torch.no_grad()
def _roll(model: Generator, cond_last: torch.Tensor, cache: KvCache, n_frames: int,
          rng: RngStream, steps, fm_steps) -> torch.Tensor:
    out = []
    cond = cond_last
    for t in range(n_frames):
        frame = decode_frame(model, cond, rng, steps, fm_steps)
        out.append(frame)
        if t + 1 < n_frames:
            cond = model.causal_forward(frame[:, None], cache)[:, -1]
    return torch.stack(out, dim=1)


@torch.no_grad()
def rollout(model: Generator, history: torch.Tensor, horizon: int, rng: RngStream,
            steps: Optional[int] = None, fm_steps: Optional[int] = None,
            use_cache: bool = True) -> torch.Tensor:
    """Continue ``history`` [B, L, M, d_p] up to ``horizon`` total frames.

    Returns the generated frames [B, horizon - L, M, d_p].
    """
    B, L = history.shape[:2]
    if L < 1:
        raise ValueError("rollout needs at least one observed frame")
    if horizon < L:
        raise ValueError("horizon shorter than the observed history")
    if horizon == L:
        return history.new_zeros(B, 0, *history.shape[2:])
    if not use_cache:
        seq = history
        for _ in range(horizon - L):
            cond = model.causal_forward(seq)[:, -1]
            frame = decode_frame(model, cond, rng, steps, fm_steps)
            seq = torch.cat([seq, frame[:, None]], dim=1)
        return seq[:, L:]
    cache = KvCache(len(model.causal))
    cond = model.causal_forward(history, cache)[:, -1]
    return _roll(model, cond, cache, horizon - L, rng, steps, fm_steps)


def context_blocks(model: Generator, context: torch.Tensor, start: torch.Tensor,
                   use_sep: bool = True) -> torch.Tensor:
    """[BOS, context frames, SEP, start frames] as transformer input blocks."""
    B = start.shape[0]
    parts = [model.bos_block(B), model.frame_blocks(context)]
    if use_sep:
        parts.append(model.sep_block(B))
    parts.append(model.frame_blocks(start))
    return torch.cat(parts, dim=1)


@torch.no_grad()
def rollout_with_context(model: Generator, context: torch.Tensor, start: torch.Tensor,
                         horizon: int, rng: RngStream, use_sep: bool = True,
                         steps: Optional[int] = None, fm_steps: Optional[int] = None) -> torch.Tensor:
    """Forecast ``horizon`` frames after ``start`` [B, 1, M, d_p] given a context trajectory."""
    if horizon < 0:
        raise ValueError("negative horizon")
    if horizon == 0:
        return start.new_zeros(start.shape[0], 0, *start.shape[2:])
    cache = KvCache(len(model.causal))
    cond = model.run_causal(context_blocks(model, context, start, use_sep), cache)[:, -1]
    return _roll(model, cond, cache, horizon, rng, steps, fm_steps)
