"""Glue between data, tokenizer and generator shared by the CLI and experiments."""
from __future__ import annotations

import dataclasses
from typing import List, Optional, Tuple

import numpy as np
import torch

from .checkpoint import GEN_MAGIC, VAE_MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig
from .generator import Generator, patchify, rollout, rollout_with_context, unpatchify
from .pde_lab import TrajectoryDataset, subsample_indices
from .tensor_core import ParamStore, RngStream
from .tokenizer import (Tokenizer, TokenizerConfig, encode_dataset, fit_latent_stats, flat_fields,
                        flat_grid)

META_PREFIX = "meta "


def configure_runtime(threads: int = 1):
    """Deterministic single-process execution."""
    torch.set_num_threads(max(int(threads), 1))
    torch.use_deterministic_algorithms(True)


def tokenizer_config(cfg: RunConfig, channels: int, length: float, spatial_dims: int) -> TokenizerConfig:
    interp = dataclasses.replace(cfg.interp, spatial_dims=spatial_dims)
    comp = dataclasses.replace(cfg.comp, spatial_dims=spatial_dims)
    return TokenizerConfig(channels=channels, length=length, interp=interp, comp=comp)


def build_tokenizer(cfg: RunConfig, ds: TrajectoryDataset, seed: int) -> Tokenizer:
    torch.manual_seed(RngStream(seed).spawn(101).np.integers(2 ** 62))
    return Tokenizer(tokenizer_config(cfg, ds.channels, ds.length, ds.spatial_dims))


def generator_config(cfg: RunConfig, tok: Tokenizer):
    return dataclasses.replace(cfg.gen, token_dim=tok.cfg.comp.token_dim,
                               extents=tok.cfg.latent_shape)


def build_generator(cfg: RunConfig, tok: Tokenizer, seed: int) -> Generator:
    torch.manual_seed(RngStream(seed).spawn(202).np.integers(2 ** 62))
    return Generator(generator_config(cfg, tok))


# -- checkpoints ---------------------------------------------------------------

def _header(cfg: RunConfig, meta: dict) -> List[str]:
    return [f"{META_PREFIX}{k} = {meta[k]}" for k in sorted(meta)] + cfg.to_lines()


def _split_header(header: List[str]) -> Tuple[dict, RunConfig]:
    meta, rest = {}, []
    for line in header:
        if line.startswith(META_PREFIX):
            k, _, v = line[len(META_PREFIX):].partition("=")
            meta[k.strip()] = v.strip()
        else:
            rest.append(line)
    return meta, RunConfig.from_ini("\n".join(rest) + "\n")


def save_tokenizer(path, tok: Tokenizer, cfg: RunConfig, store: Optional[ParamStore] = None):
    meta = {"channels": tok.cfg.channels, "length": repr(float(tok.cfg.length)),
            "spatial_dims": tok.cfg.interp.spatial_dims, "step": store.step if store else 0}
    tensors = dict(tok.state_dict())
    if store is not None:
        tensors.update(store.state_tensors())
    return save_checkpoint(path, VAE_MAGIC, _header(cfg, meta), tensors)


def load_tokenizer(path) -> Tuple[Tokenizer, RunConfig, dict, dict]:
    """Returns (tokenizer, config, meta, optimizer tensors)."""
    header, tensors = load_checkpoint(path, VAE_MAGIC)
    meta, cfg = _split_header(header)
    tok = Tokenizer(tokenizer_config(cfg, int(meta["channels"]), float(meta["length"]),
                                     int(meta["spatial_dims"])))
    optim = {k: v for k, v in tensors.items() if k.startswith("optim.")}
    state = {k: v for k, v in tensors.items() if not k.startswith("optim.")}
    tok.load_state_dict(state)
    tok.eval()
    return tok, cfg, meta, optim


def save_generator(path, gen: Generator, tok: Tokenizer, cfg: RunConfig, vae_digest: str,
                   store: Optional[ParamStore] = None):
    meta = {"step": store.step if store else 0, "vae_digest": vae_digest}
    tensors = dict(gen.state_dict())
    tensors["latent.shift"] = tok.latent_shift
    tensors["latent.scale"] = tok.latent_scale
    if store is not None:
        tensors.update(store.state_tensors())
    return save_checkpoint(path, GEN_MAGIC, _header(cfg, meta), tensors)


def load_generator(path, tok: Tokenizer) -> Tuple[Generator, RunConfig, dict, dict]:
    header, tensors = load_checkpoint(path, GEN_MAGIC)
    meta, cfg = _split_header(header)
    gen = Generator(generator_config(cfg, tok))
    optim = {k: v for k, v in tensors.items() if k.startswith("optim.")}
    with torch.no_grad():
        tok.latent_shift.copy_(tensors.pop("latent.shift"))
        tok.latent_scale.copy_(tensors.pop("latent.scale"))
    gen.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim.")})
    gen.eval()
    return gen, cfg, meta, optim


def tokenizer_digest(tok: Tokenizer) -> str:
    """Fingerprint of tokenizer weights, used to pair generator and tokenizer checkpoints."""
    import hashlib
    h = hashlib.sha256()
    for k, v in sorted(tok.state_dict().items()):
        if k.startswith("latent_"):
            continue
        h.update(k.encode())
        h.update(v.detach().numpy().astype("<f4").tobytes())
    return h.hexdigest()[:16]


# -- latents -------------------------------------------------------------------

def training_latents(tok: Tokenizer, ds: TrajectoryDataset, patch: int) -> torch.Tensor:
    """Standardized, patched posterior means of every trajectory: [n, T_e, M_p, d_p]."""
    z = encode_dataset(tok, ds)
    fit_latent_stats(tok, z)
    return patchify(tok.standardize(z), tok.cfg.latent_shape, patch)


@torch.no_grad()
def encode_frames(tok: Tokenizer, ds: TrajectoryDataset, idx, frames: slice, frac: float,
                  rng: np.random.Generator, patch: int) -> torch.Tensor:
    """Encode the given frames of trajectories idx from a ``frac`` subset of points."""
    grid = flat_grid(ds)
    fields = flat_fields(ds, np.asarray(idx))[:, frames]
    pts = torch.as_tensor(subsample_indices(grid.shape[0], frac, rng))
    coords = grid[pts][None].expand(fields.shape[0], -1, -1)
    enc = tok.encode(coords, fields[:, :, pts])
    z = tok.standardize(enc.latents("mean").tokens)
    return patchify(z, tok.cfg.latent_shape, patch)


@torch.no_grad()
def decode_latents(tok: Tokenizer, z: torch.Tensor, patch: int, frames: int, grid) -> torch.Tensor:
    z = tok.destandardize(unpatchify(z, tok.cfg.latent_shape, patch))
    z = z.reshape(*z.shape[:2], *tok.cfg.latent_shape, z.shape[-1])
    return tok.decode(z, grid[None], frames)


@torch.no_grad()
def forecast(tok: Tokenizer, gen: Generator, ds: TrajectoryDataset, idx, history: int, horizon: int,
             seed: int, members: int = 1, frac: float = 1.0, decode_steps: Optional[int] = None,
             fm_steps: Optional[int] = None, batch_size: int = 16) -> np.ndarray:
    """Temporal-conditioning forecasts: [n, E, history + horizon, *extents, C].

    The first ``history`` frames are the tokenizer's reconstruction of the
    observed frames; the rest are generated. Member e of every trajectory is
    sampled from RngStream(seed + e).
    """
    idx = np.asarray(idx)
    total = history + horizon
    if total > ds.nt:
        raise ValueError(f"history + horizon = {total} exceeds the {ds.nt} stored frames")
    steps_hist = tok.cfg.comp.latent_steps(history)
    steps_total = tok.cfg.comp.latent_steps(total)
    grid = flat_grid(ds)
    patch = gen.cfg.patch
    out = np.zeros((len(idx), members, total, grid.shape[0], ds.channels), dtype=np.float32)
    for e in range(members):
        rng = RngStream(seed + e)
        pick_rng = rng.spawn(0).np
        for s in range(0, len(idx), batch_size):
            b = idx[s:s + batch_size]
            z_hist = encode_frames(tok, ds, b, slice(0, history), frac, pick_rng, patch)
            z_new = rollout(gen, z_hist[:, :steps_hist], steps_total, rng.spawn(1, s),
                            decode_steps, fm_steps)
            z = torch.cat([z_hist[:, :steps_hist], z_new], dim=1)
            out[s:s + len(b), e] = decode_latents(tok, z, patch, total, grid).numpy()
    return out.reshape(len(idx), members, total, *ds.extents, ds.channels)


def context_partner(ds: TrajectoryDataset, i: int) -> int:
    """Another trajectory simulated with the same PDE parameters as trajectory i."""
    g = i // ds.batch_size
    for j in range(g * ds.batch_size, min((g + 1) * ds.batch_size, ds.n_traj)):
        if j != i:
            return j
    raise ValueError(f"trajectory {i} has no context trajectory sharing its parameters "
                     f"(dataset batch_size={ds.batch_size})")


@torch.no_grad()
def forecast_with_context(tok: Tokenizer, gen: Generator, ds: TrajectoryDataset, idx, horizon: int,
                          seed: int, members: int = 1, frac: float = 1.0,
                          decode_steps: Optional[int] = None, fm_steps: Optional[int] = None,
                          batch_size: int = 16) -> np.ndarray:
    """Initial-value forecasts given a context trajectory: [n, E, 1 + horizon, *extents, C]."""
    if tok.cfg.comp.temporal_compression:
        raise ValueError("the context setting needs a tokenizer without temporal compression")
    idx = np.asarray(idx)
    partners = np.asarray([context_partner(ds, int(i)) for i in idx])
    total = 1 + horizon
    grid = flat_grid(ds)
    patch = gen.cfg.patch
    out = np.zeros((len(idx), members, total, grid.shape[0], ds.channels), dtype=np.float32)
    for e in range(members):
        rng = RngStream(seed + e)
        pick_rng = rng.spawn(0).np
        for s in range(0, len(idx), batch_size):
            b, pb = idx[s:s + batch_size], partners[s:s + batch_size]
            z0 = encode_frames(tok, ds, b, slice(0, 1), frac, pick_rng, patch)
            ctx = encode_frames(tok, ds, pb, slice(0, ds.nt), frac, pick_rng, patch)
            z_new = rollout_with_context(gen, ctx, z0, horizon, rng.spawn(1, s),
                                         use_sep=gen.sep is not None, steps=decode_steps,
                                         fm_steps=fm_steps)
            z = torch.cat([z0, z_new], dim=1)
            out[s:s + len(b), e] = decode_latents(tok, z, patch, total, grid).numpy()
    return out.reshape(len(idx), members, total, *ds.extents, ds.channels)
