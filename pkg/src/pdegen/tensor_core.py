"""Differentiable kernels shared by the tokenizer and the generator.

PyTorch autograd supplies the reverse-mode gradients; this module pins down the
kernel contracts (attention with additive bias, causal space-time convolution,
normalisation, optimiser schedule) and an independent finite-difference check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward pass produces NaN or Inf."""


def check_finite(t: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteError(f"non-finite values in {what}")
    return t


# ----------------------------------------------------------------------------
# random streams
# ----------------------------------------------------------------------------

_U64 = (1 << 64) - 1


class RngStream:
    """Seeded random stream feeding both numpy and torch draws.

    numpy draws use the counter-based Philox bit generator. ``spawn`` derives
    independent child streams from (seed, key...) so that sub-computations never
    share state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _U64
        self.np = np.random.Generator(np.random.Philox(key=self.seed))
        self.torch = torch.Generator().manual_seed(self.seed)

    def spawn(self, *keys: int) -> "RngStream":
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(int(k) for k in keys))
        lo, hi = ss.generate_state(2, dtype=np.uint32)
        return RngStream((int(hi) << 32) | int(lo))

    def randn(self, *shape: int, dtype=torch.float32) -> torch.Tensor:
        return torch.randn(*shape, generator=self.torch, dtype=dtype)

    def rand(self, *shape: int, dtype=torch.float32) -> torch.Tensor:
        return torch.rand(*shape, generator=self.torch, dtype=dtype)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"


# ----------------------------------------------------------------------------
# initialisation
# ----------------------------------------------------------------------------

def init_linear(m: nn.Linear, std: float = 0.02) -> nn.Linear:
    nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
    if m.bias is not None:
        nn.init.zeros_(m.bias)
    return m


def linear(d_in: int, d_out: int, bias: bool = True, std=0.02) -> nn.Linear:
    """Linear layer; ``std="fan_in"`` gives variance-preserving 1/sqrt(d_in) weights."""
    if std == "fan_in":
        std = d_in ** -0.5
    return init_linear(nn.Linear(d_in, d_out, bias=bias), std)


# ----------------------------------------------------------------------------
# attention
# ----------------------------------------------------------------------------

def attention_with_bias(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
    mask: Optional[torch.Tensor] = None,
    return_weights: bool = False,
    fused: bool = True,
):
    """softmax((q k^T + bias) / sqrt(d_k)) v over the allowed keys.

    q: [..., Nq, d_k], k: [..., Nk, d_k], v: [..., Nk, d_v]. ``bias`` and the
    boolean ``mask`` (True = allowed) broadcast against [..., Nq, Nk].
    Disallowed keys get exactly zero weight; a query row without any allowed
    key is an error. ``fused=False`` evaluates the formula term by term
    instead of through torch's fused kernel (same result up to rounding).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key width mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value count mismatch: {k.shape[-2]} vs {v.shape[-2]}")
    nq, nk = q.shape[-2], k.shape[-2]
    for name, t in (("bias", bias), ("mask", mask)):
        if t is not None and (t.shape[-1] not in (1, nk) or (t.dim() > 1 and t.shape[-2] not in (1, nq))):
            raise ValueError(f"{name} shape {tuple(t.shape)} does not match queries x keys ({nq}, {nk})")
    if mask is not None and not mask.any(-1).all():
        raise ValueError("attention row with no allowed key")
    if fused and not return_weights:
        attn_mask = mask
        if bias is not None:
            attn_mask = bias / math.sqrt(q.shape[-1])
            if mask is not None:
                attn_mask = attn_mask.masked_fill(~mask, float("-inf"))
        return F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
    scores = q @ k.transpose(-1, -2)
    if bias is not None:
        scores = scores + bias
    scores = scores / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    w = torch.softmax(scores, dim=-1)
    out = w @ v
    if return_weights:
        return out, w
    return out


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


class SwiGLU(nn.Module):
    """Gated feed-forward: W_out(silu(W_gate x) * W_up x)."""

    def __init__(self, dim: int, hidden: int, dim_out: Optional[int] = None):
        super().__init__()
        self.gate = linear(dim, hidden, bias=False)
        self.up = linear(dim, hidden, bias=False)
        self.down = linear(hidden, dim_out or dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.down(F.silu(self.gate(x)) * self.up(x))


class MultiHeadAttention(nn.Module):
    """Multi-head (cross-)attention with optional QK RMS-normalisation.

    ``past`` is a (k, v) pair of already projected keys/values of shape
    [B, H, N_past, head_dim] that is prepended to the keys of this call; the
    projected (k, v) of this call are returned so a caller can cache them.
    """

    def __init__(self, dim: int, heads: int, head_dim: int, dim_kv: Optional[int] = None,
                 qk_norm: bool = False, dim_out: Optional[int] = None):
        super().__init__()
        self.heads, self.head_dim = heads, head_dim
        inner = heads * head_dim
        self.q = linear(dim, inner, bias=False)
        self.kv = linear(dim_kv or dim, 2 * inner, bias=False)
        self.out = linear(inner, dim_out or dim)
        self.q_norm = RMSNorm(head_dim) if qk_norm else None
        self.k_norm = RMSNorm(head_dim) if qk_norm else None

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        return t.unflatten(-1, (self.heads, self.head_dim)).transpose(-2, -3)

    def project_kv(self, context: torch.Tensor):
        k, v = self.kv(context).chunk(2, dim=-1)
        k, v = self._split(k), self._split(v)
        if self.k_norm is not None:
            k = self.k_norm(k)
        return k, v

    def forward(self, x, context=None, bias=None, mask=None, past=None, return_kv=False):
        q = self._split(self.q(x))
        if self.q_norm is not None:
            q = self.q_norm(q)
        k, v = self.project_kv(x if context is None else context)
        new_kv = (k, v)
        if past is not None:
            k = torch.cat([past[0], k], dim=-2)
            v = torch.cat([past[1], v], dim=-2)
        o = attention_with_bias(q, k, v, bias=bias, mask=mask)
        o = self.out(o.transpose(-2, -3).flatten(-2))
        if return_kv:
            return o, new_kv
        return o


def sincos_embedding(positions: torch.Tensor, dim: int, base: float = 10000.0) -> torch.Tensor:
    """Fixed sine-cosine embedding of [N, n_axes] positions into [N, dim].

    The channel budget is split evenly across axes (dim must be divisible by
    2 * n_axes).
    """
    if positions.dim() == 1:
        positions = positions[:, None]
    n_axes = positions.shape[-1]
    if dim % (2 * n_axes):
        raise ValueError(f"dim {dim} not divisible by 2*{n_axes}")
    half = dim // (2 * n_axes)
    omega = 1.0 / base ** (torch.arange(half, dtype=torch.float64) / half)
    parts = []
    for a in range(n_axes):
        ang = positions[:, a:a + 1].double() * omega[None]
        parts += [torch.sin(ang), torch.cos(ang)]
    return torch.cat(parts, dim=-1).float()


# ----------------------------------------------------------------------------
# causal space-time convolution
# ----------------------------------------------------------------------------

_CONV = {0: F.conv1d, 1: F.conv2d, 2: F.conv3d}
_CONV_T = {0: F.conv_transpose1d, 1: F.conv_transpose2d, 2: F.conv_transpose3d}


def causal_spacetime_conv(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
    stride_t: int = 1,
    stride_s: int = 1,
    circular: bool = True,
) -> torch.Tensor:
    """Convolution over [B, C_in, T, *space] that never looks at future frames.

    The time axis gets k_t - 1 zeros on the past side only; every spatial axis
    gets k_s // 2 cells of circular (or zero) padding on both sides.
    weight: [C_out, C_in, k_t, *k_s].
    """
    n_sp = x.dim() - 3
    if n_sp not in _CONV or weight.dim() != x.dim():
        raise ValueError(f"input {tuple(x.shape)} and kernel {tuple(weight.shape)} are incompatible")
    k_t = weight.shape[2]
    ks = weight.shape[3:]
    for ax, k in enumerate(ks):
        size = x.shape[3 + ax]
        if k // 2 > size or k > size + 2 * (k // 2):
            raise ValueError(f"kernel {k} larger than padded spatial extent {size}")
    if n_sp:
        pad_s = []
        for k in reversed(ks):
            pad_s += [k // 2, k // 2]
        if any(pad_s):
            # circular mode wants the time axis listed too (with zero width)
            x = F.pad(x, pad_s + [0, 0], mode="circular" if circular else "constant")
    if k_t > 1:
        x = F.pad(x, [0, 0] * n_sp + [k_t - 1, 0])
    return _CONV[n_sp](x, weight, bias, stride=(stride_t,) + (stride_s,) * n_sp)


def causal_spacetime_conv_transpose(
    y: torch.Tensor,
    weight: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
    stride_t: int = 1,
    stride_s: int = 1,
    out_t: Optional[int] = None,
    causal: bool = False,
) -> torch.Tensor:
    """Exact adjoint of :func:`causal_spacetime_conv` (circular spatial padding).

    weight: [C_in, C_out, k_t, *k_s] (same tensor layout a forward conv would
    use with in/out swapped). Output spatial extents are ``stride_s`` times the
    input; the time axis is ``out_t`` frames (default ``stride_t * T``).

    The adjoint lets frame i read input steps up to ceil(i / stride_t). With
    ``causal=True`` the time axis is shifted so frame i reads only steps
    j <= i / stride_t; this is no longer the adjoint but never sees the future.
    """
    n_sp = y.dim() - 3
    k_t = weight.shape[2]
    ks = weight.shape[3:]
    full = _CONV_T[n_sp](y, weight, None, stride=(stride_t,) + (stride_s,) * n_sp)
    T = y.shape[2]
    out_t = stride_t * T if out_t is None else out_t
    if not causal:
        full = full[:, :, k_t - 1:]
    if full.shape[2] >= out_t:
        full = full[:, :, :out_t]
    else:
        full = F.pad(full, [0, 0] * n_sp + [0, out_t - full.shape[2]])
    for ax, k in enumerate(ks):
        dim = 3 + ax
        n_out = y.shape[dim] * stride_s
        idx = (torch.arange(full.shape[dim]) - k // 2) % n_out
        shape = list(full.shape)
        shape[dim] = n_out
        full = torch.zeros(shape, dtype=full.dtype).index_add(dim, idx, full)
    if bias is not None:
        full = full + bias.view(1, -1, *([1] * (full.dim() - 2)))
    return full


class CausalConv(nn.Module):
    """Conv over (time, space...) with causal time padding and circular space padding."""

    def __init__(self, c_in: int, c_out: int, k_t: int, k_s: int, spatial_dims: int,
                 stride_t: int = 1, stride_s: int = 1):
        super().__init__()
        self.stride_t, self.stride_s = stride_t, stride_s
        conv = {1: nn.Conv2d, 2: nn.Conv3d}[spatial_dims](
            c_in, c_out, (k_t,) + (k_s,) * spatial_dims)
        self.weight = conv.weight
        self.bias = conv.bias
        nn.init.normal_(self.weight, std=(c_in * self.weight[0, 0].numel()) ** -0.5)
        nn.init.zeros_(self.bias)

    def forward(self, x):
        return causal_spacetime_conv(x, self.weight, self.bias, self.stride_t, self.stride_s)


class CausalConvTranspose(nn.Module):
    def __init__(self, c_in: int, c_out: int, k_t: int, k_s: int, spatial_dims: int,
                 stride_t: int = 1, stride_s: int = 1, causal: bool = False):
        super().__init__()
        self.stride_t, self.stride_s = stride_t, stride_s
        self.causal = causal
        conv = {1: nn.ConvTranspose2d, 2: nn.ConvTranspose3d}[spatial_dims](
            c_in, c_out, (k_t,) + (k_s,) * spatial_dims)
        self.weight = conv.weight
        self.bias = conv.bias
        # each output cell sums over roughly c_in * prod(k) / strides inputs
        taps = self.weight[0, 0].numel() / (stride_t * stride_s ** spatial_dims)
        nn.init.normal_(self.weight, std=(c_in * taps) ** -0.5)
        nn.init.zeros_(self.bias)

    def forward(self, y, out_t=None):
        return causal_spacetime_conv_transpose(y, self.weight, self.bias,
                                               self.stride_t, self.stride_s, out_t, self.causal)


# ----------------------------------------------------------------------------
# optimisation
# ----------------------------------------------------------------------------

@dataclass
class LrSchedule:
    """Linear warmup from 0 to ``peak`` then cosine decay to ``floor``."""

    peak: float = 1e-3
    floor: float = 1e-5
    warmup: int = 500
    total: int = 10_000

    def __call__(self, step: int) -> float:
        if step < self.warmup:
            return self.peak * step / self.warmup
        span = max(self.total - self.warmup, 1)
        frac = min((step - self.warmup) / span, 1.0)
        return self.floor + 0.5 * (self.peak - self.floor) * (1.0 + math.cos(math.pi * frac))


class ParamStore:
    """Named trainable parameters of a module plus AdamW moments and a step counter."""

    def __init__(self, module: nn.Module, weight_decay: float = 1e-4,
                 betas: tuple = (0.9, 0.95), clip_norm: float = 1.0):
        self.module = module
        self.clip_norm = clip_norm
        self.params = {n: p for n, p in module.named_parameters() if p.requires_grad}
        self.optimizer = torch.optim.AdamW(list(self.params.values()), lr=0.0,
                                           betas=betas, weight_decay=weight_decay)
        self.step = 0

    def moments(self, name: str):
        st = self.optimizer.state.get(self.params[name], {})
        return st.get("exp_avg"), st.get("exp_avg_sq")

    def zero_grad(self):
        self.optimizer.zero_grad(set_to_none=True)

    def state_tensors(self) -> dict:
        """Optimiser slots as flat named tensors (for checkpoints)."""
        out = {}
        for n, p in self.params.items():
            st = self.optimizer.state.get(p)
            if st:
                out[f"optim.exp_avg.{n}"] = st["exp_avg"]
                out[f"optim.exp_avg_sq.{n}"] = st["exp_avg_sq"]
        return out

    def load_state_tensors(self, tensors: Mapping[str, torch.Tensor], step: int):
        for n, p in self.params.items():
            key = f"optim.exp_avg.{n}"
            if key in tensors:
                self.optimizer.state[p] = {
                    "step": torch.tensor(float(step)),
                    "exp_avg": tensors[key].clone().to(p.dtype),
                    "exp_avg_sq": tensors[f"optim.exp_avg_sq.{n}"].clone().to(p.dtype),
                }
        self.step = int(step)


def global_grad_norm(params: Iterable[torch.Tensor]) -> float:
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float(p.grad.detach().double().pow(2).sum())
    return math.sqrt(sq)


def optimizer_step(store: ParamStore, schedule: Callable[[int], float]) -> dict:
    """Clip gradients by global norm, apply one AdamW update at the scheduled lr."""
    params = list(store.params.values())
    for n, p in store.params.items():
        if p.grad is None:
            raise ValueError(f"no gradient for trainable parameter {n!r}")
        if not torch.isfinite(p.grad).all():
            raise NonFiniteError(f"non-finite gradient for {n!r}")
    norm = global_grad_norm(params)
    if store.clip_norm and norm > store.clip_norm:
        scale = store.clip_norm / norm
        for p in params:
            p.grad.mul_(scale)
    lr = schedule(store.step)
    for g in store.optimizer.param_groups:
        g["lr"] = lr
    store.optimizer.step()
    store.zero_grad()
    store.step += 1
    return {"lr": lr, "grad_norm": norm}


# ----------------------------------------------------------------------------
# gradient check
# ----------------------------------------------------------------------------

def _as_param_dict(params) -> dict:
    if isinstance(params, ParamStore):
        return dict(params.params)
    if isinstance(params, nn.Module):
        return {n: p for n, p in params.named_parameters() if p.requires_grad}
    if isinstance(params, Mapping):
        return dict(params)
    return {str(i): p for i, p in enumerate(params)}


@torch.no_grad()
def _eval(f) -> float:
    v = f()
    v = float(v)
    if not math.isfinite(v):
        raise NonFiniteError("non-finite loss in grad_check")
    return v


def grad_check(f: Callable[[], torch.Tensor], params, eps: float = 1e-6,
               return_all: bool = False, max_entries: Optional[int] = None,
               rng: Optional[np.random.Generator] = None):
    """Compare autograd gradients with central finite differences.

    ``f`` is a zero-argument callable returning a scalar; ``params`` are the
    float64 leaf tensors it reads (mapping, module or ParamStore). For each
    parameter tensor the error is ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||, floor);
    the maximum over parameters is returned. ``floor`` is 1e5 times the rounding
    noise of a central difference on a loss of this size, so an exactly zero
    gradient (e.g. a softmax shift) is not scored by its rounding noise.

    With ``max_entries`` only that many randomly chosen entries of each tensor
    are probed (drawn from ``rng``).
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    named = _as_param_dict(params)
    for n, p in named.items():
        if p.dtype != torch.float64:
            raise ValueError(f"grad_check needs float64 parameters; {n!r} is {p.dtype}")
        p.grad = None
    loss = f()
    if not torch.isfinite(loss):
        raise NonFiniteError("non-finite loss in grad_check")
    loss.backward()
    resolution = np.finfo(np.float64).eps * max(abs(loss.item()), 1.0) / eps
    errors = {}
    for n, p in named.items():
        auto = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        fd = torch.zeros_like(p)
        flat, fd_flat = p.data.view(-1), fd.view(-1)
        probe = np.arange(flat.numel())
        if max_entries is not None and flat.numel() > max_entries:
            probe = np.sort((rng or np.random.default_rng(0)).choice(flat.numel(), max_entries, replace=False))
            keep = torch.as_tensor(probe)
            auto = auto.view(-1)[keep]
        for i in probe:
            orig = flat[i].item()
            flat[i] = orig + eps
            up = _eval(f)
            flat[i] = orig - eps
            down = _eval(f)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2 * eps)
        if len(probe) < flat.numel():
            fd = fd_flat[keep]
        num = float((auto - fd).norm())
        floor = 1e5 * resolution * math.sqrt(len(probe))
        den = max(float(auto.norm()), float(fd.norm()), floor)
        errors[n] = num / den
        p.grad = None
    worst = max(errors.values()) if errors else 0.0
    return (worst, errors) if return_all else worst
