"""Reference solvers for the five periodic PDE systems.

Each ``solve_*`` returns the state at ``nt`` uniformly spaced times
0, dt, ..., (nt - 1) dt as an array [nt, *extents, channels] (float64).
Internal sub-stepping is chosen from the scheme's stability limit; an explicit
``substeps`` that violates it raises :class:`StabilityError`.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .params import PdeParams


class StabilityError(ValueError):
    pass


def _check(state: np.ndarray, what: str):
    if not np.all(np.isfinite(state)):
        raise FloatingPointError(f"{what}: non-finite state")


def _substeps(dt: float, h_max: float, substeps: Optional[int], what: str) -> int:
    need = max(1, math.ceil(dt / h_max - 1e-12))
    if substeps is None:
        return need
    if substeps < need:
        raise StabilityError(f"{what}: {substeps} substeps per frame violate the stability "
                             f"limit (need >= {need})")
    return substeps


def _dealias_mask(k: np.ndarray, kmax: float) -> np.ndarray:
    return (np.abs(k) < (2.0 / 3.0) * kmax).astype(float)


# ----------------------------------------------------------------------------
# 1-D advection: exact spectral translation
# ----------------------------------------------------------------------------

def solve_advection(alpha: float, u0: np.ndarray, nt: int, dt: float, length: float = 1.0):
    n = u0.shape[0]
    k = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
    uh = np.fft.fft(u0[..., 0])
    shift = np.exp(-1j * k * alpha * dt)
    if n % 2 == 0:
        # the Nyquist mode cannot carry a phase on a real grid
        shift[n // 2] = np.cos(k[n // 2] * alpha * dt)
    out = np.empty((nt, n, 1))
    for i in range(nt):
        out[i, :, 0] = np.real(np.fft.ifft(uh * shift ** i))
    return out


# ----------------------------------------------------------------------------
# 1-D combined equation: integrating-factor RK4, pseudo-spectral
# ----------------------------------------------------------------------------

def _if_rk4(vh, h, lin, nonlin):
    e_half = np.exp(lin * h / 2)
    e_full = e_half * e_half
    k1 = nonlin(vh)
    k2 = nonlin(e_half * (vh + h / 2 * k1))
    k3 = nonlin(e_half * vh + h / 2 * k2)
    k4 = nonlin(e_full * vh + h * e_half * k3)
    return e_full * vh + h / 6 * (e_full * k1 + 2 * e_half * (k2 + k3) + k4)


def combined_linear_symbol(k, beta, gamma, delta=0.0):
    """Fourier symbol of beta u_xx - gamma u_xxx - delta u_xxxx."""
    return -beta * k ** 2 + 1j * gamma * k ** 3 - delta * k ** 4


def solve_combined(params: PdeParams, u0: np.ndarray, nt: int, dt: float,
                   length: float = 2 * np.pi, substeps: Optional[int] = None, cfl: float = 1.0):
    """u_t + d/dx(alpha u^2 - beta u_x + gamma u_xx + delta u_xxx) = 0."""
    alpha, beta, gamma = params["alpha"], params["beta"], params["gamma"]
    delta = params.get("delta", 0.0)
    n = u0.shape[0]
    k = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
    dealias = _dealias_mask(k, np.abs(k).max())
    lin = combined_linear_symbol(k, beta, gamma, delta)

    def nonlin(vh):
        u = np.real(np.fft.ifft(vh))
        return -1j * k * alpha * dealias * np.fft.fft(u * u)

    vh = np.fft.fft(u0[..., 0])
    out = np.empty((nt, n, 1))
    out[0, :, 0] = u0[..., 0]
    kmax = (2.0 / 3.0) * np.abs(k).max()
    for i in range(1, nt):
        u = np.real(np.fft.ifft(vh))
        speed = 2 * abs(alpha) * np.abs(u).max() * kmax
        m = _substeps(dt, cfl / speed if speed > 0 else np.inf, substeps, "Combined")
        for _ in range(m):
            vh = _if_rk4(vh, dt / m, lin, nonlin)
        out[i, :, 0] = np.real(np.fft.ifft(vh))
        _check(out[i], "Combined")
    return out


# ----------------------------------------------------------------------------
# 2-D damped wave: leapfrog, 5-point Laplacian
# ----------------------------------------------------------------------------

def laplacian_5pt(u: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1)
            - 4 * u) / dx ** 2


def wave_energy(w_now: np.ndarray, w_next: np.ndarray, c: float, h: float, dx: float) -> float:
    """Leapfrog-conserved energy between consecutive states (exact for k = 0)."""
    vel = (w_next - w_now) / h
    pot = -np.sum(w_next * laplacian_5pt(w_now, dx))
    return 0.5 * dx * dx * (np.sum(vel ** 2) + c ** 2 * pot)


def solve_wave(params: PdeParams, w0: np.ndarray, nt: int, dt: float, length: float = 1.0,
               substeps: Optional[int] = None, cfl: float = 0.9):
    """w_tt - c^2 lap w + k w_t = 0 from rest; only w is returned."""
    c, damp = params["c"], params["k"]
    n = w0.shape[0]
    dx = length / n
    m = _substeps(dt, cfl * dx / (c * math.sqrt(2.0)), substeps, "Wave")
    h = dt / m
    a = 1 + damp * h / 2
    b = 1 - damp * h / 2
    w_prev = w0[..., 0].copy()
    w = w_prev + 0.5 * (c * h) ** 2 * laplacian_5pt(w_prev, dx)
    out = np.empty((nt, n, n, 1))
    out[0, ..., 0] = w_prev
    step = 1
    for i in range(1, nt):
        while step < i * m:
            w_next = (2 * w - b * w_prev + (c * h) ** 2 * laplacian_5pt(w, dx)) / a
            w_prev, w = w, w_next
            step += 1
        out[i, ..., 0] = w
        _check(w, "Wave")
    return out


# ----------------------------------------------------------------------------
# 2-D Gray-Scott: explicit Euler, 5-point Laplacian
# ----------------------------------------------------------------------------

def solve_gray_scott(params: PdeParams, s0: np.ndarray, nt: int, dt: float, dx: float = 2.0,
                     h: float = 1.0):
    """Frames every ``dt`` time units, Euler steps of size ``h``."""
    F, kill = params["F"], params["k"]
    du, dv = params["D_u"], params["D_v"]
    if h > dx * dx / (4 * max(du, dv)):
        raise StabilityError(f"GrayScott: step {h} exceeds diffusive limit {dx * dx / (4 * max(du, dv))}")
    m = dt / h
    if abs(m - round(m)) > 1e-9 or round(m) < 1:
        raise ValueError("GrayScott: frame spacing must be a positive multiple of the Euler step")
    m = int(round(m))
    u = s0[..., 0].copy()
    v = s0[..., 1].copy()
    out = np.empty((nt,) + s0.shape)
    out[0] = s0
    for i in range(1, nt):
        for _ in range(m):
            uvv = u * v * v
            u, v = (u + h * (du * laplacian_5pt(u, dx) - uvv + F * (1 - u)),
                    v + h * (dv * laplacian_5pt(v, dx) + uvv - (F + kill) * v))
        out[i, ..., 0] = u
        out[i, ..., 1] = v
        _check(out[i], "GrayScott")
    return out


# ----------------------------------------------------------------------------
# 2-D vorticity: pseudo-spectral, integrating factor on viscosity, RK4
# ----------------------------------------------------------------------------

def solve_vorticity(params: PdeParams, w0: np.ndarray, nt: int, dt: float,
                    length: float = 2 * np.pi, substeps: Optional[int] = None, cfl: float = 0.5):
    """omega_t + (u . grad) omega = nu lap omega; mean vorticity kept exactly."""
    nu = params["nu"]
    n = w0.shape[0]
    kk = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
    ky, kx = np.meshgrid(kk, kk, indexing="ij")
    k2 = kx ** 2 + ky ** 2
    k2_inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    kmax = np.abs(kk).max()
    dealias = _dealias_mask(kx, kmax) * _dealias_mask(ky, kmax)
    lin = -nu * k2
    dx = length / n

    def velocity(wh):
        # ky pairs with array axis 0, kx with axis 1; (u, v) is divergence free
        psi = wh * k2_inv
        u = np.real(np.fft.ifft2(1j * kx * psi))
        v = np.real(np.fft.ifft2(-1j * ky * psi))
        return u, v

    def nonlin(wh):
        # u is the velocity along axis 0, v along axis 1
        u, v = velocity(wh)
        w_0 = np.real(np.fft.ifft2(1j * ky * wh))
        w_1 = np.real(np.fft.ifft2(1j * kx * wh))
        out = -dealias * np.fft.fft2(u * w_0 + v * w_1)
        out[0, 0] = 0.0
        return out

    wh = np.fft.fft2(w0[..., 0])
    out = np.empty((nt, n, n, 1))
    out[0, ..., 0] = w0[..., 0]
    for i in range(1, nt):
        u, v = velocity(wh)
        vmax = max(np.abs(u).max(), np.abs(v).max())
        m = _substeps(dt, cfl * dx / vmax if vmax > 0 else np.inf, substeps, "Vorticity")
        for _ in range(m):
            wh = _if_rk4(wh, dt / m, lin, nonlin)
        out[i, ..., 0] = np.real(np.fft.ifft2(wh))
        _check(out[i], "Vorticity")
    return out


def solve(params: PdeParams, ic: np.ndarray, nt: int, dt: float, length: Optional[float] = None,
          substeps: Optional[int] = None) -> np.ndarray:
    """Dispatch on ``params.system``; see the per-system solvers for conventions."""
    s = params.system
    if s == "Advection":
        return solve_advection(params["alpha"], ic, nt, dt, length or 1.0)
    if s == "Combined":
        return solve_combined(params, ic, nt, dt, length or 2 * np.pi, substeps)
    if s == "Wave":
        return solve_wave(params, ic, nt, dt, length or 1.0, substeps)
    if s == "GrayScott":
        n = ic.shape[0]
        return solve_gray_scott(params, ic, nt, dt, dx=(length or 2.0 * n) / n)
    if s == "Vorticity":
        return solve_vorticity(params, ic, nt, dt, length or 2 * np.pi, substeps)
    raise ValueError(f"unknown system {s!r}")
