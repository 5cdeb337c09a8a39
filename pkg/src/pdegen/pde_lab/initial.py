"""Random initial conditions for each PDE family."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

TRIG_FAMILIES = ("sine-sum", "cosine-sum", "sine+cosine-sum")


def grid_1d(n: int, length: float) -> np.ndarray:
    return np.arange(n) * (length / n)


def grid_2d(n: int, length: float) -> np.ndarray:
    """[n, n, 2] periodic grid; component a is the coordinate along array axis a."""
    x = grid_1d(n, length)
    return np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)


@dataclass
class InitialConditionSpec:
    family: str
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))
    freqs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    k0: float = 4.0

    @property
    def n_components(self) -> int:
        return len(self.widths) if self.family == "gaussian-sum" else len(self.amplitudes)


def trig_sum(spec: InitialConditionSpec, x: np.ndarray, length: float) -> np.ndarray:
    u = np.zeros_like(x, dtype=float)
    for a, phi, l in zip(spec.amplitudes, spec.phases, spec.freqs):
        arg = 2 * np.pi * l * x / length + phi
        if spec.family == "sine-sum":
            u += a * np.sin(arg)
        elif spec.family == "cosine-sum":
            u += a * np.cos(arg)
        elif spec.family == "sine+cosine-sum":
            u += a * (np.sin(arg) + np.cos(arg))
        else:
            raise ValueError(f"not a trigonometric family: {spec.family}")
    return u


def gaussian_sum(spec: InitialConditionSpec, grid: np.ndarray, length: float) -> np.ndarray:
    """Sum of unit-height gaussians; separations use the periodic minimum image."""
    u = np.zeros(grid.shape[:-1])
    for c, s in zip(spec.centers, spec.widths):
        d = grid - np.asarray(c) * length
        d -= length * np.round(d / length)
        u += np.exp(-(d ** 2).sum(-1) / (2 * s ** 2))
    return u


def energy_spectrum(k: np.ndarray, k0: float) -> np.ndarray:
    return 4.0 / 3.0 * np.sqrt(np.pi) * (k / k0) ** 4 / k0 * np.exp(-(k / k0) ** 2)


def vorticity_amplitude(k: np.ndarray, k0: float) -> np.ndarray:
    """|omega_hat(k)| = sqrt(E(k) / (pi k)), zero at k = 0."""
    k = np.asarray(k, dtype=float)
    out = np.zeros_like(k)
    nz = k > 0
    out[nz] = np.sqrt(energy_spectrum(k[nz], k0) / (np.pi * k[nz]))
    return out


def wavenumbers_2d(n: int, length: float):
    k = np.fft.fftfreq(n, d=length / n) * 2 * np.pi
    return np.meshgrid(k, k, indexing="ij")


def spectral_vorticity(n: int, length: float, k0: float, rng: np.random.Generator) -> np.ndarray:
    """Real random-phase field whose Fourier modulus follows the vorticity spectrum."""
    ky, kx = wavenumbers_2d(n, length)
    kmag = np.sqrt(kx ** 2 + ky ** 2)
    amp = vorticity_amplitude(kmag, k0)
    phi = rng.uniform(0.0, 2 * np.pi, size=(n, n))
    # phase(-k) = -phase(k) makes the inverse transform real
    neg = (-np.arange(n)) % n
    phi = phi - phi[np.ix_(neg, neg)]
    coef = amp * np.exp(1j * phi)
    return np.real(np.fft.ifft2(coef)) * n * n


def gray_scott_initial(n: int, rng: np.random.Generator, patch: Optional[int] = None,
                       noise: float = 0.01) -> np.ndarray:
    """u=1, v=0 with a centred square patch at (0.5, 0.25) plus 1% uniform noise."""
    patch = patch or max(n // 4, 1)
    u = np.ones((n, n))
    v = np.zeros((n, n))
    lo = (n - patch) // 2
    u[lo:lo + patch, lo:lo + patch] = 0.5
    v[lo:lo + patch, lo:lo + patch] = 0.25
    u += noise * rng.uniform(-1.0, 1.0, size=(n, n))
    v += noise * rng.uniform(0.0, 1.0, size=(n, n))
    return np.stack([u, v], axis=-1)


def sample_trig_spec(rng: np.random.Generator, family: str,
                     n_range=(1, 3)) -> InitialConditionSpec:
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    return InitialConditionSpec(
        family=family,
        amplitudes=rng.uniform(-0.5, 0.5, n),
        phases=rng.uniform(0.0, 2 * np.pi, n),
        freqs=rng.integers(1, 4, n),
    )


def sample_gaussian_spec(rng: np.random.Generator) -> InitialConditionSpec:
    n = int(rng.integers(2, 5))
    return InitialConditionSpec(
        family="gaussian-sum",
        centers=rng.uniform(0.0, 1.0, (n, 2)),
        widths=rng.uniform(0.025, 0.1, n),
    )


def sample_initial_condition(system: str, rng: np.random.Generator, grid: np.ndarray,
                             length: float, k0: float = 4.0, n_range=(1, 3)) -> np.ndarray:
    """Draw one initial field on ``grid``; returns [*extents, channels]."""
    if system == "Combined":
        if grid.ndim != 1:
            raise ValueError("Combined lives on a 1-D grid")
        u = trig_sum(sample_trig_spec(rng, "sine-sum", n_range), grid, length)
    elif system == "Advection":
        if grid.ndim != 1:
            raise ValueError("Advection lives on a 1-D grid")
        family = TRIG_FAMILIES[int(rng.integers(0, 3))]
        u = trig_sum(sample_trig_spec(rng, family, n_range), grid, length)
    elif system == "Wave":
        if grid.ndim != 3:
            raise ValueError("Wave lives on a 2-D grid")
        u = gaussian_sum(sample_gaussian_spec(rng), grid, length)
    elif system == "GrayScott":
        if grid.ndim != 3:
            raise ValueError("GrayScott lives on a 2-D grid")
        return gray_scott_initial(grid.shape[0], rng)
    elif system == "Vorticity":
        if grid.ndim != 3:
            raise ValueError("Vorticity lives on a 2-D grid")
        u = spectral_vorticity(grid.shape[0], length, k0, rng)
    else:
        raise ValueError(f"unknown system {system!r}")
    return u[..., None]
