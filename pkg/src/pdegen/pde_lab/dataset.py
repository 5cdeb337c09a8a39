"""Trajectory datasets: generation, the binary container, and grid subsampling.

Container layout (all multi-byte numbers little-endian)::

    ENMA1\\n
    system=<name>\\n regime=<InD|OutD>\\n n_traj=<int>\\n batch_size=<int>\\n
    nt=<int>\\n extents=<n>[,<n>]\\n channels=<int>\\n dt=<float>\\n seed=<int>\\n
    float32 grid coordinates        [*extents, ndim]
    float32 fields                  [n_traj, nt, *extents, channels]
    per batch: "batch=<i>\\n" followed by "name=value\\n" parameter lines

A sidecar ``<stem>.txt`` repeats the header lines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..tensor_core import RngStream
from .initial import grid_1d, grid_2d, sample_initial_condition
from .params import PdeParams, sample_params
from .solvers import solve

MAGIC = b"ENMA1\n"
HEADER_KEYS = ("system", "regime", "n_traj", "batch_size", "nt", "extents", "channels", "dt", "seed")


@dataclass
class SimConfig:
    """How one system is simulated and stored."""

    system: str
    length: float
    sim_n: int
    store_n: int
    nt: int
    dt: float
    spatial_dims: int = 1
    channels: int = 1
    k0: float = 4.0
    ic_components: tuple = (1, 3)

    @property
    def stride(self) -> int:
        if self.sim_n % self.store_n:
            raise ValueError("simulation grid must be a multiple of the stored grid")
        return self.sim_n // self.store_n


def default_sim(system: str, **overrides) -> SimConfig:
    table = {
        # 100 solver steps over t in [0, 1], every 5th kept
        "Combined": SimConfig("Combined", 2 * np.pi, 256, 128, 20, 0.05),
        "Advection": SimConfig("Advection", 1.0, 1024, 128, 20, 0.05),
        "Wave": SimConfig("Wave", 1.0, 64, 64, 30, 0.005 / 30, spatial_dims=2),
        "GrayScott": SimConfig("GrayScott", 64.0, 32, 32, 20, 100.0, spatial_dims=2, channels=2),
        "Vorticity": SimConfig("Vorticity", 2 * np.pi, 64, 64, 30, 0.25, spatial_dims=2),
    }
    if system not in table:
        raise ValueError(f"unknown system {system!r}")
    return replace(table[system], **overrides)


@dataclass
class TrajectoryDataset:
    system: str
    regime: str
    batch_size: int
    dt: float
    seed: int
    grid: np.ndarray            # [*extents, ndim] float32
    fields: np.ndarray          # [n_traj, nt, *extents, channels] float32
    params: list = field(default_factory=list)

    @property
    def n_traj(self) -> int:
        return self.fields.shape[0]

    @property
    def nt(self) -> int:
        return self.fields.shape[1]

    @property
    def extents(self) -> tuple:
        return tuple(self.fields.shape[2:-1])

    @property
    def channels(self) -> int:
        return self.fields.shape[-1]

    @property
    def spatial_dims(self) -> int:
        return len(self.extents)

    @property
    def length(self) -> float:
        """Periodic domain length (same along every axis)."""
        n = self.extents[0]
        if n < 2:
            return 1.0
        step = self.grid[(1,) + (0,) * (self.spatial_dims - 1)][0] - self.grid[(0,) * self.spatial_dims][0]
        return float(step) * n

    def params_of(self, traj: int) -> PdeParams:
        return self.params[traj // self.batch_size]

    def header_lines(self) -> list[str]:
        vals = {
            "system": self.system, "regime": self.regime, "n_traj": self.n_traj,
            "batch_size": self.batch_size, "nt": self.nt,
            "extents": ",".join(str(e) for e in self.extents), "channels": self.channels,
            "dt": repr(float(self.dt)), "seed": int(self.seed),
        }
        return [f"{k}={vals[k]}" for k in HEADER_KEYS]

    def subset(self, idx) -> "TrajectoryDataset":
        idx = np.asarray(idx)
        return replace(self, fields=self.fields[idx], batch_size=1,
                       params=[self.params_of(int(i)) for i in idx])


def write_container(path, ds: TrajectoryDataset) -> Path:
    path = Path(path)
    if ds.n_traj % ds.batch_size:
        raise ValueError("n_traj must be a multiple of batch_size")
    if len(ds.params) != ds.n_traj // ds.batch_size:
        raise ValueError("need exactly one parameter record per batch")
    if not np.all(np.isfinite(ds.fields)):
        raise ValueError("refusing to write non-finite fields")
    header = "".join(line + "\n" for line in ds.header_lines()).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header)
        fh.write(np.ascontiguousarray(ds.grid, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ds.fields, dtype="<f4").tobytes())
        for b, p in enumerate(ds.params):
            fh.write(f"batch={b}\n".encode("ascii"))
            fh.write("".join(line + "\n" for line in p.to_lines()).encode("ascii"))
    path.with_suffix(".txt").write_text(MAGIC.decode("ascii") + header.decode("ascii"))
    return path


def read_container(path) -> TrajectoryDataset:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a trajectory container")
    pos = len(MAGIC)
    meta = {}
    for key in HEADER_KEYS:
        end = raw.index(b"\n", pos)
        k, v = raw[pos:end].decode("ascii").split("=", 1)
        if k != key:
            raise ValueError(f"{path}: expected header field {key!r}, found {k!r}")
        meta[k] = v
        pos = end + 1
    extents = tuple(int(e) for e in meta["extents"].split(","))
    n_traj, nt, ch = int(meta["n_traj"]), int(meta["nt"]), int(meta["channels"])
    n_grid = math.prod(extents) * len(extents)
    grid = np.frombuffer(raw, dtype="<f4", count=n_grid, offset=pos).reshape(extents + (len(extents),))
    pos += 4 * n_grid
    n_f = n_traj * nt * math.prod(extents) * ch
    fields = np.frombuffer(raw, dtype="<f4", count=n_f, offset=pos).reshape((n_traj, nt) + extents + (ch,))
    pos += 4 * n_f
    params, cur = [], None
    for line in raw[pos:].decode("ascii").splitlines():
        if line.startswith("batch="):
            if cur is not None:
                params.append(PdeParams.from_lines(cur))
            cur = []
        elif line:
            cur.append(line)
    if cur is not None:
        params.append(PdeParams.from_lines(cur))
    return TrajectoryDataset(meta["system"], meta["regime"], int(meta["batch_size"]),
                             float(meta["dt"]), int(meta["seed"]),
                             grid.astype(np.float32), fields.astype(np.float32), params)


def simulate_batch(params: PdeParams, sim: SimConfig, batch_size: int,
                   rng: np.random.Generator) -> np.ndarray:
    """[batch, nt, *store_extents, channels] float32 trajectories sharing ``params``."""
    if sim.spatial_dims == 1:
        fine = grid_1d(sim.sim_n, sim.length)
    else:
        fine = grid_2d(sim.sim_n, sim.length)
    s = sim.stride
    out = []
    for _ in range(batch_size):
        ic = sample_initial_condition(sim.system, rng, fine, sim.length, sim.k0, sim.ic_components)
        traj = solve(params, ic, sim.nt, sim.dt, sim.length)
        traj = traj[:, ::s] if sim.spatial_dims == 1 else traj[:, ::s, ::s]
        out.append(traj)
    return np.stack(out).astype(np.float32)


def build_dataset(system: str, regime: str, n_traj: int, batch_size: int, seed: int,
                  sim: Optional[SimConfig] = None) -> TrajectoryDataset:
    if batch_size < 1 or n_traj % batch_size:
        raise ValueError(f"n_traj={n_traj} is not a multiple of batch_size={batch_size}")
    sim = sim or default_sim(system)
    if sim.system != system:
        raise ValueError("simulation config is for a different system")
    root = RngStream(seed)
    params, fields = [], []
    for b in range(n_traj // batch_size):
        rng = root.spawn(b).np
        p = sample_params(system, regime, rng)
        fields.append(simulate_batch(p, sim, batch_size, rng))
        params.append(p)
    if sim.spatial_dims == 1:
        grid = grid_1d(sim.store_n, sim.length)[:, None]
    else:
        grid = grid_2d(sim.store_n, sim.length)
    return TrajectoryDataset(system, regime, batch_size, sim.dt, seed,
                             grid.astype(np.float32), np.concatenate(fields), params)


def generate_dataset(system: str, regime: str, n_traj: int, batch_size: int, seed: int,
                     path, sim: Optional[SimConfig] = None) -> Path:
    """Simulate ``n_traj`` trajectories (one parameter draw per batch) and write them."""
    ds = build_dataset(system, regime, n_traj, batch_size, seed, sim)
    return write_container(path, ds)


def subsample_indices(n_points: int, frac: float, rng: np.random.Generator) -> np.ndarray:
    """floor(frac * n) distinct indices drawn uniformly, returned in grid order."""
    if not 0 < frac <= 1:
        raise ValueError("subsampling fraction must lie in (0, 1]")
    m = int(math.floor(frac * n_points + 1e-9))
    if m == 0:
        raise ValueError(f"fraction {frac} keeps no point out of {n_points}")
    if m == n_points:
        return np.arange(n_points)
    return np.sort(rng.choice(n_points, size=m, replace=False))


def subsample_grid(traj: np.ndarray, grid: np.ndarray, frac: float, rng: np.random.Generator):
    """Keep the same random subset of points at every time step of one trajectory.

    traj: [nt, *extents, c]; grid: [*extents, ndim]. Returns (coords [m, ndim],
    values [nt, m, c], indices into the flattened grid).
    """
    ndim = grid.shape[-1]
    flat_grid = grid.reshape(-1, ndim)
    flat = traj.reshape(traj.shape[0], -1, traj.shape[-1])
    idx = subsample_indices(flat_grid.shape[0], frac, rng)
    return flat_grid[idx], flat[:, idx], idx
