"""Forecast metrics: relative MSE, ensemble CRPS, interval calibration error, reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

LEVELS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def relative_mse(pred, truth) -> float:
    """||pred - truth||^2 / ||truth||^2 over every entry of one trajectory."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    den = float(np.sum(truth ** 2))
    if den == 0.0:
        raise ValueError("relative MSE undefined for an all-zero truth")
    return float(np.sum((pred - truth) ** 2)) / den


def crps_ensemble(members, y, fair: bool = False):
    """CRPS of the empirical ensemble CDF, evaluated pointwise.

    members: [E, ...]; y: [...] (broadcast). Returns an array shaped like y:
    mean|X_i - y| - sum_ij |X_i - X_j| / (2 E^2), or with E(E-1) when ``fair``.
    """
    x = np.asarray(members, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    e = x.shape[0]
    if e < 2:
        raise ValueError("CRPS needs at least two members")
    skill = np.mean(np.abs(x - y), axis=0)
    spread = np.abs(x[:, None] - x[None, :]).sum(axis=(0, 1))
    norm = 2.0 * e * (e - 1) if fair else 2.0 * e * e
    return skill - spread / norm


def interval_coverage(members, y, levels: Sequence[float] = LEVELS) -> np.ndarray:
    """Share of points whose truth lies in each central ensemble interval (inclusive)."""
    x = np.asarray(members, dtype=np.float64).reshape(np.shape(members)[0], -1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] < 2:
        raise ValueError("coverage needs at least two members")
    if y.size == 0:
        raise ValueError("coverage needs at least one evaluation point")
    cov = []
    for q in levels:
        lo = np.quantile(x, 0.5 - q / 2, axis=0)
        hi = np.quantile(x, 0.5 + q / 2, axis=0)
        cov.append(np.mean((y >= lo) & (y <= hi)))
    return np.asarray(cov)


def rmsce(members, y, levels: Sequence[float] = LEVELS) -> float:
    """Root-mean-square gap between nominal central-interval levels and their coverage."""
    cov = interval_coverage(members, y, levels)
    return float(np.sqrt(np.mean((cov - np.asarray(levels)) ** 2)))


@dataclass
class EnsembleForecast:
    members: np.ndarray             # [E, T, ...]
    truth: np.ndarray               # [T, ...]
    seeds: List[int]

    def __post_init__(self):
        if self.members.shape[1:] != self.truth.shape:
            raise ValueError("members and truth disagree in shape")


def generate_ensemble(sample: Callable[[int], np.ndarray], truth, n_members: int,
                      base_seed: int) -> EnsembleForecast:
    """Run ``sample(seed)`` for seeds base_seed .. base_seed + E - 1."""
    seeds = [base_seed + i for i in range(n_members)]
    members = np.stack([np.asarray(sample(s)) for s in seeds])
    return EnsembleForecast(members, np.asarray(truth), seeds)


def step_curves(ens: EnsembleForecast, fair: bool = False) -> Dict[str, np.ndarray]:
    """Per-time-step CRPS (spatial mean) and RMSCE (spatial points pooled)."""
    T = ens.truth.shape[0]
    crps = np.array([crps_ensemble(ens.members[:, t], ens.truth[t], fair).mean() for t in range(T)])
    cal = np.array([rmsce(ens.members[:, t], ens.truth[t]) for t in range(T)])
    return {"crps": crps, "rmsce": cal}


@dataclass
class EvalReport:
    """Per-trajectory errors and optional per-step probabilistic curves."""

    meta: Dict[str, str] = field(default_factory=dict)
    rel_mse: List[float] = field(default_factory=list)
    curves: List[Dict[str, np.ndarray]] = field(default_factory=list)

    def add(self, rel: float, curves: Optional[Dict[str, np.ndarray]] = None):
        self.rel_mse.append(float(rel))
        if curves is not None:
            self.curves.append(curves)

    @property
    def mean_rel_mse(self) -> float:
        return float(np.mean(self.rel_mse)) if self.rel_mse else float("nan")

    def write(self, out_dir) -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = out / "metrics.csv"
        with open(rows, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trajectory", "step", "metric", "value"])
            for i, r in enumerate(self.rel_mse):
                w.writerow([i, "all", "rel_mse", repr(r)])
            for i, c in enumerate(self.curves):
                for name in sorted(c):
                    for t, v in enumerate(c[name]):
                        w.writerow([i, t, name, repr(float(v))])
        summary = out / "summary.csv"
        with open(summary, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["key", "value"])
            for k in sorted(self.meta):
                w.writerow([k, self.meta[k]])
            w.writerow(["n_trajectories", len(self.rel_mse)])
            w.writerow(["mean_rel_mse", repr(self.mean_rel_mse)])
            if self.curves:
                for name in sorted(self.curves[0]):
                    w.writerow([f"mean_{name}", repr(float(np.mean([c[name] for c in self.curves])))])
        return [rows, summary]
