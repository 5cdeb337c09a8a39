"""PDE parameter families and their in/out-of-distribution ranges."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYSTEMS = ("Combined", "Advection", "Wave", "GrayScott", "Vorticity")
REGIMES = ("InD", "OutD")

GRAY_SCOTT_DU = 0.102
GRAY_SCOTT_DV = 0.204

# coefficient -> list of closed intervals (a union when more than one)
RANGES: dict[str, dict[str, dict[str, list[tuple[float, float]]]]] = {
    "Combined": {
        "InD": {"alpha": [(0.3, 0.5)], "beta": [(0.0005, 0.5)], "gamma": [(0.01, 1.0)]},
        "OutD": {"alpha": [(0.3, 0.5)], "beta": [(0.0005, 0.5)], "gamma": [(0.01, 1.0)],
                 "delta": [(0.5, 1.0)]},
    },
    "Advection": {
        "InD": {"alpha": [(-5.0, 5.0)]},
        "OutD": {"alpha": [(-7.0, -5.0), (5.0, 7.0)]},
    },
    "Wave": {
        "InD": {"c": [(100.0, 500.0)], "k": [(0.0, 50.0)]},
        "OutD": {"c": [(500.0, 550.0)], "k": [(50.0, 60.0)]},
    },
    "GrayScott": {
        "InD": {"F": [(0.023, 0.045)], "k": [(0.0590, 0.0640)]},
        "OutD": {"F": [(0.045, 0.0467)], "k": [(0.0570, 0.0590)]},
    },
    "Vorticity": {
        "InD": {"nu": [(1e-3, 1e-2)]},
        "OutD": {"nu": [(1e-5, 1e-4)]},
    },
}


@dataclass
class PdeParams:
    system: str
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if self.system == "GrayScott":
            self.coeffs.setdefault("D_u", GRAY_SCOTT_DU)
            self.coeffs.setdefault("D_v", GRAY_SCOTT_DV)

    def __getitem__(self, name):
        return self.coeffs[name]

    def get(self, name, default=None):
        return self.coeffs.get(name, default)

    def to_lines(self) -> list[str]:
        return [f"system={self.system}"] + [f"{k}={v!r}" for k, v in self.coeffs.items()]

    @classmethod
    def from_lines(cls, lines) -> "PdeParams":
        kv = dict(line.split("=", 1) for line in lines)
        system = kv.pop("system")
        return cls(system, {k: float(v) for k, v in kv.items()})


def _draw(intervals, rng: np.random.Generator) -> float:
    lengths = np.array([b - a for a, b in intervals], dtype=float)
    i = 0 if len(intervals) == 1 else int(rng.choice(len(intervals), p=lengths / lengths.sum()))
    a, b = intervals[i]
    return float(rng.uniform(a, b))


def sample_params(system: str, regime: str, rng: np.random.Generator) -> PdeParams:
    """Uniform draw of every coefficient from its range (unions weighted by length)."""
    if system not in RANGES:
        raise ValueError(f"unknown system {system!r}")
    if regime not in RANGES[system]:
        raise ValueError(f"unknown regime {regime!r} for {system}")
    coeffs = {name: _draw(iv, rng) for name, iv in RANGES[system][regime].items()}
    return PdeParams(system, coeffs)
