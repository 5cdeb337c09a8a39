"""Run configuration: INI sections mapped onto the component dataclasses."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from .generator import GenConfig, GenTrainConfig
from .tokenizer import CompressorConfig, InterpolatorConfig, VaeTrainConfig

CONFIG_VERSION = "1"


@dataclass
class ExperimentSpec:
    name: str = "desk"
    seed: int = 0
    threads: int = 1


@dataclass
class DataSpec:
    system: str = "Advection"
    regimes: List[str] = field(default_factory=lambda: ["InD", "OutD"])
    n_train: int = 500
    n_test: int = 32
    n_outd: int = 32
    batch_size: int = 1             # trajectories per PDE parameter draw


@dataclass
class EvalSpec:
    setting: str = "temporal"       # temporal | ivp
    history: int = 10
    horizon: int = 10
    members: int = 1
    fm_steps: int = 10
    decode_steps: int = 6
    frac: float = 1.0
    max_trajectories: int = 0       # 0 = every trajectory in the file
    fair_crps: bool = False


# fields of GenConfig derived from the tokenizer at run time
_DERIVED = {"gen": {"token_dim", "extents"}, "comp": {"spatial_dims", "width_in"},
            "interp": {"spatial_dims"}}

SECTIONS = {
    "experiment": ExperimentSpec,
    "data": DataSpec,
    "interp": InterpolatorConfig,
    "comp": CompressorConfig,
    "vae_train": VaeTrainConfig,
    "gen": GenConfig,
    "gen_train": GenTrainConfig,
    "eval": EvalSpec,
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, (list, tuple)):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if default and isinstance(default[0], (int, float)) and not isinstance(default[0], bool):
            kind = type(default[0])
            items = [kind(t) for t in items]
        return type(default)(items)
    return text


@dataclass
class RunConfig:
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    data: DataSpec = field(default_factory=DataSpec)
    interp: InterpolatorConfig = field(default_factory=InterpolatorConfig)
    comp: CompressorConfig = field(default_factory=lambda: CompressorConfig(temporal_compression=False))
    vae_train: VaeTrainConfig = field(default_factory=lambda: VaeTrainConfig(steps=300, batch_size=8, warmup=50))
    gen: GenConfig = field(default_factory=lambda: GenConfig(
        hidden=96, causal_depth=4, spatial_depth=2, heads=6, head_dim=16, head_width=96))
    gen_train: GenTrainConfig = field(default_factory=lambda: GenTrainConfig(steps=8000, peak_lr=2e-3))
    eval: EvalSpec = field(default_factory=EvalSpec)

    def to_lines(self) -> List[str]:
        lines = [f"# config version {CONFIG_VERSION}"]
        for sec in SECTIONS:
            obj = getattr(self, sec)
            lines.append(f"[{sec}]")
            for f in dataclasses.fields(obj):
                if f.name in _DERIVED.get(sec, ()):
                    continue
                lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        return lines

    def to_ini(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
        cp.optionxform = str
        cp.read_string(text)
        cfg = cls()
        for sec in cp.sections():
            if sec not in SECTIONS:
                raise ValueError(f"unknown config section [{sec}]")
            obj = getattr(cfg, sec)
            names = {f.name for f in dataclasses.fields(obj)} - _DERIVED.get(sec, set())
            updates = {}
            for key, raw in cp.items(sec):
                if key not in names:
                    raise ValueError(f"unknown key {key!r} in [{sec}]")
                updates[key] = _parse(raw, getattr(obj, key))
            if updates:
                setattr(cfg, sec, _replace(obj, updates))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_ini(Path(path).read_text())

    def validate(self):
        if self.eval.setting not in ("temporal", "ivp"):
            raise ValueError(f"unknown evaluation setting {self.eval.setting!r}")
        if self.eval.history < 1 or self.eval.horizon < 0:
            raise ValueError("history must be >= 1 and horizon >= 0")
        if self.eval.members < 1:
            raise ValueError("ensemble size must be >= 1")
        from .pde_lab import REGIMES, SYSTEMS
        if self.data.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.data.system!r}")
        for r in self.data.regimes:
            if r not in REGIMES:
                raise ValueError(f"unknown regime {r!r}")


def _replace(obj, updates):
    # dataclasses.replace re-runs __post_init__, which validates the new values
    derived = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)
               if not f.init}
    new = dataclasses.replace(obj, **updates)
    for k, v in derived.items():
        setattr(new, k, v)
    return new
