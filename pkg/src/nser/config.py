"""Run configuration: ``section.key = value`` text files with flag overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .synth import SynthParams
from .teacher import TeacherConfig
from .train import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = f"{path or '<config>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


@dataclass
class LayoutSpec:
    budget: int = 15
    caps: int | None = None  # per-metapath cap; None means uncapped (cap = budget)
    strategy: str = "heuristic"
    sample_limit: int = 16
    aggregate: str = "max"

    def __post_init__(self):
        if self.strategy not in ("uniform", "prior", "heuristic"):
            raise ValueError(f"layout strategy must be uniform, prior or heuristic, not {self.strategy!r}")
        if self.aggregate not in ("max", "mean"):
            raise ValueError(f"aggregate must be max or mean, not {self.aggregate!r}")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")


@dataclass
class EvalSpec:
    ratio: float = 0.7
    topn: int = 10


@dataclass
class ExperimentSpec:
    axis: str = "layout"  # "layout" or "lambda"
    lambdas: list[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    strategies: list[str] = field(default_factory=lambda: ["uniform", "prior", "heuristic"])
    seeds: list[int] = field(default_factory=lambda: [0])
    baselines: list[str] = field(default_factory=list)  # any of "teacher", "random"

    def __post_init__(self):
        if self.axis not in ("layout", "lambda"):
            raise ValueError(f"experiment axis must be layout or lambda, not {self.axis!r}")
        for s in self.strategies:
            if s not in ("uniform", "prior", "heuristic"):
                raise ValueError(f"unknown layout strategy {s!r}")
        for b in self.baselines:
            if b not in ("teacher", "random"):
                raise ValueError(f"unknown baseline {b!r}")
        if any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambda must be >= 0")
        if not self.seeds:
            raise ValueError("at least one seed is required")


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthParams = field(default_factory=SynthParams)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    layout: LayoutSpec = field(default_factory=LayoutSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)

    def with_seed(self, seed: int) -> "RunConfig":
        """A copy whose stochastic components all derive from ``seed``."""
        return dataclasses.replace(
            self,
            seed=seed,
            teacher=dataclasses.replace(self.teacher, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )


SECTIONS = ("synth", "teacher", "train", "layout", "eval", "experiment")
# keys that read more naturally under another name in config files and flags
ALIASES = {("train", "lambda"): "lam", ("eval", "split_ratio"): "ratio"}
LIST_TYPES = {
    "experiment.lambdas": float,
    "experiment.seeds": int,
    "experiment.strategies": str,
    "experiment.baselines": str,
}


def _convert(raw: str, current, name: str):
    raw = raw.strip()
    if name in LIST_TYPES:
        return [LIST_TYPES[name](x.strip()) for x in raw.split(",") if x.strip()]
    if name == "layout.caps":
        return None if raw.lower() in ("none", "") else int(raw)
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def set_value(cfg: RunConfig, key: str, raw: str) -> None:
    """Assign ``section.key`` (or top-level ``seed``) from its text form."""
    if key == "seed":
        cfg.seed = int(raw)
        return
    section, _, name = key.partition(".")
    if section not in SECTIONS or not name:
        raise KeyError(f"unknown config key {key!r}")
    name = ALIASES.get((section, name), name)
    target = getattr(cfg, section)
    if name not in {f.name for f in dataclasses.fields(target)}:
        raise KeyError(f"unknown config key {key!r}")
    value = _convert(raw, getattr(target, name), f"{section}.{name}")
    setattr(cfg, section, dataclasses.replace(target, **{name: value}))


def parse_config(text: str, path: str | None = None) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep:
            raise ConfigError(f"expected 'section.key = value', got {line.strip()!r}", path, lineno)
        try:
            set_value(cfg, key.strip(), value)
        except (KeyError, ValueError) as exc:
            msg = exc.args[0] if exc.args else str(exc)
            raise ConfigError(str(msg), path, lineno) from None
    return cfg.with_seed(cfg.seed)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def dump_config(cfg: RunConfig) -> str:
    """Every setting in ``section.key = value`` form; parse_config reads it back."""
    lines = [f"seed = {cfg.seed}"]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            if section in ("teacher", "train") and f.name == "seed":
                continue
            v = getattr(obj, f.name)
            text = ", ".join(str(x) for x in v) if isinstance(v, list) else str(v)
            lines.append(f"{section}.{f.name} = {text}")
    return "\n".join(lines) + "\n"
