"""Run configuration: one ``key = value`` file, validated before any command runs."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Optional

from .exceptions import ConfigError, InvalidTask
from .training import TrainConfig
from .worldsim import WorldConfig

WORLD_KEYS = ("rooms", "object_kinds", "task_kinds", "unseen", "n_receptacles", "n_objects",
              "step_limit", "open_prob", "n_scenes")
MODES = ("full", "nolp", "nohier")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    preset: str = "table7"
    mode: str = "full"
    n_train_tasks: int = 200
    n_collect_tasks: int = 200
    n_eval_tasks: int = 200
    data_seed: int = 100
    collect_seed: int = 200
    eval_seed: int = 300
    temp_high: float = 1.0
    temp_low: float = 0.0
    temp_progress: float = 1.0
    mix_ratio: tuple = (1, 2)
    subtask_cap: int = 15

    def __post_init__(self):
        if self.preset not in ("table7", "desk"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("n_train_tasks", "n_collect_tasks", "n_eval_tasks", "subtask_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("temp_high", "temp_low", "temp_progress"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        r1, r2 = self.mix_ratio
        if r1 <= 0 or r2 < 0:
            raise ConfigError("mix_ratio must look like 1:2 with a positive expert share")

    @property
    def temperatures(self) -> dict:
        return {"high": self.temp_high, "low": self.temp_low, "progress": self.temp_progress}

    @classmethod
    def run_keys(cls) -> tuple:
        return tuple(f.name for f in fields(cls) if f.name not in ("train", "world"))

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "RunConfig":
        train_names = set(TrainConfig.field_names())
        run_names = set(cls.run_keys())
        train_kw, world_kw, run_kw = {}, {}, {}
        for key, raw in values.items():
            raw = str(raw).strip()
            if key in train_names:
                train_kw[key] = raw
            elif key in WORLD_KEYS:
                world_kw[key] = raw
            elif key in run_names:
                run_kw[key] = raw
            else:
                raise ConfigError(f"unknown config key: {key}")
        run = {}
        for f in fields(cls):
            if f.name not in run_kw:
                continue
            raw = run_kw[f.name]
            if f.name == "mix_ratio":
                a, sep, b = raw.partition(":")
                if not sep:
                    raise ConfigError("mix_ratio must look like 1:2")
                run[f.name] = (int(a), int(b))
            elif f.name in ("preset", "mode"):
                run[f.name] = raw
            else:
                run[f.name] = _coerce(raw, type(f.default), f.name)
        preset = run.get("preset", "table7")
        base = TrainConfig.desk() if preset == "desk" else TrainConfig()
        typed = {}
        for f in fields(TrainConfig):
            if f.name in train_kw:
                typed[f.name] = _coerce(train_kw[f.name], type(getattr(base, f.name)), f.name)
        try:
            train = replace(base, **typed)
            world = WorldConfig.from_mapping(world_kw)
        except InvalidTask as exc:
            raise ConfigError(str(exc)) from exc
        return cls(train=train, world=world, **run)

    @classmethod
    def from_file(cls, path, overrides: Optional[Mapping[str, str]] = None) -> "RunConfig":
        """Read a config file; ``overrides`` (from command-line flags) win over file values."""
        text = Path(path).read_text()
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string("[root]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        values = dict(parser["root"])
        values.update(overrides or {})
        return cls.from_mapping(values)

    def to_text(self) -> str:
        lines = [f"preset = {self.preset}"]
        for f in fields(self):
            if f.name in ("train", "world", "preset"):
                continue
            v = getattr(self, f.name)
            if f.name == "mix_ratio":
                v = f"{v[0]}:{v[1]}"
            lines.append(f"{f.name} = {v}")
        for k, v in asdict(self.train).items():
            lines.append(f"{k} = {v}")
        lines.append(self.world.to_text().strip())
        return "\n".join(lines) + "\n"


def _coerce(raw: str, kind: type, name: str):
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
