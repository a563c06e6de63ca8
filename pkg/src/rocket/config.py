"""Experiment configuration: dataclasses plus an INI-style file format.

A config file has the sections ``run``, ``arch``, ``hint``, ``kd``,
``optimizer``, ``schedule``, ``data`` and ``paths``.  Keys map one-to-one
onto dataclass fields (``hint.lambda`` is the one alias, for ``lam``).
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from rocket.data import SynthSpec
from rocket.errors import SpecError
from rocket.model import ArchSpec
from rocket.objective import HintLossSpec
from rocket.optimizer import LrSchedule


class TrainMode(str, Enum):
    BASE = "base"
    BOOSTER_ONLY = "booster_only"
    ROCKET = "rocket"
    ROCKET_NO_GB = "rocket_no_gb"
    ROCKET_NO_SHARING = "rocket_no_sharing"
    ROCKET_NO_JOINT = "rocket_no_joint"
    ROCKET_PLUS_KD = "rocket_plus_kd"

    @property
    def needs_teacher(self) -> bool:
        return self in (TrainMode.ROCKET_NO_JOINT, TrainMode.ROCKET_PLUS_KD)


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class KdConfig:
    weight: float = 1.0
    temperature: float = 4.0


@dataclass(frozen=True)
class DataConfig:
    """Either a synthetic spec (``task`` + sizes) or explicit files."""

    task: str = "spirals"  # blobs | spirals | ctr | csv | cifar10
    seed: int = 0
    n_classes: int = 2
    dim: int = 2
    n_train: int = 10000
    n_val: int = 1000
    n_test: int = 2000
    noise: float = 0.2
    turns: float = 1.5
    label_noise: float = 0.0
    pos_rate: float = 0.1
    n_groups: int = 100
    user_dim: int = 4
    train_file: str = ""  # csv, or comma-separated CIFAR batch files
    val_file: str = ""
    test_file: str = ""

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            task=self.task, n_classes=self.n_classes, dim=self.dim, n_train=self.n_train,
            n_val=self.n_val, n_test=self.n_test, noise=self.noise, turns=self.turns, label_noise=self.label_noise,
            pos_rate=self.pos_rate, n_groups=self.n_groups, user_dim=self.user_dim,
        )

    def files(self) -> list[str]:
        out = []
        for f in (self.train_file, self.val_file, self.test_file):
            out.extend(p.strip() for p in f.split(",") if p.strip())
        return out


@dataclass(frozen=True)
class PathsConfig:
    log: str = ""
    checkpoint: str = ""
    best_checkpoint: str = ""
    booster_checkpoint: str = ""  # pretrained teacher for no_joint / plus_kd


@dataclass(frozen=True)
class TrainConfig:
    mode: TrainMode = TrainMode.ROCKET
    arch: ArchSpec = ArchSpec(input_dim=2, n_classes=2, shared=(16,), light=(16,),
                              booster=(64,) * 5)
    hint: HintLossSpec = HintLossSpec()
    kd: KdConfig = KdConfig()
    optimizer: OptimConfig = OptimConfig()
    schedule: LrSchedule = LrSchedule(initial=0.01, factor=0.2, milestones=(15, 30, 40))
    data: DataConfig = DataConfig()
    paths: PathsConfig = PathsConfig()
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    shuffle_seed: Optional[int] = None  # defaults to seed
    wall_clock: bool = False  # adds a non-deterministic "seconds" field to log rows
    gradient_block: Optional[bool] = None  # None: decided by the mode

    def __post_init__(self):
        object.__setattr__(self, "mode", TrainMode(self.mode))

    @property
    def batch_seed(self) -> int:
        return self.seed if self.shuffle_seed is None else self.shuffle_seed

    def validate(self) -> "TrainConfig":
        self.arch.validate()
        self.hint.validate()
        if self.epochs < 1:
            raise SpecError("epochs must be at least 1")
        if self.batch_size < 1:
            raise SpecError("batch_size must be at least 1")
        if self.kd.temperature <= 0:
            raise SpecError("kd temperature must be positive")
        if self.optimizer.kind not in ("sgd", "adam"):
            raise SpecError(f"unknown optimizer {self.optimizer.kind!r}")
        if self.data.task not in ("blobs", "spirals", "ctr", "csv", "cifar10"):
            raise SpecError(f"unknown data task {self.data.task!r}")
        if self.data.task in ("blobs", "spirals", "ctr"):
            self.data.synth_spec().validate()
        elif not self.data.train_file:
            raise SpecError(f"data task {self.data.task} needs data.train_file")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# dict / file round trip

_SECTIONS = {
    "arch": ArchSpec,
    "hint": HintLossSpec,
    "kd": KdConfig,
    "optimizer": OptimConfig,
    "schedule": LrSchedule,
    "data": DataConfig,
    "paths": PathsConfig,
}
_RUN_KEYS = ("mode", "epochs", "batch_size", "seed", "shuffle_seed", "wall_clock", "gradient_block")
_ALIASES = {("hint", "lambda"): "lam"}
_REVERSE_ALIASES = {(s, v): k for (s, k), v in _ALIASES.items()}


class ConfigError(SpecError):
    """Bad config text; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        loc = "" if line is None else f"line {line}" + ("" if column is None else f", column {column}") + ": "
        super().__init__(loc + message)


def _plain(v: Any) -> Any:
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, tuple):
        return list(v)
    return v


def config_to_dict(cfg: TrainConfig) -> dict:
    out: dict[str, dict] = {"run": {k: _plain(getattr(cfg, k)) for k in _RUN_KEYS}}
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        out[section] = {
            _REVERSE_ALIASES.get((section, f.name), f.name): _plain(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
        }
    return out


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(text: str, default: Any, name: str, type_hint: str) -> Any:
    text = text.strip()
    try:
        if "Optional" in type_hint and text.lower() in ("", "none", "null"):
            return None
        if "bool" in type_hint:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if "tuple" in type_hint:
            if text.startswith("["):
                items = json.loads(text)
            else:
                items = [t for t in text.replace(",", " ").split()]
            return tuple(int(float(i)) for i in items)
        if "int" in type_hint and "float" not in type_hint:
            return int(text)
        if "float" in type_hint:
            return float(text)
        return text
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _apply_values(values: dict[str, dict[str, str]], base: TrainConfig,
                  lines: Optional[dict] = None) -> TrainConfig:
    lines = lines or {}
    run_fields = _field_types(TrainConfig)
    run_changes: dict[str, Any] = {}
    section_objs = {s: getattr(base, s) for s in _SECTIONS}
    section_changes: dict[str, dict] = {s: {} for s in _SECTIONS}
    for section, items in values.items():
        if section != "run" and section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        for key, text in items.items():
            line = lines.get((section, key))
            if section == "run":
                if key not in _RUN_KEYS:
                    raise ConfigError(f"unknown key run.{key}", line)
                f = run_fields[key]
                default = getattr(base, key)
                hint = str(f.type)
                if key == "mode":
                    try:
                        run_changes[key] = TrainMode(text.strip())
                    except ValueError:
                        raise ConfigError(f"unknown mode {text.strip()!r}", line) from None
                    continue
                try:
                    run_changes[key] = _coerce(text, default, f"run.{key}", hint)
                except ConfigError as exc:
                    raise ConfigError(str(exc), line) from None
                continue
            cls = _SECTIONS[section]
            fname = _ALIASES.get((section, key), key)
            fields = _field_types(cls)
            if fname not in fields or (section, fname) in _REVERSE_ALIASES and key == fname:
                raise ConfigError(f"unknown key {section}.{key}", line)
            try:
                section_changes[section][fname] = _coerce(
                    text, getattr(section_objs[section], fname), f"{section}.{key}", str(fields[fname].type)
                )
            except ConfigError as exc:
                raise ConfigError(str(exc), line) from None
    for section, changes in section_changes.items():
        if changes:
            try:
                section_objs[section] = dataclasses.replace(section_objs[section], **changes)
            except SpecError as exc:
                raise ConfigError(f"[{section}] {exc}") from None
    try:
        return dataclasses.replace(base, **run_changes, **section_objs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Parse INI text onto ``base`` (defaults when omitted)."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.section}.{exc.option}", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", exc.lineno, 1) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"cannot parse {line.strip()!r}", lineno, 1) from None
    lines = _locate(text)
    values = {s: dict(parser.items(s)) for s in parser.sections()}
    return _apply_values(values, base or TrainConfig(), lines)


def _locate(text: str) -> dict:
    out: dict = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out.setdefault((section, None), i)
        elif "=" in line and section is not None and not line.startswith(("#", ";")):
            out.setdefault((section, line.split("=", 1)[0].strip()), i)
    return out


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def apply_overrides(cfg: TrainConfig, overrides: list[str]) -> TrainConfig:
    """Apply ``section.key=value`` strings (``run.`` may be omitted for run keys)."""
    values: dict[str, dict[str, str]] = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if "." in key:
            section, name = key.split(".", 1)
        else:
            section, name = "run", key
        values.setdefault(section, {})[name] = value
    return _apply_values(values, cfg)


def dump_config(cfg: TrainConfig) -> str:
    """INI text that parses back to ``cfg``."""
    lines = []
    for section, items in config_to_dict(cfg).items():
        lines.append(f"[{section}]")
        for key, value in items.items():
            if value is None:
                value = "none"
            elif isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, list):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
