"""Flat ``key = value`` configuration with optional ``[section]`` headers.

Keys before any header are shared: stage keys apply to every training stage,
model/data/tta keys to their own group. A key under ``[pretrain]``,
``[stage1]``, ``[stage2]``, ``[model]``, ``[data]`` or ``[tta]`` overrides the
shared value for that section only.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..errors import ConfigError, DataError
from ..forgebench.generate import DataConfig
from ..model import ModelConfig

STAGES = ("pretrain", "stage1", "stage2")


@dataclass(frozen=True)
class StageConfig:
    lr: float = 5e-4
    batch_size: int = 48
    accum: int = 8
    weight_decay: float = 1e-3
    grad_clip: float = 1.0
    epochs: int = 1
    warmup: float = 0.10
    decay: float = 0.10
    alpha: float = 0.85
    gamma: float = 2.0
    epsilon: float = 1.0
    lambda1: float = 5.0
    lambda2: float = 5.0
    lambda3: float = 2.0
    tversky_alpha: float = 0.3
    tversky_beta: float = 0.7
    tversky_smooth: float = 1.0
    freeze_encoder: bool = False


STAGE_DEFAULTS = {
    "pretrain": StageConfig(),
    "stage1": StageConfig(),
    "stage2": StageConfig(batch_size=40, accum=3, weight_decay=5e-2, alpha=0.8),
}


@dataclass(frozen=True)
class TTAConfig:
    tta_lr: float = 1e-4
    tta_batch_size: int = 96
    tta_steps: int = 1
    tta_mode: str = "episodic"
    tta_weight_decay: float = 0.0
    tta_hard_targets: bool = False


@dataclass(frozen=True)
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    stages: dict = field(default_factory=lambda: dict(STAGE_DEFAULTS))
    tta: TTAConfig = field(default_factory=TTAConfig)

    def stage(self, name: str) -> StageConfig:
        return self.stages[name]

    def to_dict(self) -> dict:
        return {
            "data": dataclasses.asdict(self.data),
            "model": dataclasses.asdict(self.model),
            "stages": {k: dataclasses.asdict(v) for k, v in self.stages.items()},
            "tta": dataclasses.asdict(self.tta),
        }


def _field_types(cls) -> dict[str, Any]:
    hints = {}
    for f in fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        hints[f.name] = type(default)
    return hints


def _coerce(key: str, raw: str, kind: type) -> Any:
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


GROUPS = {"data": DataConfig, "model": ModelConfig, "tta": TTAConfig, **{s: StageConfig for s in STAGES}}


def parse_config(text: str) -> Config:
    shared: dict[str, str] = {}
    sections: dict[str, dict[str, str]] = {name: {} for name in GROUPS}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in GROUPS:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        target = shared if current is None else sections[current]
        target[key] = value

    known = set().union(*(_field_types(c) for c in GROUPS.values()))
    for key in shared:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")

    def build(name: str, base):
        types = _field_types(type(base))
        values = {k: v for k, v in shared.items() if k in types}
        for k, v in sections[name].items():
            if k not in types:
                raise ConfigError(f"unknown key {k!r} in [{name}]")
            values[k] = v
        try:
            return replace(base, **{k: _coerce(k, v, types[k]) for k, v in values.items()})
        except (DataError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc

    tta = build("tta", TTAConfig())
    if tta.tta_mode not in ("episodic", "continual"):
        raise ConfigError("tta_mode must be 'episodic' or 'continual'")
    return Config(
        data=build("data", DataConfig()),
        model=build("model", ModelConfig()),
        stages={s: build(s, STAGE_DEFAULTS[s]) for s in STAGES},
        tta=tta,
    )


def load_config(path: Path | None) -> Config:
    if path is None:
        return Config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
