"""Flat ``key = value`` run configuration.

One assignment per line, ``#`` starts a comment, lists are comma separated.
Every key has a typed default; unknown keys are rejected.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

from .losses import DEFAULT_LAMBDAS, LossWeights
from .model import DEFAULT_CHANNELS, ModelConfig
from .optim import AdamWState, CosineSchedule

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "data.dir": "",
    "data.synthetic": 0,
    "data.seed": 0,
    "data.split_ratio": 0.7,
    "data.augment": True,
    "data.rotation": "right_angle",
    "image.size": 256,
    "train.epochs": 300,
    "train.batch_size": 8,
    "train.ckpt_every": 50,
    "train.record_time": True,
    "optim.lr": 1e-3,
    "optim.beta1": 0.9,
    "optim.beta2": 0.999,
    "optim.eps": 1e-8,
    "optim.weight_decay": 1e-2,
    "sched.t_max": 50,
    "sched.eta_min": 1e-5,
    "sched.restarts": False,
    "loss.lambdas": DEFAULT_LAMBDAS,
    "model.channels": DEFAULT_CHANNELS,
    "model.dw_style": "separable",
    "ghpa.multi_axis": True,
    "ghpa.dw_on_p": True,
    "gab.use_mask": True,
    "gab.use_dilation": True,
    "gab.group_conv": "separable",
    "eval.threshold": 0.5,
}

_LIST_ITEM = {"loss.lambdas": float, "model.channels": int}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}", key)


def parse_value(key: str, raw: str) -> Any:
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}", key)
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if key in _LIST_ITEM:
            items = [s.strip() for s in raw.strip("[]").split(",") if s.strip()]
            return tuple(_LIST_ITEM[key](s) for s in items)
        if isinstance(default, bool):
            return _parse_bool(raw, key)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})", key) from exc
    return raw


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    """Resolved run configuration; attribute-style access via ``cfg["dotted.key"]``."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self.values = dict(DEFAULTS)
        for key, value in (values or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}", key)
            self.values[key] = parse_value(key, format_value(value))
        self._validate()

    def _validate(self) -> None:
        v = self.values
        if not 0.0 < v["data.split_ratio"] <= 1.0:
            raise ConfigError("data.split_ratio must be in (0, 1]", "data.split_ratio")
        for k in ("train.epochs", "train.batch_size", "train.ckpt_every", "image.size", "sched.t_max"):
            if v[k] <= 0:
                raise ConfigError(f"{k} must be positive", k)
        if v["data.rotation"] not in ("right_angle", "continuous", "none"):
            raise ConfigError("data.rotation must be right_angle, continuous or none", "data.rotation")
        try:
            self.model_config()
            self.loss_weights()
            self.schedule()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    def with_values(self, updates: Mapping[str, Any]) -> "RunConfig":
        vals = dict(self.values)
        vals.update(updates)
        return RunConfig(vals)

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            channels=v["model.channels"],
            input_size=v["image.size"],
            dw_style=v["model.dw_style"],
            multi_axis=v["ghpa.multi_axis"],
            dw_on_p=v["ghpa.dw_on_p"],
            use_mask=v["gab.use_mask"],
            use_dilation=v["gab.use_dilation"],
            gab_group_conv=v["gab.group_conv"],
            seed=v["seed"],
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.values["loss.lambdas"])

    def schedule(self) -> CosineSchedule:
        v = self.values
        return CosineSchedule(v["optim.lr"], v["sched.eta_min"], v["sched.t_max"], v["sched.restarts"])

    def optimizer(self) -> AdamWState:
        v = self.values
        return AdamWState(lr=v["optim.lr"], beta1=v["optim.beta1"], beta2=v["optim.beta2"],
                          eps=v["optim.eps"], weight_decay=v["optim.weight_decay"])

    def dumps(self) -> str:
        return "".join(f"{k} = {format_value(self.values[k])}\n" for k in sorted(self.values))


def parse_config(text: str) -> RunConfig:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, raw)
    return RunConfig(values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.dumps(), encoding="utf-8")
