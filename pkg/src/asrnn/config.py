"""Experiment configuration as flat ``key=value`` text."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .cells import ScaleMode


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str = "signal-id"
    cell: str = "gru"
    mode: str = "adaptive"
    scale_j: int = -1  # fixed-mode scale; -1 means J-1
    J: int = 4
    K: int = 8
    tau: float = 0.1
    hidden: int = 64
    match_params: bool = False  # non-adaptive models resize to the adaptive weight count
    lr: float = 0.001
    decay: float = 0.9
    eps: float = 1e-8
    iters: int = 1000
    eval_every: int = 100
    batch: int = 1
    eval_batch: int = 100
    eval_limit: int = 0  # 0 evaluates the whole eval set
    seed: int = 0
    hard_forward: bool = False
    eval_argmax_scale: bool = False
    wallclock: bool = False

    def validate(self):
        if self.task not in ("signal-id", "copy"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.cell not in ("lstm", "gru"):
            raise ConfigError(f"unknown cell {self.cell!r}")
        if self.mode not in ("adaptive", "fixed", "vanilla"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("J", "K", "hidden", "batch", "eval_batch", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.iters < 0 or self.eval_limit < 0:
            raise ConfigError("iters and eval_limit must be >= 0")
        if self.mode == "fixed" and not 0 <= self.fixed_scale < self.J:
            raise ConfigError(f"fixed scale {self.scale_j} outside [0, {self.J})")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not (self.lr > 0 and 0 <= self.decay < 1 and self.eps >= 0):
            raise ConfigError("need lr > 0, 0 <= decay < 1, eps >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        return self

    @property
    def fixed_scale(self):
        return self.J - 1 if self.scale_j < 0 else self.scale_j

    def scale_mode(self):
        return ScaleMode.parse(self.mode, self.fixed_scale)

    def to_text(self):
        return "\n".join(f"{k}={_format(v)}" for k, v in asdict(self).items()) + "\n"

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        cfg.update(parse_pairs(text.splitlines()))
        return cfg

    def update(self, pairs):
        types = {f.name: f.type for f in fields(self)}
        for key, raw in pairs.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, raw, types[key]))
        return self


def parse_pairs(lines):
    pairs = {}
    for number, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in ("bool", bool):
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw
