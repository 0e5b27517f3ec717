"""Run configuration: nested dataclasses with dotted-key overrides."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

ENVS = ("pendulum", "lqr")
SHAP_MODES = ("kme", "cme", "off")
ADVANTAGE_TARGETS = ("compatible", "td")


class ConfigError(ValueError):
    """Invalid configuration key or value."""


@dataclass
class ActorConfig:
    base: float = 1.0
    exponent: float = 0.75
    dict_size: int = 384
    cov_init: float = 0.35
    cov_final: float = 0.25


@dataclass
class CriticConfig:
    base: float = 0.01
    exponent: float = 0.5
    dict_size: int = 384
    ridge: float = 1e-3
    advantage: str = "compatible"
    advantage_ridge: float = 1e-4


@dataclass
class KernelConfig:
    rbf_variance: float = 0.8  # squared lengthscale
    eps0: float = 1e-2
    residual_threshold: float | None = None


@dataclass
class ShapConfig:
    mode: str = "kme"
    buffer: int = 256
    cme_ridge: float = 1e-2
    n_perms: int = 256
    scale: float | None = None  # None -> 1 / lengthscale**2


@dataclass
class GapConfig:
    every: int = 10
    rollouts: int = 64
    horizon: int = 2000


@dataclass
class RunConfig:
    env: str = "pendulum"
    epochs: int = 2000
    gamma: float = 0.99
    seed: int = 0
    noise_var: float = 0.0
    eval_episodes: int = 5
    horizon: int | None = None  # None -> environment default
    two_timescale: bool = True
    actor: ActorConfig = field(default_factory=ActorConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    shap: ShapConfig = field(default_factory=ShapConfig)
    gap: GapConfig = field(default_factory=GapConfig)

    @property
    def lengthscale(self) -> float:
        return math.sqrt(self.kernel.rbf_variance)

    def validate(self) -> "RunConfig":
        def need(ok, key, msg):
            if not ok:
                raise ConfigError(f"{key}: {msg}")

        need(self.env in ENVS, "env", f"must be one of {', '.join(ENVS)}")
        need(self.epochs >= 0, "epochs", "must be >= 0")
        need(0.0 < self.gamma < 1.0, "gamma", "must lie in (0, 1)")
        need(self.noise_var >= 0, "noise_var", "must be >= 0")
        need(self.eval_episodes >= 1, "eval_episodes", "must be >= 1")
        need(self.horizon is None or self.horizon >= 1, "horizon", "must be >= 1")
        for name, sub in (("actor", self.actor), ("critic", self.critic)):
            need(sub.base > 0, f"{name}.base", "must be > 0")
            need(sub.exponent > 0, f"{name}.exponent", "must be > 0")
            need(sub.dict_size >= 1, f"{name}.dict_size", "must be >= 1")
        if self.two_timescale:
            need(0 < self.critic.exponent < self.actor.exponent <= 1, "critic.exponent",
                 "two-timescale schedule requires 0 < critic.exponent < actor.exponent <= 1")
        need(self.actor.cov_init > 0 and self.actor.cov_final > 0, "actor.cov_init", "covariances must be > 0")
        need(self.critic.ridge >= 0, "critic.ridge", "must be >= 0")
        need(self.critic.base * self.critic.ridge < 1, "critic.ridge", "critic.base * critic.ridge must be < 1")
        need(self.critic.advantage in ADVANTAGE_TARGETS, "critic.advantage",
             f"must be one of {', '.join(ADVANTAGE_TARGETS)}")
        need(self.critic.advantage_ridge >= 0, "critic.advantage_ridge", "must be >= 0")
        need(self.kernel.rbf_variance > 0, "kernel.rbf_variance", "must be > 0")
        need(self.kernel.eps0 > 0, "kernel.eps0", "must be > 0")
        need(self.shap.mode in SHAP_MODES, "shap.mode", f"must be one of {', '.join(SHAP_MODES)}")
        need(self.shap.buffer >= 2, "shap.buffer", "must be >= 2")
        need(self.shap.cme_ridge > 0, "shap.cme_ridge", "must be > 0")
        need(self.shap.n_perms >= 1, "shap.n_perms", "must be >= 1")
        need(self.shap.scale is None or self.shap.scale > 0, "shap.scale", "must be > 0")
        need(self.gap.every >= 1, "gap.every", "must be >= 1")
        need(self.gap.rollouts >= 2, "gap.rollouts", "must be >= 2")
        need(self.gap.horizon >= 1, "gap.horizon", "must be >= 1")
        return self

    # -- dotted access --------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}

        def walk(obj, prefix):
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                if dataclasses.is_dataclass(v):
                    walk(v, prefix + f.name + ".")
                else:
                    out[prefix + f.name] = v

        walk(self, "")
        return out

    def set(self, key: str, value) -> "RunConfig":
        parts = key.split(".")
        obj = self
        for p in parts[:-1]:
            sub = getattr(obj, p, None) if p in _field_names(obj) else None
            if not dataclasses.is_dataclass(sub):
                raise ConfigError(f"{key}: unknown key")
            obj = sub
        name = parts[-1]
        if name not in _field_names(obj) or dataclasses.is_dataclass(getattr(obj, name)):
            raise ConfigError(f"{key}: unknown key")
        setattr(obj, name, _coerce(key, _field_type(obj, name), value))
        return self

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        out = RunConfig.from_dict(self.to_dict())
        for k, v in overrides.items():
            out.set(k, v)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        for k, v in _flatten(data).items():
            cfg.set(k, v)
        return cfg


def _field_names(obj) -> set[str]:
    return {f.name for f in dataclasses.fields(obj)}


def _field_type(obj, name: str) -> str:
    for f in dataclasses.fields(obj):
        if f.name == name:
            return f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raise KeyError(name)


def _coerce(key: str, typ: str, value):
    optional = "None" in typ
    base = typ.replace("| None", "").replace("None |", "").strip()
    if isinstance(value, str):
        text = value.strip()
        if optional and text.lower() in ("none", "null", ""):
            return None
    elif value is None:
        if optional:
            return None
        raise ConfigError(f"{key}: may not be null")
    try:
        if base == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if base == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(float(value)) if isinstance(value, str) and "e" in value.lower() else int(value)
        if base == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r} as {base}") from None


def _flatten(data: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in data.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[prefix + k] = v
    return out


def parse_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"{text}: expected key=value")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def load_config(path: str | Path) -> RunConfig:
    """Read a JSON document or a flat ``key = value`` file (``#`` comments)."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        return RunConfig.from_dict(data)
    cfg = RunConfig()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            cfg.set(*parse_assignment(line))
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Flat ``key = value`` rendering that :func:`load_config` reads back."""
    lines = []
    for k, v in cfg.flat().items():
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


def default_config(env: str = "pendulum", **overrides) -> RunConfig:
    cfg = RunConfig(env=env)
    for k, v in overrides.items():
        cfg.set(k.replace("__", "."), v)
    return cfg
