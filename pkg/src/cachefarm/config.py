"""Run configuration: defaults, validation, flat-file parsing.

Config files are plain ``key = value`` lines with ``#`` comments. Flags
given on the command line override file keys. Unknown keys are errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

from .demand import ChangeModel
from .policies import Myopic, PolicyKind, StaticLearning, parse_policy

__all__ = ["ConfigError", "SimConfig", "parse_config_file", "build_sim_config",
           "config_to_dict", "config_from_dict", "SIM_KEYS", "EXPERIMENT_KEYS"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and the constraint."""


@dataclass(frozen=True)
class SimConfig:
    """Full parameterization of one simulation run."""

    n: int = 500
    alpha: float = 2.0
    lambda_bar: float = 0.9
    beta: float = 1.2
    horizon: float = 5.0
    change_model: ChangeModel = field(default_factory=ChangeModel.none)
    policy: PolicyKind = field(default_factory=Myopic)
    seed: int = 42
    trace: bool = False

    @property
    def m(self) -> int:
        """Catalog size: alpha contents per server, rounded up."""
        return math.ceil(self.alpha * self.n)

    def validate(self) -> "SimConfig":
        if self.n < 1:
            raise ConfigError(f"n: server count must be >= 1, got {self.n}")
        if not self.alpha > 1:
            raise ConfigError(f"alpha: contents-per-server ratio must exceed 1, got {self.alpha}")
        if not self.lambda_bar > 0:
            raise ConfigError(f"lambda_bar: load must be positive, got {self.lambda_bar}")
        if not self.beta > 0:
            raise ConfigError(f"beta: zipf exponent must be > 0, got {self.beta}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon: must be > 0, got {self.horizon}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed: must fit in 64 bits, got {self.seed}")
        return self


SIM_KEYS = {
    "n": int,
    "alpha": float,
    "lambda_bar": float,
    "beta": float,
    "horizon": float,
    "change_model": str,
    "block_period": float,
    "nu": float,
    "policy": str,
    "learn_seconds": float,
    "learn_arrivals": int,
    "seed": int,
    "trace": bool,
}

EXPERIMENT_KEYS = {
    "policies": str,
    "replications": int,
    "sweep": str,
    "sweep_values": str,
    "jobs": int,
}


def _coerce(key: str, raw: Any, typ):
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def parse_config_file(path: str) -> dict[str, str]:
    """Read ``key = value`` lines; comments and blank lines are skipped."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def build_sim_config(settings: dict[str, Any], *, allow_experiment_keys: bool = False) -> SimConfig:
    """Build and validate a SimConfig from merged key/value settings."""
    known = dict(SIM_KEYS)
    if allow_experiment_keys:
        known.update(EXPERIMENT_KEYS)
    unknown = sorted(set(settings) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    vals = {k: _coerce(k, v, SIM_KEYS[k]) for k, v in settings.items() if k in SIM_KEYS}

    kind = vals.pop("change_model", "none")
    try:
        if kind == "none":
            change = ChangeModel.none()
        elif kind == "block":
            if "block_period" not in vals:
                raise ConfigError("block_period: required for change_model = block")
            change = ChangeModel.block(vals["block_period"])
        elif kind == "continuous":
            if "nu" not in vals:
                raise ConfigError("nu: required for change_model = continuous")
            change = ChangeModel.continuous(vals["nu"])
        else:
            raise ConfigError(f"change_model: expected none|block|continuous, got {kind!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    vals.pop("block_period", None)
    vals.pop("nu", None)

    token = vals.pop("policy", "myopic")
    try:
        policy = parse_policy(token, vals.pop("learn_seconds", None), vals.pop("learn_arrivals", None))
    except ValueError as exc:
        raise ConfigError(f"policy: {exc}") from None

    cfg = SimConfig(change_model=change, policy=policy, **vals)
    return cfg.validate()


def config_to_dict(cfg: SimConfig) -> dict[str, Any]:
    """JSON-friendly view; round-trips through :func:`config_from_dict`."""
    out: dict[str, Any] = {
        "n": cfg.n,
        "alpha": cfg.alpha,
        "lambda_bar": cfg.lambda_bar,
        "beta": cfg.beta,
        "horizon": cfg.horizon,
        "change_model": cfg.change_model.kind,
        "policy": cfg.policy.token,
        "seed": cfg.seed,
        "trace": cfg.trace,
    }
    if cfg.change_model.kind == "block":
        out["block_period"] = cfg.change_model.period
    if cfg.change_model.kind == "continuous":
        out["nu"] = cfg.change_model.nu
    if isinstance(cfg.policy, StaticLearning):
        if cfg.policy.learn_seconds is not None:
            out["learn_seconds"] = cfg.policy.learn_seconds
        else:
            out["learn_arrivals"] = cfg.policy.learn_arrivals
    return out


def config_from_dict(data: dict[str, Any]) -> SimConfig:
    return build_sim_config(dict(data))


def with_overrides(cfg: SimConfig, **kwargs) -> SimConfig:
    return replace(cfg, **kwargs).validate()
