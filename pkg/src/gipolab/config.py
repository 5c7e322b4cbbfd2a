"""Run configuration schema (YAML on disk)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import surrogate as sg


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SurrogateConfig(_Strict):
    kind: Literal["gipo", "ppo_clip", "sapo", "no_clip"]
    sigma: float = Field(1.0, gt=0)
    eps: float = Field(0.2, gt=0, lt=1)
    tau_pos: float = Field(2.0, gt=0)
    tau_neg: float = Field(1.0, gt=0)

    def build(self) -> sg.SurrogateKind:
        if self.kind == "gipo":
            return sg.GIPO(self.sigma)
        if self.kind == "ppo_clip":
            return sg.PPOClip(self.eps)
        if self.kind == "sapo":
            return sg.SAPO(self.tau_pos, self.tau_neg)
        return sg.NoClip()


class RegimeConfig(_Strict):
    num_actors: int = Field(16, ge=1)
    segment_length: int = Field(8, ge=1)
    replay_capacity: int = Field(50_000, ge=1)
    t_old: int = Field(10_000, ge=0)
    sampling: Literal["uniform"] = "uniform"
    updates_per_tick: int = Field(1, ge=1)
    mode: Literal["deterministic", "threaded"] = "deterministic"

    @classmethod
    def fresh(cls, **kw) -> "RegimeConfig":
        return cls(num_actors=16, **kw)

    @classmethod
    def stale(cls, **kw) -> "RegimeConfig":
        return cls(num_actors=2, **kw)


class LearnerConfig(_Strict):
    surrogate: SurrogateConfig
    gamma: float = Field(0.99, gt=0, lt=1)
    lam: float = Field(0.95, ge=0, le=1)
    value_coef: float = Field(0.5, ge=0)
    entropy_coef: float = Field(0.0, ge=0)
    policy_lr: float = Field(3e-6, gt=0)
    value_lr: float = Field(3e-5, gt=0)
    batch_size: int = Field(64, ge=1)
    iterations: int = Field(1000, ge=1)
    target: Literal["gae", "vtrace"] = "gae"
    rho_bar: float = Field(1.0, gt=0)
    c_bar: float = Field(1.0, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    normalize_advantages: bool = False
    max_grad_norm: Optional[float] = Field(None, gt=0)
    hidden: Tuple[int, ...] = (64, 64)
    rho_min: float = Field(1e-6, gt=0)
    rho_max: float = Field(1e6, gt=0)
    min_buffer: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.rho_bar < self.c_bar:
            raise ValueError("rho_bar must be >= c_bar")
        if self.rho_min >= self.rho_max:
            raise ValueError("rho_min must be < rho_max")
        return self


class EnvConfig(_Strict):
    name: Literal["gridworld"] = "gridworld"
    rows: int = Field(4, ge=1)
    cols: int = Field(4, ge=2)
    max_steps: int = Field(50, ge=1)


class RunConfig(_Strict):
    regime: RegimeConfig
    learner: LearnerConfig
    env: EnvConfig
    seeds: List[int] = [0]
    output_dir: str = "runs/default"
    log_every: int = Field(10, ge=1)
    checkpoint_every: int = Field(0, ge=0)
    tags: dict = {}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        return json.loads(self.model_dump_json())


class ConfigError(ValueError):
    pass


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from None


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("invalid config: top level must be a mapping")
    return parse_config(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
