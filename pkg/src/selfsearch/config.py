"""Flat dotted-key JSON configuration.

A config file is one JSON object whose keys are dotted paths, e.g.

    {"search.budget": 24, "train.step_size": 0.1}

Unknown keys and wrongly typed values raise ConfigError naming the key, so
typos fail loudly instead of silently running defaults. Builder functions
turn a loaded config into the dataclasses the engine modules consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .agents import SimAgentParams
from .bandit import DepthSchedule
from .core import ConfigError
from .environment import Evaluator, get_evaluator
from .experiment import ExperimentConfig
from .rl import LossParams
from .search import SearchConfig

# Default pool: a drafter/repairer pair with complementary roles. The
# drafter samples the hidden back half well but rarely acts on feedback;
# the repairer drafts at chance-plus but fixes named failures almost
# surely. Neither alone matches what search gets from combining them.
_DEFAULT_SPECS: List[Dict[str, object]] = [
    {"skill_base": 0.5, "skill_strong": 0.95, "strong_lo": 0.5,
     "strong_hi": 1.0, "fix_prob": 0.1, "drift_prob": 0.05,
     "trace_len": 4, "logit_scale": 1.0},
    {"skill": 0.55, "fix_prob": 0.95, "drift_prob": 0.02,
     "trace_len": 4, "logit_scale": 1.0},
]

DEFAULTS: Dict[str, object] = {
    "bandit.prior_alpha": 1.0,
    "bandit.prior_beta": 1.0,
    "bandit.gamma1": 0.98,
    "bandit.decay": 0.9,
    "bandit.gamma_min": 0.5,
    "bandit.depth_guidance": True,
    "environment.backend": "synthetic",
    "environment.m": 8,
    "environment.p": 4,
    "agents.specs": _DEFAULT_SPECS,
    "agents.infer_noise": 0.0,
    "agents.remote.timeout_ms": 2000,
    "agents.remote.retries": 0,
    "search.budget": 16,
    "search.feedback": "structured",
    "search.training_mode": False,
    "train.eps_low": 0.2,
    "train.eps_high": 0.28,
    "train.kl_coef": 1e-3,
    "train.l_max": 0,
    "train.l_cache": 0,
    "train.tis_clip": 2.0,
    "train.tis_mode": "ratio",
    "train.std_floor": 1e-6,
    "train.step_size": 0.05,
    "train.records_budget": 0,
    "train.checkpoint_every": 1,
    "dispatch.threshold": 32,
    "dispatch.filter": True,
    "dispatch.async_workers": 0,
    "rm.hint_noise": 0.1,
    "rm.epochs": 200,
    "rm.lr": 0.5,
    "rm.loss": "mse",
    "eval.mcts_budget": 16,
    "eval.final": "vanilla",
    "eval.da_k": 5,
    "eval.gvendi_dim": 32,
    "eval.rm_train_tasks": 0,
    "experiment.mode": "heter",
    "experiment.num_roles": 2,
    "experiment.num_tasks": 16,
    "experiment.seed": 0,
}

_SPEC_FIELDS = {
    "skill": (float, list),
    "skill_base": (float,),
    "skill_strong": (float,),
    "strong_lo": (float,),
    "strong_hi": (float,),
    "fix_prob": (float,),
    "drift_prob": (float,),
    "trace_len": (int,),
    "logit_scale": (float,),
}


@dataclass(frozen=True)
class AppConfig:
    """Validated key-value view over defaults plus user overrides."""

    values: Mapping[str, object]

    def __getitem__(self, key: str) -> object:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def override(self, **pairs: object) -> "AppConfig":
        updates = {k.replace("__", "."): v for k, v in pairs.items()}
        return from_dict({**_user_view(self.values), **updates})


def _user_view(values: Mapping[str, object]) -> Dict[str, object]:
    return {k: v for k, v in values.items()}


def _check_type(key: str, value: object, default: object) -> object:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} expects a bool")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} expects an int")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} expects a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} expects a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"config key {key!r} expects a list")
        return value
    raise ConfigError(f"config key {key!r} has unsupported default type")


def _check_spec(spec: object, index: int) -> Dict[str, object]:
    if not isinstance(spec, dict):
        raise ConfigError(f"agents.specs[{index}] must be an object")
    out: Dict[str, object] = {}
    for key, value in spec.items():
        if key not in _SPEC_FIELDS:
            raise ConfigError(f"agents.specs[{index}] has unknown field {key!r}")
        kinds = _SPEC_FIELDS[key]
        if float in kinds and isinstance(value, (int, float)) \
                and not isinstance(value, bool):
            out[key] = float(value)
        elif int in kinds and isinstance(value, int) \
                and not isinstance(value, bool):
            out[key] = value
        elif list in kinds and isinstance(value, list):
            out[key] = [float(x) for x in value]
        else:
            raise ConfigError(
                f"agents.specs[{index}].{key} has the wrong type")
    has_vector = "skill" in out
    has_region = any(k in out for k in
                     ("skill_base", "skill_strong", "strong_lo", "strong_hi"))
    if has_vector and has_region:
        raise ConfigError(
            f"agents.specs[{index}] mixes 'skill' with region fields")
    if not has_vector and not has_region:
        raise ConfigError(
            f"agents.specs[{index}] needs 'skill' or region fields")
    return out


def from_dict(user: Mapping[str, object]) -> AppConfig:
    values: Dict[str, object] = dict(DEFAULTS)
    for key, value in user.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "agents.specs":
            if not isinstance(value, list) or not value:
                raise ConfigError("agents.specs must be a non-empty list")
            values[key] = [_check_spec(s, i) for i, s in enumerate(value)]
        else:
            values[key] = _check_type(key, value, DEFAULTS[key])
    return AppConfig(values=values)


def load_config(path: Optional[str]) -> AppConfig:
    """Load a JSON config file; None means all defaults."""
    if path is None:
        return from_dict({})
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path!r} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path!r} must hold a JSON object")
    return from_dict(data)


def resolve_skill(spec: Mapping[str, object], m: int) -> np.ndarray:
    """Turn one agent spec into a length-m skill profile.

    Either an explicit per-bit vector ('skill'), or a base level with one
    stronger region given as fractions of the index range, e.g.
    strong_lo=0.0, strong_hi=0.5 boosts the first half of the bits.
    """
    if "skill" in spec:
        sk = spec["skill"]
        if isinstance(sk, float):
            return np.full(m, sk)
        arr = np.asarray(sk, dtype=float)
        if arr.shape != (m,):
            raise ConfigError(
                f"skill vector has length {arr.size}, expected {m}")
        return arr
    base = float(spec.get("skill_base", 0.55))
    strong = float(spec.get("skill_strong", 0.95))
    lo = float(spec.get("strong_lo", 0.0))
    hi = float(spec.get("strong_hi", 1.0))
    if not 0.0 <= lo <= hi <= 1.0:
        raise ConfigError("strong_lo/strong_hi must satisfy 0 <= lo <= hi <= 1")
    profile = np.full(m, base)
    i0 = int(round(lo * m))
    i1 = int(round(hi * m))
    profile[i0:i1] = strong
    return profile


def agent_params_list(cfg: AppConfig) -> List[SimAgentParams]:
    m = int(cfg["environment.m"])
    out = []
    for spec in cfg["agents.specs"]:
        out.append(SimAgentParams(
            skill=resolve_skill(spec, m),
            fix_prob=float(spec.get("fix_prob", 0.8)),
            drift_prob=float(spec.get("drift_prob", 0.05)),
            trace_len=int(spec.get("trace_len", 4)),
            logit_scale=float(spec.get("logit_scale", 1.0)),
        ))
    return out


def depth_schedule(cfg: AppConfig) -> DepthSchedule:
    return DepthSchedule(
        gamma1=float(cfg["bandit.gamma1"]),
        decay=float(cfg["bandit.decay"]),
        gamma_min=float(cfg["bandit.gamma_min"]),
    )


def search_config(cfg: AppConfig) -> SearchConfig:
    return SearchConfig(
        budget=int(cfg["search.budget"]),
        feedback_mode=str(cfg["search.feedback"]),
        training_mode=bool(cfg["search.training_mode"]),
        depth_guidance=bool(cfg["bandit.depth_guidance"]),
        prior_alpha=float(cfg["bandit.prior_alpha"]),
        prior_beta=float(cfg["bandit.prior_beta"]),
        schedule=depth_schedule(cfg),
    )


def loss_params(cfg: AppConfig) -> LossParams:
    return LossParams(
        eps_low=float(cfg["train.eps_low"]),
        eps_high=float(cfg["train.eps_high"]),
        kl_coef=float(cfg["train.kl_coef"]),
        l_max=int(cfg["train.l_max"]),
        l_cache=int(cfg["train.l_cache"]),
        tis_clip=float(cfg["train.tis_clip"]),
        tis_mode=str(cfg["train.tis_mode"]),
        std_floor=float(cfg["train.std_floor"]),
    )


def experiment_config(cfg: AppConfig,
                      seed: Optional[int] = None,
                      mode: Optional[str] = None) -> ExperimentConfig:
    return ExperimentConfig(
        mode=mode if mode is not None else str(cfg["experiment.mode"]),
        agent_params=agent_params_list(cfg),
        num_roles=int(cfg["experiment.num_roles"]),
        m=int(cfg["environment.m"]),
        p=int(cfg["environment.p"]),
        num_tasks=int(cfg["experiment.num_tasks"]),
        seed=seed if seed is not None else int(cfg["experiment.seed"]),
        search=search_config(cfg),
        loss=loss_params(cfg),
        threshold=int(cfg["dispatch.threshold"]),
        step_size=float(cfg["train.step_size"]),
        records_budget=int(cfg["train.records_budget"]),
        checkpoint_every=int(cfg["train.checkpoint_every"]),
        infer_noise=float(cfg["agents.infer_noise"]),
        eval_budget=int(cfg["eval.mcts_budget"]),
        eval_final=str(cfg["eval.final"]),
        rm_train_tasks=int(cfg["eval.rm_train_tasks"]),
        rm_hint_noise=float(cfg["rm.hint_noise"]),
        rm_loss=str(cfg["rm.loss"]),
        rm_lr=float(cfg["rm.lr"]),
        rm_epochs=int(cfg["rm.epochs"]),
        da_k=int(cfg["eval.da_k"]),
        gvendi_dim=int(cfg["eval.gvendi_dim"]),
    )


def evaluator(cfg: AppConfig) -> Evaluator:
    return get_evaluator(str(cfg["environment.backend"]))
