"""TOML pipeline configuration: parsing, defaults, and validation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    env: str = "reach"
    segment_length: int = 60
    seed: int = 0
    rounds: int = 1
    workers: int = 1

    # keyframes
    delta_v: float = 0.005
    k: int = 2
    K: int = 5
    delta_e: float = 0.01
    beta: float = 20.0

    # discriminability
    tau_v: float = 1.0
    tau_t: float = 1.0
    calibrate_scales: bool = True

    # evaluators
    evaluator_mode: str = "scripted"  # scripted | noisy | remote
    base_accuracy: float = 0.7
    context_sensitivity: float = 0.4
    confidence_noise: float = 0.05
    remote_endpoint: str = ""
    remote_model: str = ""
    prompt_dir: str = ""

    # intra-fusion
    crowd_k: int = 5
    alpha: float = 0.5

    # psl
    w_agree: float = 1.0
    w_vlm: float = 0.8
    w_llm: float = 0.8
    w_indecision: float = 0.6
    p: int = 1

    # synthesis
    n_foresight: int = 200
    n_random: int = 100
    max_cf: int = 5
    l1_threshold: float | None = None

    # reward
    learning_rate: float = 3e-4
    batch_size: int = 32
    epochs: int = 20
    lambda_cf: float | None = None
    ensemble_size: int = 3
    hidden: tuple[int, ...] = (256, 256, 256)
    n_pairs: int = 500
    n_query: int = 100

    _SECTIONS = {
        "experiment": ("env", "segment_length", "seed", "rounds", "workers"),
        "keyframes": ("delta_v", "k", "K", "delta_e", "beta"),
        "discriminability": ("tau_v", "tau_t", "calibrate_scales"),
        "evaluators": ("evaluator_mode", "base_accuracy", "context_sensitivity",
                       "confidence_noise", "remote_endpoint", "remote_model",
                       "prompt_dir"),
        "intra_fusion": ("crowd_k", "alpha"),
        "psl": ("w_agree", "w_vlm", "w_llm", "w_indecision", "p"),
        "synthesis": ("n_foresight", "n_random", "max_cf", "l1_threshold"),
        "reward": ("learning_rate", "batch_size", "epochs", "lambda_cf",
                   "ensemble_size", "hidden", "n_pairs", "n_query"),
    }

    @classmethod
    def from_toml(cls, path) -> "PipelineConfig":
        with open(path, "rb") as f:
            data = tomllib.load(f)
        cfg = cls()
        for section, keys in cls._SECTIONS.items():
            block = data.get(section, {})
            for key, value in block.items():
                if key not in keys:
                    raise ConfigError(f"[{section}] has unknown key {key!r}")
                if key == "hidden":
                    value = tuple(value)
                setattr(cfg, key, value)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        from .synthesis import ENVS

        if self.env not in ENVS:
            raise ConfigError(f"unknown env {self.env!r}; choose from {sorted(ENVS)}")
        if self.evaluator_mode not in ("scripted", "noisy", "remote"):
            raise ConfigError(f"unknown evaluator_mode {self.evaluator_mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0,1]")
        if self.p not in (1, 2):
            raise ConfigError("p must be 1 or 2")
        if min(self.crowd_k, self.n_foresight, self.max_cf, self.n_pairs,
               self.epochs, self.batch_size) < 1:
            raise ConfigError("counts must be positive")
        if any(w < 0 for w in (self.w_agree, self.w_vlm, self.w_llm, self.w_indecision)):
            raise ConfigError("rule weights must be nonnegative")
        if self.evaluator_mode == "remote":
            if not self.remote_endpoint:
                raise ConfigError("remote mode requires remote_endpoint")
            if not self.prompt_dir or not os.path.isdir(self.prompt_dir):
                raise ConfigError(f"prompt_dir {self.prompt_dir!r} does not exist")
            for name in ("language_preference.txt", "vision_preference.txt"):
                if not os.path.isfile(os.path.join(self.prompt_dir, name)):
                    raise ConfigError(f"missing prompt asset {name!r} in {self.prompt_dir!r}")
