"""Experiment configuration: defaults, YAML loading, and validation.

The config file is a nested key/value document (YAML).  Every physical
and algorithmic constant is a key with its standard value as default,
so an empty file (or no file) reproduces the reference setup.  Unknown
keys are rejected to catch typos.  See README for the full key list.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import yaml

from .env import EnvConfig
from .noise import NOISE_KINDS, NoiseProfile
from .traffic import ConfigError, GeometryConfig, IdmParams
from .trainer import PpoConfig

OUTPUT_DIR_ENV_VAR = "ROUNDABOUT_RL_OUT"


@dataclass
class ExperimentConfig:
    seed: int = 0
    trials: int = 50
    output_dir: str = "out"
    noise_kind: str = "gaussian"
    env: EnvConfig = field(default_factory=EnvConfig)
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"noise kind must be one of {NOISE_KINDS}")
        self.env.validate()
        self.ppo.validate()

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_DIR_ENV_VAR, self.output_dir)


def _build(cls, data: dict, context: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {context}{key}")
        kwargs[key] = value
    return cls(**kwargs)


def _tupled(data: dict, *keys: str) -> dict:
    out = dict(data)
    for key in keys:
        if key in out and isinstance(out[key], list):
            out[key] = tuple(out[key])
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    env_data = dict(data.pop("env", {}))
    idm_data = env_data.pop("idm", {})
    geom_data = env_data.pop("geometry", {})
    noise_data = dict(data.pop("noise", {}))
    noise_kind = noise_data.pop("kind", None)
    ppo_data = _tupled(data.pop("ppo", {}), "hidden_sizes")

    env_data = _tupled(
        env_data,
        "north_group_range", "west_group_range", "north_delay_range", "west_delay_range",
    )
    env = _build(EnvConfig, env_data, "env.")
    env.idm = _build(IdmParams, idm_data, "env.idm.")
    env.geometry = _build(GeometryConfig, geom_data, "env.geometry.")

    cfg = _build(ExperimentConfig, data, "")
    cfg.env = env
    cfg.noise = _build(NoiseProfile, noise_data, "noise.")
    if noise_kind is not None:
        cfg.noise_kind = noise_kind
    cfg.ppo = _build(PpoConfig, ppo_data, "ppo.")
    cfg.validate()
    return cfg


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def plain(obj):
        out = {}
        for f in fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    env = plain(cfg.env)
    env["idm"] = plain(cfg.env.idm)
    env["geometry"] = plain(cfg.env.geometry)
    noise = plain(cfg.noise)
    noise.pop("state_std", None)   # derived from the three std classes
    noise["kind"] = cfg.noise_kind
    return {
        "seed": cfg.seed,
        "trials": cfg.trials,
        "output_dir": cfg.output_dir,
        "env": env,
        "noise": noise,
        "ppo": plain(cfg.ppo),
    }


def dump_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
