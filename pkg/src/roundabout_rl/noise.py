"""Noise channels between the environment and the learning agent.

Two channel families are supported: fixed Gaussian injection into the
observation and/or action, and a learned adversary that emits a bounded
22-vector whose first two elements perturb the agent's action and whose
remaining twenty perturb selected observation indices.  Both families
perturb only what the agent sees or emits; the environment's true state
is never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import (
    AV_BLOCK,
    AV_POS_INDICES,
    ENTRANCE_DIST_BLOCK,
    INFLOW_BLOCK,
    OBS_SIZE,
    RING_POS_INDICES,
)
from .traffic import ConfigError

NOISE_MODES = ("none", "state", "action", "action_state")
NOISE_KINDS = ("gaussian", "adversarial")

# Observation elements never perturbed by any channel (inflow group sizes).
EXEMPT_INDICES = tuple(range(INFLOW_BLOCK.start, INFLOW_BLOCK.stop))

# Indices the adversary may perturb: the 8 AV feature elements plus the
# 12 entrance-distance elements.
ADVERSARY_TARGETS = tuple(range(AV_BLOCK.start, AV_BLOCK.stop)) + tuple(
    range(ENTRANCE_DIST_BLOCK.start, ENTRANCE_DIST_BLOCK.stop)
)

ADVERSARY_ACTION_SIZE = 2 + len(ADVERSARY_TARGETS)
ADVERSARY_SCALE = 0.1


def _default_state_std(merge_edge_std: float, absolute_pos_std: float, default_std: float) -> np.ndarray:
    std = np.full(OBS_SIZE, default_std)
    std[ENTRANCE_DIST_BLOCK] = merge_edge_std
    for i in AV_POS_INDICES + RING_POS_INDICES:
        std[i] = absolute_pos_std
    std[list(EXEMPT_INDICES)] = 0.0
    return std


@dataclass
class NoiseProfile:
    """Per-element Gaussian stds over the observation, plus the action std.

    Distances measured from the merge edges carry ``merge_edge_std``,
    absolute-position elements carry ``absolute_pos_std``, everything
    else ``default_std``; the inflow-size elements are exempt.
    """

    mode: str = "none"
    action_std: float = 0.5
    merge_edge_std: float = 0.05
    absolute_pos_std: float = 0.02
    default_std: float = 0.1
    state_std: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in NOISE_MODES:
            raise ConfigError(f"noise mode must be one of {NOISE_MODES}, got {self.mode!r}")
        for name, s in (
            ("action_std", self.action_std),
            ("merge_edge_std", self.merge_edge_std),
            ("absolute_pos_std", self.absolute_pos_std),
            ("default_std", self.default_std),
        ):
            if s < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.state_std is None:
            self.state_std = _default_state_std(
                self.merge_edge_std, self.absolute_pos_std, self.default_std
            )
        self.state_std = np.asarray(self.state_std, dtype=float)
        if self.state_std.shape != (OBS_SIZE,):
            raise ConfigError(f"state_std must have length {OBS_SIZE}")
        if np.any(self.state_std < 0):
            raise ConfigError("state stds must be nonnegative")
        if np.any(self.state_std[list(EXEMPT_INDICES)] != 0.0):
            raise ConfigError("exempt observation elements must have zero std")

    @property
    def perturbs_state(self) -> bool:
        return self.mode in ("state", "action_state")

    @property
    def perturbs_action(self) -> bool:
        return self.mode in ("action", "action_state")


def gaussian_perturb_state(
    obs: np.ndarray, profile: NoiseProfile, rng: np.random.Generator
) -> np.ndarray:
    """Add per-element Gaussian noise, then clamp back into [0, 1].

    Exempt elements have zero std and come back bit-identical.
    """
    noise = rng.normal(0.0, profile.state_std)
    return np.clip(obs + noise, 0.0, 1.0)


def gaussian_perturb_action(
    action: np.ndarray, profile: NoiseProfile, rng: np.random.Generator
) -> np.ndarray:
    """Add N(0, action_std^2) per element; the env clips afterwards."""
    return action + rng.normal(0.0, profile.action_std, size=len(action))


def adversarial_perturb(
    obs: np.ndarray,
    action: np.ndarray,
    adv: np.ndarray,
    targets: tuple[int, ...] = ADVERSARY_TARGETS,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply a bounded adversary action to (obs, action).

    ``adv[:2]`` shifts the agent's action elements, ``adv[2:]`` shifts
    the targeted observation indices; both are clamped to [-1, 1] and
    scaled by 0.1.  Observations are re-clamped to [0, 1]; action
    clipping is the environment's job.
    """
    if len(targets) != len(ADVERSARY_TARGETS):
        raise ConfigError(
            f"adversary target list must have {len(ADVERSARY_TARGETS)} indices, got {len(targets)}"
        )
    adv = np.clip(np.asarray(adv, dtype=float), -1.0, 1.0)
    if adv.shape != (ADVERSARY_ACTION_SIZE,):
        raise ConfigError(f"adversary action must have length {ADVERSARY_ACTION_SIZE}")
    new_action = action + ADVERSARY_SCALE * adv[:2]
    new_obs = obs.copy()
    idx = np.asarray(targets)
    new_obs[idx] = np.clip(obs[idx] + ADVERSARY_SCALE * adv[2:], 0.0, 1.0)
    return new_obs, new_action


def gate_adversary_action(adv: np.ndarray, mode: str) -> np.ndarray:
    """Zero out the adversary channels disabled by the noise mode."""
    gated = np.array(adv, dtype=float, copy=True)
    if mode in ("none", "state"):
        gated[:2] = 0.0
    if mode in ("none", "action"):
        gated[2:] = 0.0
    return gated


class GaussianChannel:
    """Stateless view/action corruption driven by a seeded generator."""

    def __init__(self, profile: NoiseProfile, rng: np.random.Generator):
        self.profile = profile
        self.rng = rng

    def observe(self, true_obs: np.ndarray) -> np.ndarray:
        if self.profile.perturbs_state:
            return gaussian_perturb_state(true_obs, self.profile, self.rng)
        return true_obs

    def act(self, action: np.ndarray) -> np.ndarray:
        if self.profile.perturbs_action:
            return gaussian_perturb_action(action, self.profile, self.rng)
        return action


class IdentityChannel:
    def observe(self, true_obs: np.ndarray) -> np.ndarray:
        return true_obs

    def act(self, action: np.ndarray) -> np.ndarray:
        return action
