"""Deterministic roundabout traffic simulator with RL-trained metering.

A two-entry roundabout scenario exposed as a finite-horizon MDP, with
Gaussian and learned-adversary perturbation channels, a from-scratch
PPO trainer, and an evaluation harness producing travel-time and
mean-speed reports.
"""

from .env import EnvConfig, RoundaboutEnv, StepOutcome, compute_reward
from .harness import (
    EpisodeRecord,
    HistogramSpec,
    MetricsSummary,
    compute_metrics,
    histogram,
    metering_signature,
    run_baseline,
    run_policy,
)
from .noise import (
    ADVERSARY_TARGETS,
    NoiseProfile,
    adversarial_perturb,
    gaussian_perturb_action,
    gaussian_perturb_state,
)
from .policy import (
    GaussianPolicyOutput,
    MlpParameters,
    forward,
    init_params,
    load_weights,
    log_prob,
    sample_action,
    save_weights,
)
from .traffic import (
    CollisionEvent,
    GeometryConfig,
    IdmParams,
    RouteNetwork,
    VehicleState,
    build_network,
    desired_headway,
    detect_collisions,
    idm_acceleration,
    leader_of,
    step_vehicle,
)
from .trainer import PpoConfig, compute_gae, ppo_clip_objective, run_training

__version__ = "0.1.0"
