"""PPO-clip training with GAE, plus the zero-sum adversarial variant.

The single-agent path trains a Gaussian MLP policy against the
roundabout environment, optionally through a Gaussian noise channel.
The adversarial path trains two policies simultaneously from shared
rollouts: the agent maximizes the environment reward while a bounded
adversary, rewarded by its negation, perturbs the agent's observations
and actions.  Everything is plain NumPy with the analytic gradients
exposed by the policy module.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .env import OBS_SIZE, EnvConfig, RoundaboutEnv
from .noise import (
    ADVERSARY_ACTION_SIZE,
    GaussianChannel,
    IdentityChannel,
    NoiseProfile,
    adversarial_perturb,
    gate_adversary_action,
)
from .policy import (
    GaussianPolicyOutput,
    MlpGradients,
    MlpParameters,
    entropy as policy_entropy,
    forward,
    init_params,
    log_prob,
    log_prob_batch,
    mlp_forward,
    mlp_forward_cached,
    mlp_backward,
    output_weighted_grad,
    sample_action,
    save_weights,
    weighted_log_prob_grad,
)
from .traffic import ConfigError


@dataclass
class PpoConfig:
    gamma: float = 0.999
    gae_lambda: float = 0.97
    clip_epsilon: float = 0.2
    batch_size: int = 20000       # env steps per iteration
    iterations: int = 100
    epochs: int = 10
    minibatch_size: int = 256
    learning_rate: float = 3e-4
    value_learning_rate: float = 1e-3
    kl_target: float = 0.01
    entropy_coef: float = 0.0
    hidden_sizes: tuple[int, ...] = (100, 50, 25)
    log_std_init: float = 0.0
    checkpoint_every: int = 25

    def validate(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError("gamma must lie in (0, 1]")
        if not (0.0 < self.gae_lambda <= 1.0):
            raise ConfigError("gae_lambda must lie in (0, 1]")
        if self.clip_epsilon <= 0:
            raise ConfigError("clip_epsilon must be positive")
        if min(self.batch_size, self.iterations, self.epochs, self.minibatch_size) < 1:
            raise ConfigError("batch_size, iterations, epochs, minibatch_size must be >= 1")
        if self.learning_rate < 0 or self.kl_target <= 0:
            raise ConfigError("learning_rate must be >= 0 and kl_target > 0")
        if not self.hidden_sizes:
            raise ConfigError("hidden_sizes must be nonempty")


# -- building blocks ---------------------------------------------------------

@dataclass(frozen=True)
class EpisodeSlice:
    """Half-open index range of one episode inside a rollout batch."""

    start: int
    stop: int
    bootstrap: float          # agent value at truncation, 0 at true termination
    adv_bootstrap: float = 0.0
    terminal: bool = True


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    boundaries: list[EpisodeSlice],
    gamma: float,
    lam: float,
    bootstrap_attr: str = "bootstrap",
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets per episode."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must have equal length")
    covered = sorted((ep.start, ep.stop) for ep in boundaries)
    edges = [0] + [stop for _, stop in covered]
    if any(start != prev for (start, _), prev in zip(covered, edges)) or edges[-1] != len(rewards):
        raise ValueError("episode boundaries must partition the batch")
    advantages = np.zeros_like(rewards)
    for ep in boundaries:
        next_value = float(getattr(ep, bootstrap_attr))
        last = 0.0
        for t in reversed(range(ep.start, ep.stop)):
            delta = rewards[t] + gamma * next_value - values[t]
            last = delta + gamma * lam * last
            advantages[t] = last
            next_value = values[t]
    return advantages, advantages + values


def ppo_clip_objective(ratio, advantage, epsilon: float):
    """Pessimistic clipped surrogate: min(r*A, clamp(r, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage)


def ppo_clip_grad_ratio(ratio, advantage, epsilon: float):
    """d objective / d ratio; zero where the clamp binds.

    At the clip boundary both branches agree and the unclipped
    gradient is used.
    """
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    unclipped = ratio * advantage
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage
    return np.where(unclipped <= clipped, advantage, 0.0)


class Adam:
    """Standard Adam over a list of parameter arrays, updated in place."""

    def __init__(self, arrays: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def state(self) -> tuple:
        return (self.t, [m.copy() for m in self.m], [v.copy() for v in self.v])

    def restore(self, state: tuple) -> None:
        self.t, m, v = state
        self.m = [a.copy() for a in m]
        self.v = [a.copy() for a in v]


# -- rollout collection ------------------------------------------------------

@dataclass
class RolloutBatch:
    obs: np.ndarray
    true_obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    episodes: list[EpisodeSlice]
    episode_returns: list[float]
    episode_lengths: list[int]
    crashes: int
    adv_actions: np.ndarray | None = None
    adv_values: np.ndarray | None = None
    adv_log_probs: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def adv_rewards(self) -> np.ndarray:
        """The adversary's zero-sum reward stream."""
        return -self.rewards


def _value_of(critic: MlpParameters, obs: np.ndarray) -> float:
    return float(mlp_forward(critic, obs)[0])


def collect_rollouts(
    env: RoundaboutEnv,
    agent: MlpParameters,
    critic: MlpParameters,
    min_steps: int,
    episode_seed_rng: np.random.Generator,
    action_rng: np.random.Generator,
    channel=None,
    noise_mode: str = "none",
    adversary: MlpParameters | None = None,
    adv_critic: MlpParameters | None = None,
    adv_action_rng: np.random.Generator | None = None,
    deterministic: bool = False,
    adversary_deterministic: bool = False,
) -> RolloutBatch:
    """Run whole episodes until at least ``min_steps`` steps are gathered.

    With an adversary present, each step queries it on the true
    observation before the agent acts; its action perturbs the agent's
    view and output through the bounded 0.1-scaled channel, gated by
    ``noise_mode``.
    """
    if channel is None:
        channel = IdentityChannel()
    obs_l, true_obs_l, act_l, rew_l, val_l, logp_l, done_l = [], [], [], [], [], [], []
    adv_act_l, adv_val_l, adv_logp_l = [], [], []
    episodes: list[EpisodeSlice] = []
    episode_returns, episode_lengths = [], []
    crashes = 0

    def adversary_step(true_obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
        out = forward(adversary, true_obs)
        raw = out.mean if adversary_deterministic else sample_action(out, adv_action_rng)
        gated = gate_adversary_action(raw, noise_mode)
        perturbed_obs, shift = adversarial_perturb(true_obs, np.zeros(2), gated)
        return perturbed_obs, shift, raw, log_prob(out, raw), _value_of(adv_critic, true_obs)

    def agent_view(true_obs: np.ndarray) -> np.ndarray:
        if adversary is not None:
            out = forward(adversary, true_obs)
            gated = gate_adversary_action(out.mean, noise_mode)
            view, _ = adversarial_perturb(true_obs, np.zeros(2), gated)
            return view
        return channel.observe(true_obs)

    while len(rew_l) < min_steps:
        seed = int(episode_seed_rng.integers(0, 2**62))
        true_obs = env.reset(seed)
        ep_start = len(rew_l)
        ep_return = 0.0
        while True:
            if adversary is not None:
                agent_obs, shift, adv_raw, adv_logp, adv_val = adversary_step(true_obs)
            else:
                agent_obs = channel.observe(true_obs)
            out = forward(agent, agent_obs)
            action = out.mean if deterministic else sample_action(out, action_rng)
            logp = log_prob(out, action)
            value = _value_of(critic, agent_obs)
            if adversary is not None:
                env_action = action + shift
            else:
                env_action = channel.act(action)
            outcome = env.step(env_action)

            obs_l.append(agent_obs)
            true_obs_l.append(true_obs)
            act_l.append(action)
            rew_l.append(outcome.reward.total)
            val_l.append(value)
            logp_l.append(logp)
            done_l.append(outcome.done)
            if adversary is not None:
                adv_act_l.append(adv_raw)
                adv_val_l.append(adv_val)
                adv_logp_l.append(adv_logp)
            ep_return += outcome.reward.total
            crashes += len(outcome.info["crashes"])
            true_obs = outcome.true_obs
            if outcome.done:
                crashed = bool(outcome.info["crashes"])
                truncated = (
                    not crashed
                    and env.steps >= env.cfg.horizon
                    and bool(env.active_vehicles or env.staged_count)
                )
                if truncated:
                    final_view = agent_view(true_obs)
                    bootstrap = _value_of(critic, final_view)
                    adv_bootstrap = (
                        _value_of(adv_critic, true_obs) if adversary is not None else 0.0
                    )
                else:
                    bootstrap, adv_bootstrap = 0.0, 0.0
                episodes.append(
                    EpisodeSlice(
                        start=ep_start, stop=len(rew_l),
                        bootstrap=bootstrap, adv_bootstrap=adv_bootstrap,
                        terminal=not truncated,
                    )
                )
                episode_returns.append(ep_return)
                episode_lengths.append(len(rew_l) - ep_start)
                break

    return RolloutBatch(
        obs=np.array(obs_l),
        true_obs=np.array(true_obs_l),
        actions=np.array(act_l),
        rewards=np.array(rew_l),
        values=np.array(val_l),
        log_probs=np.array(logp_l),
        dones=np.array(done_l, dtype=bool),
        episodes=episodes,
        episode_returns=episode_returns,
        episode_lengths=episode_lengths,
        crashes=crashes,
        adv_actions=np.array(adv_act_l) if adversary is not None else None,
        adv_values=np.array(adv_val_l) if adversary is not None else None,
        adv_log_probs=np.array(adv_logp_l) if adversary is not None else None,
    )


# -- updates -----------------------------------------------------------------

@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    approx_kl: float = 0.0
    entropy: float = 0.0
    epochs_run: int = 0
    max_epoch_kl: float = 0.0
    aborted: bool = False


class NonFiniteLoss(RuntimeError):
    pass


def _policy_minibatch_step(
    agent: MlpParameters,
    opt: Adam,
    obs: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    cfg: PpoConfig,
) -> tuple[float, float]:
    """One clipped-surrogate ascent step; returns (loss, minibatch kl)."""
    means = mlp_forward(agent, obs)
    new_logp = log_prob_batch(means, agent.log_std, actions)
    ratio = np.exp(new_logp - old_logp)
    objective = ppo_clip_objective(ratio, advantages, cfg.clip_epsilon)
    ent = policy_entropy(agent.log_std)
    loss = -float(np.mean(objective)) - cfg.entropy_coef * ent
    kl = float(np.mean(old_logp - new_logp))
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"policy loss became non-finite ({loss})")
    if kl > 1.5 * cfg.kl_target:
        return loss, kl   # guard: skip the update that would overshoot

    n = len(obs)
    d_ratio = ppo_clip_grad_ratio(ratio, advantages, cfg.clip_epsilon)
    # d loss / d logp_i, including d ratio / d logp = ratio
    w = -(d_ratio * ratio) / n
    grads = weighted_log_prob_grad(agent, obs, actions, w)
    grads.d_log_std -= cfg.entropy_coef * np.ones_like(agent.log_std)
    if any(not np.all(np.isfinite(g)) for g in grads.flat_arrays()):
        raise NonFiniteLoss("policy gradient became non-finite")
    opt.step(agent.flat_arrays(), grads.flat_arrays())
    return loss, kl


def _value_minibatch_step(
    critic: MlpParameters,
    opt: Adam,
    obs: np.ndarray,
    returns: np.ndarray,
) -> float:
    values, cache = mlp_forward_cached(critic, obs)
    err = values[:, 0] - returns
    loss = float(np.mean(err**2))
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"value loss became non-finite ({loss})")
    d_out = (2.0 * err / len(err))[:, None]
    d_w, d_b = mlp_backward(critic, cache, d_out)
    grads = MlpGradients(d_w, d_b, None)
    if any(not np.all(np.isfinite(g)) for g in grads.flat_arrays()):
        raise NonFiniteLoss("value gradient became non-finite")
    opt.step(critic.flat_arrays(), grads.flat_arrays())
    return loss


def ppo_update(
    agent: MlpParameters,
    critic: MlpParameters,
    agent_opt: Adam,
    critic_opt: Adam,
    obs: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
    rng: np.random.Generator,
) -> UpdateStats:
    """Minibatch ascent epochs; KL early stopping gates the policy only.

    The value regression always runs the configured number of epochs:
    its accuracy is what keeps advantage estimates usable, and the
    trust region constrains the policy, not the critic.
    """
    adv_std = float(np.std(advantages))
    norm_adv = (advantages - float(np.mean(advantages))) / (adv_std + 1e-8)
    n = len(obs)
    policy_losses, value_losses = [], []
    stats = UpdateStats(entropy=policy_entropy(agent.log_std))
    stop = False
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = perm[lo : lo + cfg.minibatch_size]
            p_loss, mb_kl = _policy_minibatch_step(
                agent, agent_opt, obs[idx], actions[idx], old_logp[idx], norm_adv[idx], cfg
            )
            policy_losses.append(p_loss)
            if mb_kl > 1.5 * cfg.kl_target:
                stop = True
                break
        stats.epochs_run += 1
        new_logp = log_prob_batch(mlp_forward(agent, obs), agent.log_std, actions)
        epoch_kl = float(np.mean(old_logp - new_logp))
        stats.approx_kl = epoch_kl
        stats.max_epoch_kl = max(stats.max_epoch_kl, epoch_kl)
        if stop or epoch_kl > cfg.kl_target:
            break
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = perm[lo : lo + cfg.minibatch_size]
            value_losses.append(
                _value_minibatch_step(critic, critic_opt, obs[idx], returns[idx])
            )
    stats.policy_loss = float(np.mean(policy_losses)) if policy_losses else 0.0
    stats.value_loss = float(np.mean(value_losses)) if value_losses else 0.0
    stats.entropy = policy_entropy(agent.log_std)
    return stats


# -- iteration drivers ---------------------------------------------------------

@dataclass
class TrainLogEntry:
    iteration: int
    mean_episode_reward: float
    policy_loss: float
    value_loss: float
    approx_kl: float
    entropy: float
    episodes: int
    steps: int
    crashes: int
    epochs_run: int
    max_epoch_kl: float
    aborted: bool = False
    mean_adversary_reward: float | None = None
    adversary_policy_loss: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class TrainerStreams:
    """Fixed stream assignment so shared components stay aligned across modes."""

    env_seeds: np.random.Generator
    agent_actions: np.random.Generator
    agent_update: np.random.Generator
    adversary_actions: np.random.Generator
    adversary_update: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "TrainerStreams":
        children = np.random.SeedSequence(seed).spawn(6)
        return cls(*(np.random.default_rng(c) for c in children))


def _snapshot(params: MlpParameters, opt: Adam) -> tuple:
    return params.copy(), opt.state()


def _restore(params: MlpParameters, opt: Adam, snap: tuple) -> None:
    saved, opt_state = snap
    for a, b in zip(params.flat_arrays(), saved.flat_arrays()):
        a[...] = b
    opt.restore(opt_state)


def train_iteration(
    agent: MlpParameters,
    critic: MlpParameters,
    agent_opt: Adam,
    critic_opt: Adam,
    env: RoundaboutEnv,
    cfg: PpoConfig,
    streams: TrainerStreams,
    iteration: int,
    channel=None,
) -> TrainLogEntry:
    """Collect one batch and update the policy/value pair."""
    batch = collect_rollouts(
        env, agent, critic, cfg.batch_size,
        streams.env_seeds, streams.agent_actions, channel=channel,
    )
    advantages, returns = compute_gae(
        batch.rewards, batch.values, batch.episodes, cfg.gamma, cfg.gae_lambda
    )
    snap = _snapshot(agent, agent_opt)
    snap_v = _snapshot(critic, critic_opt)
    try:
        stats = ppo_update(
            agent, critic, agent_opt, critic_opt,
            batch.obs, batch.actions, batch.log_probs, advantages, returns,
            cfg, streams.agent_update,
        )
    except NonFiniteLoss:
        _restore(agent, agent_opt, snap)
        _restore(critic, critic_opt, snap_v)
        stats = UpdateStats(aborted=True, entropy=policy_entropy(agent.log_std))
    return TrainLogEntry(
        iteration=iteration,
        mean_episode_reward=float(np.mean(batch.episode_returns)),
        policy_loss=stats.policy_loss,
        value_loss=stats.value_loss,
        approx_kl=stats.approx_kl,
        entropy=stats.entropy,
        episodes=len(batch.episodes),
        steps=len(batch),
        crashes=batch.crashes,
        epochs_run=stats.epochs_run,
        max_epoch_kl=stats.max_epoch_kl,
        aborted=stats.aborted,
    )


def adversarial_train_iteration(
    agent: MlpParameters,
    critic: MlpParameters,
    adversary: MlpParameters,
    adv_critic: MlpParameters,
    agent_opt: Adam,
    critic_opt: Adam,
    adversary_opt: Adam,
    adv_critic_opt: Adam,
    env: RoundaboutEnv,
    cfg: PpoConfig,
    streams: TrainerStreams,
    iteration: int,
    noise_mode: str = "action_state",
    adversary_deterministic: bool = False,
) -> TrainLogEntry:
    """Shared-rollout simultaneous update of agent and adversary."""
    batch = collect_rollouts(
        env, agent, critic, cfg.batch_size,
        streams.env_seeds, streams.agent_actions,
        noise_mode=noise_mode,
        adversary=adversary, adv_critic=adv_critic,
        adv_action_rng=streams.adversary_actions,
        adversary_deterministic=adversary_deterministic,
    )
    advantages, returns = compute_gae(
        batch.rewards, batch.values, batch.episodes, cfg.gamma, cfg.gae_lambda
    )
    adv_advantages, adv_returns = compute_gae(
        batch.adv_rewards, batch.adv_values, batch.episodes,
        cfg.gamma, cfg.gae_lambda, bootstrap_attr="adv_bootstrap",
    )
    snaps = [
        (agent, agent_opt, _snapshot(agent, agent_opt)),
        (critic, critic_opt, _snapshot(critic, critic_opt)),
        (adversary, adversary_opt, _snapshot(adversary, adversary_opt)),
        (adv_critic, adv_critic_opt, _snapshot(adv_critic, adv_critic_opt)),
    ]
    try:
        stats = ppo_update(
            agent, critic, agent_opt, critic_opt,
            batch.obs, batch.actions, batch.log_probs, advantages, returns,
            cfg, streams.agent_update,
        )
        adv_stats = ppo_update(
            adversary, adv_critic, adversary_opt, adv_critic_opt,
            batch.true_obs, batch.adv_actions, batch.adv_log_probs,
            adv_advantages, adv_returns,
            cfg, streams.adversary_update,
        )
    except NonFiniteLoss:
        for params, opt, snap in snaps:
            _restore(params, opt, snap)
        stats = UpdateStats(aborted=True, entropy=policy_entropy(agent.log_std))
        adv_stats = UpdateStats(aborted=True)
    mean_reward = float(np.mean(batch.episode_returns))
    return TrainLogEntry(
        iteration=iteration,
        mean_episode_reward=mean_reward,
        policy_loss=stats.policy_loss,
        value_loss=stats.value_loss,
        approx_kl=stats.approx_kl,
        entropy=stats.entropy,
        episodes=len(batch.episodes),
        steps=len(batch),
        crashes=batch.crashes,
        epochs_run=stats.epochs_run,
        max_epoch_kl=stats.max_epoch_kl,
        aborted=stats.aborted or adv_stats.aborted,
        mean_adversary_reward=-mean_reward,
        adversary_policy_loss=adv_stats.policy_loss,
    )


# -- full runs -----------------------------------------------------------------

@dataclass
class TrainResult:
    agent: MlpParameters
    critic: MlpParameters
    entries: list[TrainLogEntry]
    adversary: MlpParameters | None = None
    adv_critic: MlpParameters | None = None
    weights_path: str | None = None
    log_path: str | None = None


def run_training(
    env_cfg: EnvConfig,
    ppo_cfg: PpoConfig,
    profile: NoiseProfile,
    noise_kind: str,
    seed: int,
    out_dir: str | None = None,
    progress=None,
) -> TrainResult:
    """Full training run; writes logs/checkpoints when out_dir is given."""
    ppo_cfg.validate()
    env_cfg.validate()
    env = RoundaboutEnv(env_cfg, control="rl")
    streams = TrainerStreams.from_seed(seed)

    dims = (OBS_SIZE,) + tuple(ppo_cfg.hidden_sizes)
    agent = init_params(dims + (2,), streams.agent_update, log_std_init=ppo_cfg.log_std_init)
    critic = init_params(dims + (1,), streams.agent_update, with_log_std=False)
    adversarial = noise_kind == "adversarial" and profile.mode != "none"
    adversary = adv_critic = None
    adversary_opt = adv_critic_opt = None
    if adversarial:
        adversary = init_params(
            dims + (ADVERSARY_ACTION_SIZE,), streams.adversary_update,
            log_std_init=ppo_cfg.log_std_init,
        )
        adv_critic = init_params(dims + (1,), streams.adversary_update, with_log_std=False)
        adversary_opt = Adam(adversary.flat_arrays(), ppo_cfg.learning_rate)
        adv_critic_opt = Adam(adv_critic.flat_arrays(), ppo_cfg.value_learning_rate)

    agent_opt = Adam(agent.flat_arrays(), ppo_cfg.learning_rate)
    critic_opt = Adam(critic.flat_arrays(), ppo_cfg.value_learning_rate)

    channel = None
    if noise_kind == "gaussian" and profile.mode != "none":
        channel = GaussianChannel(profile, streams.noise)

    log_path = weights_path = None
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.jsonl")
        log_fh = open(log_path, "w")

    entries = []
    try:
        for it in range(1, ppo_cfg.iterations + 1):
            if adversarial:
                entry = adversarial_train_iteration(
                    agent, critic, adversary, adv_critic,
                    agent_opt, critic_opt, adversary_opt, adv_critic_opt,
                    env, ppo_cfg, streams, it, noise_mode=profile.mode,
                )
            else:
                entry = train_iteration(
                    agent, critic, agent_opt, critic_opt, env, ppo_cfg, streams, it,
                    channel=channel,
                )
            entries.append(entry)
            if log_fh is not None:
                log_fh.write(json.dumps(entry.to_dict()) + "\n")
                log_fh.flush()
            if out_dir is not None and it % ppo_cfg.checkpoint_every == 0:
                save_weights(agent, os.path.join(out_dir, f"weights_iter{it:04d}.npz"))
            if progress is not None:
                progress(entry)
    finally:
        if log_fh is not None:
            log_fh.close()

    if out_dir is not None:
        weights_path = os.path.join(out_dir, "weights_final.npz")
        save_weights(agent, weights_path)
        if adversarial:
            save_weights(adversary, os.path.join(out_dir, "adversary_final.npz"))
    return TrainResult(
        agent=agent, critic=critic, entries=entries,
        adversary=adversary, adv_critic=adv_critic,
        weights_path=weights_path, log_path=log_path,
    )
