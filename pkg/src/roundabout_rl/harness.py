"""Experiment orchestration: evaluation runs, records, and metrics.

Episode records persist as line-delimited JSON (one episode per line,
``schema`` field versioned) and carry enough per-step detail to
recompute every reported metric offline: travel times, per-vehicle mean
speeds, crash counts, relative-frequency histograms, and the
per-entrance metering signature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, RoundaboutEnv
from .noise import GaussianChannel, IdentityChannel, NoiseProfile, adversarial_perturb, gate_adversary_action
from .policy import MlpParameters, forward, load_weights
from .traffic import ROUTE_NORTH, ROUTE_WEST, ROUTES, build_network

RECORD_SCHEMA = 1


@dataclass
class EpisodeRecord:
    schema: int
    seed: int
    control: str
    north_size: int
    west_size: int
    north_delay: float
    west_delay: float
    vehicles: list[dict]       # id, route, kind, entry_time, exit_time, spawn_pos,
                               # travel_time, mean_speed (null until exit)
    steps: list[dict]          # t, reward breakdown, [[id, pos, speed], ...]
    crashes: list[dict]
    episode_return: float
    n_steps: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        if d.get("schema") != RECORD_SCHEMA:
            raise ValueError(
                f"unsupported record schema {d.get('schema')!r}, expected {RECORD_SCHEMA}"
            )
        return cls(**d)


def save_records(path, records: list[EpisodeRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def load_records(path) -> list[EpisodeRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(EpisodeRecord.from_dict(json.loads(line)))
    return records


# -- episode simulation -------------------------------------------------------

def simulate_episode(
    env: RoundaboutEnv,
    seed: int,
    agent: MlpParameters | None = None,
    channel=None,
    adversary: MlpParameters | None = None,
    noise_mode: str = "none",
) -> EpisodeRecord:
    """Run one episode to termination and assemble its record.

    Policy evaluation uses the distribution mean (deterministic); with
    no agent the environment runs its IDM-only control mode.
    """
    if channel is None:
        channel = IdentityChannel()
    true_obs = env.reset(seed)
    steps = []
    episode_return = 0.0
    while not env.done:
        if agent is not None:
            if adversary is not None:
                adv_raw = forward(adversary, true_obs).mean
                gated = gate_adversary_action(adv_raw, noise_mode)
                agent_obs, shift = adversarial_perturb(true_obs, np.zeros(2), gated)
                action = forward(agent, agent_obs).mean + shift
            else:
                agent_obs = channel.observe(true_obs)
                action = channel.act(forward(agent, agent_obs).mean)
        else:
            action = None
        outcome = env.step(action)
        episode_return += outcome.reward.total
        steps.append(
            {
                "t": env.time,
                "reward": outcome.reward.as_dict(),
                "vehicles": [
                    [vid, round(pos, 9), round(speed, 9)]
                    for vid, route, pos, speed in outcome.info["vehicles"]
                ],
            }
        )
        true_obs = outcome.true_obs

    vehicles = []
    for v in env.all_vehicles:
        route_len = env.net.route_length(v.route)
        if v.exit_time is not None and v.exit_time > v.entry_time:
            travel_time = v.exit_time - v.entry_time
            mean_speed = (route_len - v.spawn_pos) / travel_time
        else:
            travel_time = None
            mean_speed = None
        vehicles.append(
            {
                "id": v.id,
                "route": v.route,
                "kind": v.kind,
                "entry_time": v.entry_time,
                "exit_time": v.exit_time,
                "spawn_pos": v.spawn_pos,
                "travel_time": travel_time,
                "mean_speed": mean_speed,
            }
        )
    return EpisodeRecord(
        schema=RECORD_SCHEMA,
        seed=seed,
        control=env.control,
        north_size=env.group_sizes[ROUTE_NORTH],
        west_size=env.group_sizes[ROUTE_WEST],
        north_delay=env.group_delays[ROUTE_NORTH],
        west_delay=env.group_delays[ROUTE_WEST],
        vehicles=vehicles,
        steps=steps,
        crashes=[
            {"time": c.time, "follower": c.follower_id, "leader": c.leader_id, "gap": c.gap}
            for c in env.crashes
        ],
        episode_return=episode_return,
        n_steps=env.steps,
    )


def trial_seeds(master_seed: int, trials: int) -> list[int]:
    """Per-trial seeds derived from a master seed; stable across runs."""
    rng = np.random.default_rng(np.random.SeedSequence(master_seed))
    return [int(s) for s in rng.integers(0, 2**62, size=trials)]


def run_baseline(cfg: EnvConfig, trials: int, master_seed: int = 0) -> list[EpisodeRecord]:
    """IDM-only episodes (the two RL slots are human-driven too)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    env = RoundaboutEnv(cfg, control="idm")
    return [simulate_episode(env, seed) for seed in trial_seeds(master_seed, trials)]


def run_policy(
    cfg: EnvConfig,
    weights_path,
    trials: int,
    master_seed: int = 0,
    profile: NoiseProfile | None = None,
    noise_kind: str = "gaussian",
    adversary_weights_path=None,
) -> list[EpisodeRecord]:
    """Deterministic (mean-action) evaluation rollouts of saved weights."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    agent = load_weights(weights_path)
    if agent.input_dim != 62 or agent.output_dim != 2 or agent.log_std is None:
        raise ValueError(
            f"weight file {weights_path} has dims {agent.layer_dims}; "
            "expected a 62-input, 2-output policy network"
        )
    adversary = None
    noise_mode = "none" if profile is None else profile.mode
    if noise_kind == "adversarial" and adversary_weights_path is not None:
        adversary = load_weights(adversary_weights_path)
    env = RoundaboutEnv(cfg, control="rl")
    noise_rng = np.random.default_rng(np.random.SeedSequence(master_seed).spawn(1)[0])
    records = []
    for seed in trial_seeds(master_seed, trials):
        if noise_kind == "gaussian" and profile is not None and profile.mode != "none":
            channel = GaussianChannel(profile, noise_rng)
        else:
            channel = IdentityChannel()
        records.append(
            simulate_episode(
                env, seed, agent=agent, channel=channel,
                adversary=adversary, noise_mode=noise_mode,
            )
        )
    return records


# -- metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsSummary:
    mean_travel_time: float
    mean_speed: float
    trials: int
    crashes: int
    percent_time_saved: float | None   # vs. the supplied baseline records

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _exited_values(records: list[EpisodeRecord], key: str) -> list[float]:
    return [
        v[key]
        for rec in records
        for v in rec.vehicles
        if v[key] is not None
    ]


def compute_metrics(
    records: list[EpisodeRecord],
    baseline_records: list[EpisodeRecord] | None = None,
) -> MetricsSummary:
    """Per-vehicle travel time and mean speed pooled across all trials."""
    if not records:
        raise ValueError("no records to summarize")
    travel_times = _exited_values(records, "travel_time")
    speeds = _exited_values(records, "mean_speed")
    if not travel_times:
        raise ValueError("records contain no completed vehicle traversals")
    mean_time = float(np.mean(travel_times))
    percent = None
    if baseline_records is not None:
        base_times = _exited_values(baseline_records, "travel_time")
        if not base_times:
            raise ValueError("baseline records contain no completed vehicle traversals")
        base_mean = float(np.mean(base_times))
        percent = 100.0 * (base_mean - mean_time) / base_mean
    return MetricsSummary(
        mean_travel_time=mean_time,
        mean_speed=float(np.mean(speeds)),
        trials=len(records),
        crashes=sum(len(rec.crashes) for rec in records),
        percent_time_saved=percent,
    )


def percent_time_saved(baseline_mean_time: float, mean_time: float) -> float:
    """Positive when faster than the baseline."""
    return 100.0 * (baseline_mean_time - mean_time) / baseline_mean_time


# -- histograms ------------------------------------------------------------------

HISTOGRAM_METRICS = ("travel_time", "mean_speed")


@dataclass
class HistogramSpec:
    metric: str
    bin_edges: np.ndarray
    frequencies: np.ndarray | None = None

    def __post_init__(self):
        if self.metric not in HISTOGRAM_METRICS:
            raise ValueError(f"metric must be one of {HISTOGRAM_METRICS}")
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        if len(self.bin_edges) < 2 or np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")


def histogram(records: list[EpisodeRecord], spec: HistogramSpec) -> HistogramSpec:
    """Relative frequencies of a per-vehicle metric over the spec's bins.

    Values beyond the outermost edges are counted in the first/last bin.
    """
    values = np.asarray(_exited_values(records, spec.metric), dtype=float)
    if values.size == 0:
        raise ValueError("records contain no values for the histogram")
    clipped = np.clip(values, spec.bin_edges[0], spec.bin_edges[-1])
    counts, _ = np.histogram(clipped, bins=spec.bin_edges)
    return HistogramSpec(
        metric=spec.metric,
        bin_edges=spec.bin_edges,
        frequencies=counts / counts.sum(),
    )


# -- metering signature -----------------------------------------------------------

@dataclass(frozen=True)
class EntranceStats:
    mean_approach_speed: float
    stop_dwell_steps: int      # (vehicle, step) samples below the crawl speed
    stopped_vehicles: int      # distinct vehicles that dipped below it
    samples: int


def metering_signature(
    records: list[EpisodeRecord],
    cfg: EnvConfig | None = None,
) -> dict[str, EntranceStats]:
    """Per-entrance approach statistics from recorded trajectories.

    Speed samples are taken while a vehicle is inside its entrance zone
    (the final stretch of its approach leg).  A stop is a sample below
    0.2 m/s.
    """
    cfg = cfg or EnvConfig()
    net = build_network(cfg.geometry)
    zones = {route: net.entrance_interval(route) for route in ROUTES}
    speed_samples = {route: [] for route in ROUTES}
    dwell = {route: 0 for route in ROUTES}
    stopped = {route: set() for route in ROUTES}
    for rec in records:
        routes_by_id = {v["id"]: v["route"] for v in rec.vehicles}
        for step in rec.steps:
            for vid, pos, speed in step["vehicles"]:
                route = routes_by_id[vid]
                lo, hi = zones[route]
                if lo <= pos <= hi:
                    speed_samples[route].append(speed)
                    if speed < 0.2:
                        dwell[route] += 1
                        stopped[route].add(vid)
    return {
        route: EntranceStats(
            mean_approach_speed=float(np.mean(speed_samples[route])) if speed_samples[route] else 0.0,
            stop_dwell_steps=dwell[route],
            stopped_vehicles=len(stopped[route]),
            samples=len(speed_samples[route]),
        )
        for route in ROUTES
    }


def exhibits_metering(
    policy_sig: dict[str, EntranceStats],
    baseline_sig: dict[str, EntranceStats],
    reduction: float = 0.95,
) -> tuple[bool, str | None]:
    """True iff exactly one entrance's approach speed dropped vs. baseline."""
    reduced = [
        route
        for route in ROUTES
        if policy_sig[route].mean_approach_speed
        < reduction * baseline_sig[route].mean_approach_speed
    ]
    if len(reduced) == 1:
        return True, reduced[0]
    return False, None


def route_travel_times(records: list[EpisodeRecord]) -> dict[str, list[float]]:
    out = {route: [] for route in ROUTES}
    for rec in records:
        for v in rec.vehicles:
            if v["travel_time"] is not None:
                out[v["route"]].append(v["travel_time"])
    return out
