"""Finite-horizon MDP wrapping the roundabout traffic core.

Each episode releases one vehicle group per entrance.  Group sizes and
release delays are drawn uniformly at reset; the head of each group is
an RL-controllable vehicle (unless the environment runs in pure IDM
mode, which is the human-driving baseline).  Episodes end at the step
horizon, when every vehicle has left the network, or immediately on a
collision.

Observation layout (62 elements, all normalized to [0, 1])
-----------------------------------------------------------
index block   contents
[0, 8)        per-AV features, north AV then west AV:
              (route pos / route length, speed / v_max,
               tailway / approach length, headway / approach length);
              an absent AV contributes zeros, a missing neighbour pads
              the distance with 1.0 (maximally far)
[8, 34)       13 ring slots x (route pos / route length, speed / v_max)
              in corridor order; empty slots are (0, 0)
[34, 46)      distance to the entrance of the 6 closest approaching
              vehicles, north entrance then west, each / approach
              length; missing vehicles pad with 1.0
[46, 58)      speeds of those vehicles / v_max; missing pad with 0
[58, 60)      per-entrance queue count / max group size (north, west)
[60, 62)      inflow group sizes / max group size (north, west)

The action is a 2-vector of accelerations, element 0 for the northern
AV and element 1 for the western AV, clipped to [max_decel, max_accel].
Elements addressed to a vehicle that is not currently in the network
are discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .traffic import (
    ConfigError,
    GeometryConfig,
    IdmParams,
    ROUTE_NORTH,
    ROUTE_WEST,
    ROUTES,
    RouteNetwork,
    VehicleState,
    build_network,
    follower_of,
    idm_acceleration,
    leader_map,
    leader_of,
    step_vehicle,
    sweep_collisions,
)

OBS_SIZE = 62
N_RING_SLOTS = 13
N_ENTRANCE_SLOTS = 6

AV_BLOCK = slice(0, 8)
RING_BLOCK = slice(8, 34)
ENTRANCE_DIST_BLOCK = slice(34, 46)
ENTRANCE_SPEED_BLOCK = slice(46, 58)
QUEUE_BLOCK = slice(58, 60)
INFLOW_BLOCK = slice(60, 62)

AV_POS_INDICES = (0, 4)
RING_POS_INDICES = tuple(range(RING_BLOCK.start, RING_BLOCK.stop, 2))

AV_NORTH_ID = "av_north"
AV_WEST_ID = "av_west"

JERK_WINDOW = 10   # applied-acceleration history length for the jerk penalty

HEAD_CLEARANCE = 2.0   # staging distance between a group head and its merge (m)


@dataclass
class EnvConfig:
    north_group_range: tuple[int, int] = (2, 5)
    west_group_range: tuple[int, int] = (2, 8)
    north_delay_range: tuple[float, float] = (0.0, 4.0)
    west_delay_range: tuple[float, float] = (0.0, 1.0)
    horizon: int = 500
    dt: float = 1.0
    v_max: float = 8.0
    max_accel: float = 1.0
    max_decel: float = -3.0
    penalty_standstill: float = 1.0
    penalty_crawl: float = 0.5
    penalty_jerk: float = 0.2
    penalty_speeding: float = 1.0
    idm: IdmParams = field(default_factory=IdmParams)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)

    def validate(self) -> None:
        for name, (lo, hi) in (
            ("north_group_range", self.north_group_range),
            ("west_group_range", self.west_group_range),
        ):
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} must be a nonempty range of positive sizes")
        for name, (lo, hi) in (
            ("north_delay_range", self.north_delay_range),
            ("west_delay_range", self.west_delay_range),
        ):
            if lo < 0 or hi < lo:
                raise ConfigError(f"{name} must be a nonempty nonnegative interval")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.v_max <= 0:
            raise ConfigError("v_max must be positive")
        if not (self.max_decel < 0 < self.max_accel):
            raise ConfigError("need max_decel < 0 < max_accel")
        for name, w in (
            ("penalty_standstill", self.penalty_standstill),
            ("penalty_crawl", self.penalty_crawl),
            ("penalty_jerk", self.penalty_jerk),
            ("penalty_speeding", self.penalty_speeding),
        ):
            if w < 0:
                raise ConfigError(f"{name} must be nonnegative")
        self.idm.validate()


@dataclass(frozen=True)
class RewardBreakdown:
    base: float
    standstill: float
    crawl: float
    jerk: float
    speeding: float

    @property
    def total(self) -> float:
        return self.base - (self.standstill + self.crawl + self.jerk + self.speeding)

    def as_dict(self) -> dict:
        return {
            "base": self.base,
            "standstill": self.standstill,
            "crawl": self.crawl,
            "jerk": self.jerk,
            "speeding": self.speeding,
            "total": self.total,
        }


ZERO_REWARD = RewardBreakdown(0.0, 0.0, 0.0, 0.0, 0.0)

STANDSTILL_THRESHOLD = 1e-3   # below: standstill penalty
CRAWL_THRESHOLD = 0.2         # below (and not standstill): crawl penalty


@dataclass
class StepOutcome:
    obs: np.ndarray        # agent view (a noise channel may replace this)
    true_obs: np.ndarray   # unperturbed observation
    reward: RewardBreakdown
    done: bool
    info: dict


def compute_reward(
    speeds: np.ndarray,
    av_accel_histories: list[np.ndarray],
    cfg: EnvConfig,
) -> RewardBreakdown:
    """Speed-tracking reward minus standstill/crawl/jerk/speeding penalties.

    ``speeds`` holds every active vehicle's post-step speed;
    ``av_accel_histories`` holds, per active AV, its recent applied
    (post-clip) accelerations.  With no active vehicles the reward is
    defined as zero.
    """
    n = len(speeds)
    if n == 0:
        return ZERO_REWARD
    speeds = np.asarray(speeds, dtype=float)
    scale = cfg.v_max * math.sqrt(n)
    deviation = math.sqrt(float(np.sum((speeds - cfg.v_max) ** 2)))
    base = 2.0 * max(scale - deviation, 0.0) / scale

    standstill = cfg.penalty_standstill * int(np.sum(speeds < STANDSTILL_THRESHOLD)) / n
    crawl = cfg.penalty_crawl * int(
        np.sum((speeds >= STANDSTILL_THRESHOLD) & (speeds < CRAWL_THRESHOLD))
    ) / n
    jerk_terms = [float(np.var(h)) for h in av_accel_histories if len(h) > 0]
    jerk = cfg.penalty_jerk * (sum(jerk_terms) / len(jerk_terms)) if jerk_terms else 0.0
    speeding = cfg.penalty_speeding * float(np.sum(np.maximum(speeds - cfg.v_max, 0.0))) / n
    return RewardBreakdown(base, standstill, crawl, jerk, speeding)


@dataclass
class _Group:
    route: str
    release_time: float
    vehicles: list[VehicleState]


class RoundaboutEnv:
    """Deterministic, seeded two-entry roundabout environment.

    ``control="rl"`` places an RL-controllable vehicle at the head of
    each group; ``control="idm"`` makes every vehicle IDM-driven (the
    baseline scenario).  Instances are single-threaded; run several
    independently seeded instances for parallel rollout collection.
    """

    def __init__(self, cfg: EnvConfig, control: str = "rl"):
        cfg.validate()
        if control not in ("rl", "idm"):
            raise ConfigError(f"unknown control mode {control!r}")
        self.cfg = cfg
        self.control = control
        self.net: RouteNetwork = build_network(cfg.geometry)
        self._check_staging_fits()
        self._rng: np.random.Generator | None = None
        self._done = True

    # -- setup -----------------------------------------------------------

    def _check_staging_fits(self) -> None:
        spacing = self.net.vehicle_length + self.cfg.idm.min_gap + 1.0
        for route, (_, gmax) in (
            (ROUTE_NORTH, self.cfg.north_group_range),
            (ROUTE_WEST, self.cfg.west_group_range),
        ):
            needed = (gmax - 1) * spacing
            if needed > self.net.route(route).merge_point:
                raise ConfigError(
                    f"approach of route {route} too short to stage {gmax} vehicles"
                )

    def _stage_group(self, route: str, size: int, release_time: float) -> _Group:
        # Heads stage just short of their merge so the two groups race for
        # the ring and genuinely clash; the largest group must still fit on
        # the approach behind the head.
        spacing = self.net.vehicle_length + self.cfg.idm.min_gap + 1.0
        gmax = self.cfg.north_group_range[1] if route == ROUTE_NORTH else self.cfg.west_group_range[1]
        merge = self.net.route(route).merge_point
        head_pos = min(merge - HEAD_CLEARANCE, merge)
        if head_pos - (gmax - 1) * spacing < 0:
            head_pos = (gmax - 1) * spacing
        vehicles = []
        for i in range(size):
            if i == 0 and self.control == "rl":
                vid = AV_NORTH_ID if route == ROUTE_NORTH else AV_WEST_ID
                kind = "rl_north" if route == ROUTE_NORTH else "rl_west"
            else:
                vid = f"{route}_{i}"
                kind = "idm"
            pos = head_pos - i * spacing
            vehicles.append(
                VehicleState(
                    id=vid, route=route, pos=pos, speed=0.0,
                    length=self.net.vehicle_length, kind=kind,
                    entry_time=release_time, spawn_pos=pos,
                )
            )
        return _Group(route, release_time, vehicles)

    def reset(self, seed: int) -> np.ndarray:
        """Draw a scenario and return the initial observation."""
        self._rng = np.random.default_rng(seed)
        north_size = int(self._rng.integers(self.cfg.north_group_range[0], self.cfg.north_group_range[1] + 1))
        west_size = int(self._rng.integers(self.cfg.west_group_range[0], self.cfg.west_group_range[1] + 1))
        north_delay = float(self._rng.uniform(*self.cfg.north_delay_range))
        west_delay = float(self._rng.uniform(*self.cfg.west_delay_range))

        # Groups join the simulation at the start of the step in which
        # their delay elapses.
        def release_step_time(delay: float) -> float:
            return math.floor(delay / self.cfg.dt) * self.cfg.dt

        self.group_sizes = {ROUTE_NORTH: north_size, ROUTE_WEST: west_size}
        self.group_delays = {ROUTE_NORTH: north_delay, ROUTE_WEST: west_delay}
        self._staged = [
            self._stage_group(ROUTE_NORTH, north_size, release_step_time(north_delay)),
            self._stage_group(ROUTE_WEST, west_size, release_step_time(west_delay)),
        ]
        self._active: list[VehicleState] = []
        self._exited: list[VehicleState] = []
        self._crashes = []
        self._av_history: dict[str, list[float]] = {}
        self._time = 0.0
        self._steps = 0
        self._done = False
        self._release_due()
        return self.build_observation()

    # -- per-step machinery ----------------------------------------------

    def _release_due(self) -> None:
        still_staged = []
        for group in self._staged:
            if group.release_time <= self._time:
                for v in group.vehicles:
                    v.entry_time = self._time
                    self._active.append(v)
                    if v.kind.startswith("rl"):
                        self._av_history[v.id] = []
            else:
                still_staged.append(group)
        self._staged = still_staged

    def _find_av(self, route: str) -> VehicleState | None:
        vid = AV_NORTH_ID if route == ROUTE_NORTH else AV_WEST_ID
        for v in self._active:
            if v.id == vid:
                return v
        return None

    def step(self, action: np.ndarray | None = None) -> StepOutcome:
        """Advance one timestep; see the module docstring for semantics."""
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        cfg = self.cfg
        if action is None:
            action = np.zeros(2)
        action = np.asarray(action, dtype=float)
        clipped = np.clip(action, cfg.max_decel, cfg.max_accel)

        leaders = leader_map(self._active, self.net, cfg.dt)
        accels: dict[str, float] = {}
        for v in self._active:
            if v.kind == "rl_north" and self.control == "rl":
                a = float(clipped[0])
                self._av_history[v.id].append(a)
                del self._av_history[v.id][:-JERK_WINDOW]
            elif v.kind == "rl_west" and self.control == "rl":
                a = float(clipped[1])
                self._av_history[v.id].append(a)
                del self._av_history[v.id][:-JERK_WINDOW]
            else:
                lead = leaders[v.id]
                if lead is None:
                    gap, dv = math.inf, 0.0
                else:
                    gap = lead.gap
                    dv = v.speed - lead.leader_speed
                a = idm_acceleration(v.speed, dv, gap, cfg.idm, self._rng)
            accels[v.id] = a

        pre_step = list(self._active)
        moved = [
            step_vehicle(v, accels[v.id], cfg.dt, cfg.v_max, cfg.max_accel, cfg.max_decel)
            for v in self._active
        ]
        self._time += cfg.dt
        self._steps += 1

        remaining: list[VehicleState] = []
        exited_now = []
        for v in moved:
            route_len = self.net.route_length(v.route)
            if v.pos > route_len:
                # interpolate the crossing time inside the step
                overshoot = v.pos - route_len
                exit_time = self._time - (overshoot / v.speed if v.speed > 0 else 0.0)
                v = replace(v, exit_time=exit_time)
                self._exited.append(v)
                exited_now.append(v)
            else:
                remaining.append(v)
        self._active = remaining

        crashes = sweep_collisions(pre_step, self._active, self.net, time=self._time)
        if crashes:
            involved = {e.follower_id for e in crashes} | {e.leader_id for e in crashes}
            self._active = [
                replace(v, speed=0.0, frozen=True) if v.id in involved else v
                for v in self._active
            ]
            self._crashes.extend(crashes)

        reward = compute_reward(
            np.array([v.speed for v in self._active]),
            [np.array(self._av_history[v.id]) for v in self._active if v.kind.startswith("rl")],
            cfg,
        )

        self._release_due()
        self._done = bool(
            crashes
            or self._steps >= cfg.horizon
            or (not self._active and not self._staged)
        )
        obs = self.build_observation()
        info = {
            "time": self._time,
            "crashes": crashes,
            "speeds": {v.id: v.speed for v in self._active},
            "active_count": len(self._active),
            "vehicles": [(v.id, v.route, v.pos, v.speed) for v in self._active],
            "exited": [(v.id, v.exit_time) for v in exited_now],
        }
        return StepOutcome(obs=obs, true_obs=obs, reward=reward, done=self._done, info=info)

    # -- observation -----------------------------------------------------

    def build_observation(self) -> np.ndarray:
        cfg = self.cfg
        net = self.net
        obs = np.zeros(OBS_SIZE)

        for offset, route in ((0, ROUTE_NORTH), (4, ROUTE_WEST)):
            av = self._find_av(route)
            if av is None:
                continue
            r = net.route(route)
            obs[offset + 0] = av.pos / r.length
            obs[offset + 1] = av.speed / cfg.v_max
            follower = follower_of(self._active, av.id, net, cfg.dt)
            obs[offset + 2] = (follower[1] / r.approach) if follower else 1.0
            lead = leader_of(self._active, av.id, net, cfg.dt)
            obs[offset + 3] = (lead.gap / r.approach) if lead else 1.0

        ring = [
            (net.ring_coord(v.route, v.pos), v)
            for v in self._active
            if net.on_ring(v.route, v.pos)
        ]
        ring.sort(key=lambda cv: (cv[0], cv[1].id))
        for i, (_, v) in enumerate(ring[:N_RING_SLOTS]):
            obs[RING_BLOCK.start + 2 * i] = v.pos / net.route_length(v.route)
            obs[RING_BLOCK.start + 2 * i + 1] = v.speed / cfg.v_max

        for k, route in enumerate(ROUTES):
            r = net.route(route)
            approaching = sorted(
                (r.merge_point - v.pos, v.speed)
                for v in self._active
                if v.route == route and v.pos <= r.merge_point
            )[:N_ENTRANCE_SLOTS]
            dist_base = ENTRANCE_DIST_BLOCK.start + k * N_ENTRANCE_SLOTS
            speed_base = ENTRANCE_SPEED_BLOCK.start + k * N_ENTRANCE_SLOTS
            for i in range(N_ENTRANCE_SLOTS):
                if i < len(approaching):
                    obs[dist_base + i] = approaching[i][0] / r.approach
                    obs[speed_base + i] = approaching[i][1] / cfg.v_max
                else:
                    obs[dist_base + i] = 1.0

        group_max = {
            ROUTE_NORTH: self.cfg.north_group_range[1],
            ROUTE_WEST: self.cfg.west_group_range[1],
        }
        for k, route in enumerate(ROUTES):
            lo, hi = net.entrance_interval(route)
            queue = sum(1 for v in self._active if v.route == route and lo <= v.pos <= hi)
            obs[QUEUE_BLOCK.start + k] = queue / group_max[route]
            obs[INFLOW_BLOCK.start + k] = self.group_sizes[route] / group_max[route]

        return np.clip(obs, 0.0, 1.0)

    # -- bookkeeping accessors --------------------------------------------

    @property
    def done(self) -> bool:
        return self._done

    @property
    def time(self) -> float:
        return self._time

    @property
    def steps(self) -> int:
        return self._steps

    @property
    def active_vehicles(self) -> list[VehicleState]:
        return list(self._active)

    @property
    def exited_vehicles(self) -> list[VehicleState]:
        return list(self._exited)

    @property
    def staged_count(self) -> int:
        return sum(len(g.vehicles) for g in self._staged)

    @property
    def crashes(self):
        return list(self._crashes)

    @property
    def all_vehicles(self) -> list[VehicleState]:
        staged = [v for g in self._staged for v in g.vehicles]
        return self._active + self._exited + staged
