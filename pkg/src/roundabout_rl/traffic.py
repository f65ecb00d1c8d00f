"""Microscopic traffic core for a two-entry roundabout corridor.

Two fixed routes, ``north`` and ``west``, each consist of an approach
leg, an arc on a shared single-lane ring, and an exit leg.  Positions
are arc lengths along a vehicle's own route (front bumper).  The ring
arcs of both routes map onto one common corridor, so a vehicle heading
for its merge point sees ring traffic ahead of it as ordinary leaders;
entering vehicles therefore yield to circulating traffic without any
explicit priority rule.

Longitudinal control for human-driven vehicles is the intelligent
driver model (IDM); integration is semi-implicit Euler with hard
speed/acceleration limits applied by the integrator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

ROUTE_NORTH = "north"
ROUTE_WEST = "west"
ROUTES = (ROUTE_NORTH, ROUTE_WEST)


class ConfigError(ValueError):
    """Raised for inconsistent geometry or simulation configuration."""


@dataclass
class IdmParams:
    """Intelligent driver model parameters.

    ``accel_noise_std`` is the standard deviation of the zero-mean
    Gaussian perturbation added to every IDM acceleration (before the
    integrator clamps it).
    """

    v0: float = 30.0            # desired speed (m/s)
    time_headway: float = 1.0   # desired time headway T (s)
    max_accel: float = 1.0      # a (m/s^2)
    comfort_decel: float = 1.5  # b (m/s^2)
    delta: float = 4.0          # acceleration exponent
    min_gap: float = 2.0        # s0, minimum bumper-to-bumper gap (m)
    accel_noise_std: float = 0.1

    def validate(self) -> None:
        if self.max_accel <= 0 or self.comfort_decel <= 0:
            raise ConfigError("IDM accelerations a, b must be positive")
        if self.v0 <= 0 or self.min_gap <= 0 or self.delta <= 0:
            raise ConfigError("IDM v0, s0, delta must be positive")
        if self.time_headway < 0:
            raise ConfigError("IDM time headway must be nonnegative")
        if self.accel_noise_std < 0:
            raise ConfigError("IDM acceleration noise std must be nonnegative")


@dataclass
class GeometryConfig:
    """Route lengths (m) for the canonical two-entry roundabout.

    Each route is approach + ring arc + exit.  The ring arcs overlap on
    a shared corridor whose length equals the longest ring arc; all
    ring arcs end at the corridor's end, so a shorter arc enters the
    corridor downstream of a longer one.
    """

    north_approach: float = 25.0
    north_ring: float = 35.0
    north_exit: float = 20.0
    west_approach: float = 30.0
    west_ring: float = 40.0
    west_exit: float = 25.0
    entrance_zone: float = 15.0   # queue-counting zone upstream of each merge
    vehicle_length: float = 1.0


@dataclass(frozen=True)
class Route:
    name: str
    approach: float
    ring: float
    exit: float

    @property
    def length(self) -> float:
        return self.approach + self.ring + self.exit

    @property
    def merge_point(self) -> float:
        return self.approach

    @property
    def ring_interval(self) -> tuple[float, float]:
        return (self.approach, self.approach + self.ring)


@dataclass(frozen=True)
class RouteNetwork:
    """Two routes plus the arc-length mapping onto the shared ring corridor."""

    routes: dict[str, Route]
    ring_length: float
    ring_offsets: dict[str, float]   # corridor coordinate of each route's merge point
    entrance_zone: float
    vehicle_length: float

    def route(self, name: str) -> Route:
        return self.routes[name]

    def route_length(self, name: str) -> float:
        return self.routes[name].length

    def on_ring(self, route: str, pos: float) -> bool:
        lo, hi = self.routes[route].ring_interval
        return lo <= pos <= hi

    def ring_coord(self, route: str, pos: float) -> float:
        """Corridor coordinate for a route position on the ring."""
        r = self.routes[route]
        return self.ring_offsets[route] + (pos - r.merge_point)

    def entrance_interval(self, route: str) -> tuple[float, float]:
        merge = self.routes[route].merge_point
        return (merge - self.entrance_zone, merge)


@dataclass
class VehicleState:
    id: str
    route: str
    pos: float
    speed: float
    length: float
    kind: str                 # "idm" | "rl_north" | "rl_west"
    entry_time: float
    exit_time: float | None = None
    spawn_pos: float = 0.0
    frozen: bool = False      # set when the vehicle was party to a collision


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    follower_id: str
    leader_id: str
    gap: float


def build_network(geom: GeometryConfig) -> RouteNetwork:
    """Assemble the route network and validate the ring mapping."""
    for name, value in (
        ("north_approach", geom.north_approach),
        ("north_ring", geom.north_ring),
        ("north_exit", geom.north_exit),
        ("west_approach", geom.west_approach),
        ("west_ring", geom.west_ring),
        ("west_exit", geom.west_exit),
    ):
        if value <= 0:
            raise ConfigError(f"geometry: {name} must be positive, got {value}")
    if geom.vehicle_length <= 0:
        raise ConfigError("geometry: vehicle_length must be positive")

    routes = {
        ROUTE_NORTH: Route(ROUTE_NORTH, geom.north_approach, geom.north_ring, geom.north_exit),
        ROUTE_WEST: Route(ROUTE_WEST, geom.west_approach, geom.west_ring, geom.west_exit),
    }
    ring_length = max(r.ring for r in routes.values())
    # All ring arcs end at the corridor end; a shorter arc joins downstream.
    ring_offsets = {name: ring_length - r.ring for name, r in routes.items()}
    for name, off in ring_offsets.items():
        if off < 0 or off > ring_length:
            raise ConfigError(f"geometry: ring arc of route {name} does not fit the corridor")
    if any(geom.entrance_zone > r.approach for r in routes.values()) or geom.entrance_zone <= 0:
        raise ConfigError("geometry: entrance_zone must be positive and fit on each approach")
    return RouteNetwork(
        routes=routes,
        ring_length=ring_length,
        ring_offsets=ring_offsets,
        entrance_zone=geom.entrance_zone,
        vehicle_length=geom.vehicle_length,
    )


def desired_headway(v: float, dv: float, p: IdmParams) -> float:
    """Dynamic desired gap s*(v, dv); dv is the approach rate v - v_leader."""
    dynamic = v * p.time_headway + v * dv / (2.0 * math.sqrt(p.max_accel * p.comfort_decel))
    return p.min_gap + max(0.0, dynamic)


def idm_acceleration(
    v: float,
    dv: float,
    s: float,
    p: IdmParams,
    rng: np.random.Generator | None = None,
) -> float:
    """IDM acceleration for gap s > 0, plus optional Gaussian noise.

    The result is intentionally unclamped; ``step_vehicle`` applies the
    environment's acceleration limits.
    """
    if s <= 0:
        raise ValueError(
            f"nonpositive gap {s}: collision should have ended the episode upstream"
        )
    s_star = desired_headway(v, dv, p)
    accel = p.max_accel * (1.0 - (v / p.v0) ** p.delta - (s_star / s) ** 2)
    if p.accel_noise_std > 0:
        if rng is None:
            raise ValueError("accel_noise_std > 0 requires a random generator")
        accel += rng.normal(0.0, p.accel_noise_std)
    return accel


def step_vehicle(
    state: VehicleState,
    accel: float,
    dt: float,
    v_max: float,
    max_accel: float,
    max_decel: float,
) -> VehicleState:
    """Semi-implicit Euler step with acceleration and speed limits."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = min(max(accel, max_decel), max_accel)
    speed = min(max(state.speed + a * dt, 0.0), v_max)
    return replace(state, speed=speed, pos=state.pos + speed * dt)


@dataclass(frozen=True)
class LeaderInfo:
    """The effective leader of a vehicle: a real gap or a merge ghost.

    A ghost arises when cross-route traffic is about to sweep through
    the target's ring entry: the target then car-follows a standing
    obstacle at its merge point (``gap`` is its remaining distance to
    the merge, ``leader_speed`` is zero), which makes it yield without
    any explicit priority rule.
    """

    leader_id: str
    gap: float
    leader_speed: float
    ghost: bool = False


# Extra reach (m) granted to conflicting traffic beyond one timestep of
# travel when deciding whether it blocks a merge entry.
GHOST_MARGIN = 4.0


def _corridor_coord(v: VehicleState, net: RouteNetwork) -> float | None:
    """Corridor coordinate of a vehicle's projected position, None past the ring."""
    r = net.route(v.route)
    if v.pos > r.ring_interval[1]:
        return None
    return net.ring_offsets[v.route] + (v.pos - r.merge_point)


def _candidate_leaders(
    target: VehicleState,
    vehicles: list[VehicleState],
    net: RouteNetwork,
    dt: float,
) -> list[LeaderInfo]:
    t_route = net.route(target.route)
    entry_t = net.ring_offsets[target.route]
    approaching = target.pos < t_route.merge_point
    dist_to_merge = t_route.merge_point - target.pos
    out = []
    for other in vehicles:
        if other.id == target.id:
            continue
        if other.route == target.route:
            d = other.pos - target.pos
            if d > 0:
                out.append(LeaderInfo(other.id, d - other.length, other.speed))
            continue
        coord = _corridor_coord(other, net)
        if coord is None:
            continue   # past the ring: paths have diverged
        other_on_ring = net.on_ring(other.route, other.pos)
        if target.pos > t_route.ring_interval[1]:
            continue
        if approaching:
            if other_on_ring and coord >= entry_t:
                # Available headway ends at the merge point until the
                # leader's rear bumper has cleared the entry.
                rear_clear = max(coord - other.length - entry_t, 0.0)
                out.append(LeaderInfo(other.id, dist_to_merge + rear_clear, other.speed))
                continue
            # Conflicting traffic short of the target's entry: distance it
            # must still cover to reach that entry.
            entry_o = net.ring_offsets[other.route]
            if other_on_ring:
                d_cross = entry_t - coord
            elif entry_o <= entry_t:
                d_cross = (net.route(other.route).merge_point - other.pos) + (entry_t - entry_o)
            else:
                continue   # enters the corridor downstream of the target's entry
            if 0 <= d_cross <= other.speed * dt + GHOST_MARGIN:
                out.append(LeaderInfo(other.id, dist_to_merge, 0.0, ghost=True))
        else:
            # Target on the ring: only downstream corridor traffic matters.
            if other_on_ring:
                d = coord - net.ring_coord(target.route, target.pos)
                if d > 0:
                    out.append(LeaderInfo(other.id, d - other.length, other.speed))
    return out


def leader_of(
    vehicles: list[VehicleState],
    target_id: str,
    net: RouteNetwork,
    dt: float = 1.0,
) -> LeaderInfo | None:
    """Nearest effective leader (smallest bumper gap), or None."""
    target = next(v for v in vehicles if v.id == target_id)
    candidates = _candidate_leaders(target, vehicles, net, dt)
    if not candidates:
        return None
    return min(candidates, key=lambda c: (c.gap, c.ghost, c.leader_id))


def leader_map(
    vehicles: list[VehicleState], net: RouteNetwork, dt: float = 1.0
) -> dict[str, LeaderInfo | None]:
    return {v.id: leader_of(vehicles, v.id, net, dt) for v in vehicles}


def follower_of(
    vehicles: list[VehicleState],
    target_id: str,
    net: RouteNetwork,
    dt: float = 1.0,
) -> tuple[str, float] | None:
    """Nearest vehicle physically behind the target (ghost links excluded)."""
    best: tuple[str, float] | None = None
    for v in vehicles:
        if v.id == target_id:
            continue
        lead = leader_of(vehicles, v.id, net, dt)
        if lead is not None and not lead.ghost and lead.leader_id == target_id:
            if best is None or lead.gap < best[1]:
                best = (v.id, lead.gap)
    return best


def _sweep_start(v: VehicleState, net: RouteNetwork) -> float | None:
    """Corridor position a vehicle occupies (or would enter at) at step start."""
    r = net.route(v.route)
    if v.pos < r.merge_point:
        return net.ring_offsets[v.route]
    if v.pos <= r.ring_interval[1]:
        return net.ring_coord(v.route, v.pos)
    return None


def sweep_collisions(
    pre: list[VehicleState],
    post: list[VehicleState],
    net: RouteNetwork,
    time: float = 0.0,
) -> list[CollisionEvent]:
    """Contacts between step-start and step-end states.

    A pair collides when the follower's front bumper reaches or passes
    the pre-step leader's rear bumper; comparing against the pre-step
    order also catches a fast vehicle sweeping straight through a slow
    one within a single step.  Cross-route contact is only physical on
    the shared ring corridor (positions capped at the corridor end).
    """
    pre_by_id = {v.id: v for v in pre}
    events = []
    for a in post:          # candidate follower, post state
        pa = pre_by_id[a.id]
        for b in post:      # candidate leader
            if a.id == b.id:
                continue
            pb = pre_by_id[b.id]
            if a.route == b.route:
                if (pb.pos, pb.id) <= (pa.pos, pa.id):
                    continue
                gap = b.pos - b.length - a.pos
            else:
                ra, rb = net.route(a.route), net.route(b.route)
                if a.pos < ra.merge_point or b.pos < rb.merge_point:
                    continue   # a body short of its merge is off the corridor
                sa, sb = _sweep_start(pa, net), _sweep_start(pb, net)
                if sa is None or sb is None:
                    continue
                if (sb, pb.id) <= (sa, pa.id):
                    continue
                ca = min(net.ring_coord(a.route, a.pos), net.ring_length)
                cb = net.ring_coord(b.route, b.pos)
                if cb > net.ring_length:
                    continue   # leader already left the corridor
                gap = cb - b.length - ca
            if gap <= 0:
                events.append(
                    CollisionEvent(time=time, follower_id=a.id, leader_id=b.id, gap=gap)
                )
    return events


def detect_collisions(
    vehicles: list[VehicleState],
    net: RouteNetwork,
    time: float = 0.0,
) -> list[CollisionEvent]:
    """One event per leader/follower pair whose bumper gap is <= 0 in place."""
    return sweep_collisions(vehicles, vehicles, net, time=time)
