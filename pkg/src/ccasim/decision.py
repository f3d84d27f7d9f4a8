"""Decision layer: danger zones, intersection clearance and the ego mode machine.

The ego perceives other vehicles only through received BSMs.  Every tick the
latest record of each sender is dead-reckoned to the current time and
projected onto the ego's original route, giving a longitudinal position
``s`` and a signed lateral offset.  Vehicles in the ego lane can trigger
emergency braking, speed adaptation or an elastic-band avoidance; vehicles
one lane over generate danger zones that gate the avoidance.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .elastic_band import BandParams, Deformation, ObstacleDisk, deform_path
from .errors import EgoTooSlow, StaleBsm
from .path_model import PlannedPath, heading_and_curvature, project_to_path
from .tracking import wrap_angle
from .v2v import BsmRecord
from .vehicle import VehicleParams, VehiclePose

STALE_AFTER = 0.5  # s


class Mode(str, enum.Enum):
    LANE_FOLLOW = "LaneFollow"
    ADAPT_SPEED = "AdaptSpeed"
    AVOID = "Avoid"
    EMERGENCY_BRAKE = "EmergencyBrake"
    WAIT_AT_INTERSECTION = "WaitAtIntersection"

    def __str__(self):
        return self.value


# --- danger zones -----------------------------------------------------------


class DangerZone(NamedTuple):
    lo: float
    hi: float
    source_vehicle: Optional[int] = None


def danger_zone(x1: float, v_adj: float, v_ego: float, t_maneuver: float, x_safety: float,
                source_vehicle: Optional[int] = None) -> DangerZone:
    """Interval between the adjacent body start ``x1`` and ``x2 = x1 + (v_adj - v_ego) t + x_safety``."""
    if t_maneuver <= 0:
        raise ValueError("t_maneuver must be positive")
    if x_safety < 0:
        raise ValueError("x_safety must be >= 0")
    if v_ego < 0:
        raise ValueError("v_ego must be >= 0")
    x2 = x1 + (v_adj - v_ego) * t_maneuver + x_safety
    return DangerZone(min(x1, x2), max(x1, x2), source_vehicle)


def in_danger_zone(zone: DangerZone, ego_s: float) -> bool:
    return zone.lo <= ego_s <= zone.hi


# --- tuning presets ----------------------------------------------------------


@dataclass(frozen=True)
class TuningPreset:
    """Band constants and window layout for one response style."""

    name: str
    ke: float
    r0: float
    ks: float = 1.0
    before: float = 45.0  # window start, measured back from the obstacle
    after: float = 30.0  # window end past the obstacle
    k_time: float = 5.0  # t_maneuver = 2 * excursion * k_time / v when no band is active

    def band_params(self, lane_width: float, node_spacing: float = 1.0) -> BandParams:
        return BandParams(ks=self.ks, ke=self.ke, r0=self.r0, node_spacing=node_spacing,
                          window_length=self.before + self.after, max_offset=lane_width)


PRESETS: dict[str, TuningPreset] = {
    "default": TuningPreset("default", ke=0.011, r0=3.5),
    # stiff repulsion that saturates at the lane offset early: quick lane change
    "fast": TuningPreset("fast", ke=0.016, r0=2.5, k_time=4.0),
    # weak, long-range repulsion: gradual lateral motion
    "smooth": TuningPreset("smooth", ke=0.0065, r0=5.0, k_time=6.0),
}


def estimate_t_maneuver(lateral_excursion: float, v_ego: float, preset: TuningPreset,
                        window_extent: Optional[float] = None) -> float:
    """Time to complete a maneuver, clamped to [1, 10] s.

    With an active band the band's longitudinal extent is driven at the
    current speed; otherwise a preset-dependent estimate from the lateral
    excursion is used.
    """
    if v_ego <= 0.1:
        raise EgoTooSlow(f"ego speed {v_ego} m/s too low to estimate a maneuver time")
    if window_extent is not None:
        t = window_extent / v_ego
    else:
        t = 2.0 * lateral_excursion * preset.k_time / v_ego
    return min(max(t, 1.0), 10.0)


# --- intersection clearance --------------------------------------------------


class ConflictRegion(NamedTuple):
    center: tuple[float, float]
    radius: float


def path_interval_in_disk(path: PlannedPath, region: ConflictRegion, step: float = 0.1) -> Optional[tuple[float, float]]:
    """First arclength interval of ``path`` inside the disk, or None."""
    n = int(path.length / step) + 1
    s = np.linspace(0.0, path.length, n)
    pts = np.array([path.point_at(v) for v in s])
    inside = np.hypot(*(pts - np.asarray(region.center)).T) <= region.radius
    if not np.any(inside):
        return None
    idx = np.flatnonzero(inside)
    first = idx[0]
    last = first
    while last + 1 < n and inside[last + 1]:
        last += 1
    return float(s[first]), float(s[last])


def crossing_occupancy(position: Sequence[float], speed: float, heading: float,
                       region: ConflictRegion) -> Optional[tuple[float, float]]:
    """Future time interval a constant-velocity point spends in the disk."""
    p = np.asarray(position, dtype=float) - np.asarray(region.center, dtype=float)
    v = speed * np.array([math.cos(heading), math.sin(heading)])
    a = float(v @ v)
    b = 2.0 * float(p @ v)
    c = float(p @ p) - region.radius**2
    if a < 1e-12:
        return (0.0, math.inf) if c <= 0 else None
    disc = b * b - 4 * a * c
    if disc < 0:
        return None
    root = math.sqrt(disc)
    t0, t1 = (-b - root) / (2 * a), (-b + root) / (2 * a)
    if t1 < 0:
        return None
    return max(t0, 0.0), t1


def ego_occupancy(ego_s: float, ego_speed: float, interval: Optional[tuple[float, float]]) -> Optional[tuple[float, float]]:
    if interval is None:
        return None
    s_in, s_out = interval
    if ego_s > s_out:
        return None
    if ego_speed <= 1e-9:
        return (max(0.0, (s_in - ego_s)), math.inf) if ego_s < s_in else (0.0, math.inf)
    return max(0.0, (s_in - ego_s) / ego_speed), (s_out - ego_s) / ego_speed


def intersection_clearance(ego_turn_path: PlannedPath, crossing: BsmRecord, conflict_region: ConflictRegion,
                           margin: float, *, ego_s: float, ego_speed: float, now: float,
                           ego_interval: Optional[tuple[float, float]] = None) -> bool:
    """True when the ego may proceed through the conflict region.

    Both occupancy intervals are predicted at constant speed (the crossing
    vehicle also at constant heading), widened by ``margin`` on each side and
    tested for overlap.
    """
    age = now - crossing.time_s
    if age > STALE_AFTER:
        raise StaleBsm(f"BSM from vehicle {crossing.vehicle_id} is {age:.2f} s old")
    age = max(age, 0.0)
    pos = (crossing.x + crossing.speed * math.cos(crossing.heading) * age,
           crossing.y + crossing.speed * math.sin(crossing.heading) * age)
    theirs = crossing_occupancy(pos, crossing.speed, crossing.heading, conflict_region)
    if theirs is None:
        return True
    if ego_interval is None:
        ego_interval = path_interval_in_disk(ego_turn_path, conflict_region)
    ours = ego_occupancy(ego_s, ego_speed, ego_interval)
    if ours is None:
        return True
    return ours[1] + margin < theirs[0] - margin or theirs[1] + margin < ours[0] - margin


# --- perception --------------------------------------------------------------


@dataclass(frozen=True)
class Track:
    """A remote vehicle as seen through its latest BSM, in the ego road frame."""

    record: BsmRecord
    position: tuple[float, float]  # dead-reckoned to now
    s: float
    lateral: float
    v_along: float  # signed speed along the ego route direction
    age: float

    @property
    def vehicle_id(self) -> int:
        return self.record.vehicle_id


@dataclass(frozen=True)
class IntersectionContext:
    region: ConflictRegion
    margin: float = 1.0
    approach_distance: float = 40.0
    proceed_speed: float = 5.0
    ego_interval: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class Perception:
    tracks: tuple[Track, ...] = ()
    intersection: Optional[IntersectionContext] = None
    now: float = 0.0


def build_tracks(latest: Mapping[int, BsmRecord], route: PlannedPath, now: float) -> tuple[Track, ...]:
    tracks = []
    for vid in sorted(latest):
        rec = latest[vid]
        age = now - rec.time_s
        if age > STALE_AFTER:
            continue
        age = max(age, 0.0)
        pos = (rec.x + rec.speed * math.cos(rec.heading) * age, rec.y + rec.speed * math.sin(rec.heading) * age)
        proj = project_to_path(route, pos)
        path_heading, _ = heading_and_curvature(route, proj.s)
        v_along = rec.speed * math.cos(wrap_angle(rec.heading - path_heading))
        tracks.append(Track(rec, pos, proj.s, proj.lateral_offset, v_along, age))
    return tuple(tracks)


# --- mode machine --------------------------------------------------------------


@dataclass(frozen=True)
class DecisionParams:
    cruise_speed: float = 15.0
    lane_width: float = 3.5
    x_safety: float = 10.0
    t_maneuver: Optional[float] = None  # fixed value overrides the estimate
    preset: TuningPreset = PRESETS["default"]
    allow_avoid: bool = False
    eebl_range: float = 150.0
    follow_decel: float = 3.0  # comfortable decel used for following
    standstill_gap: float = 5.0
    stop_decel: float = 1.5  # start braking for a stop line at this decel
    obstacle_margin: float = 1.0  # obstacle must be this much slower than cruise
    trigger_lead: float = 5.0  # engage when the band window starts this close
    lookahead: float = 120.0
    pass_bias: float = 1.0  # in-lane obstacles treated as at least this far right
    ego: VehicleParams = VehicleParams()
    remote: VehicleParams = VehicleParams()

    @property
    def inflation(self) -> float:
        return self.remote.half_diagonal + 0.5 * self.ego.width


@dataclass(frozen=True)
class DecisionState:
    mode: Mode = Mode.LANE_FOLLOW
    target_speed: float = 0.0
    active_deformation: Optional[Deformation] = None
    avoid_target: Optional[int] = None
    avoid_entry_s: Optional[float] = None
    zones: tuple[DangerZone, ...] = ()

    def __post_init__(self):
        if self.target_speed < 0:
            raise ValueError("target_speed must be >= 0")
        if self.mode is Mode.AVOID and self.active_deformation is None:
            raise ValueError("Avoid mode requires an active deformed path")


class Directives(NamedTuple):
    target_speed: float
    use_deformed_path: bool
    brake_hard: bool
    path: Optional[PlannedPath] = None
    accel: Optional[float] = None


def _in_lane(track: Track, params: DecisionParams) -> bool:
    return abs(track.lateral) < 0.5 * params.lane_width


def _adjacent(track: Track, params: DecisionParams) -> bool:
    return 0.5 * params.lane_width <= abs(track.lateral) < 1.5 * params.lane_width


def adjacent_zones(tracks: Sequence[Track], v_ego: float, t_maneuver: float, params: DecisionParams) -> tuple[DangerZone, ...]:
    """Danger zone of every adjacent-lane track, in ego-route arclength."""
    half = 0.5 * params.remote.length
    zones = []
    for tr in tracks:
        if not _adjacent(tr, params):
            continue
        rel = tr.v_along - v_ego
        # body end the relative motion sweeps away from
        x1 = tr.s - half if rel >= 0 else tr.s + half
        zones.append(danger_zone(x1, tr.v_along, v_ego, t_maneuver, params.x_safety, tr.vehicle_id))
    return tuple(zones)


def _eebl_threat(tracks: Sequence[Track], ego_s: float, v_ego: float, params: DecisionParams,
                 closing_only: bool = True) -> bool:
    for tr in tracks:
        ahead = 0.0 < tr.s - ego_s <= params.eebl_range
        closing = v_ego >= tr.v_along or not closing_only
        if ahead and _in_lane(tr, params) and tr.record.brake_flag and closing:
            return True
    return False


def _obstacles_ahead(tracks: Sequence[Track], ego_s: float, params: DecisionParams) -> list[Track]:
    out = []
    for tr in tracks:
        if not _in_lane(tr, params):
            continue
        gap = tr.s - ego_s
        if 0.0 < gap <= params.lookahead and tr.v_along < params.cruise_speed - params.obstacle_margin:
            out.append(tr)
    return sorted(out, key=lambda t: t.s)


def _follow_speed(tracks: Sequence[Track], ego_s: float, params: DecisionParams, skip: Sequence[int] = (),
                  v_ego: float = 0.0) -> tuple[float, Optional[float]]:
    """Cruise speed limited so the ego can stop behind the nearest in-lane vehicle.

    Also returns a direct deceleration once matching the lead's speed at the
    standstill gap needs at least ``stop_decel``; the speed loop alone lags
    the braking curve and would eat the gap.
    """
    target = params.cruise_speed
    accel = None
    length = 0.5 * (params.ego.length + params.remote.length)
    for tr in tracks:
        if tr.vehicle_id in skip or not _in_lane(tr, params) or tr.s <= ego_s:
            continue
        gap = tr.s - ego_s - length - params.standstill_gap
        v_lead = max(tr.v_along, 0.0)
        target = min(target, math.sqrt(max(0.0, v_lead**2 + 2.0 * params.follow_decel * gap)))
        if v_ego > v_lead:
            need = params.ego.max_decel if gap <= 0.1 else (v_ego**2 - v_lead**2) / (2.0 * gap)
            if need >= params.stop_decel:
                accel = min(accel if accel is not None else 0.0, -min(need, params.ego.max_decel))
    return target, accel


def _band_obstacles(tracks: Sequence[Track], route: PlannedPath, ego_s: float, params: DecisionParams,
                    keep: Optional[int] = None) -> list[ObstacleDisk]:
    """In-lane vehicles near or ahead of the ego; ``keep`` is always included."""
    disks = []
    rear = ego_s - params.ego.length
    for tr in tracks:
        if tr.vehicle_id != keep and (tr.s + 0.5 * params.remote.length < rear or not _in_lane(tr, params)):
            continue
        lat = tr.lateral
        if -params.pass_bias < lat < params.pass_bias:
            # nudge the force centre off the centerline so the push has a side
            heading, _ = heading_and_curvature(route, tr.s)
            foot = route.point_at(tr.s)
            normal = np.array([-math.sin(heading), math.cos(heading)])
            center = foot - params.pass_bias * normal
            disks.append(ObstacleDisk((float(center[0]), float(center[1])), params.inflation, tr.vehicle_id))
        else:
            disks.append(ObstacleDisk(tr.position, params.inflation, tr.vehicle_id))
    return disks


def _avoid_window(target: Track, entry_s: float, route: PlannedPath, params: DecisionParams) -> tuple[float, float]:
    start = max(target.s - params.preset.before, entry_s, 0.0)
    end = min(target.s + params.preset.after, route.length)
    return start, end


def _deformation(target: Track, tracks, route, ego_s, entry_s, params) -> Optional[Deformation]:
    window = _avoid_window(target, entry_s, route, params)
    bp = params.preset.band_params(params.lane_width)
    if window[1] - window[0] < 2 * bp.node_spacing:
        return None
    obstacles = _band_obstacles(tracks, route, ego_s, params, keep=target.vehicle_id)
    if not obstacles:
        return None
    return deform_path(route, ego_s, obstacles, bp, window=window)


def current_t_maneuver(v_ego: float, params: DecisionParams, deformation: Optional[Deformation],
                       closing: Optional[float] = None) -> float:
    """Expected time spent on the maneuver.

    The band window travels with the obstacle, so it is crossed at the
    closing speed rather than the ego speed.
    """
    if params.t_maneuver is not None:
        return params.t_maneuver
    extent = None
    if deformation is not None:
        extent = deformation.window[1] - deformation.window[0]
    elif params.allow_avoid:
        extent = params.preset.before + params.preset.after
    speed = v_ego if closing is None else min(v_ego, closing)
    try:
        return estimate_t_maneuver(params.lane_width, speed, params.preset, extent)
    except EgoTooSlow:
        return 10.0


def _intersection_blocked(perception: Perception, route: PlannedPath, ego_s: float, v_ego: float,
                          params: DecisionParams) -> tuple[bool, Optional[float]]:
    """(blocked, distance from ego front to the region entry)."""
    ctx = perception.intersection
    if ctx is None or ctx.ego_interval is None:
        return False, None
    s_in, s_out = ctx.ego_interval
    if ego_s > s_out:
        return False, None
    to_entry = s_in - (ego_s + 0.5 * params.ego.length)
    if to_entry > ctx.approach_distance:
        return False, to_entry
    speed = max(v_ego, ctx.proceed_speed)
    # occupancy counts whole bodies, not just centre points
    body_interval = (s_in - 0.5 * params.ego.length, s_out + 0.5 * params.ego.length)
    body_region = ConflictRegion(ctx.region.center, ctx.region.radius + 0.5 * params.remote.length)
    for tr in perception.tracks:
        if tr.record.speed < 0.5:
            continue
        ok = intersection_clearance(route, tr.record, body_region, ctx.margin,
                                    ego_s=ego_s, ego_speed=speed, now=perception.now,
                                    ego_interval=body_interval)
        if not ok:
            return True, to_entry
    return False, to_entry


def _stop_accel(v: float, distance: float, params: DecisionParams) -> Optional[float]:
    if v <= 0.0:
        return 0.0 if distance <= 0.5 else None
    if distance <= 0.1:
        return -params.ego.max_decel
    need = v * v / (2.0 * distance)
    return -need if need >= params.stop_decel else None


def step_fsm(state: DecisionState, perception: Perception, ego: VehiclePose, route: PlannedPath,
             params: DecisionParams, ego_s: Optional[float] = None) -> tuple[DecisionState, Directives]:
    """Advance the mode machine one tick.

    ``ego_s`` is the ego centre's arclength on ``route`` (computed when
    omitted).  A danger zone blocks a maneuver when it overlaps any part of
    the ego body.
    """
    if ego_s is None:
        ego_s = project_to_path(route, (ego.x, ego.y)).s
    tracks = perception.tracks
    v = ego.speed
    front = ego_s + 0.5 * params.ego.length
    closing = None
    if params.allow_avoid:
        ahead = _obstacles_ahead(tracks, ego_s, params)
        if state.avoid_target is not None:
            ahead = [t for t in tracks if t.vehicle_id == state.avoid_target] or ahead
        if ahead:
            closing = v - ahead[0].v_along
    t_man = current_t_maneuver(v, params, state.active_deformation, closing)
    zones = adjacent_zones(tracks, v, t_man, params)
    rear = ego_s - 0.5 * params.ego.length
    zone_hit = any(z.lo <= front and rear <= z.hi for z in zones)
    threat = _eebl_threat(tracks, ego_s, v, params)
    by_id = {t.vehicle_id: t for t in tracks}

    def lane_follow(zs=zones):
        skip = [t.vehicle_id for t in _obstacles_ahead(tracks, ego_s, params)] if params.allow_avoid else []
        target, accel = _follow_speed(tracks, ego_s, params, skip, v)
        return DecisionState(Mode.LANE_FOLLOW, target, zones=zs), Directives(target, False, False, None, accel)

    def emergency():
        return (DecisionState(Mode.EMERGENCY_BRAKE, 0.0, zones=zones),
                Directives(0.0, False, True))

    def start_avoid(target: Track):
        deformation = _deformation(target, tracks, route, ego_s, ego_s, params)
        if deformation is None:
            return None
        zs = adjacent_zones(tracks, v, current_t_maneuver(v, params, deformation, v - target.v_along), params)
        st = DecisionState(Mode.AVOID, params.cruise_speed, deformation, target.vehicle_id, ego_s, zs)
        return st, Directives(params.cruise_speed, True, False, deformation.path)

    mode = state.mode

    if mode is Mode.EMERGENCY_BRAKE:
        # hold the stop while anything ahead is still braking hard
        if v < 0.1 and not _eebl_threat(tracks, ego_s, v, params, closing_only=False):
            return lane_follow()
        return emergency()

    if threat:
        return emergency()

    if mode is Mode.AVOID:
        target = by_id.get(state.avoid_target)
        deformation = None
        if target is not None:
            deformation = _deformation(target, tracks, route, ego_s, state.avoid_entry_s, params)
        if deformation is None:
            deformation = state.active_deformation
        passed = target is None or ego_s > target.s
        if passed and deformation.residual_ahead(ego_s) < 0.05:
            return lane_follow()
        st = replace(state, active_deformation=deformation, zones=zones, target_speed=params.cruise_speed)
        return st, Directives(params.cruise_speed, True, False, deformation.path)

    blocked, to_entry = _intersection_blocked(perception, route, ego_s, v, params)
    if blocked:
        stop_distance = to_entry - 1.0
        accel = _stop_accel(v, stop_distance, params)
        if accel is None:
            accel = min(0.0, params.cruise_speed - v)
        return (DecisionState(Mode.WAIT_AT_INTERSECTION, 0.0, zones=zones),
                Directives(0.0, False, False, None, accel))

    if params.allow_avoid:
        candidates = _obstacles_ahead(tracks, ego_s, params)
        due = [t for t in candidates if t.s - params.preset.before - front <= params.trigger_lead]
        if due:
            target = due[0]
            if zone_hit:
                gap = target.s - params.preset.before - front
                target_speed = max(0.0, min(params.cruise_speed, target.v_along + 0.5 * gap))
                return (DecisionState(Mode.ADAPT_SPEED, target_speed, zones=zones),
                        Directives(target_speed, False, False))
            started = start_avoid(target)
            if started is not None:
                return started

    return lane_follow()
