"""Fixed-step simulation loop, traces, metrics and the V2X on/off comparison.

Each tick runs, in order: deliver due BSMs, ego decision, ego tracking on
the active path, remote scripted behaviours, vehicle dynamics, collision
check over all pairs, then BSM publication for vehicles whose 10 Hz slot
falls on the new tick time.  The whole run is single threaded and uses one
seeded generator (inside the bus), so repeated runs are bit identical.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .decision import (DangerZone, DecisionParams, DecisionState, IntersectionContext, Mode, Perception,
                       build_tracks, path_interval_in_disk, step_fsm)
from .errors import CcaError, SimulationError
from .path_model import PlannedPath, project_to_path
from .scenario import EGO_ID, Scenario
from .tracking import TrackingGains, compute_errors, speed_command, steer_command
from .v2v import BsmRecord, BusConfig, MessageBus
from .vehicle import (ControlInput, VehiclePose, check_collision, footprint, rect_distance, saturate,
                      scripted_behavior, step_dynamics)

CSV_HEADER = "time_s,vehicle_id,x_m,y_m,heading_rad,speed_mps,steer_rad,accel_mps2,mode,min_gap_m"
STOPPED = 0.1  # m/s
STEER_RATE = 0.5  # rad/s, steering actuator slew limit


@dataclass(frozen=True)
class BandDump:
    tick: int
    time: float
    window: tuple[float, float]
    nodes: np.ndarray
    displacement: np.ndarray
    path_points: np.ndarray  # dense samples of the refit path being tracked
    obstacles: tuple


@dataclass(frozen=True)
class Collision:
    tick: int
    time: float
    vehicles: tuple[int, int]
    position: tuple[float, float]  # midpoint of the two centres


@dataclass(eq=False)
class SimulationTrace:
    scenario: str
    v2x: bool
    seed: int
    dt: float
    vehicle_ids: tuple[int, ...]
    labels: tuple[str, ...]
    behaviors: tuple[str, ...]
    dims: tuple[tuple[float, float, float], ...]  # (length, width, wheelbase) per vehicle
    route: PlannedPath
    times: np.ndarray  # (T,)
    states: np.ndarray  # (T, n, 4): x, y, heading, speed
    controls: np.ndarray  # (T, n, 2): steering, accel applied during the tick ending here
    gaps: np.ndarray  # (T, n): ego row = min over others, others = gap to ego
    modes: list[str]
    ego_s: np.ndarray
    ego_lateral: np.ndarray
    zones: list[tuple[DangerZone, ...]]
    bands: list[BandDump]
    delivered: np.ndarray  # (T,) messages handed to receivers at that tick
    published: np.ndarray  # (n,) publishes per vehicle
    collision: Optional[Collision] = None
    halted: bool = False
    intersection: Optional[tuple[float, float, float]] = None

    def __len__(self) -> int:
        return len(self.times)

    def index_of(self, vehicle_id: int) -> int:
        return self.vehicle_ids.index(vehicle_id)


@dataclass(frozen=True)
class Metrics:
    collision_occurred: bool
    min_gap: float  # inf when the ego is alone
    max_lateral_accel: float
    time_to_stop: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "collision_occurred": self.collision_occurred,
            "min_gap_m": "none" if math.isinf(self.min_gap) else round(self.min_gap, 6),
            "max_lateral_accel_mps2": round(self.max_lateral_accel, 6),
            "time_to_stop_s": None if self.time_to_stop is None else round(self.time_to_stop, 6),
        }


def _decision_params(scenario: Scenario) -> DecisionParams:
    ego = scenario.ego
    return DecisionParams(cruise_speed=ego.cruise_speed, lane_width=scenario.lane_width, x_safety=ego.x_safety,
                          t_maneuver=ego.t_maneuver, preset=ego.preset, allow_avoid=ego.allow_avoid,
                          ego=ego.params)


def _intersection_context(scenario: Scenario) -> Optional[IntersectionContext]:
    spec = scenario.intersection
    if spec is None:
        return None
    interval = path_interval_in_disk(scenario.ego.route, spec.region)
    return IntersectionContext(spec.region, spec.margin, spec.approach_distance, spec.proceed_speed, interval)


def run(scenario: Scenario, *, continue_after_collision: bool = False) -> SimulationTrace:
    """Simulate ``scenario`` and return the per-tick trace.

    The run stops at the first collision unless ``continue_after_collision``
    is set, in which case it carries on (useful for plotting) but still
    records only the first collision.
    """
    dt = scenario.dt
    n_ticks = scenario.n_ticks
    ego_spec = scenario.ego
    remotes = scenario.remotes
    ids = (EGO_ID,) + tuple(r.vehicle_id for r in remotes)
    params = (ego_spec.params,) + tuple(r.params for r in remotes)
    routes = (ego_spec.route,) + tuple(r.route for r in remotes)
    n = len(ids)
    publish_every = int(round(1.0 / (scenario.bus.rate_hz * dt)))

    dparams = _decision_params(scenario)
    gains = TrackingGains()
    ctx = _intersection_context(scenario)
    bus = MessageBus(scenario.bus, ids)

    poses: list[VehiclePose] = [ego_spec.pose] + [r.pose for r in remotes]
    controls = [ControlInput(0.0, 0.0)] * n
    brake_flags = [False] * n
    state = DecisionState(Mode.LANE_FOLLOW, ego_spec.cruise_speed)
    latest: dict[int, BsmRecord] = {}

    states = np.zeros((n_ticks + 1, n, 4))
    ctrl = np.zeros((n_ticks + 1, n, 2))
    gaps = np.full((n_ticks + 1, n), math.inf)
    ego_s_arr = np.zeros(n_ticks + 1)
    ego_lat = np.zeros(n_ticks + 1)
    delivered = np.zeros(n_ticks + 1, dtype=int)
    published = np.zeros(n, dtype=int)
    modes: list[str] = []
    zones: list[tuple[DangerZone, ...]] = []
    bands: list[BandDump] = []
    collision: Optional[Collision] = None
    halted = False

    def record(k: int, rects) -> None:
        for j, p in enumerate(poses):
            states[k, j] = (p.x, p.y, p.heading, p.speed)
            ctrl[k, j] = controls[j]
        for j in range(1, n):
            gaps[k, j] = rect_distance(rects[0], rects[j])
        if n > 1:
            gaps[k, 0] = gaps[k, 1:].min()
        proj = project_to_path(ego_spec.route, (poses[0].x, poses[0].y))
        ego_s_arr[k] = proj.s
        ego_lat[k] = proj.lateral_offset
        modes.append(str(state.mode))
        zones.append(state.zones)

    def publish(t: float) -> None:
        stamp = int(round(t * 1000.0))
        for j, p in enumerate(poses):
            bus.publish(BsmRecord(ids[j], stamp, p.x, p.y, p.speed, p.heading, brake_flags[j]), t)
            published[j] += 1

    rects = [footprint(p, vp) for p, vp in zip(poses, params)]
    record(0, rects)
    publish(0.0)
    last = n_ticks
    for k in range(n_ticks):
        t = k * dt
        try:
            # (1) deliver
            count = 0
            for vid in ids:
                msgs = bus.poll(vid, t)
                count += len(msgs)
                if vid == EGO_ID:
                    for m in msgs:
                        prev = latest.get(m.vehicle_id)
                        if prev is None or m.timestamp_ms >= prev.timestamp_ms:
                            latest[m.vehicle_id] = m
            delivered[k] = count

            # (2) decide
            ego = poses[0]
            ego_s = ego_s_arr[k]
            perception = Perception(build_tracks(latest, ego_spec.route, t), ctx, t)
            state, directives = step_fsm(state, perception, ego, ego_spec.route, dparams, ego_s=ego_s)
            if state.mode is Mode.AVOID:
                d = state.active_deformation
                bands.append(BandDump(k, t, d.window, d.band.nodes, d.displacement,
                                      d.path.dense_points()[::5], d.obstacles))

            # (3) ego tracking
            if directives.path is not None:
                err = compute_errors(directives.path, ego, gains)
            else:
                err = compute_errors(ego_spec.route, ego, gains, s_hint=ego_s)
            if directives.brake_hard:
                accel = -gains.decel_limit
            elif directives.accel is not None:
                accel = directives.accel
            else:
                accel = speed_command(ego.speed, directives.target_speed, gains, dt)
            new_controls = [saturate(ControlInput(steer_command(err, gains), accel), params[0])]
            brake_flags[0] = directives.brake_hard

            # (4) remote behaviours
            for j, spec in enumerate(remotes, start=1):
                cmd = scripted_behavior(spec.profile, t)
                pose = poses[j]
                if spec.behavior == "parked":
                    u = ControlInput(0.0, 0.0)
                else:
                    steer = steer_command(compute_errors(spec.route, pose, gains), gains)
                    a = cmd.accel if cmd.accel is not None else speed_command(pose.speed, cmd.target_speed, gains, dt)
                    u = ControlInput(steer, a)
                new_controls.append(saturate(u, params[j]))
                brake_flags[j] = cmd.brake_flag
            max_step = STEER_RATE * dt
            controls = [ControlInput(prev.steering + min(max(u.steering - prev.steering, -max_step), max_step), u.accel)
                        for prev, u in zip(controls, new_controls)]

            # (5) dynamics
            poses = [step_dynamics(p, u, vp, dt) for p, u, vp in zip(poses, controls, params)]

            # (6) collisions
            rects = [footprint(p, vp) for p, vp in zip(poses, params)]
            hit = None
            for a in range(n):
                for b in range(a + 1, n):
                    reach = params[a].half_diagonal + params[b].half_diagonal
                    if math.hypot(poses[a].x - poses[b].x, poses[a].y - poses[b].y) > reach:
                        continue
                    if check_collision(rects[a], rects[b]):
                        hit = (a, b)
                        break
                if hit:
                    break
            record(k + 1, rects)
            if hit and collision is None:
                a, b = hit
                collision = Collision(k + 1, (k + 1) * dt, (ids[a], ids[b]),
                                      (0.5 * (poses[a].x + poses[b].x), 0.5 * (poses[a].y + poses[b].y)))
                if not continue_after_collision:
                    halted = True
                    last = k + 1
                    break

            # (7) publish on the fixed cadence
            if (k + 1) % publish_every == 0:
                publish((k + 1) * dt)
        except SimulationError:
            raise
        except (CcaError, ValueError, ArithmeticError) as exc:
            raise SimulationError(k, t, exc) from exc
    bus.close()

    m = last + 1
    return SimulationTrace(
        scenario=scenario.name, v2x=scenario.bus.drop_probability < 1.0, seed=scenario.bus.rng_seed, dt=dt,
        vehicle_ids=ids, labels=("ego",) + tuple(r.label for r in remotes),
        behaviors=("ego",) + tuple(r.behavior for r in remotes),
        dims=tuple((p.length, p.width, p.wheelbase) for p in params), route=ego_spec.route,
        times=np.arange(m) * dt, states=states[:m], controls=ctrl[:m], gaps=gaps[:m], modes=modes[:m],
        ego_s=ego_s_arr[:m], ego_lateral=ego_lat[:m], zones=zones[:m], bands=bands, delivered=delivered[:m],
        published=published, collision=collision, halted=halted,
        intersection=None if scenario.intersection is None else
        (*scenario.intersection.region.center, scenario.intersection.region.radius),
    )


def compute_metrics(trace: SimulationTrace) -> Metrics:
    if len(trace) == 0:
        raise ValueError("empty trace")
    ego_hit = trace.collision is not None and EGO_ID in trace.collision.vehicles
    min_gap = float(trace.gaps[:, 0].min()) if len(trace.vehicle_ids) > 1 else math.inf
    if ego_hit:
        min_gap = 0.0
    speed = trace.states[:, 0, 3]
    steer = trace.controls[:, 0, 0]
    wheelbase = trace.dims[0][2]
    lat_acc = float(np.max(speed**2 * np.abs(np.tan(steer)) / wheelbase))
    time_to_stop = None
    if speed[0] > STOPPED:
        stopped = np.flatnonzero(speed <= STOPPED)
        if stopped.size:
            time_to_stop = float(trace.times[stopped[0]])
    return Metrics(ego_hit, min_gap, lat_acc, time_to_stop)


# --- episodes ----------------------------------------------------------------


def mode_episodes(trace: SimulationTrace) -> list[tuple[str, float, float]]:
    """Runs of constant ego mode as (mode, start time, end time)."""
    out = []
    start = 0
    for k in range(1, len(trace.modes) + 1):
        if k == len(trace.modes) or trace.modes[k] != trace.modes[start]:
            out.append((trace.modes[start], float(trace.times[start]), float(trace.times[k - 1])))
            start = k
    return out


# --- files ---------------------------------------------------------------------


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "none"
    return f"{v:.6f}"


def trace_csv(trace: SimulationTrace) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for k in range(len(trace)):
        t = f"{trace.times[k]:.4f}"
        for j, vid in enumerate(trace.vehicle_ids):
            x, y, h, v = trace.states[k, j]
            steer, accel = trace.controls[k, j]
            mode = trace.modes[k] if j == 0 else trace.behaviors[j]
            buf.write(f"{t},{vid},{_fmt(x)},{_fmt(y)},{_fmt(h)},{_fmt(v)},{_fmt(steer)},{_fmt(accel)},"
                      f"{mode},{_fmt(trace.gaps[k, j])}\n")
    return buf.getvalue()


def _round(a) -> list:
    return np.round(np.asarray(a, dtype=float), 6).tolist()


def trace_sidecar(trace: SimulationTrace, metrics: Optional[Metrics] = None, band_every: int = 10) -> dict:
    metrics = metrics or compute_metrics(trace)
    episodes = mode_episodes(trace)
    avoid = []
    current = None
    for dump in trace.bands:
        if current is None or dump.tick != current["last_tick"] + 1:
            current = {"start_s": round(dump.time, 6), "end_s": round(dump.time, 6), "dumps": [], "last_tick": dump.tick,
                       "first_tick": dump.tick}
            avoid.append(current)
        current["end_s"] = round(dump.time, 6)
        current["last_tick"] = dump.tick
        if (dump.tick - current["first_tick"]) % band_every == 0:
            current["dumps"].append({
                "time_s": round(dump.time, 6),
                "window": _round(dump.window),
                "nodes": _round(dump.nodes),
                "deformed_nodes": _round(dump.nodes + dump.displacement),
                "endpoint_displacement": _round(dump.displacement[[0, -1]]),
                "path": _round(dump.path_points),
                "obstacles": [{"center": _round(o.center), "radius": round(o.radius, 6), "vehicle_id": o.source}
                              for o in dump.obstacles],
            })
    for ep in avoid:
        ep.pop("last_tick")
        ep.pop("first_tick")
    steps = max(1, int(round(0.1 / trace.dt)))
    zones = [{"time_s": round(float(trace.times[k]), 6),
              "zones": [[round(z.lo, 6), round(z.hi, 6), z.source_vehicle] for z in trace.zones[k]]}
             for k in range(0, len(trace), steps) if trace.zones[k]]
    col = trace.collision
    return {
        "scenario": trace.scenario,
        "mode": "v2x-on" if trace.v2x else "v2x-off",
        "seed": trace.seed,
        "dt_s": trace.dt,
        "ticks": len(trace),
        "halted": trace.halted,
        "metrics": metrics.to_dict(),
        "collision": None if col is None else {
            "tick": col.tick, "time_s": round(col.time, 6), "vehicles": list(col.vehicles),
            "position": _round(col.position)},
        "vehicles": [{"id": vid, "label": lab, "behavior": beh, "length_m": d[0], "width_m": d[1]}
                     for vid, lab, beh, d in zip(trace.vehicle_ids, trace.labels, trace.behaviors, trace.dims)],
        "route": _round(trace.route.dense_points()[::5]),
        "intersection": None if trace.intersection is None else _round(trace.intersection),
        "mode_episodes": [{"mode": m, "start_s": round(a, 6), "end_s": round(b, 6)} for m, a, b in episodes],
        "avoid_episodes": avoid,
        "danger_zones": zones,
        "published": trace.published.tolist(),
        "delivered_total": int(trace.delivered.sum()),
    }


def write_trace(trace: SimulationTrace, out_dir: str | Path, stem: Optional[str] = None,
                metrics: Optional[Metrics] = None) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{trace.scenario}_{'v2x-on' if trace.v2x else 'v2x-off'}"
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(trace_csv(trace))
    json_path.write_text(json.dumps(trace_sidecar(trace, metrics), indent=1, sort_keys=True) + "\n")
    return csv_path, json_path


@dataclass(frozen=True)
class ModeComparison:
    on: Metrics
    off: Metrics
    on_paths: Optional[tuple[Path, Path]]
    off_paths: Optional[tuple[Path, Path]]
    on_trace: SimulationTrace = field(repr=False)
    off_trace: SimulationTrace = field(repr=False)


def compare_modes(scenario: Scenario, out_dir: str | Path | None = None, seed: Optional[int] = None) -> ModeComparison:
    """Run with a perfect link and with a dead one, everything else equal."""
    seed = scenario.bus.rng_seed if seed is None else seed
    results = []
    for drop in (0.0, 1.0):
        trace = run(scenario.with_bus(drop_probability=drop, rng_seed=seed))
        metrics = compute_metrics(trace)
        paths = write_trace(trace, out_dir, metrics=metrics) if out_dir is not None else None
        results.append((trace, metrics, paths))
    (on_t, on_m, on_p), (off_t, off_m, off_p) = results
    return ModeComparison(on_m, off_m, on_p, off_p, on_t, off_t)
