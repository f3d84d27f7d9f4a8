"""Scenario files: strict TOML schema, validation and the resolved Scenario.

Layout::

    [scenario]  name, description, duration_s, dt_s, lane_width_m, road_start_m, road_end_m
    [bus]       rate_hz, latency_s, drop_probability, seed
    [ego]       route_file | lane, x, y, heading, speed, cruise_speed, preset,
                t_maneuver_s, x_safety_m, avoid
    [intersection]  x, y, radius_m, margin_s, approach_m, proceed_speed
    [[remote]]  id, label, behavior, params, lane | route_file, direction, x, y, speed

Lanes are straight lines ``y = lane * lane_width_m`` running along +x
(``direction = 1``) or -x (``direction = -1``) between ``road_start_m`` and
``road_end_m``.  Route files are resolved relative to the scenario file.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from .decision import PRESETS, ConflictRegion, TuningPreset
from .errors import ParseError, UnknownProfile, ValidationError
from .path_model import PlannedPath, fit_path, project_to_path, heading_and_curvature, read_route
from .v2v import BusConfig
from .vehicle import VehicleParams, VehiclePose, check_collision, footprint, make_profile

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA: dict[str, set[str]] = {
    "scenario": {"name", "description", "duration_s", "dt_s", "lane_width_m", "road_start_m", "road_end_m"},
    "bus": {"rate_hz", "latency_s", "drop_probability", "seed"},
    "ego": {"route_file", "lane", "x", "y", "heading", "speed", "cruise_speed", "preset",
            "t_maneuver_s", "x_safety_m", "avoid"},
    "intersection": {"x", "y", "radius_m", "margin_s", "approach_m", "proceed_speed"},
    "remote": {"id", "label", "behavior", "params", "lane", "route_file", "direction", "x", "y", "speed"},
}
REQUIRED = {
    "scenario": {"name", "duration_s"},
    "ego": {"x", "speed"},
    "intersection": {"x", "y", "radius_m"},
    "remote": {"behavior", "x"},
}
LANE_SPACING = 5.0  # m between waypoints of generated lane routes
EGO_ID = 0


@dataclass(frozen=True, eq=False)
class RemoteSpec:
    vehicle_id: int
    label: str
    behavior: str
    profile: Any
    route: PlannedPath
    pose: VehiclePose
    params: VehicleParams = VehicleParams()


@dataclass(frozen=True, eq=False)
class EgoSpec:
    route: PlannedPath
    pose: VehiclePose
    cruise_speed: float
    preset: TuningPreset
    t_maneuver: Optional[float]
    x_safety: float
    allow_avoid: bool
    params: VehicleParams = VehicleParams()


@dataclass(frozen=True)
class IntersectionSpec:
    region: ConflictRegion
    margin: float = 1.0
    approach_distance: float = 40.0
    proceed_speed: float = 5.0


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    description: str
    duration: float
    dt: float
    lane_width: float
    bus: BusConfig
    ego: EgoSpec
    remotes: tuple[RemoteSpec, ...] = ()
    intersection: Optional[IntersectionSpec] = None
    source: Optional[Path] = None

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))

    def with_bus(self, **changes) -> "Scenario":
        return replace(self, bus=replace(self.bus, **changes))

    def with_preset(self, name: str) -> "Scenario":
        if name not in PRESETS:
            raise ValidationError([f"unknown preset {name!r}; expected one of {sorted(PRESETS)}"])
        return replace(self, ego=replace(self.ego, preset=PRESETS[name]))


def _line_of(text: str, key: str) -> Optional[int]:
    pat = re.compile(rf"^\s*(\[+\s*)?{re.escape(key)}\b")
    for lineno, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return lineno
    return None


def _parse(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(str(exc), line=int(m.group(1)) if m else None) from None


def _check_keys(doc: dict, text: str) -> None:
    for section, body in doc.items():
        if section not in SCHEMA:
            raise ParseError(f"unknown section [{section}]", line=_line_of(text, section), field=section)
        tables = body if isinstance(body, list) else [body]
        if section == "remote" and not isinstance(body, list):
            raise ParseError("remotes must be an array of tables: [[remote]]", line=_line_of(text, section),
                             field=section)
        for table in tables:
            if not isinstance(table, dict):
                raise ParseError(f"[{section}] must be a table", field=section)
            for key in table:
                if key not in SCHEMA[section]:
                    raise ParseError(f"unknown key {key!r} in [{section}]", line=_line_of(text, key),
                                     field=f"{section}.{key}")


class _Checker:
    """Collects every violation instead of stopping at the first."""

    def __init__(self):
        self.violations: list[str] = []

    def number(self, table: dict, key: str, where: str, default=None, *, positive=False,
               nonneg=False, lo=None, hi=None) -> Optional[float]:
        if key not in table:
            return default
        value = table[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.violations.append(f"{where}.{key} must be a finite number, got {value!r}")
            return default
        value = float(value)
        if positive and value <= 0:
            self.violations.append(f"{where}.{key} must be > 0, got {value}")
        if nonneg and value < 0:
            self.violations.append(f"{where}.{key} must be >= 0, got {value}")
        if lo is not None and value < lo or hi is not None and value > hi:
            self.violations.append(f"{where}.{key} must be in [{lo}, {hi}], got {value}")
        return value

    def integer(self, table: dict, key: str, where: str, default=None) -> Optional[int]:
        if key not in table:
            return default
        value = table[key]
        if isinstance(value, bool) or not isinstance(value, int):
            self.violations.append(f"{where}.{key} must be an integer, got {value!r}")
            return default
        return value

    def string(self, table: dict, key: str, where: str, default=None) -> Optional[str]:
        if key not in table:
            return default
        value = table[key]
        if not isinstance(value, str):
            self.violations.append(f"{where}.{key} must be a string, got {value!r}")
            return default
        return value

    def required(self, table: dict, section: str, where: str) -> None:
        for key in sorted(REQUIRED.get(section, ())):
            if key not in table:
                self.violations.append(f"{where}.{key} is required")


def lane_route(lane: int, direction: int, lane_width: float, road: tuple[float, float]) -> PlannedPath:
    y = lane * lane_width
    n = max(4, int(math.ceil((road[1] - road[0]) / LANE_SPACING)) + 1)
    xs = [road[0] + (road[1] - road[0]) * k / (n - 1) for k in range(n)]
    if direction < 0:
        xs = xs[::-1]
    return fit_path([(x, y) for x in xs])


def _load_route(name: str, base: Path, where: str, check: _Checker) -> Optional[PlannedPath]:
    path = (base / name) if not Path(name).is_absolute() else Path(name)
    try:
        return fit_path(read_route(path))
    except OSError as exc:
        check.violations.append(f"{where}.route_file {name!r} cannot be read: {exc.strerror or exc}")
    except ValueError as exc:
        check.violations.append(f"{where}.route_file {name!r}: {exc}")
    return None


def _pose_on(route: PlannedPath, x: float, y: Optional[float], heading: Optional[float], speed: float) -> VehiclePose:
    """Initial pose at ``(x, y)``; a missing y or heading is taken from the route."""
    if y is None:
        # first route point with this x coordinate: walk the dense samples
        pts = route.dense_points()
        k = min(range(len(pts)), key=lambda i: abs(pts[i][0] - x))
        y = float(pts[k][1])
    if heading is None:
        s = project_to_path(route, (x, y)).s
        heading, _ = heading_and_curvature(route, s)
    return VehiclePose(float(x), float(y), float(heading), float(speed))


def scenario_from_dict(doc: dict, base: Path, text: str = "", source: Optional[Path] = None) -> Scenario:
    _check_keys(doc, text)
    check = _Checker()
    meta = doc.get("scenario", {})
    check.required(meta, "scenario", "scenario")
    name = check.string(meta, "name", "scenario", "unnamed")
    description = check.string(meta, "description", "scenario", "")
    duration = check.number(meta, "duration_s", "scenario", 10.0, positive=True)
    dt = check.number(meta, "dt_s", "scenario", 0.01, positive=True, hi=0.05)
    lane_width = check.number(meta, "lane_width_m", "scenario", 3.5, positive=True)
    road = (check.number(meta, "road_start_m", "scenario", -100.0), check.number(meta, "road_end_m", "scenario", 1500.0))
    if road[1] <= road[0]:
        check.violations.append("scenario.road_end_m must exceed road_start_m")
        road = (road[0], road[0] + 1000.0)
    if dt and duration and dt > 0 and duration > 0 and abs(duration / dt - round(duration / dt)) > 1e-6:
        check.violations.append(f"scenario.duration_s ({duration}) must be a multiple of dt_s ({dt})")

    bus_t = doc.get("bus", {})
    rate = check.number(bus_t, "rate_hz", "bus", 10.0, positive=True)
    latency = check.number(bus_t, "latency_s", "bus", 0.02, nonneg=True)
    drop = check.number(bus_t, "drop_probability", "bus", 0.0, lo=0.0, hi=1.0)
    seed = check.integer(bus_t, "seed", "bus", 0)
    if seed is not None and seed < 0:
        check.violations.append("bus.seed must be >= 0")
        seed = 0
    if rate and rate > 0 and dt and dt > 0:
        ratio = 1.0 / (rate * dt)
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            check.violations.append(f"bus.rate_hz ({rate}) period must be a whole number of ticks of {dt} s")

    ego_t = doc.get("ego")
    if ego_t is None:
        check.violations.append("[ego] section is required")
        ego_t = {}
    check.required(ego_t, "ego", "ego")
    ego_route = None
    if "route_file" in ego_t and "lane" in ego_t:
        check.violations.append("ego: give either route_file or lane, not both")
    if "route_file" in ego_t:
        route_name = check.string(ego_t, "route_file", "ego")
        if route_name is not None:
            ego_route = _load_route(route_name, base, "ego", check)
    else:
        ego_route = lane_route(check.integer(ego_t, "lane", "ego", 0), 1, lane_width, road)
    ego_speed = check.number(ego_t, "speed", "ego", 0.0, nonneg=True)
    preset_name = check.string(ego_t, "preset", "ego", "default")
    if preset_name not in PRESETS:
        check.violations.append(f"ego.preset {preset_name!r} unknown; expected one of {sorted(PRESETS)}")
        preset_name = "default"
    t_man = check.number(ego_t, "t_maneuver_s", "ego", None, positive=True)
    x_safety = check.number(ego_t, "x_safety_m", "ego", 10.0, nonneg=True)
    cruise = check.number(ego_t, "cruise_speed", "ego", ego_speed if ego_speed else 15.0, positive=True)
    avoid = ego_t.get("avoid", False)
    if not isinstance(avoid, bool):
        check.violations.append(f"ego.avoid must be true or false, got {avoid!r}")
        avoid = False
    ego = None
    if ego_route is not None:
        x = check.number(ego_t, "x", "ego", 0.0)
        ego_pose = _pose_on(ego_route, x, check.number(ego_t, "y", "ego"), check.number(ego_t, "heading", "ego"),
                            ego_speed or 0.0)
        ego = EgoSpec(ego_route, ego_pose, cruise, PRESETS[preset_name], t_man, x_safety, avoid)

    intersection = None
    if "intersection" in doc:
        it = doc["intersection"]
        check.required(it, "intersection", "intersection")
        radius = check.number(it, "radius_m", "intersection", 4.0, positive=True)
        intersection = IntersectionSpec(
            ConflictRegion((check.number(it, "x", "intersection", 0.0), check.number(it, "y", "intersection", 0.0)), radius),
            check.number(it, "margin_s", "intersection", 1.0, nonneg=True),
            check.number(it, "approach_m", "intersection", 40.0, positive=True),
            check.number(it, "proceed_speed", "intersection", 5.0, positive=True),
        )

    remotes = []
    used_ids = {EGO_ID}
    for k, rt in enumerate(doc.get("remote", [])):
        where = f"remote[{k}]"
        check.required(rt, "remote", where)
        vid = check.integer(rt, "id", where, k + 1)
        if vid in used_ids:
            check.violations.append(f"{where}.id {vid} is already used")
        used_ids.add(vid)
        label = check.string(rt, "label", where, f"remote{vid}")
        behavior = check.string(rt, "behavior", where, "constant_speed")
        speed = check.number(rt, "speed", where, 0.0, nonneg=True)
        params = rt.get("params", {})
        if not isinstance(params, dict):
            check.violations.append(f"{where}.params must be a table")
            params = {}
        lane = check.integer(rt, "lane", where, None)
        direction = check.integer(rt, "direction", where, 1)
        if direction not in (1, -1):
            check.violations.append(f"{where}.direction must be 1 or -1")
            direction = 1
        route = None
        if "route_file" in rt:
            if lane is not None:
                check.violations.append(f"{where}: give either route_file or lane, not both")
            route_name = check.string(rt, "route_file", where)
            if route_name is not None:
                route = _load_route(route_name, base, where, check)
        else:
            route = lane_route(lane or 0, direction, lane_width, road)
        if behavior == "crossing":
            params = {"route": rt.get("route_file", ""), **params}
        try:
            profile = make_profile(behavior, params, speed=speed or 0.0, lane=lane)
        except (UnknownProfile, KeyError, TypeError, ValueError) as exc:
            check.violations.append(f"{where}.behavior {behavior!r}: {exc}")
            profile = None
        if route is not None and profile is not None:
            initial_speed = 0.0 if behavior == "parked" else (speed or 0.0)
            pose = _pose_on(route, check.number(rt, "x", where, 0.0), check.number(rt, "y", where), None, initial_speed)
            remotes.append(RemoteSpec(vid, label, behavior, profile, route, pose))

    if ego is not None:
        vehicles = [("ego", ego.pose, ego.params)] + [(r.label, r.pose, r.params) for r in remotes]
        rects = [footprint(p, vp) for _, p, vp in vehicles]
        for i in range(len(vehicles)):
            for j in range(i + 1, len(vehicles)):
                if check_collision(rects[i], rects[j]):
                    check.violations.append(f"initial poses of {vehicles[i][0]} and {vehicles[j][0]} overlap")

    if check.violations:
        raise ValidationError(check.violations)
    bus = BusConfig(rate, latency, drop, seed)
    return Scenario(name, description, duration, dt, lane_width, bus, ego, tuple(remotes), intersection, source)


def load_scenario(file: str | Path) -> Scenario:
    path = Path(file)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scenario file {path}: {exc.strerror or exc}") from None
    doc = _parse(text)
    return scenario_from_dict(doc, path.parent, text, path)


def describe(file: str | Path) -> tuple[str, str]:
    """(name, description) read without building routes; for listings."""
    path = Path(file)
    doc = _parse(path.read_text())
    meta = doc.get("scenario", {})
    return str(meta.get("name", path.stem)), str(meta.get("description", ""))
