"""Kinematic bicycle vehicles, footprints, collision tests and scripted remotes."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, NamedTuple, Optional

import numpy as np

from .errors import UnknownProfile


@dataclass(frozen=True)
class VehiclePose:
    x: float
    y: float
    heading: float
    speed: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.7
    length: float = 4.5
    width: float = 1.9
    max_steer: float = 0.6
    max_accel: float = 3.0
    max_decel: float = 8.0

    def __post_init__(self):
        for name in ("wheelbase", "length", "width", "max_steer", "max_accel", "max_decel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_steer >= math.pi / 2:
            raise ValueError("max_steer must be below pi/2")

    @property
    def half_diagonal(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)


class ControlInput(NamedTuple):
    steering: float
    accel: float


def saturate(u: ControlInput, p: VehicleParams) -> ControlInput:
    steer = min(max(u.steering, -p.max_steer), p.max_steer)
    accel = min(max(u.accel, -p.max_decel), p.max_accel)
    return ControlInput(steer, accel)


def step_dynamics(pose: VehiclePose, u: ControlInput, p: VehicleParams, dt: float) -> VehiclePose:
    """One forward-Euler step of the kinematic bicycle (rear-axle free, no reverse)."""
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must be in (0, 0.05], got {dt}")
    steer, accel = saturate(u, p)
    v = pose.speed
    x = pose.x + v * math.cos(pose.heading) * dt
    y = pose.y + v * math.sin(pose.heading) * dt
    heading = pose.heading
    if steer != 0.0:
        heading += v / p.wheelbase * math.tan(steer) * dt
    speed = max(0.0, v + accel * dt)
    return VehiclePose(x, y, heading, speed)


def footprint(pose: VehiclePose, p: VehicleParams) -> np.ndarray:
    """Corners of the oriented rectangle, counter-clockwise from front-left."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    hl, hw = 0.5 * p.length, 0.5 * p.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([pose.x, pose.y])


def _axes(rect: np.ndarray) -> np.ndarray:
    edges = np.roll(rect, -1, axis=0)[:2] - rect[:2]
    normals = np.column_stack([-edges[:, 1], edges[:, 0]])
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def check_collision(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two oriented rectangles; touching counts."""
    for axis in np.vstack([_axes(a), _axes(b)]):
        pa = a @ axis
        pb = b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def _points_to_edges(points: np.ndarray, rect: np.ndarray) -> float:
    a = rect
    b = np.roll(rect, -1, axis=0)
    ab = b - a  # (4, 2)
    ap = points[:, None, :] - a[None, :, :]  # (m, 4, 2)
    t = np.clip(np.sum(ap * ab, axis=2) / np.sum(ab * ab, axis=1), 0.0, 1.0)
    diff = ap - t[:, :, None] * ab
    return float(np.sqrt(np.min(np.sum(diff * diff, axis=2))))


def rect_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two oriented rectangles, 0 when they overlap."""
    if check_collision(a, b):
        return 0.0
    return min(_points_to_edges(a, b), _points_to_edges(b, a))


# --- scripted behaviours for remote vehicles -------------------------------


class BehaviorCommand(NamedTuple):
    target_speed: float
    lane: Optional[int]
    brake_flag: bool
    accel: Optional[float] = None  # direct longitudinal command, bypasses the speed loop


@dataclass(frozen=True)
class ConstantSpeed:
    speed: float
    lane: Optional[int] = None


@dataclass(frozen=True)
class HardBrakeAt:
    t0: float
    decel: float
    speed: float
    lane: Optional[int] = None


@dataclass(frozen=True)
class Parked:
    lane: Optional[int] = None


@dataclass(frozen=True)
class Crossing:
    route: str
    speed: float


PROFILE_NAMES = ("constant_speed", "hard_brake_at", "parked", "crossing")


def make_profile(name: str, params: Mapping[str, object], *, speed: float = 0.0, lane: Optional[int] = None):
    """Build a behaviour profile from its scenario-file name and parameters."""
    params = dict(params)
    if name == "constant_speed":
        return ConstantSpeed(float(params.pop("speed", speed)), lane)
    if name == "hard_brake_at":
        prof = HardBrakeAt(float(params.pop("t0")), float(params.pop("decel")), float(params.pop("speed", speed)), lane)
    elif name == "parked":
        prof = Parked(lane)
    elif name == "crossing":
        prof = Crossing(str(params.pop("route", "")), float(params.pop("speed", speed)))
    else:
        raise UnknownProfile(f"unknown behaviour profile {name!r}; expected one of {PROFILE_NAMES}")
    if name != "constant_speed" and params:
        raise UnknownProfile(f"unexpected parameters for {name}: {sorted(params)}")
    return prof


def scripted_behavior(profile, t: float) -> BehaviorCommand:
    if isinstance(profile, ConstantSpeed):
        return BehaviorCommand(profile.speed, profile.lane, False)
    if isinstance(profile, HardBrakeAt):
        if t < profile.t0:
            return BehaviorCommand(profile.speed, profile.lane, False)
        remaining = profile.speed - profile.decel * (t - profile.t0)
        if remaining > 0.0:
            return BehaviorCommand(remaining, profile.lane, True, -profile.decel)
        return BehaviorCommand(0.0, profile.lane, False, -profile.decel)
    if isinstance(profile, Parked):
        return BehaviorCommand(0.0, profile.lane, False, 0.0)
    if isinstance(profile, Crossing):
        return BehaviorCommand(profile.speed, None, False)
    raise UnknownProfile(f"unknown behaviour profile {profile!r}")


def with_speed(pose: VehiclePose, speed: float) -> VehiclePose:
    return replace(pose, speed=speed)
