"""Preview-point lateral/yaw error computation and the steering/speed laws."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .path_model import PlannedPath, heading_and_curvature, project_to_path
from .vehicle import VehiclePose

SPEED_GAIN = 1.0  # 1/s


class TrackingError(NamedTuple):
    lateral_deviation: float
    yaw_error: float


@dataclass(frozen=True)
class TrackingGains:
    k_lat: float = 0.1
    k_yaw: float = 0.5
    preview_distance: Optional[float] = None  # None -> speed-aware default
    steer_limit: float = 0.5
    accel_limit: float = 3.0
    decel_limit: float = 8.0

    def __post_init__(self):
        for name in ("k_lat", "k_yaw", "steer_limit", "accel_limit", "decel_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.preview_distance is not None and self.preview_distance < 0:
            raise ValueError("preview_distance must be >= 0")

    def preview_for(self, speed: float) -> float:
        if self.preview_distance is not None:
            return self.preview_distance
        return default_preview(speed)


def default_preview(speed: float) -> float:
    """5 m up to 15 m/s, then a 0.5 s time headway."""
    return max(5.0, 0.5 * speed)


def wrap_angle(angle: float) -> float:
    """Wrap into (-pi, pi]."""
    w = math.remainder(angle, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def compute_errors(path: PlannedPath, pose: VehiclePose, gains: TrackingGains, s_hint: float | None = None) -> TrackingError:
    """Errors of ``pose`` against the path frame at the preview point.

    The vehicle is carried ``preview`` meters ahead along its own heading and
    that look-ahead point's signed offset is measured in the frame of the
    path point ``preview`` meters further along the path.  With zero preview
    this is the plain lateral offset of the vehicle.

    ``s_hint`` lets callers that already projected the vehicle skip the
    projection.
    """
    s = project_to_path(path, (pose.x, pose.y)).s if s_hint is None else s_hint
    preview = gains.preview_for(pose.speed)
    s_prev = min(s + preview, path.length)
    point = path.point_at(s_prev)
    heading, _ = heading_and_curvature(path, s_prev)
    ahead_x = pose.x + preview * math.cos(pose.heading) - point[0]
    ahead_y = pose.y + preview * math.sin(pose.heading) - point[1]
    lateral = -math.sin(heading) * ahead_x + math.cos(heading) * ahead_y
    return TrackingError(float(lateral), wrap_angle(heading - pose.heading))


def steer_command(err: TrackingError, gains: TrackingGains) -> float:
    """Front-wheel angle, positive turns left.

    Lateral deviation left of the path steers right; a path heading left of
    the vehicle steers left.
    """
    delta = -gains.k_lat * err.lateral_deviation + gains.k_yaw * err.yaw_error
    return min(max(delta, -gains.steer_limit), gains.steer_limit)


def speed_command(current: float, target: float, gains: TrackingGains, dt: float) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    accel = SPEED_GAIN * (target - current)
    return min(max(accel, -gains.decel_limit), gains.accel_limit)
