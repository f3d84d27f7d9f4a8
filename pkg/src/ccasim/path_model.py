"""Piecewise-cubic route representation.

A route is split into chunks of ``points_per_segment`` waypoints that share
their boundary point.  Each chunk gets its own pair of cubics ``X(lam)`` and
``Y(lam)`` over ``lam in [0, 1]`` (lam is the normalized index inside the
chunk).  Chunk endpoints are interpolated exactly and interior points are
fitted by least squares, so adjacent segments always meet (C0) but tangents
may kink at knots.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateTangent, DuplicateWaypoint, LambdaOutOfRange, TooFewWaypoints

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)
_GL_PAIRS = tuple(zip(_GL_NODES.tolist(), _GL_WEIGHTS.tolist()))
_PROJECTION_SAMPLES = 51
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class Waypoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class PathSegment:
    """Coefficients of ``X(lam) = ax lam^3 + bx lam^2 + cx lam + dx`` and the same for Y."""

    ax: float
    bx: float
    cx: float
    dx: float
    ay: float
    by: float
    cy: float
    dy: float

    def coeffs(self) -> np.ndarray:
        return np.array([[self.ax, self.bx, self.cx, self.dx], [self.ay, self.by, self.cy, self.dy]])


class PathProjection(NamedTuple):
    segment: int
    lam: float
    s: float
    lateral_offset: float
    point: Waypoint


def eval_segment(segment: PathSegment, lam: float) -> Waypoint:
    if not 0.0 <= lam <= 1.0:
        raise LambdaOutOfRange(f"lambda {lam} outside [0, 1]")
    x = ((segment.ax * lam + segment.bx) * lam + segment.cx) * lam + segment.dx
    y = ((segment.ay * lam + segment.by) * lam + segment.cy) * lam + segment.dy
    return Waypoint(x, y)


def _fit_chunk(points: np.ndarray) -> np.ndarray:
    """Cubic through the chunk endpoints, least squares on the interior.

    Uses the basis ``p0 + (p1 - p0) lam + alpha (lam^2 - lam) + beta (lam^3 - lam)``
    which satisfies both endpoint constraints for any alpha, beta.
    Returns a (2, 4) array of [a, b, c, d] rows for x and y.
    """
    m = len(points)
    p0, p1 = points[0], points[-1]
    lam = np.linspace(0.0, 1.0, m)
    alpha = np.zeros(2)
    beta = np.zeros(2)
    interior = lam[1:-1]
    if m >= 4:
        basis = np.column_stack([interior**2 - interior, interior**3 - interior])
        rhs = points[1:-1] - (p0 + np.outer(interior, p1 - p0))
        sol, *_ = np.linalg.lstsq(basis, rhs, rcond=None)
        alpha, beta = sol[0], sol[1]
    elif m == 3:
        basis = (interior**2 - interior)[:, None]
        rhs = points[1:-1] - (p0 + np.outer(interior, p1 - p0))
        sol, *_ = np.linalg.lstsq(basis, rhs, rcond=None)
        alpha = sol[0]
    a = beta
    b = alpha
    c = (p1 - p0) - alpha - beta
    d = p0
    return np.stack([a, b, c, d], axis=1)


@dataclass(frozen=True, eq=False)
class PlannedPath:
    """Ordered cubic segments plus knot positions and cumulative arclength.

    Immutable; the sample cache used for projection is built once at
    construction.
    """

    coeffs: np.ndarray  # (n_seg, 2, 4)
    knots: np.ndarray  # (n_seg + 1, 2)
    cumulative_arclength: np.ndarray = field(init=False)
    _samples: np.ndarray = field(init=False, repr=False)
    _sample_lams: np.ndarray = field(init=False, repr=False)
    _table_s: np.ndarray = field(init=False, repr=False)
    _table_seg: np.ndarray = field(init=False, repr=False)
    _table_lam: np.ndarray = field(init=False, repr=False)
    _rows: list = field(init=False, repr=False)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        coeffs.setflags(write=False)
        knots = np.asarray(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "knots", knots)
        seg_len = _arclength_many(coeffs, np.zeros(len(coeffs)), np.ones(len(coeffs)))
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        cum.setflags(write=False)
        object.__setattr__(self, "cumulative_arclength", cum)
        lams = np.linspace(0.0, 1.0, _PROJECTION_SAMPLES)
        powers = np.stack([lams**3, lams**2, lams, np.ones_like(lams)])  # (4, k)
        samples = np.einsum("sdc,ck->skd", coeffs, powers)  # (n_seg, k, 2)
        object.__setattr__(self, "_samples", samples)
        object.__setattr__(self, "_sample_lams", lams)
        # arclength at every sample, for initial guesses when inverting s -> lam
        n_seg, k = len(coeffs), len(lams)
        seg_idx = np.repeat(np.arange(n_seg), k - 1)
        pieces = _arclength_many(coeffs[seg_idx], np.tile(lams[:-1], n_seg), np.tile(lams[1:], n_seg))
        table = np.zeros((n_seg, k))
        table[:, 1:] = np.cumsum(pieces.reshape(n_seg, k - 1), axis=1)
        # rescale so each row ends exactly at the whole-segment GL length
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(table[:, -1] > 0, seg_len / table[:, -1], 1.0)
        table = table * scale[:, None] + cum[:-1, None]
        object.__setattr__(self, "_table_s", table.reshape(-1))
        object.__setattr__(self, "_table_seg", np.repeat(np.arange(len(coeffs)), len(lams)))
        object.__setattr__(self, "_table_lam", np.tile(lams, len(coeffs)))
        object.__setattr__(self, "_rows", coeffs.tolist())

    @property
    def segments(self) -> tuple[PathSegment, ...]:
        return tuple(PathSegment(*c[0], *c[1]) for c in self.coeffs)

    @property
    def n_segments(self) -> int:
        return len(self.coeffs)

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    def segment(self, i: int) -> PathSegment:
        c = self.coeffs[i]
        return PathSegment(*c[0], *c[1])

    def point(self, i: int, lam: float) -> np.ndarray:
        (ax, bx, cx, dx), (ay, by, cy, dy) = self._rows[i]
        return np.array([((ax * lam + bx) * lam + cx) * lam + dx, ((ay * lam + by) * lam + cy) * lam + dy])

    def derivatives(self, i: int, lam: float) -> tuple[np.ndarray, np.ndarray]:
        (ax, bx, cx, _), (ay, by, cy, _) = self._rows[i]
        d1 = np.array([(3.0 * ax * lam + 2.0 * bx) * lam + cx, (3.0 * ay * lam + 2.0 * by) * lam + cy])
        d2 = np.array([6.0 * ax * lam + 2.0 * bx, 6.0 * ay * lam + 2.0 * by])
        return d1, d2

    def locate(self, s: float) -> tuple[int, float]:
        """Map arclength ``s`` (clamped to the path) to (segment index, lam)."""
        cum = self.cumulative_arclength
        s = min(max(float(s), 0.0), float(cum[-1]))
        i = min(max(bisect.bisect_right(cum, s) - 1, 0), self.n_segments - 1)
        k = self._sample_lams.size
        row = self._table_s[i * k : (i + 1) * k]
        j = min(max(bisect.bisect_right(row, s) - 1, 0), k - 2)
        s0, s1 = float(row[j]), float(row[j + 1])
        step = 1.0 / (k - 1)
        lam = j * step + (step * (s - s0) / (s1 - s0) if s1 > s0 else 0.0)
        (ax, bx, cx, _), (ay, by, cy, _) = self.coeffs[i].tolist()
        target = s - float(cum[i])
        for _ in range(3):
            arc = 0.0
            for node, weight in _GL_PAIRS:
                t = 0.5 * lam * (node + 1.0)
                arc += weight * math.hypot((3.0 * ax * t + 2.0 * bx) * t + cx, (3.0 * ay * t + 2.0 * by) * t + cy)
            arc *= 0.5 * lam
            speed = math.hypot((3.0 * ax * lam + 2.0 * bx) * lam + cx, (3.0 * ay * lam + 2.0 * by) * lam + cy)
            if speed < 1e-12:
                break
            lam = min(max(lam - (arc - target) / speed, 0.0), 1.0)
        return i, lam

    def locate_many(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised ``locate``: table lookup followed by Newton steps on the GL arclength."""
        cum = self.cumulative_arclength
        s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
        seg = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, self.n_segments - 1)
        k = np.clip(np.searchsorted(self._table_s, s, side="right") - 1, 0, len(self._table_s) - 1)
        same = self._table_seg[k] == seg
        lam = np.where(same, self._table_lam[k], 0.0)
        c = self.coeffs[seg]  # (m, 2, 4)
        target = s - cum[seg]
        for _ in range(4):
            t = 0.5 * lam[:, None] * (_GL_NODES[None, :] + 1.0)
            dx = (3.0 * c[:, 0, 0, None] * t + 2.0 * c[:, 0, 1, None]) * t + c[:, 0, 2, None]
            dy = (3.0 * c[:, 1, 0, None] * t + 2.0 * c[:, 1, 1, None]) * t + c[:, 1, 2, None]
            arc = 0.5 * lam * (np.hypot(dx, dy) @ _GL_WEIGHTS)
            ddx = (3.0 * c[:, 0, 0] * lam + 2.0 * c[:, 0, 1]) * lam + c[:, 0, 2]
            ddy = (3.0 * c[:, 1, 0] * lam + 2.0 * c[:, 1, 1]) * lam + c[:, 1, 2]
            speed = np.hypot(ddx, ddy)
            step = np.divide(arc - target, speed, out=np.zeros_like(speed), where=speed > 1e-12)
            lam = np.clip(lam - step, 0.0, 1.0)
        return seg, lam

    def headings_at(self, s: np.ndarray) -> np.ndarray:
        seg, lam = self.locate_many(s)
        c = self.coeffs[seg]
        lam = lam[:, None]
        d1 = (3.0 * c[:, :, 0] * lam + 2.0 * c[:, :, 1]) * lam + c[:, :, 2]
        return np.arctan2(d1[:, 1], d1[:, 0])

    def points_at(self, s: np.ndarray) -> np.ndarray:
        seg, lam = self.locate_many(s)
        c = self.coeffs[seg]
        lam = lam[:, None]
        return ((c[:, :, 0] * lam + c[:, :, 1]) * lam + c[:, :, 2]) * lam + c[:, :, 3]

    def point_at(self, s: float) -> np.ndarray:
        return self.point(*self.locate(s))

    def arclength_at(self, i: int, lam: float) -> float:
        (ax, bx, cx, _), (ay, by, cy, _) = self._rows[i]
        arc = 0.0
        for node, weight in _GL_PAIRS:
            t = 0.5 * lam * (node + 1.0)
            arc += weight * math.hypot((3.0 * ax * t + 2.0 * bx) * t + cx, (3.0 * ay * t + 2.0 * by) * t + cy)
        return float(self.cumulative_arclength[i]) + 0.5 * lam * arc

    def sample(self, spacing: float, s_start: float = 0.0, s_end: float | None = None) -> np.ndarray:
        """Points at uniform arclength spacing over ``[s_start, s_end]``."""
        s_end = self.length if s_end is None else s_end
        n = int(math.floor((s_end - s_start) / spacing + 1e-9))
        return self.points_at(s_start + spacing * np.arange(n + 1))

    def dense_points(self) -> np.ndarray:
        return self._samples.reshape(-1, 2)


def _arclength(c: np.ndarray, lam: float) -> float:
    """5-point Gauss-Legendre arclength of one segment from 0 to ``lam``."""
    if lam <= 0.0:
        return 0.0
    t = 0.5 * lam * (_GL_NODES + 1.0)
    dx = (3.0 * c[0, 0] * t + 2.0 * c[0, 1]) * t + c[0, 2]
    dy = (3.0 * c[1, 0] * t + 2.0 * c[1, 1]) * t + c[1, 2]
    return float(0.5 * lam * np.dot(_GL_WEIGHTS, np.hypot(dx, dy)))


def _arclength_many(c: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """GL arclength of segments ``c[m]`` over ``[lo[m], hi[m]]``."""
    half = 0.5 * (hi - lo)
    t = lo[:, None] + half[:, None] * (_GL_NODES[None, :] + 1.0)
    dx = (3.0 * c[:, 0, 0, None] * t + 2.0 * c[:, 0, 1, None]) * t + c[:, 0, 2, None]
    dy = (3.0 * c[:, 1, 0, None] * t + 2.0 * c[:, 1, 1, None]) * t + c[:, 1, 2, None]
    return half * (np.hypot(dx, dy) @ _GL_WEIGHTS)


def fit_path(waypoints: Sequence[Sequence[float]] | np.ndarray, points_per_segment: int = 4) -> PlannedPath:
    """Fit one cubic pair per chunk of ``points_per_segment`` waypoints.

    Chunks overlap by one point.  A trailing remainder of two or more points
    becomes its own (possibly lower-order) segment; a single leftover point is
    absorbed into the last full chunk.
    """
    if points_per_segment < 4:
        raise ValueError("points_per_segment must be >= 4")
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("waypoints must be an (n, 2) sequence")
    if len(pts) < points_per_segment:
        raise TooFewWaypoints(f"need at least {points_per_segment} waypoints, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("waypoints must be finite")
    steps = np.hypot(*np.diff(pts, axis=0).T)
    if np.any(steps == 0.0):
        i = int(np.argmin(steps))
        raise DuplicateWaypoint(f"waypoints {i} and {i + 1} coincide at {tuple(pts[i])}")

    stride = points_per_segment - 1
    last = len(pts) - 1
    coeffs = []
    knots = [pts[0]]
    start = 0
    while start < last:
        stop = min(start + stride, last)
        if last - stop == 1:
            stop = last  # a lone trailing point joins this chunk rather than forming a straight stub
        coeffs.append(_fit_chunk(pts[start : stop + 1]))
        knots.append(pts[stop])
        start = stop
    return PlannedPath(np.array(coeffs), np.array(knots))


def straight_path(start: Sequence[float], end: Sequence[float], spacing: float = 5.0) -> PlannedPath:
    """Convenience: a straight route sampled every ``spacing`` meters."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    n = max(3, int(math.ceil(np.hypot(*(end - start)) / spacing)))
    t = np.linspace(0.0, 1.0, n + 1)
    return fit_path(start + np.outer(t, end - start))


def project_to_path(path: PlannedPath, position: Sequence[float]) -> PathProjection:
    p = np.asarray(position, dtype=float)
    samples = path._samples
    d2 = np.sum((samples - p) ** 2, axis=2)
    flat = int(np.argmin(d2))
    seg, k = divmod(flat, samples.shape[1])
    step = 1.0 / (samples.shape[1] - 1)
    lam_k = k * step

    candidates = [(seg, max(0.0, lam_k - step), min(1.0, lam_k + step))]
    # A sample on a knot may belong to the neighbouring segment's basin.
    if k == 0 and seg > 0:
        candidates.append((seg - 1, 1.0 - step, 1.0))
    if k == samples.shape[1] - 1 and seg < path.n_segments - 1:
        candidates.append((seg + 1, 0.0, step))

    best = None
    px, py = float(p[0]), float(p[1])
    for i, lo, hi in candidates:
        (ax, bx, cx, dx), (ay, by, cy, dy) = path._rows[i]

        def dist2(u):
            ex = ((ax * u + bx) * u + cx) * u + dx - px
            ey = ((ay * u + by) * u + cy) * u + dy - py
            return ex * ex + ey * ey

        lam = _golden_section(dist2, lo, hi)
        d2_best = dist2(lam)
        if best is None or d2_best < best[0]:
            best = (d2_best, i, lam)
    _, i, lam = best
    foot = path.point(i, lam)
    tangent, _ = path.derivatives(i, lam)
    offset = p - foot
    cross = tangent[0] * offset[1] - tangent[1] * offset[0]
    dist = math.sqrt(best[0])
    lateral = math.copysign(dist, cross) if cross != 0.0 else 0.0
    return PathProjection(i, lam, path.arclength_at(i, lam), lateral, Waypoint(*foot))


def _golden_section(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    mid = 0.5 * (a + b)
    # the bracket ends are legitimate minima too (knots)
    return min((lo, hi, mid), key=f)


def heading_and_curvature(path: PlannedPath, s: float) -> tuple[float, float]:
    """Heading (rad, CCW from +x) and signed curvature (1/m) at arclength ``s``."""
    if s < -1e-9 or s > path.length + 1e-9:
        raise ValueError(f"s={s} outside [0, {path.length}]")
    i, lam = path.locate(s)
    d1, d2 = path.derivatives(i, lam)
    speed2 = float(d1[0] ** 2 + d1[1] ** 2)
    if speed2 < 1e-12:
        raise DegenerateTangent(f"tangent vanishes at s={s}")
    heading = math.atan2(d1[1], d1[0])
    curvature = (d1[0] * d2[1] - d1[1] * d2[0]) / speed2**1.5
    return heading, float(curvature)


def read_route(source: str | Path | Iterable[str]) -> np.ndarray:
    """Parse a route file: one ``x y`` pair per line, ``#`` starts a comment."""
    if isinstance(source, (str, Path)):
        lines = Path(source).read_text().splitlines()
    else:
        lines = list(source)
    pts = []
    for lineno, raw in enumerate(lines, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'x y', got {raw!r}")
        pts.append((float(parts[0]), float(parts[1])))
    return np.array(pts, dtype=float).reshape(-1, 2)


def write_route(path: str | Path, waypoints: np.ndarray, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{x:.6f} {y:.6f}" for x, y in np.asarray(waypoints)]
    Path(path).write_text("\n".join(lines) + "\n")
