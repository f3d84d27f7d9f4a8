"""Elastic-band deformation of a path window around disk obstacles.

The window is sampled into nodes joined by springs of stiffness ``ks``.
Obstacles push nearby nodes with a linear repulsive force (stiffness ``ke``,
range ``r0`` measured from the obstacle boundary).  With both end nodes
pinned, the interior displacements solve the tridiagonal system
``K u = F / ks`` (K = tridiag(-1, 2, -1)) once per axis.  Displaced nodes are
then refit into a piecewise-cubic path that the tracker follows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import LengthMismatch, NodeInsideObstacle, WindowTooSmall
from .path_model import PlannedPath, fit_path


class ObstacleDisk(NamedTuple):
    center: tuple[float, float]
    radius: float = 0.0
    source: Optional[int] = None


@dataclass(frozen=True)
class ElasticBand:
    nodes: np.ndarray  # (n, 2)
    ks: float
    ke: float
    r0: float
    s_start: float = 0.0
    spacing: float = 1.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) < 3:
            raise WindowTooSmall(f"a band needs at least 3 nodes, got {len(nodes)}")
        if not (self.ks > 0 and self.ke > 0 and self.r0 > 0):
            raise ValueError("ks, ke and r0 must be positive")

    @property
    def n_interior(self) -> int:
        return len(self.nodes) - 2


@dataclass(frozen=True)
class BandParams:
    """Spring/force constants plus the window layout used by ``deform_path``."""

    ks: float = 1.0
    ke: float = 1.0
    r0: float = 3.5
    node_spacing: float = 1.0
    window_length: float = 40.0
    max_offset: Optional[float] = None  # cap on lateral node displacement
    iterations: int = 0  # extra fixed-point passes with forces at deformed nodes
    lead_in: float = 10.0  # original path kept before the window in the refit
    lead_out: float = 40.0  # ... and after it

    def __post_init__(self):
        if not (self.ks > 0 and self.ke > 0 and self.r0 > 0 and self.node_spacing > 0):
            raise ValueError("ks, ke, r0 and node_spacing must be positive")


def build_band(path: PlannedPath, window: tuple[float, float], node_spacing: float,
               ks: float = 1.0, ke: float = 1.0, r0: float = 3.5) -> ElasticBand:
    s_start, s_end = window
    if node_spacing <= 0:
        raise ValueError("node_spacing must be positive")
    if s_start < -1e-9 or s_end > path.length + 1e-9 or s_end < s_start:
        raise ValueError(f"window {window} outside path extent [0, {path.length}]")
    n = int(math.floor((s_end - s_start) / node_spacing + 1e-9)) + 1
    if n < 3:
        raise WindowTooSmall(f"window {window} with spacing {node_spacing} gives {n} nodes (< 3)")
    nodes = path.points_at(s_start + node_spacing * np.arange(n))
    return ElasticBand(nodes, ks, ke, r0, s_start, node_spacing)


def stiffness_matrix(n_interior: int) -> np.ndarray:
    if n_interior < 1:
        raise ValueError("n_interior must be >= 1")
    k = 2.0 * np.eye(n_interior)
    idx = np.arange(n_interior - 1)
    k[idx, idx + 1] = -1.0
    k[idx + 1, idx] = -1.0
    return k


def external_forces(band: ElasticBand, obstacles: Sequence[ObstacleDisk], *, strict: bool = False) -> np.ndarray:
    """Per-node repulsive force, summed over obstacles.

    ``d = |node - center| - radius``; a node with ``d <= r0`` receives
    ``-ke (d - r0) r/|r|``.  Nodes inside the inflated disk (``d <= 0``) keep
    the same linear law unless ``strict`` is set, in which case they raise
    :class:`NodeInsideObstacle`.  A node exactly on a center always raises:
    the push direction is undefined there.
    """
    forces = np.zeros_like(band.nodes)
    for obs in obstacles:
        r = band.nodes - np.asarray(obs.center, dtype=float)
        dist = np.hypot(r[:, 0], r[:, 1])
        d = dist - obs.radius
        active = d <= band.r0
        if not np.any(active):
            continue
        if np.any(dist[active] == 0.0):
            raise NodeInsideObstacle(f"a band node coincides with obstacle center {obs.center}")
        if strict and np.any(d[active] <= 0.0):
            i = int(np.flatnonzero(active & (d <= 0.0))[0])
            raise NodeInsideObstacle(f"band node {i} lies inside obstacle at {obs.center}")
        mag = np.where(active, -band.ke * (d - band.r0), 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(active[:, None], r / dist[:, None], 0.0)
        forces += mag[:, None] * unit
    return forces


def thomas_solve(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system; ``rhs`` may carry several columns."""
    n = len(diag)
    rhs = np.array(rhs, dtype=float)
    c = np.empty(n)
    d = np.empty_like(rhs)
    c[0] = sup[0] / diag[0] if n > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - sub[i - 1] * c[i - 1]
        if i < n - 1:
            c[i] = sup[i] / denom
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / denom
    x = np.empty_like(d)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def solve_displacements(band: ElasticBand, forces: np.ndarray) -> np.ndarray:
    """Interior displacements of ``K u = F / ks``; both end rows are exactly zero."""
    forces = np.asarray(forces, dtype=float)
    if forces.shape != band.nodes.shape:
        raise LengthMismatch(f"forces shape {forces.shape} != nodes shape {band.nodes.shape}")
    m = band.n_interior
    u = np.zeros_like(band.nodes)
    off = -np.ones(max(m - 1, 0))
    u[1:-1] = thomas_solve(off, 2.0 * np.ones(m), off, forces[1:-1] / band.ks)
    return u


def deform(band: ElasticBand, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != band.nodes.shape:
        raise LengthMismatch(f"displacement shape {u.shape} != nodes shape {band.nodes.shape}")
    return band.nodes + u


@dataclass(frozen=True, eq=False)
class Deformation:
    path: PlannedPath  # the path to follow (original when nothing pushes)
    band: ElasticBand
    forces: np.ndarray
    displacement: np.ndarray
    deformed_nodes: np.ndarray
    window: tuple[float, float]
    obstacles: tuple = field(default=())

    @property
    def max_displacement(self) -> float:
        return float(np.max(np.hypot(*self.displacement.T)))

    def residual_ahead(self, s: float) -> float:
        """Largest node displacement at or beyond arclength ``s``."""
        s_nodes = self.band.s_start + self.band.spacing * np.arange(len(self.band.nodes))
        ahead = s_nodes >= s
        if not np.any(ahead):
            return 0.0
        return float(np.max(np.hypot(*self.displacement[ahead].T)))


def _limit_lateral(path: PlannedPath, band: ElasticBand, u: np.ndarray, limit: float) -> np.ndarray:
    s = np.minimum(band.s_start + band.spacing * np.arange(len(u)), path.length)
    heading = path.headings_at(s)
    normal = np.column_stack([-np.sin(heading), np.cos(heading)])
    lat = np.sum(u * normal, axis=1)
    excess = lat - np.clip(lat, -limit, limit)
    excess[[0, -1]] = 0.0
    return u - excess[:, None] * normal


def deform_path(path: PlannedPath, ego_s: float, obstacles: Sequence[ObstacleDisk],
                params: BandParams = BandParams(), window: Optional[tuple[float, float]] = None) -> Deformation:
    """Build the band, push it, and refit a followable path through it.

    ``window`` defaults to ``params.window_length`` meters starting at
    ``ego_s``.  When no node feels any force the original path is returned
    unchanged.
    """
    if not obstacles:
        raise ValueError("deform_path needs at least one obstacle")
    if window is None:
        window = (ego_s, ego_s + params.window_length)
    window = (max(0.0, window[0]), min(path.length, window[1]))
    band = build_band(path, window, params.node_spacing, params.ks, params.ke, params.r0)
    forces = external_forces(band, obstacles)
    u = solve_displacements(band, forces)
    for _ in range(params.iterations):
        moved = replace(band, nodes=band.nodes + u)
        u_next = solve_displacements(band, external_forces(moved, obstacles))
        step = float(np.max(np.abs(u_next - u)))
        u = u_next
        if step < 0.01:
            break
    if params.max_offset is not None:
        u = _limit_lateral(path, band, u, params.max_offset)
    nodes = deform(band, u)
    if not np.any(u):
        return Deformation(path, band, forces, u, nodes, window, tuple(obstacles))

    spacing = params.node_spacing
    before_start = max(0.0, window[0] - params.lead_in)
    n_before = int(math.floor((window[0] - before_start) / spacing + 1e-9))
    before = path.points_at(window[0] - spacing * np.arange(n_before, 0, -1))
    after_end = min(path.length, band.s_start + (len(nodes) - 1) * spacing + params.lead_out)
    s_last = band.s_start + (len(nodes) - 1) * spacing
    n_after = int(math.floor((after_end - s_last) / spacing + 1e-9))
    after = path.points_at(s_last + spacing * np.arange(1, n_after + 1))
    pts = np.vstack([before.reshape(-1, 2), nodes, after.reshape(-1, 2)])
    return Deformation(fit_path(pts), band, forces, u, nodes, window, tuple(obstacles))
