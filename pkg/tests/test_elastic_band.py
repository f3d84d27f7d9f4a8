import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccasim.elastic_band import (
    BandParams,
    ElasticBand,
    ObstacleDisk,
    build_band,
    deform,
    deform_path,
    external_forces,
    solve_displacements,
    stiffness_matrix,
    thomas_solve,
)
from ccasim.errors import LengthMismatch, NodeInsideObstacle, WindowTooSmall
from ccasim.path_model import project_to_path, straight_path


def _band(nodes, ks=1.0, ke=1.0, r0=2.0):
    return ElasticBand(np.asarray(nodes, dtype=float), ks, ke, r0)


def _line_band(n, ks=1.0, ke=1.0, r0=2.0):
    return _band(np.column_stack([np.arange(n, dtype=float), np.zeros(n)]), ks, ke, r0)


def test_build_band_sampling():
    path = straight_path((0, 0), (20, 0), spacing=1.0)
    band = build_band(path, (0.0, 10.0), 1.0)
    assert len(band.nodes) == 11
    assert np.allclose(band.nodes, np.column_stack([np.arange(11.0), np.zeros(11)]), atol=1e-9)
    assert len(build_band(path, (0.0, 2.0), 1.0).nodes) == 3
    with pytest.raises(WindowTooSmall):
        build_band(path, (0.0, 1.0), 1.0)


def test_stiffness_matrix_pattern():
    assert stiffness_matrix(1).tolist() == [[2.0]]
    k3 = stiffness_matrix(3)
    assert k3.tolist() == [[2, -1, 0], [-1, 2, -1], [0, -1, 2]]
    assert k3 @ np.ones(3) == pytest.approx([1, 0, 1])


def test_force_examples():
    band = _band([(0, 0), (5, 5), (10, 10)])
    f = external_forces(band, [ObstacleDisk((0.0, 1.0))])
    assert f[0] == pytest.approx([0.0, -1.0])
    assert np.all(f[1:] == 0.0)
    on_edge = _band([(0, 0), (0, -10), (0, -20)])
    assert np.all(external_forces(on_edge, [ObstacleDisk((0.0, 2.0))])[0] == 0.0)
    beyond = _band([(0, 0), (0, -10), (0, -20)])
    assert np.all(external_forces(beyond, [ObstacleDisk((0.0, 3.0))]) == 0.0)


def test_force_inside_disk_strict_flag():
    band = _band([(0, 0), (0.5, 0), (5, 0)])
    obs = [ObstacleDisk((0.0, 0.2), radius=1.0)]
    assert np.any(external_forces(band, obs))
    with pytest.raises(NodeInsideObstacle):
        external_forces(band, obs, strict=True)


def test_solve_examples():
    band = _line_band(3)
    assert np.all(solve_displacements(band, np.zeros((3, 2))) == 0.0)
    u = solve_displacements(band, np.array([[0, 0], [1, 0], [0, 0]], dtype=float))
    assert u[1] == pytest.approx([0.5, 0.0])

    band = _line_band(5, ks=2.0)
    forces = np.zeros((5, 2))
    forces[2, 1] = 1.0
    u = solve_displacements(band, forces)
    k_inv = 0.25 * np.array([[3, 2, 1], [2, 4, 2], [1, 2, 3]])
    assert np.allclose(np.linalg.inv(stiffness_matrix(3)), k_inv)
    assert u[1:-1, 1] == pytest.approx([0.25, 0.5, 0.25])
    assert np.all(u[[0, -1]] == 0.0)


def test_solve_rejects_mismatched_forces():
    with pytest.raises(LengthMismatch):
        solve_displacements(_line_band(4), np.zeros((3, 2)))


def test_deform_adds_displacement():
    band = _band([(0, 0), (5, 5), (10, 10)])
    u = np.array([[0, 0], [0, 0.4], [0, 0]])
    assert deform(band, u)[1] == pytest.approx([5.0, 5.4])
    assert np.array_equal(deform(band, np.zeros((3, 2))), band.nodes)


def test_far_obstacle_returns_original_path():
    path = straight_path((0, 0), (100, 0), spacing=5.0)
    result = deform_path(path, 10.0, [ObstacleDisk((30.0, 20.0), radius=1.0)], BandParams(r0=3.5))
    assert result.path is path
    assert not np.any(result.displacement)


def test_centered_obstacle_gives_symmetric_lateral_push():
    path = straight_path((0, 0), (100, 0), spacing=5.0)
    params = BandParams(ks=1.0, ke=0.1, r0=3.0)
    # node at s=30 sits 0.5 m beside the obstacle, so the push direction is defined
    result = deform_path(path, 10.0, [ObstacleDisk((30.0, -0.5), radius=1.0)], params, window=(10.0, 50.0))
    u = result.displacement
    # radial forces: lateral part mirrors, along-path part cancels pairwise
    assert np.allclose(u[:, 1], u[::-1, 1], atol=1e-12)
    assert np.allclose(u[:, 0], -u[::-1, 0], atol=1e-12)
    assert u[20, 0] == pytest.approx(0.0, abs=1e-12)
    assert np.sum(u[:, 0]) == pytest.approx(0.0, abs=1e-12)
    assert np.argmax(u[:, 1]) == 20
    # dense oracle on the same force pattern
    dense = np.linalg.solve(stiffness_matrix(len(u) - 2), result.forces[1:-1, 1] / params.ks)
    assert np.allclose(u[1:-1, 1], dense, atol=1e-12)


def test_doubling_ke_doubles_displacement():
    path = straight_path((0, 0), (100, 0), spacing=5.0)
    obs = [ObstacleDisk((30.0, -0.8), radius=1.0)]
    u1 = deform_path(path, 10.0, obs, BandParams(ke=0.05, r0=3.0)).displacement
    u2 = deform_path(path, 10.0, obs, BandParams(ke=0.10, r0=3.0)).displacement
    assert np.allclose(u2, 2.0 * u1, atol=1e-12)


def test_deformed_path_starts_and_ends_on_original():
    path = straight_path((0, 0), (150, 0), spacing=5.0)
    result = deform_path(path, 20.0, [ObstacleDisk((40.0, -0.5), radius=1.5)],
                         BandParams(ke=0.05, r0=3.0, max_offset=3.5), window=(20.0, 60.0))
    assert np.all(result.displacement[[0, -1]] == 0.0)
    for s_node in (20.0, 60.0):
        pt = path.point_at(s_node)
        assert abs(project_to_path(result.path, pt).lateral_offset) < 1e-6


def test_lateral_clamp():
    path = straight_path((0, 0), (150, 0), spacing=5.0)
    result = deform_path(path, 20.0, [ObstacleDisk((40.0, -0.5), radius=1.5)],
                         BandParams(ke=5.0, r0=3.0, max_offset=1.0), window=(20.0, 60.0))
    assert np.max(np.abs(result.displacement[:, 1])) <= 1.0 + 1e-12


# --- properties ---------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_thomas_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    rhs = rng.normal(size=(n, 2))
    off = -np.ones(n - 1)
    x = thomas_solve(off, 2.0 * np.ones(n), off, rhs)
    dense = np.linalg.solve(stiffness_matrix(n), rhs)
    assert np.allclose(x, dense, rtol=1e-9, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 25), st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.integers(0, 2**32 - 1))
def test_linearity_in_force_and_stiffness(n, ks, scale, seed):
    rng = np.random.default_rng(seed)
    f1, f2 = rng.normal(size=(2, n, 2))
    band = _line_band(n, ks=ks)
    u_sum = solve_displacements(band, f1 + f2)
    assert np.allclose(u_sum, solve_displacements(band, f1) + solve_displacements(band, f2), atol=1e-9)
    stiffer = _line_band(n, ks=ks * scale)
    assert np.allclose(solve_displacements(stiffer, f1) * scale, solve_displacements(band, f1), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.2, 4.0), st.floats(0.1, 5.0), st.floats(-3.0, 3.0), st.floats(0.05, 3.0))
def test_scaling_ks_and_ke_together_leaves_displacement(ke, r0, factor, ox, oy):
    path = straight_path((0, 0), (40, 0), spacing=5.0)
    obs = [ObstacleDisk((20.0 + ox, -oy), radius=0.5)]
    a = deform_path(path, 0.0, obs, BandParams(ks=1.0, ke=ke, r0=r0), window=(5.0, 35.0)).displacement
    b = deform_path(path, 0.0, obs, BandParams(ks=factor, ke=ke * factor, r0=r0), window=(5.0, 35.0)).displacement
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=20),
       st.floats(-5, 5), st.floats(-5, 5), st.floats(0.0, 2.0), st.floats(0.1, 4.0))
def test_forces_point_away_from_obstacle(nodes, cx, cy, radius, r0):
    band = _band(nodes, r0=r0)
    r = band.nodes - np.array([cx, cy])
    if np.any(np.hypot(*r.T) < 1e-9):
        return
    f = external_forces(band, [ObstacleDisk((cx, cy), radius)])
    pushed = np.any(f != 0.0, axis=1)
    assert np.all(np.sum(f[pushed] * r[pushed], axis=1) > 0.0)
