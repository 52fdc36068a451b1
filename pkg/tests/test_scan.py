import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from locaware.scan import (GrazingIncidenceError, PoseSE2, RayClass, ScanConfig, classify_ray, classify_ray_detail,
                           hit_jacobian_analytic, hit_jacobian_fd, ray_angles, simulate_scan, stacked_fd_matrix,
                           wrap_angle)
from locaware.world import OccupancyGrid, RaycastError, raycast


def room(n=40, res=0.1):
    cells = np.zeros((n, n), bool)
    cells[:2] = cells[-2:] = True
    cells[:, :2] = cells[:, -2:] = True
    return OccupancyGrid(cells, res)


def wall_map(res=0.1):
    """Free space left of a vertical wall occupying x >= 3."""
    cells = np.zeros((60, 60), bool)
    cells[:, 30:] = True
    return OccupancyGrid(cells, res)


def corridor(res=0.1, length=400, width=20):
    cells = np.zeros((width + 4, length), bool)
    cells[:2] = cells[-2:] = True
    return OccupancyGrid(cells, res)


@given(st.floats(-50, 50))
def test_wrap_angle_range_and_idempotent(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert wrap_angle(w) == w
    assert PoseSE2(0, 0, a).theta == PoseSE2(0, 0, PoseSE2(0, 0, a).theta).theta


def test_ray_angle_spacing():
    assert np.allclose(np.degrees(ray_angles(math.pi / 2, 4)), [-45, -22.5, 0, 22.5])


def test_empty_map_all_miss():
    s = simulate_scan(OccupancyGrid(np.zeros((20, 20), bool), 0.1), PoseSE2(1, 1, 0), 2 * math.pi, 32, 5.0)
    assert s.n_returns == 0 and len(s.hit) == len(s.ray_angles) == 32


def test_square_room_symmetry():
    g = room()
    a = simulate_scan(g, PoseSE2(2.0, 2.0, 0.0), 2 * math.pi, 64, 10.0)
    b = simulate_scan(g, PoseSE2(2.0, 2.0, math.pi / 2), 2 * math.pi, 64, 10.0)
    assert a.hit.all() and b.hit.all()
    # body ray k of the rotated pose points where ray k + 16 of the original does
    assert np.allclose(b.ranges, np.roll(a.ranges, -16), atol=1e-9)
    # and the geometry: half-width 1.8 m to the inner wall face
    assert a.ranges[32] == pytest.approx(1.8)


def test_scan_from_obstacle_errors():
    with pytest.raises(RaycastError):
        simulate_scan(room(), PoseSE2(0.05, 0.05, 0), 1.0, 4, 5.0)


# -- Jacobians ---------------------------------------------------------------

def test_fd_wall_example():
    x0 = 1.23
    J = hit_jacobian_fd(wall_map(), PoseSE2(x0, 2.05, 0.0), 0.0)
    # default steps: theta column carries the O(dtheta^2) truncation of tan
    assert np.allclose(J, [[0, 0, 0], [0, 1, 3.0 - x0]], atol=1e-3)
    assert np.linalg.matrix_rank(J, tol=1e-6) == 1


def test_analytic_example():
    J = hit_jacobian_analytic((1, 0, 5, 0), PoseSE2(2, 0, 0), 0.0)
    assert np.allclose(J, [[0, 0, 0], [0, 1, 3]])


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-5, 5), st.floats(-5, 5), st.floats(-4, 4), st.floats(-4, 4))
def test_analytic_rows_proportional(A, B, a, x0, k, y0):
    assume(abs(A) + abs(B) > 1e-2 and abs(A + B * k) > 1e-2)
    J = hit_jacobian_analytic((A, B, a, 0.0), PoseSE2(x0, y0, 0), k)
    # A * row1 + B * row2 = 0, i.e. rows proportional with ratio -B/A
    assert np.allclose(A * J[0] + B * J[1], 0, atol=1e-9 * max(1, np.abs(J).max()))
    s = np.linalg.svd(J, compute_uv=False)
    assert s[1] <= 1e-9 * max(s[0], 1)


def test_grazing_incidence():
    with pytest.raises(GrazingIncidenceError):
        hit_jacobian_analytic((1, -1, 0, 0), PoseSE2(0, 0, 0), 1.0)


FINE = (1e-4, 1e-4)  # ray casting is exact, so small steps only shrink truncation


@pytest.mark.parametrize("angle", [-0.8, -0.5, 0.0, 0.3, 0.8])
def test_analytic_matches_fd_vertical_wall(angle):
    pose = PoseSE2(1.04, 3.01, 0.0)
    J_fd = hit_jacobian_fd(wall_map(), pose, angle, steps=FINE)
    J_an = hit_jacobian_analytic((1.0, 0.0, 3.0, 0.0), pose, math.tan(angle))
    assert np.abs(J_fd - J_an).max() <= 1e-3 * max(1.0, np.abs(J_an).max())


@pytest.mark.parametrize("angle", [0.9, 1.2, 1.5707963, 2.2])
def test_analytic_matches_fd_horizontal_wall(angle):
    cells = np.zeros((60, 60), bool)
    cells[40:] = True  # wall face y = 4
    g = OccupancyGrid(cells, 0.1)
    pose = PoseSE2(3.02, 1.07, 0.0)
    J_fd = hit_jacobian_fd(g, pose, angle, steps=FINE)
    hit = raycast(g, (pose.x, pose.y), angle, 20.0).point
    k = math.tan(angle) if abs(math.cos(angle)) > 1e-9 else 1e12
    J_an = hit_jacobian_analytic((0.0, 1.0, hit[0], 4.0), pose, k)
    assert np.abs(J_fd - J_an).max() <= 1e-3 * max(1.0, np.abs(J_an).max())


def test_corner_is_rank2():
    g = room()
    # ray aimed at the inside corner (0.2, 0.2) from (1.0, 0.6)
    pose = PoseSE2(1.0, 0.6, 0.0)
    ang = math.atan2(0.2 - 0.6, 0.2 - 1.0)
    M = stacked_fd_matrix(g, pose, ang)
    s = np.linalg.svd(M, compute_uv=False)
    assert s[1] / s[0] > 0.2
    assert classify_ray(g, pose, ang) == RayClass.Rank2


def test_corridor_side_wall_rank1():
    g = corridor()
    for ang in (0.3, 1.2, 2.0, -0.7, -2.5):
        cls, ratio = classify_ray_detail(g, PoseSE2(20.0, 1.2, 0.0), ang)
        assert cls == RayClass.Rank1 and ratio < 1e-3


def test_beyond_range_is_miss():
    g = corridor()
    assert classify_ray(g, PoseSE2(20.0, 1.2, 0.0), 0.0, ScanConfig(max_range=5.0)) == RayClass.Miss


def test_classify_deterministic():
    g = room()
    pose = PoseSE2(1.3, 0.9, 0.4)
    out = [classify_ray_detail(g, pose, a) for a in np.linspace(-3, 3, 25)]
    assert out == [classify_ray_detail(g, pose, a) for a in np.linspace(-3, 3, 25)]


def _rot90_grid(g: OccupancyGrid) -> OccupancyGrid:
    H, W = g.cells.shape
    new = np.zeros((W, H), bool)
    for r in range(H):
        for c in range(W):
            new[c, H - 1 - r] = g.cells[r, c]
    return OccupancyGrid(new, g.resolution)


def test_frame_equivariance():
    cells = np.zeros((30, 40), bool)
    cells[:2] = cells[-2:] = True
    cells[:, :2] = cells[:, -2:] = True
    cells[10:14, 15:27] = True
    g = OccupancyGrid(cells, 0.1)
    gr = _rot90_grid(g)
    H = cells.shape[0]
    rng = np.random.default_rng(5)
    compared = 0
    for _ in range(30):
        x, y, th = rng.uniform(0.3, 3.7), rng.uniform(0.3, 2.7), rng.uniform(-3, 3)
        if g.is_occupied(x, y):
            continue
        p = PoseSE2(x, y, th)
        pr = PoseSE2(H * 0.1 - y, x, th + math.pi / 2)
        for a in np.linspace(-math.pi, math.pi, 16, endpoint=False):
            c1, r1 = classify_ray_detail(g, p, a)
            c2, r2 = classify_ray_detail(gr, pr, a)
            if abs(r1 - 0.05) < 0.01:
                continue  # too close to the threshold to call
            assert c1 == c2
            compared += 1
    assert compared > 200
