import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from locaware.mem import MetricEncodingMap, gfm_continuous_many
from locaware.scan import PoseSE2
from locaware.search import (IterationLimitError, KeyPoseConfig, NoPathError, PosePath, SearchConfig, SigmoidParams,
                             extract_keyposes, heuristic_presearch, hybrid_astar, path_cost, sigmoid,
                             sigmoid_derivative)
from locaware.world import OccupancyGrid, build_distance_field, sample_E_many
from oracles import chebyshev_hops, dijkstra_8, rdp


# -- sigmoid -----------------------------------------------------------------

def test_sigmoid_examples():
    assert sigmoid(32) == pytest.approx(0.5)
    assert sigmoid(0) == pytest.approx(1 / (1 + math.e), abs=1e-12)
    assert sigmoid(0) == pytest.approx(0.268941, abs=1e-6)
    assert sigmoid_derivative(32) == pytest.approx(0.0078125, abs=1e-15)


@given(st.floats(0, 64), st.floats(0, 64))
def test_sigmoid_monotone(a, b):
    if b > a + 1e-6:  # closer than that the difference is below float resolution
        assert sigmoid(a) < sigmoid(b)
    assert sigmoid_derivative(a) > 0


@pytest.mark.parametrize("m", [10.0, 32.0, 50.0])
@pytest.mark.parametrize("eps", [0.5, 1.0, 4.0])
def test_sigmoid_derivative_fd(m, eps):
    p = SigmoidParams(epsilon=eps)
    h = 1e-4
    fd = (sigmoid(m + h, p) - sigmoid(m - h, p)) / (2 * h)
    assert abs(sigmoid_derivative(m, p) - fd) <= 1e-8


def test_bad_epsilon():
    with pytest.raises(ValueError):
        SigmoidParams(epsilon=0.0)


# -- heuristic ---------------------------------------------------------------

def _uniform_mem(shape, q=0, res=0.1):
    return MetricEncodingMap(np.full(shape, np.uint64(q)), res, (0.0, 0.0), {"L": 64})


def _open_room(h=80, w=120, res=0.1):
    cells = np.zeros((h, w), bool)
    cells[:2] = cells[-2:] = True
    cells[:, :2] = cells[:, -2:] = True
    return OccupancyGrid(cells, res)


@pytest.mark.parametrize("q", [0, 0xFFFFFFFF, 2**64 - 1])
def test_uniform_heuristic_is_scaled_hop_count(q):
    free = np.ones((16, 16), bool)
    mem = _uniform_mem(free.shape, q, res=1.0)
    hf = heuristic_presearch(mem, free, PoseSE2(4.5, 11.5, 0.0))
    sig = sigmoid(bin(q).count("1"))
    assert hf.h[11, 4] == 0.0
    assert np.allclose(hf.h, sig * chebyshev_hops(free.shape, (11, 4)), atol=1e-12)


def test_heuristic_matches_dijkstra_oracle(rng):
    free = rng.random((16, 16)) > 0.25
    free[3, 3] = True
    codes = rng.integers(0, 2**63, free.shape, dtype=np.uint64)
    mem = MetricEncodingMap(codes, 1.0, (0.0, 0.0), {})
    hf = heuristic_presearch(mem, free, PoseSE2(3.5, 3.5, 0.0))
    want = dijkstra_8(sigmoid(mem.full_counts()), free, (3, 3))
    assert np.array_equal(np.isinf(hf.h), np.isinf(want))
    fin = np.isfinite(want)
    assert np.allclose(hf.h[fin], want[fin], atol=1e-12)


def test_unreachable_pocket_infinite():
    free = np.ones((10, 10), bool)
    free[:, 5] = False
    hf = heuristic_presearch(_uniform_mem(free.shape, res=1.0), free, PoseSE2(1.5, 1.5, 0.0))
    assert np.isinf(hf.h[:, 6:]).all() and np.isfinite(hf.h[:, :5]).all()
    assert hf.at(8.5, 8.5) == math.inf and hf.at(-3, 0) == math.inf


def test_goal_in_obstacle_rejected():
    free = np.ones((5, 5), bool)
    free[2, 2] = False
    with pytest.raises(ValueError):
        heuristic_presearch(_uniform_mem(free.shape, res=1.0), free, PoseSE2(2.5, 2.5, 0.0))


def test_plain_mode_constant_weight():
    free = np.ones((8, 8), bool)
    mem = MetricEncodingMap(np.arange(64, dtype=np.uint64).reshape(8, 8), 1.0, (0.0, 0.0), {})
    hf = heuristic_presearch(mem, free, PoseSE2(0.5, 0.5, 0.0), perception_aware=False)
    assert np.allclose(hf.h, 0.5 * chebyshev_hops(free.shape, (0, 0)))


# -- hybrid A* ---------------------------------------------------------------

def _search(grid, mem, start, goal, cfg=SearchConfig()):
    df = build_distance_field(grid)
    hf = heuristic_presearch(mem, ~grid.cells, goal, cfg.sigmoid, cfg.perception_aware)
    return df, hybrid_astar(df, mem, hf, start, goal, cfg)


def _length(path):
    return float(np.hypot(*np.diff(path.poses[:, :2], axis=0).T).sum())


def test_start_equals_goal_single_pose():
    g = _open_room(30, 30)
    _, p = _search(g, _uniform_mem(g.cells.shape), PoseSE2(1.5, 1.5, 0.1), PoseSE2(1.6, 1.5, 0.2))
    assert len(p) == 1 and p.g_cost == 0.0


@pytest.mark.parametrize("start,goal", [
    ((1.0, 4.0, 0.0), (10.0, 4.0, 0.0)),
    ((1.03, 3.97, 0.0), (10.51, 4.02, 0.0)),
    ((6.0, 1.0, math.pi / 2), (6.0, 7.0, math.pi / 2)),
    ((1.0, 1.0, math.pi / 4), (4.5, 4.5, math.pi / 4)),
])
@pytest.mark.parametrize("aware", [True, False])
def test_open_map_near_straight_line(start, goal, aware):
    g = _open_room()
    s, gl = PoseSE2(*start), PoseSE2(*goal)
    _, p = _search(g, _uniform_mem(g.cells.shape), s, gl, SearchConfig(perception_aware=aware))
    # close the gap left by the goal tolerance before comparing
    total = _length(p) + math.hypot(p.poses[-1, 0] - gl.x, p.poses[-1, 1] - gl.y)
    assert total <= 1.05 * math.hypot(gl.x - s.x, gl.y - s.y)


def _mean_m(scene, path, fov=math.pi / 2):
    return float(gfm_continuous_many(scene.mem, path.poses, fov)[0].mean())


def test_detour_vs_corridor(scenes):
    sc = scenes("corridor_detour")
    out = {}
    for aware in (True, False):
        cfg = SearchConfig(perception_aware=aware)
        hf = heuristic_presearch(sc.mem, ~sc.grid.cells, sc.goal, cfg.sigmoid, aware)
        out[aware] = hybrid_astar(sc.df, sc.mem, hf, sc.start, sc.goal, cfg)
    # the block spans y in [2.6, 3.6]: the detour passes above it, the corridor below
    assert out[True].poses[:, 1].max() > 3.6
    assert out[False].poses[:, 1].max() < 2.6
    assert _mean_m(sc, out[True]) < _mean_m(sc, out[False])


@pytest.mark.parametrize("aware", [True, False])
def test_path_invariants(scenes, aware):
    sc = scenes("corridor_detour")
    cfg = SearchConfig(perception_aware=aware)
    hf = heuristic_presearch(sc.mem, ~sc.grid.cells, sc.goal, cfg.sigmoid, aware)
    p = hybrid_astar(sc.df, sc.mem, hf, sc.start, sc.goal, cfg)
    clear, _ = sample_E_many(sc.df, p.poses[:, :2])
    assert clear.min() >= cfg.safety
    assert p.g_cost == pytest.approx(path_cost(sc.mem, p, cfg), abs=1e-9)
    # consecutive poses are one primitive apart
    steps = np.hypot(*np.diff(p.poses[:, :2], axis=0).T)
    assert np.all(steps <= 2 * sc.grid.resolution + 1e-9)
    end = p.poses[-1]
    assert math.hypot(end[0] - sc.goal.x, end[1] - sc.goal.y) <= cfg.goal_tol_xy
    again = hybrid_astar(sc.df, sc.mem, hf, sc.start, sc.goal, cfg)
    assert np.array_equal(p.poses, again.poses)


def test_no_path_and_node_budget():
    cells = np.zeros((30, 60), bool)
    cells[:2] = cells[-2:] = True
    cells[:, :2] = cells[:, -2:] = True
    cells[:, 29:31] = True
    g = OccupancyGrid(cells, 0.1)
    mem = _uniform_mem(cells.shape)
    df = build_distance_field(g)
    start, goal = PoseSE2(1.0, 1.5, 0.0), PoseSE2(5.0, 1.5, 0.0)
    with pytest.raises(NoPathError):
        hybrid_astar(df, mem, heuristic_presearch(mem, ~cells, goal), start, goal)
    cells = cells.copy()
    cells[:, 29:31] = False
    g = OccupancyGrid(cells, 0.1)
    df = build_distance_field(g)
    hf = heuristic_presearch(mem, ~cells, goal)
    with pytest.raises(IterationLimitError):
        hybrid_astar(df, mem, hf, start, goal, SearchConfig(max_nodes=5))


def test_start_inside_safety_margin_rejected():
    g = _open_room(30, 30)
    mem = _uniform_mem(g.cells.shape)
    with pytest.raises(ValueError):
        _search(g, mem, PoseSE2(0.3, 1.5, 0.0), PoseSE2(1.5, 1.5, 0.0))


# -- key poses ---------------------------------------------------------------

def test_straight_path_keeps_endpoints():
    xs = np.linspace(0, 3, 16)
    path = PosePath(np.column_stack([xs, np.zeros_like(xs), np.zeros_like(xs)]))
    kp = extract_keyposes(path, KeyPoseConfig(max_spacing=10.0))
    assert np.allclose(kp, [[0, 0, 0], [3, 0, 0]])
    kp = extract_keyposes(path, KeyPoseConfig(max_spacing=1.0))
    assert len(kp) == 4 and np.all(np.diff(kp[:, 0]) <= 1.0 + 0.2 + 1e-9)


def test_l_shape_single_bend():
    a = np.column_stack([np.linspace(0, 2, 11), np.zeros(11)])
    b = np.column_stack([np.full(10, 2.0), np.linspace(0.2, 2, 10)])
    xy = np.vstack([a, b])
    path = PosePath(np.column_stack([xy, np.zeros(len(xy))]))
    kp = extract_keyposes(path, KeyPoseConfig(eps_rdp=0.1, max_spacing=10.0))
    assert len(kp) == 3 and np.allclose(kp[1, :2], [2, 0])
    assert rdp(xy, 0.1) == [0, 10, 20]


def test_yaw_unwrapped_across_pi():
    yaw = np.array([3.0, 3.1, -3.13, -3.0, -2.9])
    xs = np.linspace(0, 4, 5)
    path = PosePath(np.column_stack([xs, np.zeros(5), yaw]))
    kp = extract_keyposes(path, KeyPoseConfig(eps_yaw=0.01, max_spacing=10.0))
    assert np.all(np.abs(np.diff(kp[:, 2])) < math.pi)
    assert kp[-1, 2] == pytest.approx(-2.9 + 2 * math.pi)


def test_keyposes_single_pose_path():
    kp = extract_keyposes(PosePath(np.array([[1.0, 2.0, 0.5]])))
    assert kp.shape == (2, 3) and np.allclose(kp[0], kp[1])


def test_keyposes_respect_safety_on_benchmark(scenes):
    sc = scenes("corridor_detour")
    cfg = SearchConfig()
    hf = heuristic_presearch(sc.mem, ~sc.grid.cells, sc.goal, cfg.sigmoid, True)
    p = hybrid_astar(sc.df, sc.mem, hf, sc.start, sc.goal, cfg)
    kp = extract_keyposes(p, df=sc.df, safety=cfg.safety)
    assert np.allclose(kp[0], p.poses[0]) and np.allclose(kp[-1, :2], sc.goal.as_array()[:2])
    for a, b in zip(kp[:-1, :2], kp[1:, :2]):
        pts = a + np.linspace(0, 1, 50)[:, None] * (b - a)
        # chords are checked at discrete samples, so allow the dip between them
        assert sample_E_many(sc.df, pts)[0].min() >= cfg.safety - 2e-3
