"""Metric-aware path search: sigmoid costs, goal-rooted Dijkstra heuristic,
hybrid A* over motion primitives, and key-pose extraction."""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .mem import MetricEncodingMap, gfm_continuous_many
from .scan import PoseSE2, wrap_angle
from .world import DistanceField, sample_E_many

log = logging.getLogger(__name__)


class NoPathError(RuntimeError):
    pass


class IterationLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class SigmoidParams:
    epsilon: float = 1.0
    L: int = 64

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def sigmoid(m, params: SigmoidParams = SigmoidParams()):
    eps, L = params.epsilon, params.L
    return 1.0 / (1.0 + np.exp((eps * L - 2.0 * eps * np.asarray(m, dtype=float)) / L))


def sigmoid_derivative(m, params: SigmoidParams = SigmoidParams()):
    eps, L = params.epsilon, params.L
    z = 2.0 * eps * np.asarray(m, dtype=float) / L - eps
    return (2.0 * eps / L) / (2.0 + np.exp(z) + np.exp(-z))


# ---------------------------------------------------------------------------
# heuristic pre-search

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True, eq=False)
class HeuristicField:
    h: np.ndarray  # (H, W), +inf where unreachable
    goal_cell: tuple[int, int]
    resolution: float
    origin: tuple[float, float]

    def at(self, x: float, y: float) -> float:
        col = math.floor((x - self.origin[0]) / self.resolution)
        row = math.floor((y - self.origin[1]) / self.resolution)
        H, W = self.h.shape
        if not (0 <= row < H and 0 <= col < W):
            return math.inf
        return float(self.h[row, col])


def cell_weights(mem: MetricEncodingMap, params: SigmoidParams, perception_aware: bool = True) -> np.ndarray:
    if perception_aware:
        return sigmoid(mem.full_counts(), params)
    return np.full(mem.codes.shape, 0.5)


def heuristic_presearch(mem: MetricEncodingMap, free: np.ndarray, goal: PoseSE2,
                        params: SigmoidParams = SigmoidParams(), perception_aware: bool = True) -> HeuristicField:
    """Dijkstra from the goal cell over 8-connected free cells.

    Entering cell b costs sigma(M_1L(b)); the goal cell itself has h = 0.
    With ``perception_aware=False`` every hop costs a constant 0.5.
    """
    res = mem.resolution
    H, W = mem.codes.shape
    gr = math.floor((goal.y - mem.origin[1]) / res)
    gc = math.floor((goal.x - mem.origin[0]) / res)
    if not (0 <= gr < H and 0 <= gc < W) or not free[gr, gc]:
        raise ValueError("goal cell is not free")
    w = cell_weights(mem, params, perception_aware)
    h = np.full((H, W), np.inf)
    h[gr, gc] = 0.0
    heap = [(0.0, gr, gc)]
    while heap:
        d, r, c = heapq.heappop(heap)
        if d > h[r, c]:
            continue
        for dr, dc in _NEIGHBORS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < H and 0 <= cc < W and free[rr, cc]:
                nd = d + w[rr, cc]
                if nd < h[rr, cc]:
                    h[rr, cc] = nd
                    heapq.heappush(heap, (nd, rr, cc))
    h.flags.writeable = False
    return HeuristicField(h, (gr, gc), res, mem.origin)


# ---------------------------------------------------------------------------
# hybrid A*


@dataclass(frozen=True)
class SearchConfig:
    step: float | None = None  # primitive length, default 2 * resolution
    curvature: float = 1.0  # max |dtheta/ds| of arc primitives, rad/m
    rotate_step: float = 2 * math.pi / 32
    lateral: bool = True
    theta_bins: int = 32
    goal_tol_xy: float = 0.25
    goal_tol_yaw: float = 0.35
    safety: float = 0.5  # wider than the optimizer's d so smoothing has slack
    max_nodes: int = 200_000
    fov: float = math.pi / 2
    perception_aware: bool = True
    sigmoid: SigmoidParams = SigmoidParams()
    rotate_cost: float = 0.5  # plain mode: cost of a pure rotation relative to one step
    h_weight: float = 1.0  # >1 trades optimality for fewer expansions


@dataclass
class PosePath:
    poses: np.ndarray  # (N, 3)
    goal: np.ndarray | None = None
    g_cost: float = 0.0
    expansions: int = 0
    admissibility_violations: int = 0

    def __len__(self):
        return len(self.poses)


def _primitives(cfg: SearchConfig, step: float):
    """(forward, lateral, dtheta) triples in the body frame."""
    k = cfg.curvature
    prims = []
    for rate in (-k, -k / 2, 0.0, k / 2, k):
        prims.append(("arc", step, rate * step))
    prims.append(("rot", 0.0, cfg.rotate_step))
    prims.append(("rot", 0.0, -cfg.rotate_step))
    if cfg.lateral:
        prims.append(("lat", step, math.pi / 2))
        prims.append(("lat", step, -math.pi / 2))
    return prims


def _apply(pose, prim, n_sub=4):
    """End pose and intermediate sample points of a primitive."""
    x, y, th = pose
    kind, length, val = prim
    if kind == "rot":
        return (x, y, th + val), np.array([[x, y]])
    if kind == "lat":
        d = th + val
        ts = np.linspace(1 / n_sub, 1.0, n_sub) * length
        pts = np.stack([x + ts * math.cos(d), y + ts * math.sin(d)], axis=1)
        return (x + length * math.cos(d), y + length * math.sin(d), th), pts
    ts = np.linspace(1 / n_sub, 1.0, n_sub)
    if abs(val) < 1e-12:
        s = ts * length
        pts = np.stack([x + s * math.cos(th), y + s * math.sin(th)], axis=1)
    else:
        kappa = val / length
        ang = th + ts * val
        pts = np.stack(
            [x + (np.sin(ang) - math.sin(th)) / kappa, y - (np.cos(ang) - math.cos(th)) / kappa], axis=1
        )
    return (float(pts[-1, 0]), float(pts[-1, 1]), th + val), pts


def _key(pose, origin, res, bins):
    col = math.floor((pose[0] - origin[0]) / res)
    row = math.floor((pose[1] - origin[1]) / res)
    tb = int(math.floor((wrap_angle(pose[2]) + math.pi) / (2 * math.pi) * bins)) % bins
    return row, col, tb


def step_costs(mem: MetricEncodingMap, poses: np.ndarray, prims, cfg: SearchConfig, step: float) -> np.ndarray:
    """Per-pose actual cost: sigma(M(pose)) or a constant distance-proportional cost."""
    if cfg.perception_aware:
        m, _ = gfm_continuous_many(mem, poses, cfg.fov)
        return sigmoid(m, cfg.sigmoid)
    out = []
    for kind, length, _ in prims:
        out.append(0.5 * cfg.rotate_cost if kind == "rot" else 0.5 * length / step)
    return np.array(out)


def hybrid_astar(df: DistanceField, mem: MetricEncodingMap, hfield: HeuristicField,
                 start: PoseSE2, goal: PoseSE2, cfg: SearchConfig = SearchConfig()) -> PosePath:
    grid = df.grid
    df.require_finite()
    res = grid.resolution
    step = cfg.step if cfg.step is not None else 2 * res
    s = start.as_array()
    g = goal.as_array()
    clear, _ = sample_E_many(df, np.array([s[:2], g[:2]]))
    if clear[0] < cfg.safety or clear[1] < cfg.safety:
        raise ValueError("start or goal violates the safety margin")

    def at_goal(p):
        return (math.hypot(p[0] - g[0], p[1] - g[1]) <= cfg.goal_tol_xy
                and abs(wrap_angle(p[2] - g[2])) <= cfg.goal_tol_yaw)

    if at_goal(s):
        return PosePath(s[None, :].copy(), g, 0.0, 0)

    prims = _primitives(cfg, step)
    counter = itertools.count()
    nodes = [(tuple(s), -1, 0.0)]  # pose, parent, g
    best_g = {_key(s, grid.origin, res, cfg.theta_bins): 0.0}
    closed = set()
    # h counts cell hops, one primitive spans step / res of them
    hs = cfg.h_weight * res / step
    h0 = hs * hfield.at(s[0], s[1])
    heap = [(h0, h0, next(counter), 0)]
    expansions = 0
    while heap:
        _, h_cur, _, idx = heapq.heappop(heap)
        pose, _, g_cur = nodes[idx]
        k = _key(pose, grid.origin, res, cfg.theta_bins)
        if k in closed:
            continue
        closed.add(k)
        if at_goal(pose):
            return _reconstruct(nodes, idx, g, expansions, hfield, hs)
        expansions += 1
        if expansions > cfg.max_nodes:
            raise IterationLimitError(f"node budget {cfg.max_nodes} exhausted")

        ends, samples = [], []
        for prim in prims:
            end, pts = _apply(pose, prim)
            ends.append(end)
            samples.append(pts)
        counts = [len(p) for p in samples]
        clear, _ = sample_E_many(df, np.vstack(samples))
        ok = np.array([c.min() >= cfg.safety for c in np.split(clear, np.cumsum(counts)[:-1])])
        if not ok.any():
            continue
        end_arr = np.array(ends)
        costs = step_costs(mem, end_arr, prims, cfg, step)
        for j in np.flatnonzero(ok):
            end = ends[j]
            kj = _key(end, grid.origin, res, cfg.theta_bins)
            if kj in closed:
                continue
            h = hs * hfield.at(end[0], end[1])
            if not math.isfinite(h):
                continue
            gj = g_cur + float(costs[j])
            if gj >= best_g.get(kj, math.inf):
                continue
            best_g[kj] = gj
            nodes.append((end, idx, gj))
            heapq.heappush(heap, (gj + h, h, next(counter), len(nodes) - 1))
    raise NoPathError("open set exhausted before reaching the goal")


def _reconstruct(nodes, idx, goal, expansions, hfield: HeuristicField, hs: float) -> PosePath:
    chain = []
    while idx >= 0:
        pose, parent, g = nodes[idx]
        chain.append((pose, g))
        idx = parent
    chain.reverse()
    poses = np.array([p for p, _ in chain], dtype=float)
    gs = np.array([g for _, g in chain])
    total = gs[-1]
    # heuristic vs realized remaining cost; logged only
    viol = sum(hs * hfield.at(p[0], p[1]) > total - gk + 1e-9 for p, gk in zip(poses, gs))
    if viol:
        log.info("heuristic exceeded realized cost-to-go at %d of %d path poses", viol, len(poses))
    return PosePath(poses, np.asarray(goal, dtype=float), float(total), expansions, int(viol))


def path_cost(mem: MetricEncodingMap, path: PosePath, cfg: SearchConfig) -> float:
    """Recompute the accumulated actual cost of a returned path."""
    if len(path.poses) < 2:
        return 0.0
    if cfg.perception_aware:
        m, _ = gfm_continuous_many(mem, path.poses[1:], cfg.fov)
        return float(np.sum(sigmoid(m, cfg.sigmoid)))
    total = 0.0
    for a, b in zip(path.poses[:-1], path.poses[1:]):
        moved = math.hypot(b[0] - a[0], b[1] - a[1]) > 1e-9
        total += 0.5 if moved else 0.5 * cfg.rotate_cost
    return total


# ---------------------------------------------------------------------------
# key poses


@dataclass(frozen=True)
class KeyPoseConfig:
    eps_rdp: float = 0.25  # m, max perpendicular deviation of dropped poses
    eps_yaw: float = 0.3  # rad, max yaw deviation from linear interpolation
    max_spacing: float = 1.5  # m, along the path


def _rdp(points: np.ndarray, eps: float, yaw: np.ndarray | None = None, eps_yaw: float = math.inf,
         chord_ok=None) -> list[int]:
    """Polyline simplification; a span is also split when its yaw deviates
    from linear interpolation or when ``chord_ok(i, j)`` rejects its chord."""
    keep = {0, len(points) - 1}
    stack = [(0, len(points) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = points[i], points[j]
        ab = b - a
        n = np.hypot(*ab)
        seg = points[i + 1:j] - a
        if n < 1e-12:
            d = np.hypot(seg[:, 0], seg[:, 1])
        else:
            d = np.abs(ab[0] * seg[:, 1] - ab[1] * seg[:, 0]) / n
        split = d.max() > eps
        if yaw is not None and not split:
            frac = np.arange(1, j - i) / (j - i)
            dy = np.abs(yaw[i + 1:j] - (yaw[i] + frac * (yaw[j] - yaw[i])))
            if dy.max() > eps_yaw:
                split = True
                d = dy
        if not split and chord_ok is not None and not chord_ok(i, j):
            split = True
            if d.max() <= 1e-12:
                d = -np.abs(np.arange(1, j - i) - (j - i) / 2)
        if split:
            m = i + 1 + int(np.argmax(d))
            keep.add(m)
            stack.append((i, m))
            stack.append((m, j))
    return sorted(keep)


def extract_keyposes(path: PosePath, cfg: KeyPoseConfig = KeyPoseConfig(), df: DistanceField | None = None,
                     safety: float | None = None) -> np.ndarray:
    """Key poses (K+1, 3) with continuous (unwrapped) yaw.

    Interior poses come from polyline simplification of the xy path plus
    extra path poses wherever consecutive key poses are too far apart.  With
    ``df`` and ``safety`` given, a chord whose clearance drops below
    ``safety`` is split further so the simplified polyline stays as safe as
    the path itself.
    """
    poses = np.array(path.poses, dtype=float)
    if path.goal is not None and not np.allclose(poses[-1], path.goal):
        poses = np.vstack([poses, path.goal])
    yaw = np.unwrap(poses[:, 2])
    xy = poses[:, :2]
    if len(poses) == 1:
        return np.array([[xy[0, 0], xy[0, 1], yaw[0]], [xy[0, 0], xy[0, 1], yaw[0]]])
    chord_ok = None
    if df is not None and safety is not None:
        step = 0.25 * df.grid.resolution

        def _chord_ok(i, j):
            length = float(np.hypot(*(xy[j] - xy[i])))
            n = max(int(math.ceil(length / step)), 1)
            pts = xy[i] + np.linspace(0.0, 1.0, n + 1)[:, None] * (xy[j] - xy[i])
            return bool(sample_E_many(df, pts)[0].min() >= safety)

        chord_ok = _chord_ok

    idx = _rdp(xy, cfg.eps_rdp, yaw, cfg.eps_yaw, chord_ok)
    arclen = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])
    out = [idx[0]]
    for a, b in zip(idx[:-1], idx[1:]):
        gap = arclen[b] - arclen[a]
        n_extra = int(math.ceil(gap / cfg.max_spacing)) - 1
        for k in range(1, n_extra + 1):
            target = arclen[a] + gap * k / (n_extra + 1)
            m = int(np.searchsorted(arclen, target))
            if a < m < b and m != out[-1]:
                out.append(m)
        out.append(b)
    kp = np.column_stack([xy[out], yaw[out]])
    return kp
