"""End-to-end planning, evaluation and the three-arm ablation."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ConfigError, PlanConfig
from .localizer import EvalReport, track_trajectory
from .maps import BENCHMARKS, get_scenario
from .mem import MetricEncodingMap, build_mem, load_mem
from .minco import MincoTrajectory, construct
from .optimizer import OptResult, check_violations, optimize
from .scan import PoseSE2
from .search import (HeuristicField, IterationLimitError, NoPathError, PosePath, extract_keyposes,
                     heuristic_presearch, hybrid_astar)
from .world import DistanceField, OccupancyGrid, build_distance_field, load_occupancy

log = logging.getLogger(__name__)

ARMS = ("complete", "no_search", "no_loc")


@dataclass
class Scene:
    grid: OccupancyGrid
    df: DistanceField
    mem: MetricEncodingMap
    start: PoseSE2
    goal: PoseSE2
    _h: dict = field(default_factory=dict, repr=False)

    def heuristic(self, goal: PoseSE2, cfg: PlanConfig, perception_aware: bool) -> HeuristicField:
        key = (goal, perception_aware, cfg.search.sigmoid)
        if key not in self._h:
            self._h[key] = heuristic_presearch(self.mem, ~self.grid.cells, goal, cfg.search.sigmoid, perception_aware)
        return self._h[key]


def load_scene_grid(cfg: PlanConfig) -> tuple[OccupancyGrid, PoseSE2 | None, PoseSE2 | None]:
    """Occupancy grid and default start/goal for ``cfg.map``."""
    if cfg.map in BENCHMARKS:
        sc = get_scenario(cfg.map)
        return sc.grid, sc.start, sc.goal
    p = Path(cfg.map)
    if not p.is_file():
        raise FileNotFoundError(f"map {cfg.map!r} is neither a benchmark ({', '.join(BENCHMARKS)}) nor a file")
    if not p.with_suffix(".json").is_file():
        raise FileNotFoundError(f"map sidecar {p.with_suffix('.json')} not found")
    return load_occupancy(p, p.with_suffix(".json")), None, None


def load_scene(cfg: PlanConfig) -> Scene:
    """Resolve the map (benchmark name or PNG path), distance field and MEM."""
    grid, start, goal = load_scene_grid(cfg)
    if cfg.start is not None:
        start = PoseSE2(*cfg.start)
    if cfg.goal is not None:
        goal = PoseSE2(*cfg.goal)
    if start is None or goal is None:
        raise ConfigError("start and goal must be given for maps loaded from disk")
    for name, p in (("start", start), ("goal", goal)):
        if grid.is_occupied(p.x, p.y):
            raise ConfigError(f"{name} pose ({p.x:g}, {p.y:g}) is not in free space")
    df = build_distance_field(grid)
    df.require_finite()
    if cfg.mem is not None:
        mem = load_mem(cfg.mem, expected_source_hash=grid.digest)
        if mem.codes.shape != grid.cells.shape:
            raise ConfigError(f"MEM shape {mem.codes.shape} does not match map {grid.cells.shape}")
    else:
        mem = build_mem(grid, cfg.scan)
    return Scene(grid, df, mem, start, goal)


def _trapezoid_clock(s, total: float, v: float, a: float):
    """Time at arc length ``s`` of a rest-to-rest trapezoidal profile over ``total``."""
    s = np.asarray(s, dtype=float)
    ramp = v * v / a
    if total <= ramp:  # triangular: never reaches cruise speed
        half = total / 2
        t_half = math.sqrt(2 * half / a) if half > 0 else 0.0
        up = np.sqrt(2 * np.minimum(s, half) / a)
        down = np.sqrt(2 * np.maximum(total - s, 0.0) / a)
        return np.where(s <= half, up, 2 * t_half - down)
    d_acc = ramp / 2
    t_acc = v / a
    t_cruise = (total - ramp) / v
    up = np.sqrt(2 * np.minimum(s, d_acc) / a)
    mid = t_acc + (s - d_acc) / v
    down = 2 * t_acc + t_cruise - np.sqrt(2 * np.maximum(total - s, 0.0) / a)
    return np.where(s <= d_acc, up, np.where(s <= total - d_acc, mid, down))


def initial_times(keyposes: np.ndarray, cfg: PlanConfig, floor: float = 0.1) -> np.ndarray:
    """Per-segment durations for the initial trajectory.

    One trapezoidal speed profile at half the velocity and acceleration limits
    runs over the whole key-pose polyline; each segment also gets at least the
    time to turn its yaw change at half the yaw-rate limit.
    """
    o = cfg.opt
    d = np.diff(keyposes, axis=0)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(d[:, 0], d[:, 1]))])
    clock = _trapezoid_clock(arc, float(arc[-1]), 0.5 * o.v_max, 0.5 * o.a_max)
    t_lin = np.diff(clock)
    t_ang = np.abs(d[:, 2]) / (0.5 * o.w_max)
    return np.maximum(np.maximum(t_lin, t_ang), floor)


def initial_trajectory(keyposes: np.ndarray, cfg: PlanConfig, s: int = 3) -> MincoTrajectory:
    start = np.zeros((s, 3))
    end = np.zeros((s, 3))
    start[0] = keyposes[0]
    end[0] = keyposes[-1]
    return construct(keyposes[1:-1], initial_times(keyposes, cfg), start, end, s)


@dataclass
class PlanResult:
    path: PosePath
    keyposes: np.ndarray
    initial: MincoTrajectory
    opt: OptResult
    violations: dict
    timings: dict

    @property
    def traj(self) -> MincoTrajectory:
        return self.opt.traj


def arm_config(cfg: PlanConfig, arm: str) -> PlanConfig:
    if arm == "complete":
        return cfg
    if arm == "no_search":
        return dataclasses.replace(cfg, search=dataclasses.replace(cfg.search, perception_aware=False))
    if arm == "no_loc":
        return dataclasses.replace(cfg, opt=dataclasses.replace(cfg.opt, lambda_l=0.0))
    raise ValueError(f"unknown arm {arm!r}; choose from {ARMS}")


def plan(scene: Scene, cfg: PlanConfig, start: PoseSE2 | None = None, goal: PoseSE2 | None = None) -> PlanResult:
    start = scene.start if start is None else start
    goal = scene.goal if goal is None else goal
    tm = {}
    t0 = time.perf_counter()
    hf = scene.heuristic(goal, cfg, cfg.search.perception_aware)
    tm["heuristic_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    path = hybrid_astar(scene.df, scene.mem, hf, start, goal, cfg.search)
    tm["search_s"] = time.perf_counter() - t0
    kp = extract_keyposes(path, cfg.keyposes, scene.df, cfg.opt.safety)
    init = initial_trajectory(kp, cfg)
    t0 = time.perf_counter()
    res = optimize(init, scene.df, scene.mem, cfg.opt)
    tm["optimize_s"] = time.perf_counter() - t0
    viols = check_violations(res.traj, scene.df, cfg.opt)
    log.info("plan: %d path poses, %d key poses, opt %s after %d iters", len(path), len(kp), res.status, res.iterations)
    return PlanResult(path, kp, init, res, viols, tm)


def evaluate_plan(scene: Scene, traj: MincoTrajectory, cfg: PlanConfig, seed: int) -> EvalReport:
    return track_trajectory(traj, scene.df, cfg.noise, cfg.localize, seed)


# ---------------------------------------------------------------------------
# ablation


@dataclass
class ArmSummary:
    arm: str
    mean_errors: list
    goal_deviations: list
    plan_times: list  # wall seconds of presearch + search + optimize
    durations: list  # trajectory durations, s
    mean_error: float
    ci_low: float
    ci_high: float
    goal_deviation: float
    goal_ci_low: float
    goal_ci_high: float
    failures: int  # localization non-convergences summed over seeds
    plan_failures: int  # seeds where the arm produced no trajectory
    mean_J_l: float = float("nan")


@dataclass
class AblationResult:
    arms: dict  # arm -> ArmSummary
    seeds: list

    def to_json(self) -> dict:
        return {"seeds": self.seeds, "arms": {k: dataclasses.asdict(v) for k, v in self.arms.items()}}


def bootstrap_ci(values, resamples: int, confidence: float, seed: int) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return math.nan, math.nan
    if len(values) < 2 or np.ptp(values) == 0:
        return float(values.mean()), float(values.mean())
    r = stats.bootstrap((values,), np.mean, n_resamples=resamples, confidence_level=confidence,
                        method="percentile", random_state=np.random.default_rng(seed))
    return float(r.confidence_interval.low), float(r.confidence_interval.high)


def jittered_start(scene: Scene, cfg: PlanConfig, seed: int) -> PoseSE2:
    """Seeded start perturbation that keeps the safety margin."""
    from .world import sample_E

    rng = np.random.default_rng([cfg.seed, seed, 7])
    s = scene.start
    for _ in range(100):
        dx, dy = rng.uniform(-1, 1, 2) * cfg.ablation.start_jitter_m
        cand = PoseSE2(s.x + dx, s.y + dy, s.theta)
        if sample_E(scene.df, [cand.x, cand.y])[0] >= cfg.search.safety:
            return cand
    return s


def run_seed(scene: Scene, cfg: PlanConfig, seed: int, arms=ARMS) -> dict:
    """One seed of the ablation: every arm planned from the same jittered start
    and tracked under the same noise stream."""
    from .optimizer import localization_cost

    start = jittered_start(scene, cfg, seed)
    out = {}
    for arm in arms:
        acfg = arm_config(cfg, arm)
        try:
            pr = plan(scene, acfg, start=start)
        except (NoPathError, IterationLimitError) as exc:
            log.warning("seed %d arm %s: %s", seed, arm, exc)
            out[arm] = None
            continue
        rep = evaluate_plan(scene, pr.traj, acfg, seed=seed)
        jl = localization_cost(pr.traj, scene.mem, cfg.opt)[0]
        out[arm] = {"mean": rep.mean_error, "goal": rep.goal_deviation, "fail": rep.failures,
                    "time": sum(pr.timings.values()), "dur": pr.traj.duration, "J_l": float(jl)}
    return out


_WORKER: dict = {}


def _worker_init(scene, cfg, arms):
    _WORKER.update(scene=scene, cfg=cfg, arms=arms)


def _worker_seed(seed):
    return seed, run_seed(_WORKER["scene"], _WORKER["cfg"], seed, _WORKER["arms"])


def run_ablation(scene: Scene, cfg: PlanConfig, arms=ARMS, progress=None, workers: int = 1) -> AblationResult:
    """Run every arm over ``cfg.ablation.seeds`` seeds.

    Each seed fixes the start jitter and the evaluation noise stream; all arms
    share both, so differences come from the planners only.  With
    ``workers > 1`` seeds run in a process pool; aggregation is by seed order,
    so results do not depend on the worker count.
    """
    seeds = [cfg.seed + k for k in range(cfg.ablation.seeds)]
    results = {}
    if workers > 1:
        import concurrent.futures as cf
        import multiprocessing as mp

        scene.heuristic(scene.goal, cfg, True)  # computed once, inherited by forked workers
        scene.heuristic(scene.goal, cfg, False)
        with cf.ProcessPoolExecutor(workers, mp_context=mp.get_context("fork"), initializer=_worker_init,
                                    initargs=(scene, cfg, tuple(arms))) as ex:
            for sd, r in ex.map(_worker_seed, seeds):
                results[sd] = r
                if progress is not None:
                    progress(sd, r)
    else:
        for sd in seeds:
            results[sd] = run_seed(scene, cfg, sd, arms)
            if progress is not None:
                progress(sd, results[sd])
    out = {}
    for arm in arms:
        rows = [results[sd][arm] for sd in seeds if results[sd][arm] is not None]
        m = [r["mean"] for r in rows]
        gd = [r["goal"] for r in rows]
        lo, hi = bootstrap_ci(m, cfg.ablation.bootstrap_resamples, cfg.ablation.confidence, cfg.seed)
        glo, ghi = bootstrap_ci(gd, cfg.ablation.bootstrap_resamples, cfg.ablation.confidence, cfg.seed)
        out[arm] = ArmSummary(
            arm=arm, mean_errors=m, goal_deviations=gd,
            plan_times=[r["time"] for r in rows], durations=[r["dur"] for r in rows],
            mean_error=float(np.mean(m)) if m else math.nan, ci_low=lo, ci_high=hi,
            goal_deviation=float(np.mean(gd)) if gd else math.nan, goal_ci_low=glo, goal_ci_high=ghi,
            failures=sum(r["fail"] for r in rows), plan_failures=len(seeds) - len(rows),
            mean_J_l=float(np.mean([r["J_l"] for r in rows])) if rows else math.nan,
        )
    return AblationResult(out, seeds)
