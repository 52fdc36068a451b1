"""Scan-to-map registration on the distance field.

The objective is half the sum of squared distances of the transformed scan
points, with measured body-frame points held fixed, so each point's Jacobian
is [I2 | R'(theta) z].  This module is the evaluation oracle: it shows where
the planner's metric predicts real localization trouble.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .minco import MincoTrajectory, evaluate
from .scan import ray_angles, wrap_angle
from .world import DistanceField, raycast_many, sample_E_exact_many


@dataclass
class Registration:
    points: np.ndarray  # (N, 2) body frame
    df: DistanceField
    pose: np.ndarray  # current estimate (x, y, theta)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.pose = np.asarray(self.pose, dtype=float)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("scan points must be finite")


def _terms(reg: Registration, pose=None):
    """Residuals E(q_i), per-point a_i = J_i^T grad E, and points."""
    p = reg.pose if pose is None else np.asarray(pose, dtype=float)
    c, s = math.cos(p[2]), math.sin(p[2])
    z = reg.points
    q = np.column_stack([p[0] + c * z[:, 0] - s * z[:, 1], p[1] + s * z[:, 0] + c * z[:, 1]])
    E, gE = sample_E_exact_many(reg.df, q, signed=True)
    dq_dth = np.column_stack([-s * z[:, 0] - c * z[:, 1], c * z[:, 0] - s * z[:, 1]])
    a = np.column_stack([gE[:, 0], gE[:, 1], np.sum(dq_dth * gE, axis=1)])
    return E, a


def objective_and_gradient(reg: Registration, pose=None) -> tuple[float, np.ndarray]:
    E, a = _terms(reg, pose)
    return 0.5 * float(E @ E), a.T @ E


@dataclass
class HessianSplit:
    H1: np.ndarray
    H_total_fd: np.ndarray
    residual: np.ndarray
    eigvals: np.ndarray  # ascending, of H1
    eigvecs: np.ndarray  # columns


def hessian_h1(reg: Registration, pose=None) -> np.ndarray:
    _, a = _terms(reg, pose)
    return a.T @ a


def hessian_analysis(reg: Registration, steps=(1e-4, 1e-4, 1e-4)) -> HessianSplit:
    H1 = hessian_h1(reg)
    Hfd = np.zeros((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = steps[k]
        _, gp = objective_and_gradient(reg, reg.pose + e)
        _, gm = objective_and_gradient(reg, reg.pose - e)
        Hfd[:, k] = (gp - gm) / (2 * steps[k])
    Hfd = 0.5 * (Hfd + Hfd.T)
    w, V = np.linalg.eigh(H1)
    return HessianSplit(H1, Hfd, Hfd - H1, w, V)


@dataclass
class LocalizeResult:
    pose: np.ndarray
    converged: bool
    iterations: int
    f_history: list = field(default_factory=list)


def gauss_newton_localize(reg: Registration, max_iters: int = 20, tol: float = 1e-6,
                          damping: float = 1e-6, backtrack: bool = True) -> LocalizeResult:
    """Damped Gauss-Newton: p <- p - (H1 + mu I)^-1 grad f.

    ``mu`` is ``damping`` times the mean diagonal of H1.  Stops when the step
    norm drops below ``tol``.  With ``backtrack`` the step is halved until the
    cost does not rise; if ten halvings fail the estimate sits at a kink of the
    interpolated field and is returned as converged.  Without it, five
    consecutive cost increases flag divergence.
    """
    p = reg.pose.copy()
    f, g = objective_and_gradient(reg, p)
    hist = [f]
    rises = 0
    for it in range(1, max_iters + 1):
        H = hessian_h1(reg, p)
        mu = damping * max(np.trace(H) / 3.0, 1e-12)
        step = np.linalg.solve(H + mu * np.eye(3), g)
        if np.linalg.norm(step) < tol:
            return LocalizeResult(p, True, it, hist)
        if backtrack:
            alpha = 1.0
            for _ in range(10):
                f_new, g_new = objective_and_gradient(reg, p - alpha * step)
                if f_new <= f:
                    break
                alpha *= 0.5
            else:
                return LocalizeResult(p, True, it, hist)
            p = p - alpha * step
            f, g = f_new, g_new
            hist.append(f)
            if alpha * np.linalg.norm(step) < tol:
                return LocalizeResult(p, True, it, hist)
            continue
        p = p - step
        f_new, g = objective_and_gradient(reg, p)
        rises = rises + 1 if f_new > f else 0
        f = f_new
        hist.append(f)
        if rises >= 5:
            return LocalizeResult(p, False, it, hist)
    return LocalizeResult(p, False, max_iters, hist)


# ---------------------------------------------------------------------------
# trajectory tracking evaluation


@dataclass(frozen=True)
class NoiseModel:
    range_sigma: float = 0.01
    drift_xy: float = 0.02
    drift_theta: float = 0.01


@dataclass(frozen=True)
class LocalizeConfig:
    fov: float = math.pi / 2
    n_rays: int = 90
    max_range: float = 8.0
    dt: float = 0.1
    max_iters: int = 20
    tol: float = 1e-6
    damping: float = 1e-6
    backtrack: bool = True


@dataclass
class EvalReport:
    times: list
    errors: list  # meters, per sample
    mean_error: float
    max_error: float
    goal_deviation: float
    failures: int

    def to_json(self) -> dict:
        return asdict(self)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "error_m"])
            for t, e in zip(self.times, self.errors):
                w.writerow([f"{t:.6f}", f"{e:.9f}"])


def scan_points(df: DistanceField, pose, cfg: LocalizeConfig, rng=None, range_sigma: float = 0.0) -> np.ndarray:
    body = ray_angles(cfg.fov, cfg.n_rays)
    hit, rng_m, _, _ = raycast_many(df.grid, [[pose[0], pose[1]]], pose[2] + body, cfg.max_range)
    r = rng_m[hit]
    if rng is not None and range_sigma > 0:
        r = r + rng.normal(0.0, range_sigma, size=r.shape)
    a = body[hit]
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def track_trajectory(traj: MincoTrajectory, df: DistanceField, noise: NoiseModel = NoiseModel(),
                     cfg: LocalizeConfig = LocalizeConfig(), seed: int = 0) -> EvalReport:
    """Localize along a trajectory sampled every ``cfg.dt`` seconds.

    The initial guess at each sample is the true pose plus the previous
    sample's estimation error plus fresh Gaussian drift.
    """
    rng = np.random.default_rng(seed)
    n = max(int(math.ceil(traj.duration / cfg.dt - 1e-9)), 1)
    times = np.linspace(0.0, traj.duration, n + 1)
    carried = np.zeros(3)
    errors, failures = [], 0
    for tm in times:
        true = evaluate(traj, tm)
        pts = scan_points(df, true, cfg, rng, noise.range_sigma)
        drift = np.array([rng.normal(0, noise.drift_xy), rng.normal(0, noise.drift_xy), rng.normal(0, noise.drift_theta)])
        guess = true + carried + drift
        if len(pts) < 3:
            failures += 1
            est = guess
        else:
            res = gauss_newton_localize(Registration(pts, df, guess), cfg.max_iters, cfg.tol, cfg.damping,
                                        cfg.backtrack)
            est = res.pose
            if not res.converged:
                failures += 1
        carried = est - true
        carried[2] = wrap_angle(carried[2])
        errors.append(float(math.hypot(carried[0], carried[1])))
    return EvalReport(
        times=[float(t) for t in times],
        errors=errors,
        mean_error=float(np.mean(errors)),
        max_error=float(np.max(errors)),
        goal_deviation=errors[-1],
        failures=failures,
    )
