"""Simulated 2D LiDAR scans, hit-point Jacobians and per-ray rank classes."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .world import OccupancyGrid, RaycastError, RayHit, _cast, raycast_many

L_DEFAULT = 64


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class PoseSE2:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "PoseSE2":
        return cls(a[0], a[1], a[2])


class RayClass(enum.IntEnum):
    Miss = 0
    Rank1 = 1
    Rank2 = 2


@dataclass(frozen=True)
class ScanConfig:
    fov: float = math.pi / 2
    n_rays: int = 90
    max_range: float = 8.0
    tau_rank: float = 0.05
    L: int = L_DEFAULT
    fd_xy: float | None = None  # meters; default 0.25 * resolution
    fd_theta: float | None = None  # rad; default 0.25 * 2pi / L

    def steps(self, resolution: float) -> tuple[float, float]:
        dxy = self.fd_xy if self.fd_xy is not None else 0.25 * resolution
        dth = self.fd_theta if self.fd_theta is not None else 0.25 * 2 * math.pi / self.L
        return dxy, dth


@dataclass(frozen=True)
class Scan:
    pose: PoseSE2
    ray_angles: np.ndarray  # body frame
    hit: np.ndarray
    ranges: np.ndarray
    points: np.ndarray = field(repr=False)  # world frame hit points

    @property
    def n_returns(self) -> int:
        return int(self.hit.sum())

    def rays(self) -> list[RayHit]:
        return [
            RayHit(bool(h), p, float(r), (-1, -1)) for h, p, r in zip(self.hit, self.points, self.ranges)
        ]

    def body_points(self) -> np.ndarray:
        """Returned points in the sensor frame, (N_returns, 2)."""
        a = self.ray_angles[self.hit]
        r = self.ranges[self.hit]
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def _require_free(grid: OccupancyGrid, pose: PoseSE2):
    if grid.is_occupied(pose.x, pose.y):
        raise RaycastError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is inside an obstacle or off-map")


def ray_angles(fov: float, n_rays: int) -> np.ndarray:
    """Body-frame angles evenly spaced over [-fov/2, fov/2)."""
    if n_rays < 1 or not 0 < fov <= 2 * math.pi + 1e-12:
        raise ValueError("need n_rays >= 1 and 0 < fov <= 2pi")
    return -fov / 2 + fov * np.arange(n_rays) / n_rays


def simulate_scan(grid: OccupancyGrid, pose: PoseSE2, fov: float, n_rays: int, max_range: float) -> Scan:
    _require_free(grid, pose)
    body = ray_angles(fov, n_rays)
    hit, rng, pts, _ = raycast_many(grid, [[pose.x, pose.y]], pose.theta + body, max_range)
    return Scan(pose, body, hit, rng, pts)


# ---------------------------------------------------------------------------
# Jacobians


def hit_jacobian_fd(grid: OccupancyGrid, pose: PoseSE2, body_angle: float, steps=None, max_range: float = 1e3):
    """Central-difference Jacobian (2x3) of the hit point w.r.t. (x, y, theta).

    Returns None when the nominal or any perturbed ray misses or lands on a
    different obstacle component (the hit point is not differentiable there).
    """
    _require_free(grid, pose)
    if steps is None:
        steps = ScanConfig().steps(grid.resolution)
    dxy, dth = steps
    x, y, th = pose.x, pose.y, pose.theta + body_angle
    origins = np.array([[x, y], [x + dxy, y], [x - dxy, y], [x, y + dxy], [x, y - dxy], [x, y], [x, y]])
    angles = np.array([th, th, th, th, th, th + dth, th - dth])
    hit, _, pts, rc = raycast_many(grid, origins, angles, max_range)
    if not hit.all():
        return None
    comps = grid.components[rc[:, 0], rc[:, 1]]
    if np.any(comps != comps[0]):
        return None
    J = np.empty((2, 3))
    J[:, 0] = (pts[1] - pts[2]) / (2 * dxy)
    J[:, 1] = (pts[3] - pts[4]) / (2 * dxy)
    J[:, 2] = (pts[5] - pts[6]) / (2 * dth)
    return J


class GrazingIncidenceError(ValueError):
    pass


def hit_jacobian_analytic(line, pose: PoseSE2, k: float) -> np.ndarray:
    """Closed-form hit-point Jacobian for a ray of slope ``k`` on a locally
    straight surface ``A (x - a) + B (y - b) = 0`` hit at (a, b).
    """
    A, B, a, _b = (float(v) for v in line)
    den = A + B * k
    if abs(den) < 1e-12 * max(1.0, abs(A) + abs(B * k)):
        raise GrazingIncidenceError("ray is parallel to the surface line")
    x0 = pose.x
    kk = 1.0 + k * k
    return np.array(
        [
            [B * k, -B, kk * (x0 - a) * B],
            [-A * k, A, kk * (a - x0) * A],
        ]
    ) / den


# ---------------------------------------------------------------------------
# rank classification


@numba.njit(cache=True)
def _classify(occ, ox, oy, phi, max_t, dxy, dth, tau):
    """Rank class of one ray in grid units; returns (class, sigma ratio).

    Uses forward and backward differences in x, y and theta stacked into a
    2x6 matrix, with theta columns divided by the hit range.
    """
    H, W = occ.shape
    c, s = math.cos(phi), math.sin(phi)
    hit, t0, _, _, px, py = _cast(occ, ox, oy, c, s, max_t)
    if not hit:
        return 0, 0.0
    a11 = 0.0
    a12 = 0.0
    a22 = 0.0
    for k in range(6):
        sign = 1.0 if k % 2 == 0 else -1.0
        qx, qy, ang = ox, oy, phi
        axis = k // 2
        if axis == 0:
            qx = ox + sign * dxy
            step = dxy
        elif axis == 1:
            qy = oy + sign * dxy
            step = dxy
        else:
            ang = phi + sign * dth
            step = dth * t0
        ix = int(math.floor(qx))
        iy = int(math.floor(qy))
        if ix < 0 or iy < 0 or ix >= W or iy >= H or occ[iy, ix]:
            return 1, 0.0
        h2, _, _, _, qx2, qy2 = _cast(occ, qx, qy, math.cos(ang), math.sin(ang), max_t)
        if not h2:
            return 1, 0.0
        jx = sign * (qx2 - px) / step
        jy = sign * (qy2 - py) / step
        a11 += jx * jx
        a12 += jx * jy
        a22 += jy * jy
    half_tr = 0.5 * (a11 + a22)
    disc = math.sqrt(max(0.25 * (a11 - a22) ** 2 + a12 * a12, 0.0))
    lmax = half_tr + disc
    lmin = max(half_tr - disc, 0.0)
    if lmax <= 1e-300:
        return 1, 0.0
    ratio = math.sqrt(lmin / lmax)
    return (2 if ratio > tau else 1), ratio


def classify_ray(grid: OccupancyGrid, pose: PoseSE2, body_angle: float, config: ScanConfig = ScanConfig()) -> RayClass:
    cls, _ = classify_ray_detail(grid, pose, body_angle, config)
    return cls


def classify_ray_detail(grid: OccupancyGrid, pose: PoseSE2, body_angle: float, config: ScanConfig = ScanConfig()):
    """(RayClass, sigma2/sigma1) for one ray."""
    _require_free(grid, pose)
    res = grid.resolution
    dxy, dth = config.steps(res)
    ox = (pose.x - grid.origin[0]) / res
    oy = (pose.y - grid.origin[1]) / res
    cls, ratio = _classify(
        grid.occ_u8, ox, oy, pose.theta + body_angle, config.max_range / res, dxy / res, dth, config.tau_rank
    )
    return RayClass(cls), ratio


def stacked_fd_matrix(grid: OccupancyGrid, pose: PoseSE2, body_angle: float, config: ScanConfig = ScanConfig()):
    """The 2x6 one-sided difference matrix used by :func:`classify_ray`, or None on miss."""
    dxy, dth = config.steps(grid.resolution)
    x, y, th = pose.x, pose.y, pose.theta + body_angle
    base = np.array([[x, y]])
    origins = np.array(
        [[x + dxy, y], [x - dxy, y], [x, y + dxy], [x, y - dxy], [x, y], [x, y]]
    )
    angles = np.array([th, th, th, th, th + dth, th - dth])
    h0, r0, p0, _ = raycast_many(grid, base, [th], config.max_range)
    if not h0[0]:
        return None
    hit, _, pts, _ = raycast_many(grid, origins, angles, config.max_range)
    if not hit.all():
        return None
    steps = np.array([dxy, dxy, dxy, dxy, dth * r0[0], dth * r0[0]])
    signs = np.array([1, -1, 1, -1, 1, -1])
    return ((pts - p0[0]) * (signs / steps)[:, None]).T
