"""Occupancy grids, Euclidean distance fields and exact grid ray casting.

Grid convention: ``cells[row, col]`` with ``row`` growing along +y and ``col``
along +x.  ``origin`` is the world position of the lower-left corner of cell
(0, 0).  Raster images are stored top row first, so they are flipped on load.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba
import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage


class MapDecodeError(ValueError):
    pass


class MapConfigError(ValueError):
    pass


class RaycastError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    cells: np.ndarray  # bool (height, width), True = obstacle
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise MapConfigError(f"occupancy must be a non-empty 2D array, got {cells.shape}")
        if not self.resolution > 0:
            raise MapConfigError(f"resolution must be positive, got {self.resolution}")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) in meters."""
        ox, oy = self.origin
        return ox, ox + self.width * self.resolution, oy, oy + self.height * self.resolution

    @cached_property
    def occ_u8(self) -> np.ndarray:
        return self.cells.astype(np.uint8)

    @cached_property
    def components(self) -> np.ndarray:
        """8-connected obstacle component labels (0 = free)."""
        labels, _ = ndimage.label(self.cells, structure=np.ones((3, 3), dtype=int))
        return labels

    @cached_property
    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.packbits(self.cells).tobytes())
        h.update(json.dumps([self.width, self.height, self.resolution, list(self.origin)]).encode())
        return h.hexdigest()[:16]

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing a world point (may be out of range)."""
        col = math.floor((x - self.origin[0]) / self.resolution)
        row = math.floor((y - self.origin[1]) / self.resolution)
        return row, col

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin[0] + (col + 0.5) * self.resolution,
            self.origin[1] + (row + 0.5) * self.resolution,
        )

    def in_bounds(self, x: float, y: float) -> bool:
        xmin, xmax, ymin, ymax = self.extent
        return xmin <= x < xmax and ymin <= y < ymax

    def is_occupied(self, x: float, y: float) -> bool:
        """Occupancy at a world point; outside the map counts as occupied."""
        row, col = self.world_to_cell(x, y)
        if not (0 <= row < self.height and 0 <= col < self.width):
            return True
        return bool(self.cells[row, col])


def load_occupancy(image, meta) -> OccupancyGrid:
    """Build a grid from an 8-bit grayscale raster and its metadata.

    ``image`` is a path or a 2D uint8 array (top row first); ``meta`` is a path
    to the JSON sidecar or a dict with ``resolution_m``, ``origin_xy_m`` and
    ``occupied_below``.
    """
    if isinstance(meta, (str, Path)):
        try:
            meta = json.loads(Path(meta).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise MapConfigError(f"cannot read map metadata: {exc}") from exc
    try:
        resolution = float(meta["resolution_m"])
        origin = tuple(float(v) for v in meta.get("origin_xy_m", (0.0, 0.0)))
        threshold = float(meta.get("occupied_below", 128))
    except (KeyError, TypeError, ValueError) as exc:
        raise MapConfigError(f"bad map metadata: {exc}") from exc
    if not resolution > 0:
        raise MapConfigError("resolution_m must be positive")
    if not 0 < threshold < 255:
        raise MapConfigError("occupied_below must lie in (0, 255)")

    if isinstance(image, (str, Path)):
        try:
            with Image.open(image) as im:
                raster = np.asarray(im.convert("L"))
        except (OSError, UnidentifiedImageError) as exc:
            raise MapDecodeError(f"cannot decode raster {image}: {exc}") from exc
    else:
        raster = np.asarray(image)
    if raster.ndim != 2 or raster.size == 0:
        raise MapDecodeError(f"raster must be non-empty 2D, got shape {raster.shape}")
    if raster.dtype != np.uint8:
        raise MapDecodeError(f"raster must be 8-bit, got {raster.dtype}")
    return OccupancyGrid(np.flipud(raster < threshold), resolution, origin)


def save_occupancy(grid: OccupancyGrid, image_path, threshold: int = 128) -> Path:
    """Write grid as PNG (black = obstacle) plus ``<stem>.json`` sidecar."""
    image_path = Path(image_path)
    raster = np.where(np.flipud(grid.cells), 0, 255).astype(np.uint8)
    Image.fromarray(raster, mode="L").save(image_path)
    meta = {"resolution_m": grid.resolution, "origin_xy_m": list(grid.origin), "occupied_below": threshold}
    sidecar = image_path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2))
    return sidecar


# ---------------------------------------------------------------------------
# distance field


@dataclass(frozen=True, eq=False)
class DistanceField:
    grid: OccupancyGrid
    distance: np.ndarray  # (H, W) meters, 0 inside obstacles, +inf if no obstacles
    gradient: np.ndarray  # (H, W, 2) d/dx, d/dy by central differences
    signed: np.ndarray  # (H, W) meters, negative inside obstacles
    signed_gradient: np.ndarray
    finite: bool = True

    def require_finite(self):
        if not self.finite:
            raise MapConfigError("map has no obstacles; distance field is infinite")


def _edt(mask: np.ndarray) -> np.ndarray:
    """Distance (cells) from every cell to the nearest cell where ``mask`` is False."""
    if mask.all():
        return np.full(mask.shape, np.inf)
    return ndimage.distance_transform_edt(mask)


def _central_gradient(values: np.ndarray, res: float) -> np.ndarray:
    gy = np.zeros_like(values)
    gx = np.zeros_like(values)
    if values.shape[0] > 1:
        gy = np.gradient(values, res, axis=0)
    if values.shape[1] > 1:
        gx = np.gradient(values, res, axis=1)
    return np.stack([gx, gy], axis=-1)


def build_distance_field(grid: OccupancyGrid) -> DistanceField:
    """Distance to the nearest obstacle boundary at every cell center.

    Boundary distance is approximated as center-to-center distance minus half a
    cell.  ``signed`` additionally carries the negated distance to the free
    space boundary inside obstacles, which keeps E^2 smooth across surfaces.
    """
    res = grid.resolution
    occ = grid.cells
    finite = bool(occ.any())
    if finite:
        outside = np.maximum(_edt(~occ) * res - 0.5 * res, 0.0)
    else:
        outside = np.full(occ.shape, np.inf)
    inside = np.maximum(_edt(occ) * res - 0.5 * res, 0.0)
    inside = np.where(np.isfinite(inside), inside, 0.0)
    signed = np.where(occ, -inside, outside)

    if finite:
        gradient = _central_gradient(outside, res)
        signed_gradient = _central_gradient(signed, res)
    else:
        gradient = np.zeros(occ.shape + (2,))
        signed_gradient = gradient.copy()
    for arr in (outside, gradient, signed, signed_gradient):
        arr.flags.writeable = False
    return DistanceField(grid, outside, gradient, signed, signed_gradient, finite)


def _bilinear(field: np.ndarray, grid: OccupancyGrid, pts: np.ndarray):
    """Bilinear interpolation of a cell-centered field at (N, 2) world points.

    Returns (values, d/dx, d/dy, inside-mask); derivatives are those of the
    interpolant itself.
    """
    res = grid.resolution
    H, W = field.shape[:2]
    u = (pts[:, 0] - grid.origin[0]) / res - 0.5
    v = (pts[:, 1] - grid.origin[1]) / res - 0.5
    inside = (u >= -0.5) & (u <= W - 0.5) & (v >= -0.5) & (v <= H - 0.5)
    uc = np.clip(u, 0.0, W - 1.0)
    vc = np.clip(v, 0.0, H - 1.0)
    c0 = np.minimum(np.floor(uc).astype(np.intp), max(W - 2, 0))
    r0 = np.minimum(np.floor(vc).astype(np.intp), max(H - 2, 0))
    c1 = np.minimum(c0 + 1, W - 1)
    r1 = np.minimum(r0 + 1, H - 1)
    a = uc - c0
    b = vc - r0
    if field.ndim == 3:
        a = a[:, None]
        b = b[:, None]
    f00, f01 = field[r0, c0], field[r0, c1]
    f10, f11 = field[r1, c0], field[r1, c1]
    val = (1 - a) * (1 - b) * f00 + a * (1 - b) * f01 + (1 - a) * b * f10 + a * b * f11
    # derivative zero along clamped axes
    ku = ((u > 0.0) & (u < W - 1.0)).astype(float) / res
    kv = ((v > 0.0) & (v < H - 1.0)).astype(float) / res
    if field.ndim == 3:
        ku = ku[:, None]
        kv = kv[:, None]
    dx = ((1 - b) * (f01 - f00) + b * (f11 - f10)) * ku
    dy = ((1 - a) * (f10 - f00) + a * (f11 - f01)) * kv
    return val, dx, dy, inside


def _inward(grid: OccupancyGrid, pts: np.ndarray) -> np.ndarray:
    xmin, xmax, ymin, ymax = grid.extent
    center = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
    d = center - pts
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    return d / np.where(n > 0, n, 1.0)


def sample_E_many(df: DistanceField, pts, signed: bool = False):
    """Vectorized :func:`sample_E` over (N, 2) points -> (N,), (N, 2)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dist = df.signed if signed else df.distance
    grad = df.signed_gradient if signed else df.gradient
    val, _, _, inside = _bilinear(dist, df.grid, pts)
    g, _, _, _ = _bilinear(grad, df.grid, pts)
    if not inside.all():
        out = ~inside
        val = np.where(out, 0.0, val)
        g = np.where(out[:, None], _inward(df.grid, pts), g)
    return val, g


def sample_E(df: DistanceField, q) -> tuple[float, np.ndarray]:
    """Distance and (unnormalized, interpolated) gradient at a world point.

    Points outside the map report distance 0 and a unit gradient toward the
    map interior, which is the conservative choice for safety penalties.
    """
    val, g = sample_E_many(df, np.asarray(q, dtype=float)[None, :])
    return float(val[0]), g[0]


def sample_E_exact_many(df: DistanceField, pts, signed: bool = False):
    """Distance with the exact derivative of the bilinear interpolant."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dist = df.signed if signed else df.distance
    val, dx, dy, inside = _bilinear(dist, df.grid, pts)
    g = np.stack([dx, dy], axis=-1)
    if not inside.all():
        val = np.where(inside, val, 0.0)
        g = np.where(inside[:, None], g, _inward(df.grid, pts))
    return val, g


# ---------------------------------------------------------------------------
# ray casting (Amanatides-Woo grid walking, grid units)


@numba.njit(cache=True)
def _cast(occ, ox, oy, dx, dy, max_t):
    """Walk cells from (ox, oy) along unit (dx, dy); all lengths in cells.

    Returns (hit, t, row, col, px, py).  The entering axis coordinate of the
    hit point is set to the exact boundary value.
    """
    H, W = occ.shape
    cx = int(math.floor(ox))
    cy = int(math.floor(oy))
    if cx < 0 or cy < 0 or cx >= W or cy >= H:
        return False, max_t, -1, -1, ox, oy
    step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    inf = 1e300
    while True:
        if step_x != 0:
            bx = cx + 1 if step_x > 0 else cx
            tx = (bx - ox) / dx
        else:
            bx = 0
            tx = inf
        if step_y != 0:
            by = cy + 1 if step_y > 0 else cy
            ty = (by - oy) / dy
        else:
            by = 0
            ty = inf
        if tx <= ty:
            t = tx
            cx += step_x
            px = float(bx)
            py = oy + t * dy
        else:
            t = ty
            cy += step_y
            px = ox + t * dx
            py = float(by)
        if t > max_t:
            return False, max_t, -1, -1, ox + max_t * dx, oy + max_t * dy
        if cx < 0 or cy < 0 or cx >= W or cy >= H:
            return False, max_t, -1, -1, ox + max_t * dx, oy + max_t * dy
        if occ[cy, cx]:
            return True, t, cy, cx, px, py


@numba.njit(cache=True)
def _cast_many(occ, ox, oy, angles, max_t, out_hit, out_t, out_rc, out_p):
    for k in range(angles.shape[0]):
        h, t, r, c, px, py = _cast(occ, ox[k], oy[k], math.cos(angles[k]), math.sin(angles[k]), max_t)
        out_hit[k] = h
        out_t[k] = t
        out_rc[k, 0] = r
        out_rc[k, 1] = c
        out_p[k, 0] = px
        out_p[k, 1] = py


@dataclass(frozen=True)
class RayHit:
    hit: bool
    point: np.ndarray = field(repr=False)
    range: float
    surface_cell: tuple[int, int]


def raycast_many(grid: OccupancyGrid, origins, angles, max_range: float):
    """Cast N rays; returns (hit bool[N], range[N], point[N,2], cell[N,2]).

    No origin check is done here; :func:`raycast` validates single origins.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    n = angles.shape[0]
    if origins.shape[0] == 1 and n > 1:
        origins = np.repeat(origins, n, axis=0)
    res = grid.resolution
    ox = (origins[:, 0] - grid.origin[0]) / res
    oy = (origins[:, 1] - grid.origin[1]) / res
    hit = np.zeros(n, dtype=np.bool_)
    t = np.zeros(n)
    rc = np.zeros((n, 2), dtype=np.int64)
    p = np.zeros((n, 2))
    _cast_many(grid.occ_u8, ox, oy, angles, max_range / res, hit, t, rc, p)
    p = p * res + np.asarray(grid.origin)
    return hit, t * res, p, rc


def raycast(grid: OccupancyGrid, origin, angle: float, max_range: float) -> RayHit:
    """First obstacle boundary crossed by a ray, or a miss within ``max_range``."""
    x, y = float(origin[0]), float(origin[1])
    if grid.is_occupied(x, y) and grid.in_bounds(x, y):
        raise RaycastError(f"ray origin ({x:.3f}, {y:.3f}) lies inside an obstacle")
    hit, rng, p, rc = raycast_many(grid, [[x, y]], [angle], max_range)
    if not hit[0]:
        return RayHit(False, p[0], float(max_range), (-1, -1))
    return RayHit(True, p[0], float(rng[0]), (int(rc[0, 0]), int(rc[0, 1])))
