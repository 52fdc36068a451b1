"""Static PNG rendering of the MEM heatmap, paths and trajectories.

Pure functions of their inputs: the same arrays give the same PNG bytes.
"""
from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .mem import MetricEncodingMap
from .minco import MincoTrajectory, evaluate, sample
from .world import OccupancyGrid

OBSTACLE_RGB = (0, 0, 0)
PATH_RGB = (255, 255, 255)


def heat_rgb(m, L: int = 64) -> np.ndarray:
    """Blue (M = 0) to red (M = L) ramp; red channel is monotone in M."""
    u = np.clip(np.asarray(m, dtype=float) / L, 0.0, 1.0)
    r = 255 * u
    g = 255 * (1 - np.abs(2 * u - 1)) * 0.6
    b = 255 * (1 - u)
    return np.stack([r, g, b], axis=-1).round().astype(np.uint8)


def error_rgb(err, scale: float) -> tuple[int, int, int]:
    u = min(max(err / scale, 0.0), 1.0) if scale > 0 else 0.0
    return (int(round(255 * u)), int(round(255 * (1 - u))), 0)


def mem_heatmap(mem: MetricEncodingMap, grid: OccupancyGrid | None = None, scale: int = 4) -> Image.Image:
    """Per-cell full-window M as an RGB image, y axis pointing up."""
    rgb = heat_rgb(mem.full_counts(), int(mem.meta.get("L", 64)))
    if grid is not None:
        rgb[grid.cells] = OBSTACLE_RGB
    rgb = rgb[::-1]  # row 0 is the lowest y
    img = Image.fromarray(np.ascontiguousarray(rgb), "RGB")
    return img.resize((img.width * scale, img.height * scale), Image.NEAREST)


class _Canvas:
    def __init__(self, img: Image.Image, mem: MetricEncodingMap, scale: int):
        self.img = img
        self.draw = ImageDraw.Draw(img)
        self.mem = mem
        self.k = scale / mem.resolution

    def px(self, x, y):
        u = (x - self.mem.origin[0]) * self.k
        v = self.img.height - (y - self.mem.origin[1]) * self.k
        return (float(u), float(v))

    def polyline(self, xy, fill, width=1):
        if len(xy) >= 2:
            self.draw.line([self.px(x, y) for x, y in xy], fill=fill, width=width)


def cell_pixel(mem: MetricEncodingMap, row: int, col: int, scale: int = 4) -> tuple[int, int]:
    """Image (u, v) of the center of grid cell (row, col) in a heatmap."""
    return (col * scale + scale // 2, (mem.height - 1 - row) * scale + scale // 2)


def render_scene(mem: MetricEncodingMap, grid: OccupancyGrid | None = None, path=None,
                 traj: MincoTrajectory | None = None, errors=None, scale: int = 4,
                 tick_every: float = 0.5, tick_len: float = 0.3) -> Image.Image:
    """Heatmap with the search path (white), the trajectory and yaw ticks.

    ``errors`` (per trajectory sample, as produced by the tracker at its own
    time step) colours the trajectory green to red; without it the
    trajectory is drawn in cyan.  Empty or missing overlays are skipped.
    """
    img = mem_heatmap(mem, grid, scale)
    cv = _Canvas(img, mem, scale)
    if path is not None and len(path) >= 2:
        cv.polyline(np.asarray(path)[:, :2], PATH_RGB, 1)
    if traj is not None and traj.duration > 0:
        n = max(int(math.ceil(traj.duration / 0.05)), 2)
        ts = np.linspace(0.0, traj.duration, n + 1)
        P = np.array([evaluate(traj, t) for t in ts])
        if errors is not None and len(errors) >= 2:
            err = np.asarray(errors, dtype=float)
            hi = float(np.max(err))
            te = np.linspace(0.0, traj.duration, len(err))
            for a, b, t in zip(P[:-1], P[1:], ts[:-1]):
                e = float(np.interp(t, te, err))
                cv.draw.line([cv.px(*a[:2]), cv.px(*b[:2])], fill=error_rgb(e, hi), width=2)
        else:
            cv.polyline(P[:, :2], (0, 255, 255), 2)
        _, pk = sample(traj, tick_every)
        for p in pk:
            tip = (p[0] + tick_len * math.cos(p[2]), p[1] + tick_len * math.sin(p[2]))
            cv.draw.line([cv.px(p[0], p[1]), cv.px(*tip)], fill=(255, 255, 0), width=1)
    return img


def png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def save_png(img: Image.Image, path) -> Path:
    path = Path(path)
    path.write_bytes(png_bytes(img))
    return path
