"""Synthetic benchmark maps and scenarios.

All geometry is axis-aligned so that straight walls are exactly straight at
the grid level.  "Crenellated" walls carry a square tooth pattern and stand
in for geometrically rich surroundings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scan import PoseSE2
from .world import OccupancyGrid


class GridBuilder:
    def __init__(self, width_m: float, height_m: float, resolution: float = 0.1):
        self.res = resolution
        self.cells = np.zeros((round(height_m / resolution), round(width_m / resolution)), dtype=bool)

    def _idx(self, v: float) -> int:
        return int(round(v / self.res))

    def rect(self, x0, y0, x1, y1, value=True):
        self.cells[self._idx(y0):self._idx(y1), self._idx(x0):self._idx(x1)] = value
        return self

    def convex_polygon(self, vertices, value=True):
        """Fill cells whose centers lie inside a counter-clockwise convex polygon."""
        v = np.asarray(vertices, dtype=float)
        H, W = self.cells.shape
        yc, xc = np.mgrid[0:H, 0:W] * self.res + self.res / 2
        inside = np.ones((H, W), dtype=bool)
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            inside &= (b[0] - a[0]) * (yc - a[1]) - (b[1] - a[1]) * (xc - a[0]) >= -1e-9
        self.cells[inside] = value
        return self

    def border(self, thickness=0.3):
        t = max(self._idx(thickness), 1)
        self.cells[:t] = self.cells[-t:] = True
        self.cells[:, :t] = self.cells[:, -t:] = True
        return self

    def crenellate_h(self, x0, x1, y, depth=0.2, pitch=0.4, up=True):
        """Teeth protruding from a horizontal wall face at height ``y``."""
        x = x0
        while x + pitch / 2 <= x1 + 1e-9:
            if up:
                self.rect(x, y, x + pitch / 2, y + depth)
            else:
                self.rect(x, y - depth, x + pitch / 2, y)
            x += pitch
        return self

    def rough_h(self, x0, x1, y, rng, width=(0.2, 0.5), gap=(0.3, 0.9), depth=(0.15, 0.35), up=True):
        """Aperiodic teeth on a horizontal face; irregular spacing avoids
        scan-matching aliasing that a regular pattern would cause."""
        x = x0
        while True:
            w = rng.uniform(*width)
            if x + w > x1:
                break
            d = rng.uniform(*depth)
            if up:
                self.rect(x, y, x + w, y + d)
            else:
                self.rect(x, y - d, x + w, y)
            x += w + rng.uniform(*gap)
        return self

    def crenellate_v(self, y0, y1, x, depth=0.2, pitch=0.4, right=True):
        y = y0
        while y + pitch / 2 <= y1 + 1e-9:
            if right:
                self.rect(x, y, x + depth, y + pitch / 2)
            else:
                self.rect(x - depth, y, x, y + pitch / 2)
            y += pitch
        return self

    def build(self) -> OccupancyGrid:
        return OccupancyGrid(self.cells.copy(), self.res)


@dataclass(frozen=True)
class Scenario:
    name: str
    grid: OccupancyGrid
    start: PoseSE2
    goal: PoseSE2


def corridor_detour(resolution: float = 0.1) -> Scenario:
    """A featureless straight corridor and a longer, feature-rich hall above it.

    The corridor runs between the bottom wall and a solid block.  The hall
    above the block has irregular teeth on the block's top face and a flat
    ceiling, so what the robot sees there depends on its yaw.  The block's
    ends are chamfered so that trajectories climbing into the hall do not
    wrap a sharp convex corner.
    """
    rng = np.random.default_rng(20240611)
    b = GridBuilder(24.0, 6.9, resolution).border(0.3)
    b.convex_polygon([(4.0, 2.6), (20.0, 2.6), (19.0, 3.6), (5.0, 3.6)])
    b.rough_h(5.5, 18.5, 3.6, rng, up=True)
    grid = b.build()
    return Scenario("corridor_detour", grid, PoseSE2(2.0, 1.4, 0.0), PoseSE2(22.0, 1.4, 0.0))


def corner_room(resolution: float = 0.1) -> Scenario:
    """Square room with four inside corners and a few notches."""
    b = GridBuilder(6.0, 6.0, resolution).border(0.3)
    b.rect(0.3, 2.8, 0.7, 3.2).rect(5.3, 2.8, 5.7, 3.2)
    b.rect(2.8, 0.3, 3.2, 0.7).rect(2.8, 5.3, 3.2, 5.7)
    grid = b.build()
    return Scenario("corner_room", grid, PoseSE2(1.5, 1.5, 0.0), PoseSE2(4.5, 4.5, math.pi / 2))


def long_corridor(resolution: float = 0.1, length: float = 30.0, width: float = 2.0) -> Scenario:
    """Long featureless corridor along x."""
    wall = 0.3
    b = GridBuilder(length, width + 2 * wall, resolution).border(wall)
    grid = b.build()
    yc = wall + width / 2
    return Scenario("long_corridor", grid, PoseSE2(2.0, yc, 0.0), PoseSE2(length - 2.0, yc, 0.0))


BENCHMARKS = {
    "corridor_detour": corridor_detour,
    "corner_room": corner_room,
    "long_corridor": long_corridor,
}


def get_scenario(name: str, resolution: float = 0.1) -> Scenario:
    try:
        return BENCHMARKS[name](resolution)
    except KeyError:
        raise KeyError(f"unknown benchmark map {name!r}; choose from {sorted(BENCHMARKS)}") from None
