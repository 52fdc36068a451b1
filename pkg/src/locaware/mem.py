"""Metric Encoding Map: one 64-bit rank code per grid cell.

Bit ``i - 1`` of a cell code is set when the ray at discrete world angle
``2 pi (i - 1) / L`` from the cell center has a rank-deficient hit-point
Jacobian (or no return).  Obstacle cells carry all bits set.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import png

from .scan import PoseSE2, ScanConfig, _classify
from .world import OccupancyGrid


L = 64
ALL_ONES = (1 << L) - 1
_MOD = 1 << L


class MemFormatError(ValueError):
    pass


def encode_cell(ranks) -> int:
    """Pack L ranks (1 or 2, discrete angles 1..L) into an integer code."""
    ranks = [int(r) for r in ranks]
    if len(ranks) != L or any(r not in (1, 2) for r in ranks):
        raise ValueError(f"need {L} ranks in {{1, 2}}")
    return sum((1 << i) - (1 << (i - 1)) * r for i, r in enumerate(ranks, start=1))


def window_code(q: int, i: int, j: int) -> int:
    """Restrict a code to the discrete-angle window (i, j), 1-based.

    For ``i <= j`` this keeps bits ``i-1 .. j-1``; for ``i > j`` it keeps the
    complement of bits ``j-1 .. i-1``.  Arithmetic is modulo 2**L.
    """
    if not (1 <= i <= L and 1 <= j <= L):
        raise ValueError("window indices must lie in 1..L")
    if i <= j:
        mask = ((1 << j) - (1 << (i - 1))) % _MOD
    else:
        mask = ~((1 << i) - (1 << (j - 1))) % _MOD
    return mask & q


def gfm_discrete(q: int, i: int, j: int) -> int:
    return window_code(int(q), i, j).bit_count()


def _mask_table() -> np.ndarray:
    t = np.zeros((L + 1, L + 1), dtype=np.uint64)
    for i in range(1, L + 1):
        for j in range(1, L + 1):
            t[i, j] = window_code(ALL_ONES, i, j)
    return t


WINDOW_MASKS = _mask_table()


def gfm_discrete_many(q, i, j) -> np.ndarray:
    """Vectorized :func:`gfm_discrete`."""
    q = np.asarray(q, dtype=np.uint64)
    return np.bitwise_count(q & WINDOW_MASKS[np.asarray(i), np.asarray(j)]).astype(np.int64)


def _arc_table() -> np.ndarray:
    """ARC[s - 1, n] = mask of the inclusive arc of n angles starting at s.

    Arcs that wrap past angle L are expressed through the i > j branch of
    :func:`window_code` (the arc s..L, 1..e is the complement of e+1..s-1).
    """
    t = np.zeros((L, L + 1), dtype=np.uint64)
    for s in range(1, L + 1):
        t[s - 1, L] = ALL_ONES
        for n in range(1, L):
            e = (s + n - 2) % L + 1
            if s <= e:
                m = window_code(ALL_ONES, s, e)
            elif s - 1 > e + 1:
                m = window_code(ALL_ONES, s - 1, e + 1)
            else:  # all but the single angle s - 1
                m = ALL_ONES & ~(1 << (s - 2))
            t[s - 1, n] = m
    return t


ARC_MASKS = _arc_table()


def arc_count(q, start, end) -> np.ndarray:
    """Set bits of ``q`` over the inclusive arc start..end (unwrapped integers)."""
    start = np.asarray(start, dtype=np.int64)
    n = np.clip(np.asarray(end, dtype=np.int64) - start + 1, 0, L)
    s = np.mod(start - 1, L)
    return np.bitwise_count(np.asarray(q, dtype=np.uint64) & ARC_MASKS[s, n]).astype(np.int64)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MetricEncodingMap:
    codes: np.ndarray  # (H, W) uint64
    resolution: float
    origin: tuple[float, float]
    meta: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]

    def full_counts(self) -> np.ndarray:
        """M over the full window (1, L) per cell."""
        return np.bitwise_count(self.codes).astype(np.int64)


@dataclass(frozen=True)
class GfmSample:
    value: float
    gradient: np.ndarray  # (d/dx, d/dy, d/dtheta)


@numba.njit(cache=True)
def _build_codes(occ, max_t, dxy, dth, tau, nbits):
    H, W = occ.shape
    out = np.empty((H, W), dtype=np.uint64)
    full = np.uint64(0xFFFFFFFFFFFFFFFF)
    for r in range(H):
        for c in range(W):
            if occ[r, c]:
                out[r, c] = full
                continue
            code = np.uint64(0)
            for i in range(nbits):
                phi = 2.0 * math.pi * i / nbits
                cls, _ = _classify(occ, c + 0.5, r + 0.5, phi, max_t, dxy, dth, tau)
                if cls != 2:
                    code |= np.uint64(1) << np.uint64(i)
            out[r, c] = code
    return out


def build_mem(grid: OccupancyGrid, config: ScanConfig = ScanConfig()) -> MetricEncodingMap:
    """Classify L rays from every free cell center and pack the ranks."""
    if config.L != L:
        raise ValueError(f"only L = {L} is supported")
    res = grid.resolution
    dxy, dth = config.steps(res)
    codes = _build_codes(grid.occ_u8, config.max_range / res, dxy / res, dth, config.tau_rank, L)
    codes.flags.writeable = False
    meta = {
        "L": L,
        "max_range_m": config.max_range,
        "tau_rank": config.tau_rank,
        "fd_xy_m": dxy,
        "fd_theta_rad": dth,
        "source_hash": grid.digest,
        "sampling": "cell_center",
    }
    return MetricEncodingMap(codes, res, grid.origin, meta)


# ---------------------------------------------------------------------------
# continuous decoding


def gfm_continuous_many(mem: MetricEncodingMap, poses, fov: float):
    """Quadrilinear GFM over (x, y, window start, window end).

    ``poses`` is (N, 3).  Returns (values (N,), gradients (N, 3)).
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    finite = np.all(np.isfinite(poses), axis=1)
    if not finite.all():
        poses = np.where(finite[:, None], poses, 0.0)
    # window arithmetic only needs yaw modulo a full turn
    poses = np.column_stack([poses[:, 0], poses[:, 1], np.mod(poses[:, 2], 2 * math.pi)])
    n = poses.shape[0]
    res = mem.resolution
    H, W = mem.codes.shape
    u = (poses[:, 0] - mem.origin[0]) / res - 0.5
    v = (poses[:, 1] - mem.origin[1]) / res - 0.5
    inside = (u >= -0.5) & (u <= W - 0.5) & (v >= -0.5) & (v <= H - 0.5) & finite
    uc = np.clip(u, 0.0, W - 1.0)
    vc = np.clip(v, 0.0, H - 1.0)
    c0 = np.minimum(np.floor(uc).astype(np.intp), max(W - 2, 0))
    r0 = np.minimum(np.floor(vc).astype(np.intp), max(H - 2, 0))
    c1 = np.minimum(c0 + 1, W - 1)
    r1 = np.minimum(r0 + 1, H - 1)
    a = uc - c0
    b = vc - r0
    ku = ((u > 0.0) & (u < W - 1.0)) / res
    kv = ((v > 0.0) & (v < H - 1.0)) / res
    corners = [mem.codes[r0, c0], mem.codes[r0, c1], mem.codes[r1, c0], mem.codes[r1, c1]]

    bins = L / (2 * math.pi)
    if fov >= 2 * math.pi - 1e-12:
        vals = [np.bitwise_count(q).astype(float) for q in corners]
        dth = [np.zeros(n)] * 4
    else:
        s = (poses[:, 2] - fov / 2) * bins + 1.0
        e = s + fov * bins
        s0 = np.floor(s)
        e0 = np.floor(e)
        fs = s - s0
        fe = e - e0
        s0 = s0.astype(np.int64)
        e0 = e0.astype(np.int64)
        vals, dth = [], []
        for q in corners:
            A00 = arc_count(q, s0, e0)
            A10 = arc_count(q, s0 + 1, e0)
            A01 = arc_count(q, s0, e0 + 1)
            A11 = arc_count(q, s0 + 1, e0 + 1)
            val = (1 - fs) * (1 - fe) * A00 + fs * (1 - fe) * A10 + (1 - fs) * fe * A01 + fs * fe * A11
            d_s = (1 - fe) * (A10 - A00) + fe * (A11 - A01)
            d_e = (1 - fs) * (A01 - A00) + fs * (A11 - A10)
            vals.append(val)
            dth.append((d_s + d_e) * bins)
    f00, f01, f10, f11 = vals
    value = (1 - a) * (1 - b) * f00 + a * (1 - b) * f01 + (1 - a) * b * f10 + a * b * f11
    gx = ((1 - b) * (f01 - f00) + b * (f11 - f10)) * ku
    gy = ((1 - a) * (f10 - f00) + a * (f11 - f01)) * kv
    g00, g01, g10, g11 = dth
    gt = (1 - a) * (1 - b) * g00 + a * (1 - b) * g01 + (1 - a) * b * g10 + a * b * g11
    grad = np.stack([gx, gy, gt], axis=1)
    if not inside.all():
        value = np.where(inside, value, float(L))
        grad = np.where(inside[:, None], grad, 0.0)
    return value, grad


def gfm_continuous(mem: MetricEncodingMap, pose: PoseSE2, fov: float) -> GfmSample:
    vals, grads = gfm_continuous_many(mem, [[pose.x, pose.y, pose.theta]], fov)
    return GfmSample(float(vals[0]), grads[0])


# ---------------------------------------------------------------------------
# persistence: 16-bit RGBA PNG + JSON sidecar
#
# R = code bits 0-15, G = 16-31, B = 32-47, A = 48-63.  The image is stored
# top row first (row index H-1 of the grid first), like the occupancy raster.


def _sidecar(path: Path) -> Path:
    name = path.name[:-4] if path.name.endswith(".png") else path.name
    return path.with_name(name + ".mem.json")


def codes_to_rgba(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64)
    shifts = np.array([0, 16, 32, 48], dtype=np.uint64)
    return ((codes[..., None] >> shifts) & np.uint64(0xFFFF)).astype(np.uint16)


def rgba_to_codes(rgba: np.ndarray) -> np.ndarray:
    rgba = np.asarray(rgba).astype(np.uint64)
    shifts = np.array([0, 16, 32, 48], dtype=np.uint64)
    return np.bitwise_or.reduce(rgba << shifts, axis=-1)


def save_mem(mem: MetricEncodingMap, path) -> tuple[Path, Path]:
    path = Path(path)
    rgba = codes_to_rgba(np.flipud(mem.codes))
    H, W = mem.codes.shape
    with open(path, "wb") as fh:
        writer = png.Writer(W, H, bitdepth=16, greyscale=False, alpha=True)
        writer.write(fh, rgba.reshape(H, W * 4).tolist())
    meta = dict(mem.meta)
    meta.update(
        {
            "width": W,
            "height": H,
            "resolution_m": mem.resolution,
            "origin_xy_m": list(mem.origin),
            "channel_layout": {"R": "bits 0-15", "G": "bits 16-31", "B": "bits 32-47", "A": "bits 48-63"},
            "row_order": "top row = highest y",
            "codes_sha256": hashlib.sha256(np.ascontiguousarray(mem.codes).tobytes()).hexdigest(),
        }
    )
    side = _sidecar(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path, side


def load_mem(path, expected_source_hash: str | None = None) -> MetricEncodingMap:
    path = Path(path)
    side = _sidecar(path)
    try:
        meta = json.loads(side.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MemFormatError(f"cannot read MEM metadata {side}: {exc}") from exc
    try:
        W, H, rows, info = png.Reader(bytes=path.read_bytes()).read()
        rows = np.vstack([np.asarray(r, dtype=np.uint16) for r in rows])
    except (OSError, png.Error) as exc:
        raise MemFormatError(f"cannot decode MEM image {path}: {exc}") from exc
    if info.get("bitdepth") != 16 or info.get("planes") != 4:
        raise MemFormatError(f"MEM image must be 16-bit RGBA, got {info.get('bitdepth')}-bit x {info.get('planes')}")
    codes = np.flipud(rgba_to_codes(rows.reshape(H, W, 4))).copy()
    codes.flags.writeable = False
    if expected_source_hash is not None and meta.get("source_hash") != expected_source_hash:
        warnings.warn(
            f"MEM {path.name} was built from map {meta.get('source_hash')}, expected {expected_source_hash}",
            stacklevel=2,
        )
    keep = {k: meta[k] for k in ("L", "max_range_m", "tau_rank", "fd_xy_m", "fd_theta_rad", "source_hash", "sampling") if k in meta}
    return MetricEncodingMap(codes, float(meta["resolution_m"]), tuple(meta["origin_xy_m"]), keep)
