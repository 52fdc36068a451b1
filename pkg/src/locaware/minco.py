"""Minimum-control-effort piecewise polynomials (MINCO) in (x, y, yaw).

A trajectory with K segments of degree 2s-1 is fixed by its interior
waypoints Q (K-1 rows of (x, y, yaw)), positive durations t and the
derivative boundary states at both ends.  The coefficients solve a banded
linear system of size 2sK, so construction and gradient propagation are
linear in K.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded


@functools.lru_cache(maxsize=None)
def _basis_table(s: int):
    n = 2 * s
    coef = np.array([[math.perm(k, d) for k in range(n)] for d in range(n + 1)], dtype=float)
    power = np.array([[max(k - d, 0) for k in range(n)] for d in range(n + 1)], dtype=float)
    return coef, power


def basis(t, s: int, order: int = 0) -> np.ndarray:
    """Derivative ``order`` of beta(t) = [1, t, ..., t^(2s-1)]; t may be an array."""
    t = np.asarray(t, dtype=float)
    if order >= 2 * s:
        return np.zeros(t.shape + (2 * s,))
    coef, power = _basis_table(s)
    return coef[order] * t[..., None] ** power[order]


@dataclass(frozen=True, eq=False)
class MincoTrajectory:
    s: int
    Q: np.ndarray  # (K-1, 3)
    t: np.ndarray  # (K,)
    C: np.ndarray  # (K, 2s, 3)
    start: np.ndarray  # (s, 3) derivatives 0..s-1 at t = 0
    end: np.ndarray  # (s, 3)

    @property
    def K(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(np.sum(self.t))

    def locate(self, time: float) -> tuple[int, float, bool]:
        """(segment, local time, clamped flag)."""
        clamped = time < 0.0 or time > self.duration
        time = min(max(time, 0.0), self.duration)
        edges = np.cumsum(self.t)
        i = int(np.searchsorted(edges, time, side="left"))
        i = min(i, self.K - 1)
        return i, time - (edges[i] - self.t[i]), clamped

    def to_json(self) -> dict:
        return {
            "s": self.s,
            "K": self.K,
            "Q": self.Q.tolist(),
            "t": self.t.tolist(),
            "C": self.C.tolist(),
            "boundary": {"start": self.start.tolist(), "end": self.end.tolist()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "MincoTrajectory":
        return construct(np.array(d["Q"], dtype=float).reshape(-1, 3), np.array(d["t"], dtype=float),
                         np.array(d["boundary"]["start"]), np.array(d["boundary"]["end"]), d["s"])

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


@functools.lru_cache(maxsize=64)
def _pattern(s: int, K: int):
    """Sparsity pattern of the MINCO matrix for (s, K).

    Each entry is (row, col, segment, order, power, constant); entries with
    segment >= 0 take the value perm(power, order) * t[segment]^(power - order).
    """
    n = 2 * s
    N = n * K
    ent = []
    timed = []  # (row, segment, order)
    b0 = [basis(0.0, s, d) for d in range(n)]
    for d in range(s):
        for k in range(n):
            if b0[d][k] != 0:
                ent.append((d, k, -1, 0, 0, b0[d][k]))
    for i in range(K - 1):
        base = s + n * i
        timed.append((base, i, 0))
        for k in range(n):
            ent.append((base, n * i + k, i, 0, k, 0.0))
        for d in range(n - 1):
            r = base + 1 + d
            timed.append((r, i, d))
            for k in range(n):
                ent.append((r, n * i + k, i, d, k, 0.0))
                if b0[d][k] != 0:
                    ent.append((r, n * (i + 1) + k, -1, 0, 0, -b0[d][k]))
    for d in range(s):
        r = N - s + d
        timed.append((r, K - 1, d))
        for k in range(n):
            ent.append((r, n * (K - 1) + k, K - 1, d, k, 0.0))
    e = np.array(ent)
    rows = e[:, 0].astype(np.intp)
    cols = e[:, 1].astype(np.intp)
    diff = rows - cols
    pat = {
        "rows": rows,
        "cols": cols,
        "seg": e[:, 2].astype(np.intp),
        "order": e[:, 3].astype(np.intp),
        "power": e[:, 4].astype(np.intp),
        "const": e[:, 5],
        "timed": np.array(timed, dtype=np.intp),
        "lower": int(max(diff.max(), 0)),
        "upper": int(max(-diff.min(), 0)),
    }
    for v in pat.values():
        if isinstance(v, np.ndarray):
            v.flags.writeable = False
    return pat


class _System:
    """Sparse description of the linear map C = M(Q, t).

    Row layout: s start rows, then per interior joint one waypoint row followed
    by 2s-1 continuity rows (orders 0..2s-2), then s end rows.  Each entry that
    depends on a duration is tagged with (segment, derivative order).
    """

    def __init__(self, s: int, t: np.ndarray):
        self.s = s
        self.K = K = len(t)
        self.N = 2 * s * K
        pat = _pattern(s, K)
        self.rows = pat["rows"]
        self.cols = pat["cols"]
        self.lower = pat["lower"]
        self.upper = pat["upper"]
        self.timed = pat["timed"]
        seg, order, power = pat["seg"], pat["order"], pat["power"]
        coef, _ = _basis_table(s)
        timed = seg >= 0
        T = np.asarray(t, dtype=float)[np.where(timed, seg, 0)]
        vals = np.where(timed, coef[order, power] * T ** np.maximum(power - order, 0), pat["const"])
        self.vals = np.where(timed & (power < order), 0.0, vals)

    def band(self, transpose: bool = False) -> tuple[tuple[int, int], np.ndarray]:
        r, c = (self.cols, self.rows) if transpose else (self.rows, self.cols)
        lo, up = (self.upper, self.lower) if transpose else (self.lower, self.upper)
        ab = np.zeros((lo + up + 1, self.N))
        np.add.at(ab, (up + r - c, c), self.vals)
        return (lo, up), ab

    def waypoint_rows(self) -> np.ndarray:
        return self.s + 2 * self.s * np.arange(self.K - 1)


def _deriv_rows(t: np.ndarray, s: int, order: np.ndarray) -> np.ndarray:
    """Rows of basis derivatives with a per-row order (zero where order >= 2s)."""
    n = 2 * s
    coef, power = _basis_table(s)
    o = np.minimum(order, n)
    out = coef[o] * t[:, None] ** power[o]
    return np.where((order < n)[:, None], out, 0.0)


def _rhs(s, K, Q, start, end):
    n = 2 * s
    b = np.zeros((n * K, 3))
    b[:s] = start
    for i in range(K - 1):
        b[s + n * i] = Q[i]
    b[n * K - s:] = end
    return b


def construct(Q, t, start, end, s: int = 3) -> MincoTrajectory:
    """Solve for the coefficients of the unique minimum-effort trajectory."""
    t = np.asarray(t, dtype=float).ravel()
    if t.size < 1:
        raise ValueError("need at least one segment")
    if np.any(~(t > 0)):
        raise ValueError("segment durations must be positive")
    K = t.size
    Q = np.asarray(Q, dtype=float).reshape(K - 1, 3)
    start = np.asarray(start, dtype=float).reshape(s, 3)
    end = np.asarray(end, dtype=float).reshape(s, 3)
    sys = _System(s, t)
    (lo, up), ab = sys.band()
    coef = solve_banded((lo, up), ab, _rhs(s, K, Q, start, end))
    if not np.all(np.isfinite(coef)):
        raise np.linalg.LinAlgError("MINCO system is singular")
    C = coef.reshape(K, 2 * s, 3)
    for arr in (Q, t, C, start, end):
        arr.flags.writeable = False
    return MincoTrajectory(s, Q, t, C, start, end)


def evaluate(traj: MincoTrajectory, time: float, order: int = 0, with_flag: bool = False):
    """Derivative ``order`` of p at a global time; out-of-range times are clamped."""
    i, tau, clamped = traj.locate(time)
    val = basis(tau, traj.s, order) @ traj.C[i]
    return (val, clamped) if with_flag else val


def sample(traj: MincoTrajectory, dt: float, order: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate on a uniform global time grid that includes both ends."""
    n = max(int(math.ceil(traj.duration / dt)), 1)
    times = np.linspace(0.0, traj.duration, n + 1)
    return times, np.array([evaluate(traj, tm, order) for tm in times])


def propagate_gradient(traj: MincoTrajectory, dJ_dC, dJ_dt_direct=None):
    """Chain a cost gradient in (C, t) through C = M(Q, t).

    Returns (dJ/dQ of shape (K-1, 3), total dJ/dt of shape (K,)).
    """
    s, K = traj.s, traj.K
    n = 2 * s
    dJ_dC = np.asarray(dJ_dC, dtype=float).reshape(n * K, 3)
    dt = np.zeros(K) if dJ_dt_direct is None else np.array(dJ_dt_direct, dtype=float).copy()
    sys = _System(s, traj.t)
    (lo, up), abT = sys.band(transpose=True)
    G = solve_banded((lo, up), abT, dJ_dC)
    dQ = G[sys.waypoint_rows()]
    row, seg, d = sys.timed.T
    dA_c = np.einsum("mn,mnk->mk", _deriv_rows(traj.t[seg], s, d + 1), traj.C[seg])
    np.subtract.at(dt, seg, np.einsum("mk,mk->m", G[row], dA_c))
    return dQ, dt
