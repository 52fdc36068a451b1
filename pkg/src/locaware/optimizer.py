"""Trajectory costs with analytic gradients and the L-BFGS solver.

The decision vector is (Q, tau): interior waypoints and unconstrained
time variables mapped to positive durations by a smooth bijection.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mem import MetricEncodingMap, gfm_continuous_many
from .minco import MincoTrajectory, basis, construct, propagate_gradient
from .search import SigmoidParams, sigmoid, sigmoid_derivative
from .world import DistanceField, sample_E_exact_many

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptConfig:
    lambda_l: float = 1.0
    lambda_e: float = 1.0
    lambda_G: float = 1e4
    rho: float = 20.0
    safety: float = 0.3  # d, meters
    v_max: float = 2.0
    a_max: float = 3.0
    w_max: float = 2.0
    wdot_max: float = 3.0
    k_samples: int = 16
    sigmoid: SigmoidParams = SigmoidParams()
    fov: float = math.pi / 2
    memory: int = 8
    c1: float = 1e-4
    c2: float = 0.9
    g_tol: float = 1e-5
    f_tol: float = 1e-8
    max_iters: int = 300
    max_linesearch: int = 40

    def __post_init__(self):
        if min(self.lambda_e, self.lambda_G, self.rho) <= 0 or self.lambda_l < 0:
            raise ValueError("cost weights must be positive (lambda_l may be 0 for ablation)")
        if self.k_samples < 2:
            raise ValueError("k_samples must be >= 2")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


# ---------------------------------------------------------------------------
# time transform


def time_forward(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("durations must be positive")
    big = t > 1.0
    out = np.where(big, np.sqrt(np.where(big, 2 * t - 1, 1.0)) - 1, 1 - np.sqrt(np.where(big, 1.0, 2 / t - 1)))
    return float(out) if out.ndim == 0 else out


def time_backward(tau):
    tau = np.asarray(tau, dtype=float)
    out = np.where(tau > 0, ((tau + 1) ** 2 + 1) / 2, 2 / ((1 - tau) ** 2 + 1))
    return float(out) if out.ndim == 0 else out


def time_backward_grad(tau):
    tau = np.asarray(tau, dtype=float)
    return np.where(tau > 0, tau + 1, 4 * (1 - tau) / ((1 - tau) ** 2 + 1) ** 2)


# ---------------------------------------------------------------------------
# sampling helpers


@dataclass
class _Samples:
    T: np.ndarray  # (K,)
    frac: np.ndarray  # (k+1,) j / k
    eta: np.ndarray  # (k+1,)
    B: list  # basis derivatives 0..3 at sample times, each (K, k+1, 2s)
    P: list  # trajectory derivatives 0..3 at sample times, each (K, k+1, 3)


def _samples(traj: MincoTrajectory, k: int, orders: int = 4) -> _Samples:
    frac = np.arange(k + 1) / k
    eta = np.ones(k + 1)
    eta[0] = eta[-1] = 0.5
    tau = traj.t[:, None] * frac[None, :]
    B = [basis(tau, traj.s, d) for d in range(orders)]
    P = [np.einsum("kjn,knd->kjd", b, traj.C) for b in B]
    return _Samples(traj.t, frac, eta, B, P)


def localization_cost(traj: MincoTrajectory, mem: MetricEncodingMap, config: OptConfig):
    """Trapezoid-integrated sigma(M) along the trajectory, with gradients in (C, t)."""
    k = config.k_samples
    sm = _samples(traj, k, orders=2)
    K = traj.K
    poses = sm.P[0].reshape(-1, 3)
    mu, delta = gfm_continuous_many(mem, poses, config.fov)
    mu = mu.reshape(K, k + 1)
    delta = delta.reshape(K, k + 1, 3)
    sig = sigmoid(mu, config.sigmoid)
    dsig = sigmoid_derivative(mu, config.sigmoid)
    w = (sm.T / k)[:, None] * sm.eta[None, :]
    J = float(np.sum(w * sig))
    dC = np.einsum("kj,kjn,kjd->knd", w * dsig, sm.B[0], delta)
    chain = np.einsum("kjd,kjd->kj", delta, sm.P[1])
    dT = np.sum(sm.eta * sig, axis=1) / k + np.sum(w * dsig * sm.frac[None, :] * chain, axis=1)
    return J, dC, dT


def _gram(T, s: int) -> np.ndarray:
    """Gram matrix of the s-th derivative basis over [0, T]; T may be an array."""
    n = 2 * s
    i = np.arange(n)
    p = i[:, None] + i[None, :] - 2 * s + 1
    act = (i[:, None] >= s) & (i[None, :] >= s)
    perm = np.array([math.perm(k, s) for k in range(n)], dtype=float)
    A = np.where(act, perm[:, None] * perm[None, :] / np.where(act, p, 1), 0.0)
    T = np.asarray(T, dtype=float)
    return A * T[..., None, None] ** np.where(act, p, 0)


def energy_cost(traj: MincoTrajectory, config: OptConfig):
    """Integral of ||p^(s)||^2 per segment plus rho * total time."""
    s = traj.s
    G = _gram(traj.t, s)
    GC = np.einsum("knm,kmd->knd", G, traj.C)
    J = float(np.einsum("knd,knd->", traj.C, GC)) + config.rho * float(np.sum(traj.t))
    top = np.einsum("kn,knd->kd", basis(traj.t, s, s), traj.C)
    dT = np.sum(top * top, axis=1) + config.rho
    return J, 2 * GC, dT


def _penalty_terms(P, df: DistanceField, config: OptConfig, s: int):
    """Per-sample penalty value and its gradients w.r.t. p, p', p''."""
    shape = P[0].shape[:-1]
    xy = P[0][..., :2].reshape(-1, 2)
    E, gradE = sample_E_exact_many(df, xy)
    E = E.reshape(shape)
    gradE = gradE.reshape(shape + (2,))
    g0 = np.zeros(P[0].shape)
    g1 = np.zeros(P[0].shape)
    g2 = np.zeros(P[0].shape)

    viol = config.safety - E
    act = viol > 0
    Gd = np.where(act, np.maximum(viol, 0) ** s, 0.0)
    g0[..., :2] = np.where(act[..., None], -s * np.maximum(viol, 0)[..., None] ** (s - 1) * gradE, 0.0)

    v = P[1][..., :2]
    a = P[2][..., :2]
    w = P[1][..., 2]
    wd = P[2][..., 2]
    Gv = np.maximum(np.sum(v * v, -1) - config.v_max ** 2, 0.0)
    Ga = np.maximum(np.sum(a * a, -1) - config.a_max ** 2, 0.0)
    Gw = np.maximum(w * w - config.w_max ** 2, 0.0)
    Gwd = np.maximum(wd * wd - config.wdot_max ** 2, 0.0)
    g1[..., :2] = np.where((Gv > 0)[..., None], 2 * v, 0.0)
    g2[..., :2] = np.where((Ga > 0)[..., None], 2 * a, 0.0)
    g1[..., 2] = np.where(Gw > 0, 2 * w, 0.0)
    g2[..., 2] = np.where(Gwd > 0, 2 * wd, 0.0)
    G = Gd + Gv + Ga + Gw + Gwd
    viols = {
        "clearance_deficit_m": float(np.max(np.maximum(viol, 0.0), initial=0.0)),
        "velocity_overshoot": float(np.max(np.sqrt(np.sum(v * v, -1)) / config.v_max - 1, initial=-1.0)),
        "acceleration_overshoot": float(np.max(np.sqrt(np.sum(a * a, -1)) / config.a_max - 1, initial=-1.0)),
        "yaw_rate_overshoot": float(np.max(np.abs(w) / config.w_max - 1, initial=-1.0)),
        "yaw_accel_overshoot": float(np.max(np.abs(wd) / config.wdot_max - 1, initial=-1.0)),
    }
    return G, (g0, g1, g2), viols


def penalty_cost(traj: MincoTrajectory, df: DistanceField, config: OptConfig):
    """Trapezoid-integrated constraint penalties -> (J_G, dC, dT, violations)."""
    k = config.k_samples
    sm = _samples(traj, k, orders=4)
    G, (g0, g1, g2), viols = _penalty_terms(sm.P, df, config, traj.s)
    w = (sm.T / k)[:, None] * sm.eta[None, :]
    J = float(np.sum(w * G))
    dC = (
        np.einsum("kj,kjn,kjd->knd", w, sm.B[0], g0)
        + np.einsum("kj,kjn,kjd->knd", w, sm.B[1], g1)
        + np.einsum("kj,kjn,kjd->knd", w, sm.B[2], g2)
    )
    chain = (
        np.einsum("kjd,kjd->kj", g0, sm.P[1])
        + np.einsum("kjd,kjd->kj", g1, sm.P[2])
        + np.einsum("kjd,kjd->kj", g2, sm.P[3])
    )
    dT = np.sum(sm.eta * G, axis=1) / k + np.sum(w * sm.frac[None, :] * chain, axis=1)
    return J, dC, dT, viols


def check_violations(traj: MincoTrajectory, df: DistanceField, config: OptConfig, k: int = 64) -> dict:
    """Constraint violations on a denser grid than the quadrature uses."""
    sm = _samples(traj, k, orders=3)
    _, _, viols = _penalty_terms(sm.P, df, config, traj.s)
    return viols


# ---------------------------------------------------------------------------
# full objective


@dataclass
class CostReport:
    total: float
    J_l: float
    J_e: float
    J_G: float
    grad_norm: float
    violations: dict = field(default_factory=dict)


class Problem:
    """Objective over x = (Q.ravel(), tau) with fixed boundary states."""

    def __init__(self, traj: MincoTrajectory, df: DistanceField, mem: MetricEncodingMap, config: OptConfig):
        self.s = traj.s
        self.K = traj.K
        self.start = traj.start
        self.end = traj.end
        self.df = df
        self.mem = mem
        self.config = config
        self.n_evals = 0
        self._last = {}

    def pack(self, traj: MincoTrajectory) -> np.ndarray:
        return np.concatenate([traj.Q.ravel(), time_forward(traj.t).ravel()])

    def unpack(self, x) -> MincoTrajectory:
        nq = 3 * (self.K - 1)
        Q = x[:nq].reshape(self.K - 1, 3)
        t = np.atleast_1d(time_backward(x[nq:]))
        return construct(Q, t, self.start, self.end, self.s)

    def evaluate(self, x):
        self.n_evals += 1
        cfg = self.config
        traj = self.unpack(x)
        Je, dCe, dTe = energy_cost(traj, cfg)
        JG, dCG, dTG, viols = penalty_cost(traj, self.df, cfg)
        total = cfg.lambda_e * Je + cfg.lambda_G * JG
        dC = cfg.lambda_e * dCe + cfg.lambda_G * dCG
        dT = cfg.lambda_e * dTe + cfg.lambda_G * dTG
        Jl = 0.0
        if cfg.lambda_l > 0:
            Jl, dCl, dTl = localization_cost(traj, self.mem, cfg)
            total += cfg.lambda_l * Jl
            dC = dC + cfg.lambda_l * dCl
            dT = dT + cfg.lambda_l * dTl
        dQ, dTt = propagate_gradient(traj, dC, dT)
        nq = 3 * (self.K - 1)
        dtau = dTt * time_backward_grad(x[nq:])
        grad = np.concatenate([dQ.ravel(), dtau])
        report = CostReport(total, Jl, Je, JG, float(np.linalg.norm(grad)), viols)
        return total, grad, report

    def __call__(self, x):
        f, g, report = self.evaluate(x)
        self._last = {x.tobytes(): report}
        return f, g

    def report(self, x) -> CostReport:
        rep = self._last.get(x.tobytes())
        return rep if rep is not None else self.evaluate(x)[2]


# ---------------------------------------------------------------------------
# L-BFGS with weak Wolfe (bisection / doubling) line search


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    status: str  # "gtol", "ftol", "maxiter", "linesearch"
    f_history: list = field(default_factory=list)


def weak_wolfe(fun, x, f, g, d, t0=1.0, c1=1e-4, c2=0.9, max_iter=40):
    """Bracketing line search for the weak Wolfe conditions.

    Returns (t, f_t, g_t, ok).  On failure the best point satisfying the
    sufficient-decrease condition is returned (t = 0 if none).
    """
    gd = float(g @ d)
    lo, hi = 0.0, math.inf
    t = t0
    best = (0.0, f, g)
    for _ in range(max_iter):
        ft, gt = fun(x + t * d)
        if not np.isfinite(ft) or ft > f + c1 * t * gd:
            hi = t
        else:
            if ft < best[1]:
                best = (t, ft, gt)
            if float(gt @ d) < c2 * gd:
                lo = t
            else:
                return t, ft, gt, True
        t = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * lo
    return best[0], best[1], best[2], False


def lbfgs(fun, x0, memory=8, c1=1e-4, c2=0.9, g_tol=1e-5, f_tol=1e-8, max_iters=300,
          max_linesearch=40, callback=None) -> LbfgsResult:
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    S, Y = deque(maxlen=memory), deque(maxlen=memory)
    hist = [f]
    status = "maxiter"
    it = 0
    for it in range(1, max_iters + 1):
        if np.linalg.norm(g, np.inf) < g_tol:
            status = "gtol"
            it -= 1
            break
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if S:
            s, y = S[-1], Y[-1]
            q *= (s @ y) / (y @ y)
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q += (a - b) * s
        d = -q
        if g @ d >= 0:
            S.clear()
            Y.clear()
            d = -g
        t0 = 1.0 if S else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-12))
        t, fn, gn, ok = weak_wolfe(fun, x, f, g, d, t0, c1, c2, max_linesearch)
        if t > 0:
            s_vec = t * d
            y_vec = gn - g
            if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
                S.append(s_vec)
                Y.append(y_vec)
            rel = (f - fn) / max(abs(f), abs(fn), 1.0)
            x = x + s_vec
            f, g = fn, gn
            hist.append(f)
            if callback is not None:
                callback(x)
        if not ok:
            status = "linesearch"
            break
        if rel < f_tol:
            status = "ftol"
            break
    return LbfgsResult(x, f, g, it, status, hist)


@dataclass
class OptResult:
    traj: MincoTrajectory
    history: list  # CostReport per accepted iterate
    status: str
    iterations: int
    n_evals: int


def optimize(traj: MincoTrajectory, df: DistanceField, mem: MetricEncodingMap, config: OptConfig = OptConfig()) -> OptResult:
    prob = Problem(traj, df, mem, config)
    x0 = prob.pack(traj)
    history = [prob.evaluate(x0)[2]]

    def record(x):
        history.append(prob.report(x))

    res = lbfgs(prob, x0, config.memory, config.c1, config.c2, config.g_tol, config.f_tol,
                config.max_iters, config.max_linesearch, callback=record)
    if res.status == "linesearch":
        log.info("line search failed after %d iterations; returning best iterate", res.iterations)
    return OptResult(prob.unpack(res.x), history, res.status, res.iterations, prob.n_evals)
