"""Property suites behind ``quadsafe verify``.

Each check returns a :class:`CheckResult`. A failing check carries a small
JSON-serializable counterexample so the first failure can be reported without
rerunning anything.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import reach
from .dynamics import FeedbackGain, QuadParams
from .esdf import VoxelGrid, build_esdf
from .minco import Boundary, MincoTrajectory
from .observer import DisturbanceObserver, ObserverConfig
from .planner import penalties
from .planner.objective import Objective, PlanContext, PlannerWeights, pack

SUITES = ("gradients", "frs", "observer")


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float  # worst observed metric
    limit: float
    seconds: float = 0.0
    counterexample: dict = field(default_factory=dict)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.suite:<10} {self.name:<28} worst={self.value:.3e} limit={self.limit:.1e} ({self.seconds:.1f}s)"

    def to_json(self) -> str:
        return json.dumps({"suite": self.suite, "check": self.name, "value": self.value,
                           "limit": self.limit, "counterexample": self.counterexample}, sort_keys=True)


def _timed(suite: str, name: str, limit: float, fn: Callable[[], tuple[float, dict]]) -> CheckResult:
    wall = time.perf_counter()
    value, example = fn()
    ok = bool(np.isfinite(value) and value < limit)
    return CheckResult(suite, name, ok, float(value), limit, time.perf_counter() - wall, example if not ok else {})


def _central_difference(f, x, h):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel_error(g, fd) -> float:
    return float(np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd))))


# --- planner gradients -----------------------------------------------------------

def random_scene(rng: np.random.Generator):
    """Cluttered 10 m scene, a trajectory threading it, an FRS and one moving obstacle."""
    grid = VoxelGrid.empty([-1.0, -3.0, 0.0], [11.0, 3.0, 3.0], 0.1)
    for _ in range(rng.integers(4, 9)):
        grid.add_cylinder(rng.uniform([1.0, -2.0], [9.0, 2.0]), rng.uniform(0.2, 0.5), 0.0, 3.0)
    esdf = build_esdf(grid)
    M = int(rng.integers(3, 7))
    xs = np.linspace(0.0, 10.0, M + 1)
    q = np.column_stack([xs[1:-1], rng.uniform(-1.5, 1.5, M - 1), rng.uniform(1.0, 2.0, M - 1)])
    T = rng.uniform(0.8, 2.0, M)
    boundary = Boundary.from_states([0.0, 0.0, 1.5], rng.normal(0, 0.5, 3), rng.normal(0, 0.5, 3), [10.0, 0.0, 1.5])
    count = int(T.sum() / 0.1) + 40
    radii = 0.2 + np.cumsum(rng.uniform(0.0, 0.03, count))
    frs = reach.FrsResult(np.arange(count) * 0.1, np.repeat(np.eye(3)[None], count, 0), radii)
    pred = penalties.ObstaclePrediction(
        np.array([rng.uniform(3, 7), rng.uniform(-1, 1), 1.5]), np.array([-0.8, rng.uniform(-0.5, 0.5), 0.0]),
        stamp=0.0, horizon=T.sum() + 1.0, radius=0.3,
    )
    weights = PlannerWeights(v_max=1.5, a_max=2.0)  # tight limits so the feasibility term is active
    ctx = PlanContext(esdf, boundary, frs, weights, (pred,), start_time=0.0)
    return ctx, q, T


def check_objective_gradient(scenes: int = 20, seed: int = 0, h: float = 1e-6) -> tuple[float, dict]:
    rng = np.random.default_rng(seed)
    worst, example = 0.0, {}
    for s in range(scenes):
        ctx, q, T = random_scene(rng)
        obj = Objective(ctx, len(T))
        x = pack(q, T)
        _, g = obj(x)
        fd = _central_difference(lambda z: obj(z)[0], x, h)
        err = _rel_error(g, fd)
        if err > worst:
            worst = err
            example = {"scene": s, "seed": seed, "index": int(np.argmax(np.abs(g - fd))), "x": x.round(9).tolist()}
    return worst, example


def check_static_penalty(cases: int = 200, seed: int = 1, h: float = 1e-6) -> tuple[float, dict]:
    rng = np.random.default_rng(seed)
    grid = VoxelGrid.empty([0.0, 0.0, 0.0], [4.0, 4.0, 2.0], 0.1)
    grid.add_cylinder([2.0, 2.0], 0.4, 0.0, 2.0)
    grid.add_box([0.5, 0.5, 0.0], [1.0, 3.0, 1.0])
    esdf = build_esdf(grid)
    pts = rng.uniform([0.3, 0.3, 0.3], [3.7, 3.7, 1.7], (cases, 3))
    thr = rng.uniform(0.5, 1.5, cases)
    _, g = penalties.static_penalty(pts, esdf, thr)
    fd = np.stack([_central_difference(lambda p: penalties.static_penalty(p[None], esdf, t)[0][0], p, h)
                   for p, t in zip(pts, thr)])
    err = np.max(np.abs(g - fd), axis=1) / np.maximum(1.0, np.max(np.abs(fd), axis=1))
    i = int(np.argmax(err))
    return float(err[i]), {"point": pts[i].tolist(), "threshold": float(thr[i])}


def check_dynamic_penalty(cases: int = 200, seed: int = 2, h: float = 1e-6) -> tuple[float, dict]:
    rng = np.random.default_rng(seed)
    preds = [penalties.ObstaclePrediction(rng.normal(0, 1, 3), rng.normal(0, 1, 3), 0.0, 5.0, 0.3) for _ in range(2)]
    pts = rng.normal(0, 1, (cases, 3))
    times = rng.uniform(0, 4, cases)
    thr = rng.uniform(0.5, 2.0, cases)
    _, g = penalties.dynamic_penalty(pts, times, preds, thr)
    fd = np.stack([_central_difference(lambda p: penalties.dynamic_penalty(p[None], t, preds, r)[0][0], p, h)
                   for p, t, r in zip(pts, times, thr)])
    err = np.max(np.abs(g - fd), axis=1) / np.maximum(1.0, np.max(np.abs(fd), axis=1))
    i = int(np.argmax(err))
    return float(err[i]), {"point": pts[i].tolist(), "time": float(times[i]), "threshold": float(thr[i])}


def check_feasibility_penalty(cases: int = 200, seed: int = 3, h: float = 1e-6) -> tuple[float, dict]:
    rng = np.random.default_rng(seed)
    vel = rng.normal(0, 2, (cases, 3))
    acc = rng.normal(0, 4, (cases, 3))
    _, gv, ga = penalties.feasibility_penalty(vel, acc, 2.0, 4.0)
    worst, example = 0.0, {}
    for i in range(cases):
        fdv = _central_difference(lambda v: penalties.feasibility_penalty(v[None], acc[i][None], 2.0, 4.0)[0][0], vel[i], h)
        fda = _central_difference(lambda a: penalties.feasibility_penalty(vel[i][None], a[None], 2.0, 4.0)[0][0], acc[i], h)
        scale = max(1.0, np.abs(fdv).max(), np.abs(fda).max())
        err = max(np.abs(gv[i] - fdv).max(), np.abs(ga[i] - fda).max()) / scale
        if err > worst:
            worst, example = err, {"vel": vel[i].tolist(), "acc": acc[i].tolist()}
    return worst, example


def gradient_checks() -> list[CheckResult]:
    return [
        _timed("gradients", "objective", 1e-3, check_objective_gradient),
        _timed("gradients", "static_penalty", 1e-4, check_static_penalty),
        _timed("gradients", "dynamic_penalty", 1e-4, check_dynamic_penalty),
        _timed("gradients", "feasibility_penalty", 1e-4, check_feasibility_penalty),
    ]


# --- reachability ------------------------------------------------------------------

def random_hurwitz(rng: np.random.Generator, n: int = 9) -> np.ndarray:
    A = rng.normal(0, 1, (n, n))
    shift = np.max(np.linalg.eigvals(A).real) + rng.uniform(0.1, 2.0)
    return A - shift * np.eye(n)


def random_psd(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.normal(0, 1, (n, n))
    return A @ A.T / n


def check_lyapunov(cases: int = 100, seed: int = 10) -> tuple[float, dict]:
    rng = np.random.default_rng(seed)
    worst, example = 0.0, {}
    for c in range(cases):
        Phi = random_hurwitz(rng)
        D = rng.normal(0, 1, 9)
        b, delta, eps = rng.uniform(0.1, 5.0), 0.1, 0.01
        Q = reach.solve_channel_lyapunov(Phi, D, b, delta, eps)
        X = Q - eps * delta**2 * np.eye(9)
        _, rhs = reach._channel_rhs(Phi, D, b, delta)
        res = np.linalg.norm(-Phi @ X - X @ Phi.T - rhs) / np.linalg.norm(rhs)
        if res > worst:
            worst, example = res, {"case": c, "seed": seed}
    return worst, example


def check_minkowski_containment(cases: int = 50, directions: int = 1000, seed: int = 11) -> tuple[float, dict]:
    """Largest support-function shortfall ``h1 + h2 - h(Q1 + Q2)`` over sampled directions."""
    rng = np.random.default_rng(seed)
    worst, example = -np.inf, {}
    for c in range(cases):
        n = int(rng.choice([3, 9]))
        Q1, Q2 = random_psd(rng, n), random_psd(rng, n)
        Qs = reach.minkowski_shape(Q1, Q2)
        u = rng.normal(0, 1, (directions, n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        h = lambda Q: np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", u, Q, u), 0.0))
        gap = float(np.max(h(Q1) + h(Q2) - h(Qs)))
        if gap > worst:
            worst, example = gap, {"case": c, "seed": seed, "n": n}
    return worst + 1e-9, example  # passes when the shortfall is at most 1e-9


def check_sphere_exactness(cases: int = 100, seed: int = 12) -> tuple[float, dict]:
    rng = np.random.default_rng(seed)
    worst, example = 0.0, {}
    for _ in range(cases):
        r, r0 = rng.uniform(0.0, 3.0, 2)
        err = np.max(np.abs(reach.minkowski_shape(r**2 * np.eye(3), r0**2 * np.eye(3)) - (r + r0) ** 2 * np.eye(3)))
        if err > worst:
            worst, example = err, {"r": r, "r0": r0}
    return worst, example


def random_trajectory(rng: np.random.Generator) -> MincoTrajectory:
    M = int(rng.integers(2, 4))
    q = rng.uniform([-1, -1, 1], [1, 1, 2], (M - 1, 3))
    T = rng.uniform(1.5, 2.5, M)
    return MincoTrajectory(q, T, Boundary.rest(rng.uniform([-3, -3, 1], [-2, 3, 2]), rng.uniform([2, -3, 1], [3, 3, 2])))


def check_bound_monotonicity(cases: int = 100, seed: int = 13) -> tuple[float, dict]:
    """Largest decrease of any ``d_q^k`` when every channel bound is doubled (must be <= 0)."""
    rng = np.random.default_rng(seed)
    params = QuadParams()
    K = FeedbackGain.at_hover(params)
    cfg = reach.FrsConfig()
    worst, example = -np.inf, {}
    for c in range(cases):
        traj = random_trajectory(rng)
        b = rng.uniform(0.0, 3.0, 3)
        est = reach.DisturbanceEstimate(force=rng.normal(0, 1, 3))
        lo = reach.propagate_along_trajectory(traj, est, cfg, params, K, bounds=b).radii
        hi = reach.propagate_along_trajectory(traj, est, cfg, params, K, bounds=2 * b).radii
        drop = float(np.max(lo - hi))
        if drop > worst:
            worst, example = drop, {"case": c, "seed": seed, "bounds": b.tolist()}
    return worst + 1e-9, example


def frs_checks() -> list[CheckResult]:
    return [
        _timed("frs", "lyapunov_residual", 1e-8, check_lyapunov),
        _timed("frs", "minkowski_containment", 2e-9, check_minkowski_containment),
        _timed("frs", "sphere_exactness", 1e-10, check_sphere_exactness),
        _timed("frs", "bound_monotonicity", 2e-9, check_bound_monotonicity),
    ]


# --- observer ------------------------------------------------------------------------

def simulate_observer(force: Callable[[float], np.ndarray], duration: float, params: QuadParams | None = None,
                      cfg: ObserverConfig | None = None, dt: float = 0.01, substeps: int = 10):
    """Hovering vehicle pushed by ``force(t)``; returns times, true forces and published estimates.

    The true velocity follows the translational model with hover thrust and
    level attitude, integrated finer than the observer rate.
    """
    params = params or QuadParams()
    obs = DisturbanceObserver(params, cfg)
    v = np.zeros(3)
    x = np.zeros(9)
    h = dt / substeps
    times, truth, est = [], [], []
    for k in range(int(round(duration / dt))):
        t = k * dt
        x[3:6] = v
        e = obs.update(t, x, params.hover_thrust, dt)
        times.append(t)
        truth.append(force(t))
        est.append(e.force)
        for i in range(substeps):
            s = t + i * h
            # level attitude: thrust cancels gravity; drag acts on v
            def acc(vv, ss):
                return (force(ss) - params.drag @ vv) / params.mass
            k1 = acc(v, s)
            k2 = acc(v + 0.5 * h * k1, s + 0.5 * h)
            k3 = acc(v + 0.5 * h * k2, s + 0.5 * h)
            k4 = acc(v + h * k3, s + h)
            v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return np.array(times), np.array(truth), np.array(est)


def check_observer_step() -> tuple[float, dict]:
    step = np.array([2.0, 0.0, 0.0])
    t, truth, est = simulate_observer(lambda s: step, 4.0)
    err = np.abs(est[t >= 3.0] - truth[t >= 3.0]).max()
    return float(err), {"force": step.tolist(), "after": 3.0}


def check_observer_ramp() -> tuple[float, dict]:
    slope = np.array([0.0, 0.5, 0.0])
    t, truth, est = simulate_observer(lambda s: slope * s, 8.0)
    err = np.abs(est[t >= 5.0] - truth[t >= 5.0]).max()
    return float(err), {"slope": slope.tolist(), "after": 5.0}


def observer_checks() -> list[CheckResult]:
    return [
        _timed("observer", "step_2N_after_3s", 0.05, check_observer_step),
        _timed("observer", "ramp_0.5N_per_s", 0.02, check_observer_ramp),
    ]


_SUITE_FNS = {"gradients": gradient_checks, "frs": frs_checks, "observer": observer_checks}


def run(which: str = "all") -> list[CheckResult]:
    """Run one suite or all of them."""
    if which == "all":
        names = SUITES
    elif which in _SUITE_FNS:
        names = (which,)
    else:
        raise ValueError(f"unknown suite {which!r}; choose from {', '.join(SUITES)} or all")
    results = []
    for name in names:
        results.extend(_SUITE_FNS[name]())
    return results
