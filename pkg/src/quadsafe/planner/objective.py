"""Spatial-temporal objective over MINCO waypoints and durations, and its optimizer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..esdf import EsdfGrid
from ..minco import (
    Boundary,
    MincoTrajectory,
    TrajectoryError,
    basis,
    dtime_dtau,
    sample_count,
    tau_from_time,
    time_from_tau,
    trapezoid_weights,
)
from ..reach import FrsResult
from . import lbfgs
from .penalties import ObstaclePrediction, dynamic_penalty, feasibility_penalty, static_penalty

log = logging.getLogger(__name__)


MAX_DURATION = 1e3  # line-search trial points beyond this total duration (s) are rejected


@dataclass
class PlannerWeights:
    static: float = 1e4
    dynamic: float = 1e4
    feasibility: float = 1e3
    time: float = 100.0
    smoothness: float = 1.0
    static_clearance: float = 0.1
    dynamic_clearance: float = 0.4
    v_max: float = 2.0
    a_max: float = 6.0
    delta: float = 0.1
    replan_trigger: float = 0.2
    lookahead: float = 2.0  # shorter than the prediction horizon so a fresh plan clears the next checks
    planning_budget: float = 0.05
    prediction_horizon: float = 3.0
    piece_length: float = 1.5
    max_iterations: int = 200
    escalation_rounds: int = 5
    audit_tolerance: float = 1e-3

    def __post_init__(self):
        for name in ("static", "dynamic", "feasibility", "time", "smoothness",
                     "static_clearance", "dynamic_clearance", "replan_trigger"):
            if getattr(self, name) < 0:
                raise ValueError(f"planner weight {name} must be non-negative")
        if not (self.v_max > 0 and self.a_max > 0 and self.delta > 0):
            raise ValueError("v_max, a_max and delta must be positive")


@dataclass
class PlanContext:
    """Everything the objective needs besides the decision variables."""

    esdf: EsdfGrid
    boundary: Boundary
    frs: FrsResult
    weights: PlannerWeights = field(default_factory=PlannerWeights)
    predictions: Sequence[ObstaclePrediction] = ()
    start_time: float = 0.0  # world time of trajectory t = 0

    def static_threshold(self, k) -> np.ndarray:
        return self.frs.radii_for(int(np.max(k)) + 1)[k] + self.weights.static_clearance

    def dynamic_threshold(self, k) -> np.ndarray:
        return self.frs.radii_for(int(np.max(k)) + 1)[k] + self.weights.dynamic_clearance


@dataclass
class ObjectiveTerms:
    total: float
    smoothness: float
    time: float
    static: float
    dynamic: float
    feasibility: float


def pack(q, T) -> np.ndarray:
    return np.concatenate([np.asarray(q, float).ravel(), tau_from_time(T)])


def unpack(x, pieces: int) -> tuple[np.ndarray, np.ndarray]:
    nq = 3 * (pieces - 1)
    return x[:nq].reshape(-1, 3), time_from_tau(x[nq:])


def _samples(traj: MincoTrajectory, delta: float):
    """Sample times, constraint indices and quadrature weights including the tail point."""
    kappa = sample_count(traj.duration, delta)
    w, tail = trapezoid_weights(traj.duration, delta)
    times = np.minimum(np.arange(kappa + 1) * delta, traj.duration)
    index = np.arange(kappa + 1)
    is_tail = np.zeros(kappa + 1, dtype=bool)
    weights = w.copy()
    if tail > 0:
        weights[-1] += 0.5 * tail
        times = np.append(times, traj.duration)
        index = np.append(index, kappa)
        weights = np.append(weights, 0.5 * tail)
        is_tail = np.append(is_tail, True)
    return times, index, weights, is_tail, tail


def evaluate(traj: MincoTrajectory, ctx: PlanContext, with_gradient: bool = True):
    """Objective value, its breakdown, and (dJ/dc, explicit dJ/dT)."""
    wts = ctx.weights
    M = traj.pieces
    times, index, omega, is_tail, tail = _samples(traj, wts.delta)
    j, tl = traj.locate(times)
    j = np.where(is_tail, M - 1, j)
    tl = np.where(is_tail, traj.T[M - 1], tl)
    B = [basis(tl, d) for d in range(4)]
    coeff = traj.coeffs[j]
    pos, vel, acc, jerk = (np.einsum("nk,nkd->nd", Bd, coeff) for Bd in B)
    n = len(times)

    P = np.zeros(n)
    gp = np.zeros((n, 3))
    gv = np.zeros((n, 3))
    ga = np.zeros((n, 3))
    g_pre_dt = np.zeros(n)  # dP/d(world time of the prediction), tail point only
    parts = {}

    if wts.static > 0:
        c, g = static_penalty(pos, ctx.esdf, ctx.static_threshold(index))
        P += wts.static * c
        gp += wts.static * g
        parts["static"] = float(omega @ c)
    if wts.dynamic > 0 and ctx.predictions:
        world = ctx.start_time + times
        c, g = dynamic_penalty(pos, world, ctx.predictions, ctx.dynamic_threshold(index))
        P += wts.dynamic * c
        gp += wts.dynamic * g
        parts["dynamic"] = float(omega @ c)
        # The tail sample sits at T_sum, so its prediction time moves with T.
        if is_tail.any():
            for ob in ctx.predictions:
                _, gob = dynamic_penalty(pos[is_tail], world[is_tail], [ob], ctx.dynamic_threshold(index[is_tail]))
                g_pre_dt[is_tail] += wts.dynamic * (-gob @ np.asarray(ob.velocity))
    if wts.feasibility > 0:
        c, dv, da = feasibility_penalty(vel, acc, wts.v_max, wts.a_max)
        P += wts.feasibility * c
        gv += wts.feasibility * dv
        ga += wts.feasibility * da
        parts["feasibility"] = float(omega @ c)

    smooth = traj.smoothness_cost()
    J = wts.smoothness * smooth + wts.time * traj.duration + float(omega @ P)
    terms = ObjectiveTerms(
        total=J, smoothness=smooth, time=traj.duration,
        static=parts.get("static", 0.0), dynamic=parts.get("dynamic", 0.0),
        feasibility=parts.get("feasibility", 0.0),
    )
    if not with_gradient:
        return terms, None, None

    gc_s, gT_s = traj.smoothness_gradients()
    grad_c = wts.smoothness * gc_s
    grad_T = wts.smoothness * gT_s + wts.time

    contrib = (
        np.einsum("nk,nd->nkd", B[0], gp)
        + np.einsum("nk,nd->nkd", B[1], gv)
        + np.einsum("nk,nd->nkd", B[2], ga)
    ) * omega[:, None, None]
    np.add.at(grad_c, j, contrib)

    dPdt = np.sum(gp * vel + gv * acc + ga * jerk, axis=1)
    # Interior samples have fixed absolute time: local t = k*delta - sum_{i<j} T_i.
    interior = ~is_tail
    per_piece = np.zeros(M)
    np.add.at(per_piece, j[interior], omega[interior] * dPdt[interior])
    later = np.cumsum(per_piece[::-1])[::-1]  # sum over pieces >= i
    grad_T[:-1] -= later[1:]
    if is_tail.any():
        grad_T[M - 1] += float(omega[is_tail] @ dPdt[is_tail])
        grad_T += float(omega[is_tail] @ g_pre_dt[is_tail])
        # d(tail)/dT_i = 1 for the quadrature span.
        kappa_idx = np.flatnonzero(~is_tail)[-1]
        grad_T += 0.5 * (P[kappa_idx] + P[is_tail].sum())
    return terms, grad_c, grad_T


class Objective:
    """Callable ``x -> (J, grad)`` over packed ``(q, tau)``."""

    def __init__(self, ctx: PlanContext, pieces: int):
        self.ctx = ctx
        self.pieces = pieces
        self.evaluations = 0

    def trajectory(self, x) -> MincoTrajectory:
        q, T = unpack(np.asarray(x, dtype=float), self.pieces)
        return MincoTrajectory(q, T, self.ctx.boundary)

    def __call__(self, x):
        self.evaluations += 1
        x = np.asarray(x, dtype=float)
        q, T = unpack(x, self.pieces)
        if not np.all(np.isfinite(x)) or T.sum() > MAX_DURATION:
            return np.inf, np.zeros_like(x)
        try:
            traj = MincoTrajectory(q, T, self.ctx.boundary)
        except TrajectoryError:
            return np.inf, np.zeros_like(x)
        terms, gc, gT = evaluate(traj, self.ctx)
        gq, gTT = traj.backward_gradients(gc, gT)
        nq = 3 * (self.pieces - 1)
        return terms.total, np.concatenate([gq.ravel(), gTT * dtime_dtau(x[nq:])])

    def value(self, x) -> float:
        terms, _, _ = evaluate(self.trajectory(x), self.ctx, with_gradient=False)
        return terms.total


def total_objective(traj: MincoTrajectory, ctx: PlanContext) -> tuple[float, np.ndarray, np.ndarray]:
    """``(J, dJ/dq, dJ/dT)`` for a trajectory."""
    terms, gc, gT = evaluate(traj, ctx)
    gq, gTT = traj.backward_gradients(gc, gT)
    return terms.total, gq, gTT


@dataclass
class OptimizeResult:
    trajectory: MincoTrajectory
    cost: float
    initial_cost: float
    iterations: int
    evaluations: int
    status: str
    warning: bool
    max_violation: float


def constraint_violation(traj: MincoTrajectory, ctx: PlanContext) -> float:
    """Largest amount by which a constraint point undercuts its static or dynamic threshold."""
    delta = ctx.weights.delta
    kappa = sample_count(traj.duration, delta)
    times = np.minimum(np.arange(kappa + 1) * delta, traj.duration)
    index = np.arange(kappa + 1)
    pos = traj.sample(times)
    d, _, _ = ctx.esdf.query_batch(pos)
    worst = float(np.max(ctx.static_threshold(index) - d, initial=-np.inf))
    dyn_thr = ctx.dynamic_threshold(index)
    for ob in ctx.predictions:
        p_pre, valid = ob.predict(ctx.start_time + times)
        gap = dyn_thr + ob.radius - np.linalg.norm(pos - p_pre, axis=1)
        if valid.any():
            worst = max(worst, float(gap[valid].max()))
    return max(worst, 0.0)


def optimize(initial: MincoTrajectory, ctx: PlanContext) -> OptimizeResult:
    """L-BFGS over ``(q, tau)`` with penalty escalation until constraint points are clear."""
    M = initial.pieces
    x0 = pack(initial.q, initial.T)
    base = Objective(ctx, M)
    J0 = base.value(x0)
    x = x0
    rounds_ctx = ctx
    iterations = evaluations = 0
    status = "converged"
    accepted = x0
    for round_ in range(max(ctx.weights.escalation_rounds, 1)):
        obj = Objective(rounds_ctx, M)
        res = lbfgs.minimize(obj, x, max_iterations=ctx.weights.max_iterations)
        iterations += res.iterations
        evaluations += res.evaluations
        status = res.status
        x = res.x
        if base.value(x) <= J0:
            accepted = x
        violation = constraint_violation(obj.trajectory(x), ctx)
        if violation <= ctx.weights.audit_tolerance:
            break
        w = rounds_ctx.weights
        rounds_ctx = replace(rounds_ctx, weights=replace(
            w, static=w.static * 10, dynamic=w.dynamic * 10, feasibility=w.feasibility * 10))
        log.debug("escalating penalties after round %d (violation %.4f)", round_, violation)
    traj = base.trajectory(accepted)
    J = base.value(accepted)
    violation = constraint_violation(traj, ctx)
    return OptimizeResult(
        trajectory=traj, cost=J, initial_cost=J0, iterations=iterations, evaluations=evaluations,
        status=status, warning=status == "line_search_failed" or status == "max_iterations",
        max_violation=violation,
    )
