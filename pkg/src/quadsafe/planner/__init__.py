"""Trajectory planner: front-end search, reachability-aware back-end optimization, replan checks."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..dynamics import FeedbackGain, QuadParams
from ..esdf import EsdfGrid
from ..minco import Boundary, MincoTrajectory, sample_count
from ..reach import DisturbanceEstimate, FrsConfig, FrsResult, constant_bound, propagate_along_trajectory
from .frontend import InitialPath, PlanningError, search_initial_path
from .objective import (
    ObjectiveTerms,
    OptimizeResult,
    PlanContext,
    PlannerWeights,
    constraint_violation,
    evaluate,
    optimize,
    total_objective,
)
from .penalties import ObstaclePrediction, dynamic_penalty, feasibility_penalty, static_penalty
from .replan import ReplanDecision, check_replan

__all__ = [
    "ObstaclePrediction", "PlanContext", "PlannerWeights", "Planner", "PlanResult", "PlanningError",
    "ReplanDecision", "check_replan", "dynamic_penalty", "feasibility_penalty", "static_penalty",
    "optimize", "total_objective", "evaluate", "search_initial_path", "constraint_violation",
    "InitialPath", "ObjectiveTerms", "OptimizeResult", "stretch_to_limits",
]


@dataclass
class PlanResult:
    trajectory: MincoTrajectory
    frs: FrsResult
    start_time: float
    initial: MincoTrajectory
    optimization: OptimizeResult
    solve_time: float
    min_clearance: float


def stretch_to_limits(traj: MincoTrajectory, v_max: float, a_max: float, slack: float = 1.02,
                      samples: int = 400) -> MincoTrajectory:
    """Slow the trajectory down uniformly when it exceeds the speed or acceleration limit.

    Scaling every duration by ``rho`` with the same waypoints yields exactly
    ``p(t / rho)`` for rest-to-rest boundaries, so the path geometry and its
    clearance are unchanged. With moving boundaries the scaled solve keeps the
    boundary derivatives, so the path shifts slightly near the ends.
    """
    t = np.linspace(0.0, traj.duration, samples)
    v = float(np.linalg.norm(traj.sample(t, 1), axis=1).max())
    a = float(np.linalg.norm(traj.sample(t, 2), axis=1).max())
    rho = max(v / v_max, np.sqrt(a / a_max))
    if rho <= slack:
        return traj
    return MincoTrajectory(traj.q, traj.T * rho, traj.boundary)


class Planner:
    """Stateless-per-call planner bound to a vehicle model and configuration."""

    def __init__(
        self,
        params: QuadParams,
        weights: PlannerWeights | None = None,
        frs_cfg: FrsConfig | None = None,
        use_frs: bool = True,
    ):
        self.params = params
        self.weights = weights or PlannerWeights()
        self.frs_cfg = frs_cfg or FrsConfig(delta=self.weights.delta)
        self.use_frs = use_frs
        self.gain = FeedbackGain(params)

    def bounds(self, traj: MincoTrajectory, estimate: DisturbanceEstimate, extra: float = 2.0) -> FrsResult:
        count = int(np.ceil(extra * (sample_count(traj.duration, self.weights.delta) + 1))) + 2
        delta = self.weights.delta
        if not self.use_frs:
            return constant_bound(self.params.radius, count, delta)
        cfg = replace(self.frs_cfg, delta=delta)
        return propagate_along_trajectory(
            traj, estimate, cfg, self.params, self.gain, count=count,
            bounds=estimate.bounds(cfg.margin),
        )

    def plan(
        self,
        esdf: EsdfGrid,
        boundary: Boundary,
        estimate: DisturbanceEstimate | None = None,
        predictions: Sequence[ObstaclePrediction] = (),
        start_time: float = 0.0,
    ) -> PlanResult:
        """Plan from ``boundary.start`` to ``boundary.end``; raises :class:`PlanningError`."""
        wall = time.perf_counter()
        estimate = estimate or DisturbanceEstimate()
        w = self.weights
        start, goal = boundary.start[0], boundary.end[0]
        base_clearance = self.params.radius + w.static_clearance
        path = search_initial_path(esdf, start, goal, base_clearance, w.v_max, w.a_max, w.piece_length)
        initial = MincoTrajectory(path.waypoints, path.durations, boundary)
        frs = self.bounds(initial, estimate)
        if self.use_frs:
            wide = float(np.median(frs.radii_for(sample_count(initial.duration, w.delta) + 1))) + w.static_clearance
            if wide > base_clearance + 1e-6:
                path = search_initial_path(esdf, start, goal, base_clearance, w.v_max, w.a_max, w.piece_length,
                                           preferred=wide)
                initial = MincoTrajectory(path.waypoints, path.durations, boundary)
                frs = self.bounds(initial, estimate)
        ctx = PlanContext(esdf=esdf, boundary=boundary, frs=frs, weights=w,
                          predictions=tuple(predictions), start_time=start_time)
        result = optimize(initial, ctx)
        traj = result.trajectory
        if not predictions:  # retiming would shift encounters with moving obstacles
            traj = stretch_to_limits(traj, w.v_max, w.a_max)
        if traj is not result.trajectory:
            result = replace(result, trajectory=traj)
        pts = traj.sample(np.linspace(0.0, traj.duration, 200))
        d, _, _ = esdf.query_batch(pts)
        return PlanResult(
            trajectory=traj, frs=frs, start_time=start_time, initial=initial, optimization=result,
            solve_time=time.perf_counter() - wall, min_clearance=float(d.min()),
        )
