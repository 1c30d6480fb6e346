"""Collision checking of the active trajectory against predictions and the static map."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..esdf import EsdfGrid
from ..minco import MincoTrajectory
from ..reach import FrsResult
from .penalties import ObstaclePrediction


@dataclass
class ReplanDecision:
    triggered: bool
    reason: str = ""
    time: float = float("nan")  # world time of the first offending sample
    gap: float = float("inf")


def check_replan(
    traj: MincoTrajectory,
    frs: FrsResult,
    predictions: Sequence[ObstaclePrediction],
    trigger: float,
    now: float,
    start_time: float = 0.0,
    lookahead: float = 3.0,
    delta: float = 0.1,
    esdf: EsdfGrid | None = None,
    static_threshold: float | None = None,
    static_tolerance: float = 0.05,
) -> ReplanDecision:
    """Decide whether the remaining trajectory needs replanning.

    Samples the constraint-point grid of ``traj`` (world time ``start_time +
    k * delta``) inside ``[now, now + lookahead]``. A dynamic conflict is a
    gap between the error-bound sphere (radius ``d_q^k``) and an obstacle sphere
    smaller than ``trigger``. A static conflict is an ESDF distance below
    ``d_q^k + static_threshold - static_tolerance``.
    """
    kappa = int(np.floor(traj.duration / delta + 1e-9))
    k = np.arange(kappa + 1)
    world = start_time + k * delta
    mask = (world >= now - 1e-9) & (world <= now + lookahead + 1e-9)
    if not mask.any():
        return ReplanDecision(False)
    k = k[mask]
    world = world[mask]
    pos = traj.sample(np.minimum(k * delta, traj.duration))
    radii = frs.radii_for(int(k.max()) + 1)[k]
    best = ReplanDecision(False)
    for ob in predictions:
        p_pre, valid = ob.predict(world)
        gap = np.linalg.norm(pos - p_pre, axis=1) - radii - ob.radius
        hit = valid & (gap < trigger)
        if hit.any():
            first = int(np.flatnonzero(hit)[0])
            if not best.triggered or world[first] < best.time:
                best = ReplanDecision(True, "dynamic", float(world[first]), float(gap[first]))
    if esdf is not None and static_threshold is not None:
        d, _, _ = esdf.query_batch(pos)
        slack = d - (radii + static_threshold)
        hit = slack < -static_tolerance
        if hit.any():
            first = int(np.flatnonzero(hit)[0])
            if not best.triggered or world[first] < best.time:
                best = ReplanDecision(True, "static", float(world[first]), float(slack[first]))
    return best
