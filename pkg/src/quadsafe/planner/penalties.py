"""Cubic-hinge penalties evaluated at constraint points.

Every function is vectorized over ``n`` points and returns the per-point cost
together with its gradient with respect to the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ObstaclePrediction:
    """Constant-velocity snapshot of one moving obstacle captured at ``stamp``."""

    position: np.ndarray
    velocity: np.ndarray
    stamp: float
    horizon: float = 3.0
    radius: float = 0.0

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("prediction horizon must be positive")

    def predict(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Predicted positions at world times ``t`` and a validity mask (inside the horizon)."""
        t = np.asarray(t, dtype=float)
        dt = t - self.stamp
        pos = np.asarray(self.position)[None, :] + dt[..., None] * np.asarray(self.velocity)[None, :]
        valid = (dt >= 0.0) & (dt <= self.horizon)
        return pos.reshape(t.shape + (3,)), valid


def _hinge3(x):
    h = np.maximum(x, 0.0)
    return h**3, 3.0 * h**2


def static_penalty(points, esdf, threshold) -> tuple[np.ndarray, np.ndarray]:
    """``max(d_a - d(p), 0)^3`` and its gradient ``-3 max(.)^2 grad d(p)``."""
    points = np.atleast_2d(points)
    d, grad, _ = esdf.query_batch(points)
    cost, dcost = _hinge3(np.asarray(threshold) - d)
    return cost, -dcost[:, None] * grad


def dynamic_penalty(points, times, predictions, threshold) -> tuple[np.ndarray, np.ndarray]:
    """Sum over obstacles of ``max(d_r^2 - |p - p_pre|^2, 0)^3``.

    ``times`` are world times of the points; ``threshold`` is ``d_q + d_c`` per
    point, widened by each obstacle's radius. Predictions beyond their horizon
    are ignored.
    """
    points = np.atleast_2d(points)
    times = np.broadcast_to(np.asarray(times, dtype=float), (len(points),))
    threshold = np.broadcast_to(np.asarray(threshold, dtype=float), (len(points),))
    cost = np.zeros(len(points))
    grad = np.zeros_like(points, dtype=float)
    for ob in predictions:
        p_pre, valid = ob.predict(times)
        diff = points - p_pre
        r = threshold + ob.radius
        c, dc = _hinge3(r**2 - np.sum(diff**2, axis=1))
        c = np.where(valid, c, 0.0)
        dc = np.where(valid, dc, 0.0)
        cost += c
        grad += -2.0 * dc[:, None] * diff
    return cost, grad


def feasibility_penalty(vel, acc, v_max: float, a_max: float):
    """Velocity and acceleration magnitude penalties; returns ``(cost, dcost/dv, dcost/da)``."""
    vel = np.atleast_2d(vel)
    acc = np.atleast_2d(acc)
    cv, dcv = _hinge3(np.sum(vel**2, axis=1) - v_max**2)
    ca, dca = _hinge3(np.sum(acc**2, axis=1) - a_max**2)
    return cv + ca, 2.0 * dcv[:, None] * vel, 2.0 * dca[:, None] * acc
