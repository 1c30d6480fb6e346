"""Nonlinear MPC tracking with the disturbance estimate in the prediction model."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import NU, NX, QuadParams, flat_state
from .minco import MincoTrajectory


class FlatnessError(ValueError):
    """Raised when the flat-output map is undefined (free-fall reference)."""


def _diag(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2:
        if not np.allclose(arr, np.diag(np.diag(arr))):
            raise ValueError(f"{name} must be diagonal")
        arr = np.diag(arr)
    arr = np.broadcast_to(arr, (n,)).astype(float)
    return arr


@dataclass
class NmpcConfig:
    """Horizon, weights and solver settings.

    Weight fields accept a length-n vector (the diagonal) or a diagonal matrix.
    ``terminal`` defaults to the stage weights.
    """

    horizon: int = 20
    dt: float = 0.05
    state_weights: np.ndarray = field(
        default_factory=lambda: np.array([100.0] * 3 + [10.0] * 3 + [1.0] * 3)
    )
    terminal_weights: np.ndarray | None = None
    input_weights: np.ndarray = field(default_factory=lambda: np.array([0.1, 1.0, 1.0, 1.0]))
    tilt_weight: float = 1e4
    max_iterations: int = 10
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self.state_weights = _diag(self.state_weights, NX, "state_weights")
        self.terminal_weights = (
            self.state_weights.copy() if self.terminal_weights is None
            else _diag(self.terminal_weights, NX, "terminal_weights")
        )
        self.input_weights = _diag(self.input_weights, NU, "input_weights")
        if np.any(self.state_weights < 0) or np.any(self.terminal_weights < 0):
            raise ValueError("state weights must be non-negative")
        if np.any(self.input_weights <= 0):
            raise ValueError("input weights must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class ReferenceWindow:
    states: np.ndarray  # (N+1, 9)
    inputs: np.ndarray  # (N, 4)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != NX:
            raise ValueError("reference states must have shape (N+1, 9)")
        if self.inputs.shape != (len(self.states) - 1, NU):
            raise ValueError("reference inputs must have shape (N, 4)")

    @property
    def horizon(self) -> int:
        return len(self.inputs)


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def reference_from_flat(pos, vel, acc, yaw, cfg: NmpcConfig, params: QuadParams,
                        f_hat=None, compensate_drag: bool = True) -> ReferenceWindow:
    """Reference window from flat outputs sampled at the N+1 horizon nodes."""
    acc = np.asarray(acc, dtype=float)
    f_ext = np.zeros(3) if f_hat is None else np.asarray(f_hat, dtype=float)
    specific = acc + params.g_vec - f_ext / params.mass
    if np.min(np.linalg.norm(specific, axis=-1)) < 1e-3 * params.gravity:
        raise FlatnessError("reference requires near-zero specific thrust")
    xs, thrust = flat_state(pos, vel, acc, yaw, params, f_dist=f_hat, compensate_drag=compensate_drag)
    rates = _wrap(np.diff(xs[:, 6:9], axis=0)) / cfg.dt
    inputs = np.column_stack([thrust[:-1], rates])
    return ReferenceWindow(xs, inputs)


def reference_from_trajectory(traj: MincoTrajectory, t: float, cfg: NmpcConfig, yaw: float,
                              params: QuadParams, f_hat=None, compensate_drag: bool = True) -> ReferenceWindow:
    """Reference over ``[t, t + N dt]``, holding the endpoint once the trajectory ends.

    Thrust and attitude come from the flatness map with the specific force
    ``a + g - f_hat / m`` (plus drag when enabled); rates are finite
    differences of consecutive reference attitudes.
    """
    times = np.clip(t + cfg.dt * np.arange(cfg.horizon + 1), 0.0, traj.duration)
    held = (t + cfg.dt * np.arange(cfg.horizon + 1)) >= traj.duration
    pos = traj.sample(times, 0)
    vel = np.where(held[:, None], 0.0, traj.sample(times, 1))
    acc = np.where(held[:, None], 0.0, traj.sample(times, 2))
    return reference_from_flat(pos, vel, acc, yaw, cfg, params, f_hat, compensate_drag)


def hover_reference(position, yaw: float, cfg: NmpcConfig, params: QuadParams, f_hat=None) -> ReferenceWindow:
    n = cfg.horizon + 1
    pos = np.repeat(np.asarray(position, dtype=float)[None], n, axis=0)
    zero = np.zeros((n, 3))
    return reference_from_flat(pos, zero, zero, yaw, cfg, params, f_hat)


@dataclass
class NmpcSolution:
    control: np.ndarray  # first input u^0
    states: np.ndarray  # predicted (N+1, 9)
    inputs: np.ndarray  # (N, 4)
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    state_clamped: bool
    solve_time: float


def solve_nmpc(x0, refs: ReferenceWindow, f_hat, cfg: NmpcConfig, params: QuadParams,
               warm_start=None) -> NmpcSolution:
    """One receding-horizon solve; returns the first input and the predicted trajectory.

    Args:
        x0: Measured state (9,). Roll and pitch outside the tilt box are clamped
            and reported through ``state_clamped``.
        refs: Reference window with horizon ``cfg.horizon``.
        f_hat: Disturbance force held constant over the horizon (N).
        cfg: Solver configuration.
        params: Vehicle parameters; input bounds and tilt limit come from here.
        warm_start: Optional (N, 4) initial input guess; defaults to the
            reference inputs.

    Returns:
        NmpcSolution with the projected-feasible input sequence.
    """
    if refs.horizon != cfg.horizon:
        raise ValueError(f"reference horizon {refs.horizon} != configured {cfg.horizon}")
    x0 = np.array(x0, dtype=float)
    if x0.shape != (NX,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite 9-vector")
    f_hat = np.zeros(3) if f_hat is None else np.asarray(f_hat, dtype=float)
    clamped = bool(np.any(np.abs(x0[6:8]) > params.max_tilt))
    x0[6:8] = np.clip(x0[6:8], -params.max_tilt, params.max_tilt)
    U0 = refs.inputs if warm_start is None else np.asarray(warm_start, dtype=float)
    lo, hi = params.input_bounds()
    wall = time.perf_counter()
    U, X, J, J0, it, status = _kernels.gauss_newton_tracking(
        x0, refs.states, refs.inputs, np.ascontiguousarray(U0, dtype=float), f_hat,
        cfg.state_weights, cfg.terminal_weights, cfg.input_weights, lo, hi,
        float(params.max_tilt), float(cfg.tilt_weight), float(params.mass),
        np.ascontiguousarray(params.drag), float(params.gravity), float(cfg.dt),
        int(cfg.max_iterations), float(cfg.tolerance),
    )
    elapsed = time.perf_counter() - wall
    return NmpcSolution(
        control=U[0].copy(), states=X, inputs=U, cost=float(J), initial_cost=float(J0),
        iterations=int(it), converged=status == 0, state_clamped=clamped, solve_time=elapsed,
    )


class NmpcTracker:
    """Stateful wrapper keeping the shifted previous solution as warm start."""

    def __init__(self, cfg: NmpcConfig, params: QuadParams):
        self.cfg = cfg
        self.params = params
        self._warm: np.ndarray | None = None

    def reset(self) -> None:
        self._warm = None

    def step(self, x0, refs: ReferenceWindow, f_hat) -> NmpcSolution:
        sol = solve_nmpc(x0, refs, f_hat, self.cfg, self.params, warm_start=self._warm)
        self._warm = np.vstack([sol.inputs[1:], sol.inputs[-1:]])
        return sol
