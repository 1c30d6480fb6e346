"""Generalized proportional-integral observer for the external force on the vehicle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import QuadParams, rotation
from .reach import DisturbanceEstimate


class ObserverError(ValueError):
    pass


@dataclass(frozen=True)
class ObserverState:
    v_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    z1: np.ndarray = field(default_factory=lambda: np.zeros(3))  # force (N)
    z2: np.ndarray = field(default_factory=lambda: np.zeros(3))  # force rate (N/s)


def _as_gain(G) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.ndim == 0:
        return G * np.eye(3)
    if G.shape == (3,):
        return np.diag(G)
    if G.shape != (3, 3):
        raise ObserverError(f"gain must be scalar, 3-vector or 3x3, got shape {G.shape}")
    return G


@dataclass(frozen=True)
class ObserverGains:
    G1: np.ndarray
    G2: np.ndarray
    G3: np.ndarray

    def __post_init__(self):
        for name in ("G1", "G2", "G3"):
            object.__setattr__(self, name, _as_gain(getattr(self, name)))

    @classmethod
    def from_bandwidth(cls, omega: float = 8.0, mass: float = 1.0) -> "ObserverGains":
        """Triple pole at ``-omega`` on every axis.

        The force states enter the velocity error through ``1/m``, so the two
        integral gains carry a factor of ``m`` to keep the pole placement exact.
        """
        if not omega > 0:
            raise ObserverError("bandwidth must be positive")
        eye = np.eye(3)
        return cls(3 * omega * eye, 3 * omega**2 * mass * eye, omega**3 * mass * eye)

    def error_matrix(self, mass: float) -> np.ndarray:
        """Continuous error dynamics of ``(v - v_hat, z1 - z1_hat, z2 - z2_hat)``."""
        I = np.eye(3)
        Z = np.zeros((3, 3))
        return np.block([
            [-self.G1, I / mass, Z],
            [-self.G2, Z, I],
            [-self.G3, Z, Z],
        ])

    def validate(self, mass: float) -> None:
        eig = np.linalg.eigvals(self.error_matrix(mass))
        if np.max(eig.real) >= 0:
            raise ObserverError(f"observer error dynamics not Hurwitz (max real part {np.max(eig.real):.3g})")


def observer_step(s: ObserverState, v_meas, R, thrust: float, v_for_drag, dt: float,
                  gains: ObserverGains, params: QuadParams) -> ObserverState:
    """One forward-Euler step of the observer.

    Args:
        s: Current estimate.
        v_meas: Measured velocity (m/s).
        R: Body-to-world rotation at the measurement.
        thrust: Applied collective thrust (N).
        v_for_drag: Velocity used inside the drag term.
        dt: Step (s).
        gains: Observer gains.
        params: Vehicle parameters.

    Returns:
        The propagated estimate.
    """
    if not dt > 0:
        raise ObserverError("dt must be positive")
    v_meas = np.asarray(v_meas, dtype=float)
    v_for_drag = np.asarray(v_for_drag, dtype=float)
    R = np.asarray(R, dtype=float)
    if not (np.all(np.isfinite(v_meas)) and np.all(np.isfinite(R)) and np.isfinite(thrust)
            and np.all(np.isfinite(v_for_drag))):
        raise ObserverError("non-finite observer input")
    innov = v_meas - s.v_hat
    drag = R @ params.drag @ R.T @ v_for_drag
    v_dot = (R[:, 2] * thrust - drag + s.z1) / params.mass - params.g_vec + gains.G1 @ innov
    z1_dot = s.z2 + gains.G2 @ innov
    z2_dot = gains.G3 @ innov
    return ObserverState(s.v_hat + dt * v_dot, s.z1 + dt * z1_dot, s.z2 + dt * z2_dot)


@dataclass
class ObserverConfig:
    bandwidth: float = 8.0
    cutoff_hz: float = 20.0
    spread_window: float = 2.0  # time constant of the running variance (s)
    gains: ObserverGains | None = None  # overrides the bandwidth parameterization


class DisturbanceObserver:
    """Observer with a low-pass filtered, timestamped published estimate."""

    def __init__(self, params: QuadParams, cfg: ObserverConfig | None = None, state: ObserverState | None = None):
        self.params = params
        self.cfg = cfg or ObserverConfig()
        self.gains = self.cfg.gains or ObserverGains.from_bandwidth(self.cfg.bandwidth, params.mass)
        self.gains.validate(params.mass)
        self.state = state or ObserverState()
        self._filtered = self.state.z1.copy()
        self._mean = self._filtered.copy()
        self._var = np.zeros(3)
        self._stamp = 0.0

    def reset(self, velocity) -> None:
        self.state = ObserverState(np.asarray(velocity, dtype=float).copy(), np.zeros(3), np.zeros(3))
        self._filtered = np.zeros(3)
        self._mean = np.zeros(3)
        self._var = np.zeros(3)

    def update(self, t: float, x_meas, thrust: float, dt: float) -> DisturbanceEstimate:
        """Advance with a measured state (velocity and attitude) and the applied thrust."""
        x_meas = np.asarray(x_meas, dtype=float)
        R = rotation(x_meas[6], x_meas[7], x_meas[8])
        v = x_meas[3:6]
        self.state = observer_step(self.state, v, R, thrust, v, dt, self.gains, self.params)
        alpha = dt / (dt + 1.0 / (2 * np.pi * self.cfg.cutoff_hz))
        self._filtered = self._filtered + alpha * (self.state.z1 - self._filtered)
        beta = min(dt / self.cfg.spread_window, 1.0)
        diff = self._filtered - self._mean
        self._mean = self._mean + beta * diff
        self._var = (1 - beta) * (self._var + beta * diff**2)
        self._stamp = t
        return self.estimate()

    def estimate(self) -> DisturbanceEstimate:
        return DisturbanceEstimate(force=self._filtered.copy(), spread=np.sqrt(self._var), stamp=self._stamp)

    @property
    def force_rate(self) -> np.ndarray:
        return self.state.z2.copy()
