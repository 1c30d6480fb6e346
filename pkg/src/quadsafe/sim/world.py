"""Ground-truth wind and moving obstacles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..planner.penalties import ObstaclePrediction

WIND_KINDS = ("none", "constant", "gusty")
PATTERNS = ("constant", "back_and_forth")


@dataclass(frozen=True)
class WindModel:
    kind: str = "none"
    mean: tuple = (0.0, 0.0, 0.0)  # wind velocity (m/s)
    variance: float = 1.0  # of the speed along the mean direction (m^2/s^2)
    correlation_time: float = 1.0  # s
    coefficient: float = 1.0  # force per unit wind speed (N s/m)

    def __post_init__(self):
        if self.kind not in WIND_KINDS:
            raise ValueError(f"wind kind must be one of {WIND_KINDS}, got {self.kind!r}")
        if self.variance < 0:
            raise ValueError("wind variance must be non-negative")
        if not self.correlation_time > 0:
            raise ValueError("wind correlation time must be positive")
        if not self.coefficient > 0:
            raise ValueError("wind force coefficient must be positive")
        if self.kind == "gusty" and np.linalg.norm(self.mean) == 0:
            raise ValueError("gusty wind needs a non-zero mean direction")

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.mean))

    @property
    def direction(self) -> np.ndarray:
        s = self.speed
        return np.asarray(self.mean, dtype=float) / s if s > 0 else np.zeros(3)


class WindStream:
    """Wind speed on a fixed time grid, generated lazily from one seeded generator.

    The speed along the mean direction follows an exactly discretized
    Ornstein-Uhlenbeck process started from its stationary distribution, and is
    held constant over each grid interval.
    """

    def __init__(self, model: WindModel, rng: np.random.Generator, dt: float = 0.01):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.model = model
        self.rng = rng
        self.dt = dt
        self._decay = np.exp(-dt / model.correlation_time)
        self._speeds: list[float] = []

    def _extend(self, n: int) -> None:
        m = self.model
        sigma = np.sqrt(m.variance)
        if not self._speeds:
            self._speeds.append(m.speed + sigma * self.rng.standard_normal())
        count = n - len(self._speeds)
        if count <= 0:
            return
        noise = self.rng.standard_normal(count) * sigma * np.sqrt(1 - self._decay**2)
        s = self._speeds[-1]
        for xi in noise:
            s = m.speed + (s - m.speed) * self._decay + xi
            self._speeds.append(s)

    def speed(self, t: float) -> float:
        k = int(np.floor(t / self.dt + 1e-9))
        if k < 0:
            raise ValueError("wind queried at negative time")
        self._extend(k + 1)
        return self._speeds[k]

    def speeds(self, n: int) -> np.ndarray:
        self._extend(n)
        return np.array(self._speeds[:n])


def wind_force(model: WindModel, t: float, stream: WindStream | None = None) -> np.ndarray:
    """Force on the vehicle at time ``t``: ``c_w`` times the wind velocity."""
    if model.kind == "none":
        return np.zeros(3)
    if model.kind == "constant":
        return model.coefficient * np.asarray(model.mean, dtype=float)
    if stream is None:
        raise ValueError("gusty wind needs a seeded stream")
    return model.coefficient * stream.speed(t) * model.direction


@dataclass(frozen=True)
class DynamicObstacle:
    """Sphere moving at constant velocity or back and forth between two endpoints.

    For the back-and-forth pattern the speed is ``|velocity|`` and the motion
    starts at ``position`` heading along the sign of ``velocity`` on the
    segment.
    """

    position: tuple
    velocity: tuple
    radius: float = 0.3
    pattern: str = "constant"
    endpoints: tuple | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")
        if self.pattern not in PATTERNS:
            raise ValueError(f"obstacle pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if self.pattern == "back_and_forth":
            if self.endpoints is None or len(self.endpoints) != 2:
                raise ValueError("back_and_forth obstacles need two endpoints")
            a, b = (np.asarray(e, dtype=float) for e in self.endpoints)
            if np.linalg.norm(b - a) == 0:
                raise ValueError("back_and_forth endpoints coincide")

    def _segment(self):
        a, b = (np.asarray(e, dtype=float) for e in self.endpoints)
        length = float(np.linalg.norm(b - a))
        direction = (b - a) / length
        speed = float(np.linalg.norm(self.velocity))
        offset = float(np.clip((np.asarray(self.position) - a) @ direction, 0.0, length))
        phase0 = offset if np.dot(self.velocity, direction) >= 0 else 2 * length - offset
        return a, direction, length, speed, phase0


def obstacle_state(ob: DynamicObstacle, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth position and velocity at time ``t``."""
    if ob.pattern == "constant":
        v = np.asarray(ob.velocity, dtype=float)
        return np.asarray(ob.position, dtype=float) + t * v, v
    a, direction, length, speed, phase0 = ob._segment()
    if speed == 0:
        return a + phase0 * direction, np.zeros(3)
    u = (phase0 + speed * t) % (2 * length)
    if u < length:
        return a + u * direction, speed * direction
    return a + (2 * length - u) * direction, -speed * direction


def obstacle_position(ob: DynamicObstacle, t: float) -> np.ndarray:
    return obstacle_state(ob, t)[0]


def snapshot(ob: DynamicObstacle, t: float, horizon: float) -> ObstaclePrediction:
    """What the planner sees: position and velocity captured at ``t``."""
    p, v = obstacle_state(ob, t)
    return ObstaclePrediction(position=p, velocity=v, stamp=t, horizon=horizon, radius=ob.radius)
