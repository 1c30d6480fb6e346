"""Quadrotor translational model with Euler-angle attitude and first-order drag.

State layout (9,): ``[px, py, pz, vx, vy, vz, roll, pitch, yaw]``.
Input layout (4,): ``[thrust, roll_rate, pitch_rate, yaw_rate]``.

All functions broadcast over leading batch dimensions so the controller can
linearize a whole horizon in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

GRAVITY = 9.81
TILT_GUARD = np.deg2rad(85.0)

NX = 9
NU = 4
ND = 3


class DynamicsError(ValueError):
    """Raised on non-finite inputs."""


class SingularityError(DynamicsError):
    """Raised when the pitch angle approaches the Euler-angle singularity."""


@dataclass
class QuadParams:
    mass: float = 1.0
    drag: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.1, 0.05]))
    gravity: float = GRAVITY
    thrust_min: float = 0.5
    thrust_max: float = 20.0
    rate_max: float = 3.0
    max_tilt: float = np.deg2rad(45.0)
    radius: float = 0.2

    def __post_init__(self):
        self.drag = np.asarray(self.drag, dtype=float)
        if self.drag.shape == (3,):
            self.drag = np.diag(self.drag)
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.drag.shape != (3, 3) or not np.allclose(self.drag, self.drag.T):
            raise ValueError("drag matrix must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(self.drag).min() < -1e-12:
            raise ValueError("drag matrix must be positive semidefinite")
        if not 0 <= self.thrust_min < self.thrust_max:
            raise ValueError("thrust bounds must satisfy 0 <= min < max")

    @property
    def g_vec(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.gravity])

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.gravity

    def input_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.thrust_min, -self.rate_max, -self.rate_max, -self.rate_max])
        hi = np.array([self.thrust_max, self.rate_max, self.rate_max, self.rate_max])
        return lo, hi


@dataclass
class QuadState:
    position: np.ndarray
    velocity: np.ndarray
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, [self.roll, self.pitch, self.yaw]]).astype(float)

    @classmethod
    def from_array(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), float(x[6]), float(x[7]), float(x[8]))


@dataclass
class ControlInput:
    thrust: float
    roll_rate: float = 0.0
    pitch_rate: float = 0.0
    yaw_rate: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.thrust, self.roll_rate, self.pitch_rate, self.yaw_rate], dtype=float)

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        return cls(*(float(v) for v in u))

    def clamped(self, params: QuadParams) -> "ControlInput":
        lo, hi = params.input_bounds()
        return ControlInput.from_array(np.clip(self.as_array(), lo, hi))


@dataclass
class LinearizedModel:
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    K: np.ndarray
    Phi: np.ndarray


def _check(x, u, f_dist):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u)) and np.all(np.isfinite(f_dist))):
        raise DynamicsError("non-finite state, input or disturbance")
    pitch = np.asarray(x)[..., 7]
    if np.any(np.abs(pitch) >= TILT_GUARD):
        raise SingularityError(f"pitch {np.rad2deg(np.max(np.abs(pitch))):.1f} deg at the Euler singularity guard")


def rotation(roll, pitch, yaw) -> np.ndarray:
    """Z-Y-X rotation body->world, broadcast over leading dims; returns (..., 3, 3)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    R = np.empty(np.shape(roll) + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def _elementary(angle, axis):
    c, s = np.cos(angle), np.sin(angle)
    dc, ds = -s, c
    shape = np.shape(angle) + (3, 3)
    M = np.zeros(shape)
    dM = np.zeros(shape)
    i, j = {"x": (1, 2), "y": (2, 0), "z": (0, 1)}[axis]
    k = 3 - i - j
    M[..., k, k] = 1.0
    M[..., i, i] = c
    M[..., j, j] = c
    M[..., i, j] = -s
    M[..., j, i] = s
    dM[..., i, i] = dc
    dM[..., j, j] = dc
    dM[..., i, j] = -ds
    dM[..., j, i] = ds
    return M, dM


def rotation_partials(roll, pitch, yaw) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of :func:`rotation` with respect to roll, pitch, yaw."""
    Rx, dRx = _elementary(roll, "x")
    Ry, dRy = _elementary(pitch, "y")
    Rz, dRz = _elementary(yaw, "z")
    d_roll = Rz @ Ry @ dRx
    d_pitch = Rz @ dRy @ Rx
    d_yaw = dRz @ Ry @ Rx
    return d_roll, d_pitch, d_yaw


def derivative(x, u, f_dist, params: QuadParams) -> np.ndarray:
    """Continuous-time state derivative.

    ``v_dot = (R e3 T - R D R^T v + f_dist) / m - g`` and the Euler angles follow
    the commanded rates directly.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    f_dist = np.asarray(f_dist, dtype=float)
    _check(x, u, f_dist)
    R = rotation(x[..., 6], x[..., 7], x[..., 8])
    v = x[..., 3:6]
    drag = R @ params.drag @ np.swapaxes(R, -1, -2)
    thrust = R[..., :, 2] * u[..., 0:1]
    f_drag = np.einsum("...ij,...j->...i", drag, v)
    xdot = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (NX,)))
    xdot[..., 0:3] = v
    xdot[..., 3:6] = (thrust - f_drag + f_dist) / params.mass - params.g_vec
    xdot[..., 6:9] = u[..., 1:4]
    return xdot


def step_euler(x, u, f_dist, dt: float, params: QuadParams) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return np.asarray(x, dtype=float) + dt * derivative(x, u, f_dist, params)


def step_rk4(x, u, f_dist, dt: float, params: QuadParams) -> np.ndarray:
    """Classical 4th-order step with input and disturbance held constant."""
    k1 = derivative(x, u, f_dist, params)
    k2 = derivative(x + 0.5 * dt * k1, u, f_dist, params)
    k3 = derivative(x + 0.5 * dt * k2, u, f_dist, params)
    k4 = derivative(x + dt * k3, u, f_dist, params)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def jacobians(x, u, params: QuadParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic (A, B, D) of :func:`derivative`; broadcast over leading dims."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check(x, u, np.zeros(3))
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    roll, pitch, yaw = x[..., 6], x[..., 7], x[..., 8]
    R = rotation(roll, pitch, yaw)
    Rt = np.swapaxes(R, -1, -2)
    v = x[..., 3:6]
    m = params.mass
    Dd = params.drag

    A = np.zeros(batch + (NX, NX))
    A[..., 0:3, 3:6] = np.eye(3)
    A[..., 3:6, 3:6] = -(R @ Dd @ Rt) / m
    for col, dR in zip((6, 7, 8), rotation_partials(roll, pitch, yaw)):
        dRt = np.swapaxes(dR, -1, -2)
        d_thrust = dR[..., :, 2] * u[..., 0:1]
        d_drag = np.einsum("...ij,...j->...i", dR @ Dd @ Rt + R @ Dd @ dRt, v)
        A[..., 3:6, col] = (d_thrust - d_drag) / m

    B = np.zeros(batch + (NX, NU))
    B[..., 3:6, 0] = R[..., :, 2] / m
    B[..., 6:9, 1:4] = np.eye(3)

    D = np.zeros(batch + (NX, ND))
    D[..., 3:6, :] = np.eye(3) / m
    return A, B, D


# Hover LQR weights used for the reachability feedback gain.
LQR_STATE_WEIGHTS = np.array([10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
LQR_INPUT_WEIGHTS = np.array([0.1, 1.0, 1.0, 1.0])


def lqr_gain(A: np.ndarray, B: np.ndarray, q=LQR_STATE_WEIGHTS, r=LQR_INPUT_WEIGHTS) -> np.ndarray:
    """Infinite-horizon continuous LQR gain K such that u = K e stabilizes A + B K."""
    P = scipy.linalg.solve_continuous_are(A, B, np.diag(q), np.diag(r))
    return -np.linalg.solve(np.diag(r), B.T @ P)


class FeedbackGain:
    """LQR gain cache, recomputed when the linearization point moves.

    Only attitude, thrust and velocity influence A and B, so the cache key is the
    distance in that subspace.
    """

    def __init__(self, params: QuadParams, threshold: float = 0.05):
        self.params = params
        self.threshold = threshold
        self._key: np.ndarray | None = None
        self._K: np.ndarray | None = None
        self.recomputations = 0

    def __call__(self, x, u) -> np.ndarray:
        key = np.concatenate([np.asarray(x)[3:9], [np.asarray(u)[0] / self.params.hover_thrust]])
        if self._key is None or np.linalg.norm(key - self._key) > self.threshold:
            A, B, _ = jacobians(x, u, self.params)
            self._K = lqr_gain(A, B)
            self._key = key
            self.recomputations += 1
        return self._K

    @classmethod
    def at_hover(cls, params: QuadParams) -> np.ndarray:
        x = np.zeros(NX)
        u = np.array([params.hover_thrust, 0, 0, 0])
        A, B, _ = jacobians(x, u, params)
        return lqr_gain(A, B)


def linearize(x, u, f_dist, params: QuadParams, K: np.ndarray) -> LinearizedModel:
    """Error-dynamics matrices at a nominal point; Phi = A + B K.

    The disturbance enters additively so A and B do not depend on ``f_dist``; it
    is accepted to match the nominal-point signature and validated.
    """
    f_dist = np.asarray(f_dist, dtype=float)
    if not np.all(np.isfinite(f_dist)):
        raise DynamicsError("non-finite disturbance")
    A, B, D = jacobians(x, u, params)
    K = np.asarray(K, dtype=float)
    return LinearizedModel(A=A, B=B, D=D, K=K, Phi=A + B @ K)


def flat_state(pos, vel, acc, yaw, params: QuadParams, f_dist=None, compensate_drag: bool = True):
    """Nominal state and thrust from flat outputs.

    Returns ``(x, thrust)`` where ``x`` uses the attitude that aligns body z with
    the required specific force ``a + g - f_dist/m (+ drag/m)``. Broadcasts over
    leading dims of ``pos``/``vel``/``acc`` (shape (..., 3)); ``yaw`` is a scalar or
    array of matching batch shape.
    """
    pos = np.asarray(pos, dtype=float)
    vel = np.asarray(vel, dtype=float)
    acc = np.asarray(acc, dtype=float)
    m = params.mass
    f_ext = np.zeros(3) if f_dist is None else np.asarray(f_dist, dtype=float)
    f = acc + params.g_vec - f_ext / m
    yaw = np.broadcast_to(np.asarray(yaw, dtype=float), pos.shape[:-1])
    roll, pitch = _tilt_from_force(f, yaw)
    if compensate_drag and np.any(params.drag):
        R = rotation(roll, pitch, yaw)
        drag = np.einsum("...ij,...j->...i", R @ params.drag @ np.swapaxes(R, -1, -2), vel)
        f = f + drag / m
        roll, pitch = _tilt_from_force(f, yaw)
    norm = np.linalg.norm(f, axis=-1)
    x = np.empty(pos.shape[:-1] + (NX,))
    x[..., 0:3] = pos
    x[..., 3:6] = vel
    x[..., 6] = roll
    x[..., 7] = pitch
    x[..., 8] = yaw
    return x, m * norm


def _tilt_from_force(f, yaw):
    """Roll and pitch of the Z-Y-X attitude whose body z axis is parallel to ``f``."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    # Rotate the force into the yaw-aligned intermediate frame.
    fx = cy * f[..., 0] + sy * f[..., 1]
    fy = -sy * f[..., 0] + cy * f[..., 1]
    fz = f[..., 2]
    pitch = np.arctan2(fx, fz)
    roll = np.arctan2(-fy, np.hypot(fx, fz))
    return roll, pitch
