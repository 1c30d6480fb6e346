"""Minimum-jerk MINCO trajectories: piecewise quintics parameterized by waypoints and durations.

Each piece is ``p_i(t) = c_i^T beta(t)`` with ``beta(t) = [1, t, ..., t^5]``. The
map ``(q, T) -> c`` is a block-banded linear solve, and gradients of any cost
``F(c, T)`` are pulled back to ``(q, T)`` through the adjoint of that system.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
import scipy.linalg

ORDER = 6  # coefficients per piece

_COEF = np.array([[factorial(n) / factorial(n - d) if n >= d else 0.0 for n in range(ORDER)]
                  for d in range(ORDER + 1)])
_EXP = np.array([[max(n - d, 0) for n in range(ORDER)] for d in range(ORDER + 1)])


class TrajectoryError(ValueError):
    pass


def basis(t, derivative: int = 0) -> np.ndarray:
    """Derivative of the natural basis at times ``t``; shape ``t.shape + (6,)``."""
    t = np.asarray(t, dtype=float)
    return _COEF[derivative] * t[..., None] ** _EXP[derivative]


@dataclass(frozen=True)
class Boundary:
    """Position, velocity and acceleration rows (3x3) at both ends."""

    start: np.ndarray
    end: np.ndarray

    @classmethod
    def rest(cls, p0, p1) -> "Boundary":
        z = np.zeros(3)
        return cls(np.stack([np.asarray(p0, float), z, z]), np.stack([np.asarray(p1, float), z, z]))

    @classmethod
    def from_states(cls, p0, v0, a0, p1, v1=None, a1=None) -> "Boundary":
        z = np.zeros(3)
        return cls(
            np.stack([np.asarray(p0, float), np.asarray(v0, float), np.asarray(a0, float)]),
            np.stack([np.asarray(p1, float), z if v1 is None else np.asarray(v1, float),
                      z if a1 is None else np.asarray(a1, float)]),
        )


@lru_cache(maxsize=32)
def _layout(M: int):
    """Sparse description of the 6M x 6M MINCO matrix.

    Rows: 3 start conditions, then per junction one waypoint row and five
    continuity rows (orders 0..4), then 3 end conditions. Each term is
    ``sign * beta^{(d)}(t)^T c_piece`` with ``t = T_piece`` when ``at_end`` else 0.
    """
    terms = []
    for d in range(3):
        terms.append((d, 0, d, 1.0, False))
    for i in range(M - 1):
        r0 = 3 + 6 * i
        terms.append((r0, i, 0, 1.0, True))
        for d in range(5):
            terms.append((r0 + 1 + d, i, d, 1.0, True))
            terms.append((r0 + 1 + d, i + 1, d, -1.0, False))
    for d in range(3):
        terms.append((6 * M - 3 + d, M - 1, d, 1.0, True))
    row, piece, deriv, sign, at_end = (np.array(v) for v in zip(*terms))
    rows = np.repeat(row, ORDER)
    cols = (ORDER * piece[:, None] + np.arange(ORDER)).ravel()
    # Structural non-zeros: beta^{(d)}(0) has a single entry, beta^{(d)}(T) is dense from d on.
    nonzero = np.where(at_end[:, None], _COEF[deriv] != 0, (_COEF[deriv] != 0) & (_EXP[deriv] == 0)).ravel()
    lower = int(max((rows[nonzero] - cols[nonzero]).max(), 0))
    upper = int(max((cols[nonzero] - rows[nonzero]).max(), 0))
    return row, piece, deriv, sign, at_end, lower, upper


class _System:
    """Banded MINCO matrix for given durations."""

    def __init__(self, T: np.ndarray):
        self.T = T
        self.M = M = len(T)
        row, piece, deriv, sign, at_end, lower, upper = _layout(M)
        self.layout = (row, piece, deriv, sign, at_end)
        self.lower, self.upper = lower, upper
        t = np.where(at_end, T[piece], 0.0)
        vals = (sign[:, None] * basis_rows(t, deriv)).ravel()
        rows = np.repeat(row, ORDER)
        cols = (ORDER * piece[:, None] + np.arange(ORDER)).ravel()
        keep = vals != 0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        self._entries = (rows, cols, vals)
        n = ORDER * M
        self._ab = np.zeros((lower + upper + 1, n))
        np.add.at(self._ab, (upper + rows - cols, cols), vals)
        self._abT = np.zeros((lower + upper + 1, n))
        np.add.at(self._abT, (lower + cols - rows, rows), vals)

    @property
    def A(self) -> np.ndarray:
        n = ORDER * self.M
        A = np.zeros((n, n))
        rows, cols, vals = self._entries
        np.add.at(A, (rows, cols), vals)
        return A

    def solve(self, b):
        return scipy.linalg.solve_banded((self.lower, self.upper), self._ab, b)

    def solve_transpose(self, b):
        return scipy.linalg.solve_banded((self.upper, self.lower), self._abT, b)


def basis_rows(t, deriv) -> np.ndarray:
    """Row-wise basis: ``beta^{(deriv[i])}(t[i])``."""
    t = np.asarray(t, dtype=float)
    return _COEF[deriv] * t[:, None] ** _EXP[deriv]


def _rhs(q: np.ndarray, boundary: Boundary, M: int) -> np.ndarray:
    b = np.zeros((ORDER * M, 3))
    b[0:3] = boundary.start
    b[waypoint_rows(M)] = q
    b[ORDER * M - 3:] = boundary.end
    return b


def waypoint_rows(M: int) -> np.ndarray:
    return 3 + 6 * np.arange(M - 1)


class MincoTrajectory:
    """Immutable piecewise-quintic trajectory built from waypoints and durations."""

    def __init__(self, q, T, boundary: Boundary):
        T = np.array(T, dtype=float).reshape(-1)
        M = len(T)
        if M < 1:
            raise TrajectoryError("need at least one piece")
        if not np.all(np.isfinite(T)) or np.any(T <= 0):
            raise TrajectoryError(f"durations must be positive and finite, got {T}")
        q = np.array(q, dtype=float).reshape(-1, 3) if M > 1 else np.zeros((0, 3))
        if len(q) != M - 1:
            raise TrajectoryError(f"expected {M - 1} intermediate waypoints, got {len(q)}")
        self.q = q
        self.T = T
        self.boundary = boundary
        self._system = _System(T)
        try:
            c = self._system.solve(_rhs(q, boundary, M))
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise TrajectoryError(f"singular MINCO system: {exc}") from exc
        if not np.all(np.isfinite(c)):
            raise TrajectoryError("singular MINCO system")
        self.coeffs = c.reshape(M, ORDER, 3)
        self.starts = np.concatenate([[0.0], np.cumsum(T)[:-1]])
        for arr in (self.q, self.T, self.coeffs, self.starts):
            arr.setflags(write=False)

    @property
    def pieces(self) -> int:
        return len(self.T)

    @property
    def duration(self) -> float:
        return float(self.T.sum())

    def locate(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Piece index and local time for absolute times (half-open pieces, last one closed)."""
        t = np.asarray(t, dtype=float)
        j = np.searchsorted(self.starts, t, side="right") - 1
        j = np.clip(j, 0, self.pieces - 1)
        return j, t - self.starts[j]

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        if not 0 <= order <= 4:
            raise TrajectoryError("order must be in 0..4")
        if t < -1e-12 or t > self.duration + 1e-12:
            raise TrajectoryError(f"t={t} outside [0, {self.duration}]")
        return self.sample(np.array([t]), order)[0]

    def sample(self, times, order: int = 0) -> np.ndarray:
        """Vectorized evaluation; times are clipped to the trajectory span."""
        times = np.clip(np.asarray(times, dtype=float), 0.0, self.duration)
        j, tl = self.locate(times)
        return np.einsum("...k,...kd->...d", basis(tl, order), self.coeffs[j])

    def smoothness_cost(self) -> float:
        H = jerk_gram(self.T)
        return float(np.einsum("mkd,mkl,mld->", self.coeffs, H, self.coeffs))

    def smoothness_gradients(self) -> tuple[np.ndarray, np.ndarray]:
        """(dF/dc, dF/dT) of the integrated squared jerk."""
        gc = 2.0 * np.einsum("mkl,mld->mkd", jerk_gram(self.T), self.coeffs)
        jerk_end = np.einsum("mk,mkd->md", basis(self.T, 3), self.coeffs)
        return gc, np.sum(jerk_end**2, axis=1)

    def backward_gradients(self, grad_c, grad_T_direct) -> tuple[np.ndarray, np.ndarray]:
        """Pull ``dF/dc`` (M, 6, 3) and explicit ``dF/dT`` (M,) back to ``(dJ/dq, dJ/dT)``."""
        M = self.pieces
        grad_c = np.asarray(grad_c, dtype=float)
        grad_T_direct = np.asarray(grad_T_direct, dtype=float)
        if grad_c.shape not in ((M, ORDER, 3), (ORDER * M, 3)):
            raise TrajectoryError(f"dF/dc must have shape ({ORDER * M}, 3), got {grad_c.shape}")
        if grad_T_direct.shape != (M,):
            raise TrajectoryError(f"dF/dT must have shape ({M},), got {grad_T_direct.shape}")
        lam = self._system.solve_transpose(grad_c.reshape(ORDER * M, 3))
        grad_q = lam[waypoint_rows(M)]
        grad_T = grad_T_direct.copy()
        # dA/dT_i only touches terms evaluated at the end of piece i: d beta^{(d)} / dT = beta^{(d+1)}.
        row, piece, deriv, sign, at_end = self._system.layout
        r, p, d, sg = row[at_end], piece[at_end], deriv[at_end], sign[at_end]
        dAc = sg[:, None] * np.einsum("nk,nkd->nd", basis_rows(self.T[p], d + 1), self.coeffs[p])
        np.add.at(grad_T, p, -np.sum(lam[r] * dAc, axis=1))
        return grad_q, grad_T

    def to_csv(self, path, rate: float = 50.0) -> None:
        times = np.arange(0.0, self.duration + 1e-12, 1.0 / rate)
        P, V, A = (self.sample(times, k) for k in range(3))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az"])
            for t, p, v, a in zip(times, P, V, A):
                w.writerow([f"{t:.4f}"] + [f"{x:.6f}" for x in (*p, *v, *a)])


def construct(q, T, boundary: Boundary) -> MincoTrajectory:
    return MincoTrajectory(q, T, boundary)


_JCOEF = np.outer(_COEF[3], _COEF[3])
_JPOW = np.add.outer(_EXP[3], _EXP[3]) + 1
_JMASK = _JCOEF != 0


def jerk_gram(T) -> np.ndarray:
    """Gram matrix of third derivatives of the basis over ``[0, T]``; broadcasts over ``T``."""
    T = np.asarray(T, dtype=float)[..., None, None]
    return np.where(_JMASK, _JCOEF * T**_JPOW / _JPOW, 0.0)


@dataclass(frozen=True)
class ConstraintPoint:
    index: int
    time: float
    piece: int
    local_time: float
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray


def sample_count(duration: float, delta: float) -> int:
    """kappa = floor(duration / delta), robust to round-off just below an integer."""
    return int(np.floor(duration / delta + 1e-9))


def constraint_points(traj: MincoTrajectory, delta: float) -> list[ConstraintPoint]:
    """Points at times ``k * delta`` for ``k = 0..kappa``."""
    if not delta > 0:
        raise TrajectoryError("delta must be positive")
    kappa = sample_count(traj.duration, delta)
    times = np.minimum(np.arange(kappa + 1) * delta, traj.duration)
    j, tl = traj.locate(times)
    P, V, A = (traj.sample(times, k) for k in range(3))
    return [
        ConstraintPoint(k, float(times[k]), int(j[k]), float(tl[k]), P[k], V[k], A[k])
        for k in range(kappa + 1)
    ]


def trapezoid_weights(duration: float, delta: float) -> tuple[np.ndarray, float]:
    """Weights for the sum over ``k = 0..kappa`` and the tail span ``duration - kappa*delta``."""
    kappa = sample_count(duration, delta)
    w = np.full(kappa + 1, delta)
    w[0] *= 0.5
    w[-1] *= 0.5
    if kappa == 0:
        w[0] = 0.0
    tail = max(duration - kappa * delta, 0.0)
    return w, tail


def time_from_tau(tau) -> np.ndarray:
    """Smooth bijection R -> R_{>0} used for unconstrained durations."""
    tau = np.asarray(tau, dtype=float)
    return np.where(tau > 0, 0.5 * tau**2 + tau + 1.0, 1.0 / (0.5 * tau**2 - tau + 1.0))


def tau_from_time(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    return np.where(T > 1.0, np.sqrt(np.maximum(2.0 * T - 1.0, 0.0)) - 1.0,
                    1.0 - np.sqrt(np.maximum(2.0 / T - 1.0, 0.0)))


def dtime_dtau(tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    den = 0.5 * tau**2 - tau + 1.0
    return np.where(tau > 0, tau + 1.0, (1.0 - tau) / den**2)
