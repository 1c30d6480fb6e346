"""Ellipsoidal forward reachable sets of the tracking error under bounded wind.

Shape matrices use the convention ``{x : (x - c)^T Q^{-1} (x - c) <= 1}`` so the
support function in direction ``u`` is ``sqrt(u^T Q u)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .dynamics import QuadParams, flat_state, linearize

ZERO_TRACE = 1e-12
SYM_TOL = 1e-10


class ReachError(ValueError):
    pass


class SingularLyapunovError(ReachError):
    def __init__(self, lam_j: complex, lam_k: complex):
        self.pair = (lam_j, lam_k)
        super().__init__(
            f"Lyapunov operator is singular: eigenvalues {lam_j:.6g} and {lam_k:.6g} "
            f"satisfy lambda_j + conj(lambda_k) = 0"
        )


@dataclass
class Ellipsoid:
    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.shape = check_shape(self.shape)

    def support(self, direction) -> float:
        u = np.asarray(direction, dtype=float)
        return float(self.center @ u + np.sqrt(max(u @ self.shape @ u, 0.0)))

    def contains(self, point) -> bool:
        d = np.asarray(point, dtype=float) - self.center
        return bool(d @ np.linalg.pinv(self.shape) @ d <= 1.0 + 1e-12)

    @property
    def semi_axes(self) -> np.ndarray:
        return np.sqrt(np.clip(np.linalg.eigvalsh(self.shape), 0.0, None))


def check_shape(Q) -> np.ndarray:
    """Validate a shape matrix; returns the symmetrized copy with tiny negative eigenvalues clamped."""
    Q = np.array(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ReachError(f"shape matrix must be square, got {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise ReachError("shape matrix has non-finite entries")
    scale = max(1.0, np.abs(Q).max())
    if np.abs(Q - Q.T).max() > SYM_TOL * scale:
        raise ReachError("shape matrix is not symmetric")
    Q = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Q)
    if w.min() < -SYM_TOL * scale:
        raise ReachError(f"shape matrix is not positive semidefinite (min eigenvalue {w.min():.3g})")
    if w.min() < 0:
        Q = (V * np.clip(w, 0.0, None)) @ V.T
        Q = 0.5 * (Q + Q.T)
    return Q


def _sym(Q: np.ndarray) -> np.ndarray:
    return 0.5 * (Q + Q.T)


def minkowski_shape(Q1, Q2) -> np.ndarray:
    """Trace-weighted outer approximation of the Minkowski sum of two centered ellipsoids."""
    Q1 = np.asarray(Q1, dtype=float)
    Q2 = np.asarray(Q2, dtype=float)
    t1, t2 = np.trace(Q1), np.trace(Q2)
    if t1 < -ZERO_TRACE or t2 < -ZERO_TRACE:
        raise ReachError("negative trace: operand is not positive semidefinite")
    if t2 <= ZERO_TRACE:
        return _sym(Q1.copy())
    if t1 <= ZERO_TRACE:
        return _sym(Q2.copy())
    a, b = np.sqrt(t1), np.sqrt(t2)
    return _sym((1.0 + b / a) * Q1 + (1.0 + a / b) * Q2)


def _check_lyapunov_operator(Phi: np.ndarray, rtol: float = 1e-10) -> None:
    lam = np.linalg.eigvals(Phi)
    pair_sums = lam[:, None] + lam[None, :].conj()
    scale = max(1.0, np.abs(lam).max())
    j, k = np.unravel_index(np.argmin(np.abs(pair_sums)), pair_sums.shape)
    if np.abs(pair_sums[j, k]) <= rtol * scale:
        raise SingularLyapunovError(complex(lam[j]), complex(lam[k]))


def _channel_rhs(Phi, D_i, b_i, delta):
    D_i = np.asarray(D_i, dtype=float).reshape(-1)
    N = delta * b_i**2 * np.outer(D_i, D_i)
    E = scipy.linalg.expm(-Phi * delta)
    return N, E @ N @ E.T - N


def solve_channel_lyapunov(Phi, D_i, b_i: float, delta: float, eps: float) -> np.ndarray:
    """Shape matrix contributed by one disturbance channel.

    Solves ``-Phi X - X Phi^T = exp(-Phi d) N exp(-Phi^T d) - N`` with
    ``N = d b^2 D_i D_i^T`` by Bartels-Stewart and returns ``X + eps d^2 I``.
    """
    Phi = np.asarray(Phi, dtype=float)
    if b_i < 0 or delta <= 0 or eps <= 0:
        raise ReachError("need b_i >= 0, delta > 0, eps > 0")
    n = Phi.shape[0]
    N, rhs = _channel_rhs(Phi, D_i, b_i, delta)
    if not np.any(N):
        X = np.zeros((n, n))
    else:
        _check_lyapunov_operator(Phi)
        # scipy solves A X + X A^H = Q.
        X = scipy.linalg.solve_continuous_lyapunov(Phi, -rhs)
    return _sym(X) + eps * delta**2 * np.eye(n)


def channel_shape_quadrature(Phi, D_i, b_i: float, delta: float, eps: float) -> np.ndarray:
    """Same quantity as :func:`solve_channel_lyapunov` via Van Loan's block exponential.

    Uses ``X = int_0^d exp(-Phi s) N exp(-Phi^T s) ds``, which is defined even when
    the Lyapunov operator is singular (e.g. ``Phi = 0``).
    """
    Phi = np.asarray(Phi, dtype=float)
    n = Phi.shape[0]
    D_i = np.asarray(D_i, dtype=float).reshape(-1)
    N = delta * b_i**2 * np.outer(D_i, D_i)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -Phi
    M[:n, n:] = N
    M[n:, n:] = Phi.T
    F = scipy.linalg.expm(M * delta)
    X = F[:n, n:] @ F[:n, :n].T
    return _sym(X) + eps * delta**2 * np.eye(n)


def compose_disturbance_shape(shapes: Sequence[np.ndarray]) -> np.ndarray:
    """Combine per-channel shapes: ``(sum sqrt(tr Q_i)) * (sum Q_i / sqrt(tr Q_i))``."""
    shapes = [np.asarray(Q, dtype=float) for Q in shapes]
    kept = [(Q, np.sqrt(np.trace(Q))) for Q in shapes if np.trace(Q) > ZERO_TRACE]
    if not kept:
        return np.zeros_like(shapes[0])
    total = sum(s for _, s in kept)
    return _sym(total * sum(Q / s for Q, s in kept))


def propagate_initial_shape(Q0_prev, Qd_prev) -> np.ndarray:
    return minkowski_shape(Q0_prev, Qd_prev)


def error_frs_shape(Phi, Q0, Qd, delta: float) -> np.ndarray:
    E = scipy.linalg.expm(np.asarray(Phi, dtype=float) * delta)
    return _sym(E @ minkowski_shape(Q0, Qd) @ E.T)


def position_bound(Q_e, Q_ego) -> tuple[np.ndarray, float]:
    """Position error ellipsoid inflated by the vehicle envelope and its largest semi-axis."""
    Q_dist = np.asarray(Q_e, dtype=float)[:3, :3]
    Q = minkowski_shape(Q_dist, Q_ego)
    return Q, float(np.sqrt(max(np.linalg.eigvalsh(Q).max(), 0.0)))


@dataclass
class FrsConfig:
    delta: float = 0.1
    steps: int = 20  # bound is held constant after this many intervals
    eps: float = 0.01
    bounds: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_shape: np.ndarray = field(
        default_factory=lambda: np.diag([0.02**2] * 3 + [0.05**2] * 3 + [0.02**2] * 3)
    )
    margin: float = 2.0

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        self.initial_shape = np.asarray(self.initial_shape, dtype=float)
        if self.initial_shape.ndim == 1:
            self.initial_shape = np.diag(self.initial_shape)
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if np.any(self.bounds < 0):
            raise ValueError("disturbance bounds must be non-negative")
        check_shape(self.initial_shape)


@dataclass
class DisturbanceEstimate:
    """Snapshot published by the observer: force estimate and its per-axis spread."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spread: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stamp: float = 0.0

    def bounds(self, margin: float) -> np.ndarray:
        return np.abs(np.asarray(self.force)) + margin * np.asarray(self.spread)


@dataclass
class FrsResult:
    times: np.ndarray
    shapes: np.ndarray
    radii: np.ndarray

    def radius_at(self, k: int) -> float:
        """d_q for constraint index k; beyond the horizon the last increment is extrapolated."""
        n = len(self.radii)
        if k < n:
            return float(self.radii[k])
        step = self.radii[-1] - self.radii[-2] if n > 1 else 0.0
        return float(self.radii[-1] + max(step, 0.0) * (k - n + 1))

    def radii_for(self, count: int) -> np.ndarray:
        return np.array([self.radius_at(k) for k in range(count)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t", "d_q", "eig0", "eig1", "eig2"])
            for k, (t, Q, r) in enumerate(zip(self.times, self.shapes, self.radii)):
                e = np.linalg.eigvalsh(Q)
                w.writerow([k, f"{t:.6f}", f"{r:.9f}"] + [f"{v:.9e}" for v in e])


def sphere(radius: float) -> np.ndarray:
    return radius**2 * np.eye(3)


def propagate_along_trajectory(
    traj,
    estimate: DisturbanceEstimate,
    cfg: FrsConfig,
    params: QuadParams,
    K,
    ego_shape=None,
    count: int | None = None,
    yaw: float = 0.0,
    bounds=None,
    channel_solver: Callable = solve_channel_lyapunov,
    phi_hook: Callable[[np.ndarray], np.ndarray] | None = None,
) -> FrsResult:
    """Position error bound ``d_q^k`` at every constraint point of ``traj``.

    The nominal state at each point comes from the flat outputs with the
    disturbance estimate as nominal external force. ``K`` is either a fixed gain
    matrix or a callable ``K(x, u)`` (e.g. :class:`~quadsafe.dynamics.FeedbackGain`).
    ``count`` extends the horizon past the trajectory end by holding the final
    state. Points past ``cfg.steps`` repeat the bound at ``cfg.steps``.
    ``phi_hook`` lets tests replace the closed-loop matrix.
    """
    delta = cfg.delta
    if count is None:
        count = int(np.floor(traj.duration / delta + 1e-9)) + 1
    if ego_shape is None:
        ego_shape = sphere(params.radius)
    b = cfg.bounds if bounds is None else np.asarray(bounds, dtype=float)
    force = np.asarray(estimate.force, dtype=float)

    times = np.minimum(np.arange(count) * delta, traj.duration)
    pos = traj.sample(times, 0)
    vel = traj.sample(times, 1)
    acc = traj.sample(times, 2)
    xs, thrusts = flat_state(pos, vel, acc, yaw, params, f_dist=force)

    Q0 = check_shape(cfg.initial_shape)
    shapes = np.empty((count, 3, 3))
    radii = np.empty(count)
    active = min(count, cfg.steps + 1)
    for k in range(active):
        u = np.array([thrusts[k], 0.0, 0.0, 0.0])
        gain = K(xs[k], u) if callable(K) else K
        lin = linearize(xs[k], u, force, params, gain)
        Phi = lin.Phi if phi_hook is None else phi_hook(lin.Phi)
        Qi = [channel_solver(Phi, lin.D[:, i], b[i], delta, cfg.eps) for i in range(3)]
        Qd = compose_disturbance_shape(Qi)
        Qe = error_frs_shape(Phi, Q0, Qd, delta)
        shapes[k], radii[k] = position_bound(Qe, ego_shape)
        Q0 = propagate_initial_shape(Q0, Qd)
    shapes[active:] = shapes[active - 1]
    radii[active:] = radii[active - 1]
    return FrsResult(times=np.arange(count) * delta, shapes=shapes, radii=radii)


def constant_bound(radius: float, count: int, delta: float) -> FrsResult:
    """Bounds without reachability: only the vehicle envelope."""
    return FrsResult(
        times=np.arange(count) * delta,
        shapes=np.repeat(sphere(radius)[None], count, axis=0),
        radii=np.full(count, float(radius)),
    )
