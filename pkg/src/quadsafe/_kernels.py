"""Compiled inner loops for the plant integrator and the tracking controller.

These mirror :mod:`quadsafe.dynamics` for a single state and are checked
against it in the tests. They take plain arrays so numba can compile them once
and cache the result on disk.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_CACHE = True


@njit(cache=_CACHE)
def rot(r, p, y):
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    R = np.empty((3, 3))
    R[0, 0] = cy * cp
    R[0, 1] = cy * sp * sr - sy * cr
    R[0, 2] = cy * sp * cr + sy * sr
    R[1, 0] = sy * cp
    R[1, 1] = sy * sp * sr + cy * cr
    R[1, 2] = sy * sp * cr - cy * sr
    R[2, 0] = -sp
    R[2, 1] = cp * sr
    R[2, 2] = cp * cr
    return R


@njit(cache=_CACHE)
def rot_partials(r, p, y):
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    dR = np.zeros((3, 3, 3))
    # roll
    dR[0, 0, 1] = cy * sp * cr + sy * sr
    dR[0, 0, 2] = -cy * sp * sr + sy * cr
    dR[0, 1, 1] = sy * sp * cr - cy * sr
    dR[0, 1, 2] = -sy * sp * sr - cy * cr
    dR[0, 2, 1] = cp * cr
    dR[0, 2, 2] = -cp * sr
    # pitch
    dR[1, 0, 0] = -cy * sp
    dR[1, 0, 1] = cy * cp * sr
    dR[1, 0, 2] = cy * cp * cr
    dR[1, 1, 0] = -sy * sp
    dR[1, 1, 1] = sy * cp * sr
    dR[1, 1, 2] = sy * cp * cr
    dR[1, 2, 0] = -cp
    dR[1, 2, 1] = -sp * sr
    dR[1, 2, 2] = -sp * cr
    # yaw
    dR[2, 0, 0] = -sy * cp
    dR[2, 0, 1] = -sy * sp * sr - cy * cr
    dR[2, 0, 2] = -sy * sp * cr + cy * sr
    dR[2, 1, 0] = cy * cp
    dR[2, 1, 1] = cy * sp * sr - sy * cr
    dR[2, 1, 2] = cy * sp * cr + sy * sr
    return dR


@njit(cache=_CACHE)
def derivative(x, u, f, mass, drag, gravity):
    R = rot(x[6], x[7], x[8])
    v = x[3:6]
    w = drag @ (R.T @ v)
    fd = R @ w
    out = np.empty(9)
    for i in range(3):
        out[i] = v[i]
        out[3 + i] = (R[i, 2] * u[0] - fd[i] + f[i]) / mass
        out[6 + i] = u[1 + i]
    out[5] -= gravity
    return out


@njit(cache=_CACHE)
def rk4_steps(x, u, f, dt, n, mass, drag, gravity, tilt_limit=0.0):
    """``n`` fixed RK4 steps with input and force held; returns all intermediate states.

    A positive ``tilt_limit`` clips roll and pitch after every step, the way an
    attitude inner loop caps the commanded tilt.
    """
    out = np.empty((n, 9))
    for i in range(n):
        k1 = derivative(x, u, f, mass, drag, gravity)
        k2 = derivative(x + 0.5 * dt * k1, u, f, mass, drag, gravity)
        k3 = derivative(x + 0.5 * dt * k2, u, f, mass, drag, gravity)
        k4 = derivative(x + dt * k3, u, f, mass, drag, gravity)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if tilt_limit > 0.0:
            x[6] = min(max(x[6], -tilt_limit), tilt_limit)
            x[7] = min(max(x[7], -tilt_limit), tilt_limit)
        out[i] = x
    return out


@njit(cache=_CACHE)
def euler_jacobians(x, u, mass, drag, dt):
    """Jacobians of ``x + dt * derivative`` with respect to state and input."""
    R = rot(x[6], x[7], x[8])
    dR = rot_partials(x[6], x[7], x[8])
    v = x[3:6]
    A = np.eye(9)
    B = np.zeros((9, 4))
    RD = R @ drag
    DR = RD @ R.T
    for i in range(3):
        A[i, 3 + i] += dt
        for j in range(3):
            A[3 + i, 3 + j] -= dt * DR[i, j] / mass
    for a in range(3):
        Da = dR[a] @ drag @ R.T
        dv = (Da + Da.T) @ v
        for i in range(3):
            A[3 + i, 6 + a] += dt * (dR[a, i, 2] * u[0] - dv[i]) / mass
    for i in range(3):
        B[3 + i, 0] = dt * R[i, 2] / mass
        B[6 + i, 1 + i] = dt
    return A, B


@njit(cache=_CACHE)
def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


@njit(cache=_CACHE)
def _state_error(x, xr):
    e = x - xr
    for i in range(6, 9):
        e[i] = _wrap(e[i])
    return e


@njit(cache=_CACHE)
def _tilt_terms(x, tilt_max, tilt_w):
    """Quadratic penalty on roll/pitch beyond the tilt box: (cost, grad diag, hess diag)."""
    c = 0.0
    g = np.zeros(9)
    h = np.zeros(9)
    for i in (6, 7):
        ex = abs(x[i]) - tilt_max
        if ex > 0.0:
            c += 0.5 * tilt_w * ex * ex
            g[i] = tilt_w * ex * np.sign(x[i])
            h[i] = tilt_w
    return c, g, h


@njit(cache=_CACHE)
def rollout(x0, U, f, mass, drag, gravity, dt):
    N = U.shape[0]
    X = np.empty((N + 1, 9))
    X[0] = x0
    for k in range(N):
        X[k + 1] = X[k] + dt * derivative(X[k], U[k], f, mass, drag, gravity)
    return X


@njit(cache=_CACHE)
def trajectory_cost(X, U, Xr, Ur, q, qn, r, tilt_max, tilt_w):
    N = U.shape[0]
    J = 0.0
    for k in range(N):
        e = _state_error(X[k], Xr[k])
        du = U[k] - Ur[k]
        J += 0.5 * np.sum(q * e * e) + 0.5 * np.sum(r * du * du)
        if k > 0:
            J += _tilt_terms(X[k], tilt_max, tilt_w)[0]
    e = _state_error(X[N], Xr[N])
    J += 0.5 * np.sum(qn * e * e) + _tilt_terms(X[N], tilt_max, tilt_w)[0]
    return J


@njit(cache=_CACHE)
def gauss_newton_tracking(x0, Xr, Ur, U0, f, q, qn, r, lo, hi, tilt_max, tilt_w,
                          mass, drag, gravity, dt, max_iter, tol):
    """Box-constrained Gauss-Newton Riccati iterations on the shooting transcription.

    Every iterate is closed by a feedback rollout, so shooting defects are zero
    and the predicted states satisfy the Euler recursion exactly. Inputs are
    kept inside ``[lo, hi]`` by projection in the line search; the tilt box on
    the states is a quadratic penalty.

    Returns ``(U, X, cost, initial_cost, iterations, status)`` with status 0 for
    converged and 1 for the iteration cap.
    """
    N = U0.shape[0]
    U = np.empty_like(U0)
    for k in range(N):
        for i in range(4):
            U[k, i] = min(max(U0[k, i], lo[i]), hi[i])
    X = rollout(x0, U, f, mass, drag, gravity, dt)
    J = trajectory_cost(X, U, Xr, Ur, q, qn, r, tilt_max, tilt_w)
    J_init = J
    kff = np.zeros((N, 4))
    Kfb = np.zeros((N, 4, 9))
    mu = 0.0
    status = 1
    it = 0
    while it < max_iter:
        it += 1
        # Backward pass.
        eN = _state_error(X[N], Xr[N])
        _, tg, th = _tilt_terms(X[N], tilt_max, tilt_w)
        Vx = qn * eN + tg
        Vxx = np.diag(qn + th)
        expected = 0.0
        for k in range(N - 1, -1, -1):
            A, B = euler_jacobians(X[k], U[k], mass, drag, dt)
            e = _state_error(X[k], Xr[k])
            lx = q * e
            lxx = np.diag(q)
            if k > 0:
                _, tg, th = _tilt_terms(X[k], tilt_max, tilt_w)
                lx = lx + tg
                lxx = lxx + np.diag(th)
            lu = r * (U[k] - Ur[k])
            Qx = lx + A.T @ Vx
            Qu = lu + B.T @ Vx
            VA = Vxx @ A
            Qxx = lxx + A.T @ VA
            Qux = B.T @ VA
            Quu = np.diag(r) + B.T @ Vxx @ B + mu * np.eye(4)
            # Unconstrained step, then clamp the dimensions it pushes past the box.
            k_try = -np.linalg.solve(Quu, Qu)
            M = Quu.copy()
            rhs_k = -Qu.copy()
            rhs_K = -Qux.copy()
            for i in range(4):
                target = U[k, i] + k_try[i]
                if target < lo[i] or target > hi[i]:
                    bound = lo[i] if target < lo[i] else hi[i]
                    M[i, :] = 0.0
                    M[i, i] = 1.0
                    rhs_k[i] = bound - U[k, i]
                    rhs_K[i, :] = 0.0
            kff[k] = np.linalg.solve(M, rhs_k)
            Kfb[k] = np.linalg.solve(M, rhs_K)
            Kt = Kfb[k].T
            expected -= kff[k] @ Qu + 0.5 * kff[k] @ (Quu @ kff[k])
            Vx = Qx + Kt @ (Quu @ kff[k]) + Kt @ Qu + Qux.T @ kff[k]
            Vxx = Qxx + Kt @ Quu @ Kfb[k] + Kt @ Qux + Qux.T @ Kfb[k]
            Vxx = 0.5 * (Vxx + Vxx.T)
        if expected <= tol * (1.0 + J):
            status = 0
            break
        # Projected line search on the closed-loop rollout.
        alpha = 1.0
        accepted = False
        while alpha > 1e-3:
            Xn = np.empty_like(X)
            Un = np.empty_like(U)
            Xn[0] = x0
            for k in range(N):
                dx = _state_error(Xn[k], X[k])
                un = U[k] + alpha * kff[k] + Kfb[k] @ dx
                for i in range(4):
                    Un[k, i] = min(max(un[i], lo[i]), hi[i])
                Xn[k + 1] = Xn[k] + dt * derivative(Xn[k], Un[k], f, mass, drag, gravity)
            Jn = trajectory_cost(Xn, Un, Xr, Ur, q, qn, r, tilt_max, tilt_w)
            if Jn < J:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if mu == 0.0:
                mu = 1e-6
            mu *= 100.0
            if mu > 1e6:
                status = 0
                break
            continue
        decrease = J - Jn
        X, U, J = Xn, Un, Jn
        mu = 0.0
        if decrease <= tol * (1.0 + J):
            status = 0
            break
    return U, X, J, J_init, it, status
