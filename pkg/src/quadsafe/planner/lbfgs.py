"""Limited-memory BFGS with a weak-Wolfe bisection line search.

The line search follows the Lewis-Overton bracketing scheme, which only needs
the objective to be locally Lipschitz, so the cubic-hinge penalties (C^1 but not
C^2) do not stall it the way an interpolating strong-Wolfe search can.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    evaluations: int
    status: str

    @property
    def warning(self) -> bool:
        return self.status not in ("converged", "stalled")


def weak_wolfe_search(fun, x, f, g, d, step, c1=1e-4, c2=0.9, max_evals=60):
    """Bisection/expansion search for a step satisfying the weak Wolfe conditions.

    Returns ``(step, f_new, g_new, evals, ok)``. When no acceptable step is found
    the best sufficient-decrease point seen (if any) is returned with ``ok=False``.
    """
    gd = float(g @ d)
    lo, hi = 0.0, np.inf
    best = None
    for evals in range(1, max_evals + 1):
        f_new, g_new = fun(x + step * d)
        if not np.isfinite(f_new) or f_new > f + c1 * step * gd:
            hi = step
        else:
            if best is None or f_new < best[1]:
                best = (step, f_new, g_new)
            if float(g_new @ d) < c2 * gd:
                lo = step
            else:
                return step, f_new, g_new, evals, True
        step = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * lo
        if hi - lo < 1e-16 * max(1.0, hi if np.isfinite(hi) else lo):
            break
    if best is not None:
        return best[0], best[1], best[2], evals, False
    return 0.0, f, g, evals, False


def minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    memory: int = 16,
    max_iterations: int = 200,
    g_tol: float = 1e-6,
    f_rel_tol: float = 1e-7,
    past: int = 3,
) -> LbfgsResult:
    """Minimize ``fun`` which returns ``(value, gradient)``."""
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the initial point")
    evals = 1
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    history = deque([f], maxlen=past + 1)
    status = "max_iterations"
    it = 0
    for it in range(1, max_iterations + 1):
        gnorm = np.linalg.norm(g)
        if gnorm <= g_tol * max(1.0, np.linalg.norm(x)):
            status = "converged"
            it -= 1
            break
        d = _two_loop(g, S, Y)
        if g @ d >= 0:
            S.clear()
            Y.clear()
            d = -g
        step0 = 1.0 if S else min(1.0, 1.0 / max(np.linalg.norm(d), 1e-12))
        step, f_new, g_new, n, ok = weak_wolfe_search(fun, x, f, g, d, step0)
        evals += n
        if step == 0.0:
            status = "line_search_failed"
            log.debug("line search failed at iteration %d", it)
            break
        s = step * d
        y = g_new - g
        x = x + s
        f, g = f_new, g_new
        if y @ s > 1e-6 * np.linalg.norm(g) * (s @ s):
            S.append(s)
            Y.append(y)
        history.append(f)
        if len(history) > past and abs(history[0] - f) <= f_rel_tol * max(1.0, abs(f)):
            status = "stalled"
            break
        if not ok and len(S) == 0:
            status = "line_search_failed"
            break
    return LbfgsResult(x=x, fun=float(f), grad=g, iterations=it, evaluations=evals, status=status)


def _two_loop(g, S, Y):
    q = -g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((rho, a))
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q
