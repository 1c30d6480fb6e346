"""Clearance-aware shortest-path search on the voxel lattice, shortcutting and time allocation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from ..esdf import EsdfGrid


class PlanningError(RuntimeError):
    pass


@dataclass
class InitialPath:
    polyline: np.ndarray  # (n, 3) shortcut path including endpoints
    waypoints: np.ndarray  # (M-1, 3)
    durations: np.ndarray  # (M,)

    @property
    def pieces(self) -> int:
        return len(self.durations)


_NEIGHBOURS = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)])


def _segment_clear(esdf: EsdfGrid, a, b, clearance: float) -> bool:
    length = np.linalg.norm(b - a)
    n = max(int(np.ceil(length / (0.5 * esdf.resolution))), 1)
    pts = a + np.linspace(0.0, 1.0, n + 1)[:, None] * (b - a)
    d, _, _ = esdf.query_batch(pts)
    return bool(np.all(d >= clearance - 1e-9))


def grid_search(esdf: EsdfGrid, start, goal, clearance: float, stride: int = 2,
                preferred: float | None = None, weight: float = 4.0) -> np.ndarray:
    """Cheapest 26-connected path over free voxel centers sampled every ``stride`` voxels.

    Returns world points from ``start`` to ``goal``. Nodes are free when their
    ESDF value is at least ``clearance``. With ``preferred`` set, each edge
    length is scaled by ``1 + weight * shortfall / preferred`` where the
    shortfall is how far the edge's clearance falls below ``preferred``.
    """
    res = esdf.resolution
    step = res * stride
    origin = esdf.origin + 0.5 * res
    node_d = esdf.distance[::stride, ::stride, ::stride]
    free = node_d >= clearance
    shape = np.array(free.shape)

    def to_node(p):
        idx = np.rint((np.asarray(p) - origin) / step).astype(int)
        return tuple(np.clip(idx, 0, shape - 1))

    for name, point in (("start", start), ("goal", goal)):
        d, _, oob = esdf.query(point)
        if oob:
            raise PlanningError(f"{name} {np.round(point, 3)} is outside the map")
        if d < clearance - 1e-9:
            raise PlanningError(f"{name} {np.round(point, 3)} has clearance {d:.3f} < {clearance:.3f}")
    s, g = to_node(start), to_node(goal)
    free = free.copy()
    free[s] = free[g] = True

    ids = np.arange(free.size).reshape(free.shape)
    rows, cols, lengths = [], [], []
    for off in _NEIGHBOURS[: len(_NEIGHBOURS) // 2]:  # each undirected edge once
        src = tuple(slice(max(-o, 0), n - max(o, 0)) for o, n in zip(off, shape))
        dst = tuple(slice(max(o, 0), n - max(-o, 0)) for o, n in zip(off, shape))
        ok = free[src] & free[dst]
        rows.append(ids[src][ok])
        cols.append(ids[dst][ok])
        length = np.full(int(ok.sum()), step * np.linalg.norm(off))
        if preferred:
            low = np.minimum(node_d[src][ok], node_d[dst][ok])
            length *= 1.0 + weight * np.maximum(preferred - low, 0.0) / preferred
        lengths.append(length)
    graph = scipy.sparse.coo_matrix(
        (np.concatenate(lengths), (np.concatenate(rows), np.concatenate(cols))), shape=(free.size, free.size)
    ).tocsr()
    si, gi = int(ids[s]), int(ids[g])
    dist, pred = scipy.sparse.csgraph.dijkstra(graph, directed=False, indices=si, return_predecessors=True)
    if not np.isfinite(dist[gi]):
        raise PlanningError("no collision-free path between start and goal")
    chain = [gi]
    while chain[-1] != si:
        chain.append(int(pred[chain[-1]]))
    nodes = np.array(np.unravel_index(np.array(chain[::-1]), free.shape)).T
    path = origin + nodes * step
    path[0] = start
    path[-1] = goal
    return path


def shortcut(esdf: EsdfGrid, path: np.ndarray, clearance: float, preferred: float | None = None) -> np.ndarray:
    """Greedy line-of-sight simplification keeping every segment clear.

    With ``preferred`` set, a shortcut must also keep the clearance the skipped
    stretch already had, up to ``preferred``.
    """
    node_d, _, _ = esdf.query_batch(path)
    out = [path[0]]
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1:
            need = clearance
            if preferred:
                need = max(clearance, min(preferred, float(node_d[i + 1:j].min())))
            if _segment_clear(esdf, path[i], path[j], need):
                break
            j -= 1
        out.append(path[j])
        i = j
    return np.array(out)


def resample(polyline: np.ndarray, pieces: int) -> np.ndarray:
    """Intermediate points at equal arc-length fractions of the polyline."""
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = s[-1] * np.arange(1, pieces) / pieces
    return np.stack([np.interp(targets, s, polyline[:, a]) for a in range(3)], axis=1)


def trapezoid_times(length: float, arc_points, v_max: float, a_max: float) -> np.ndarray:
    """Times at which a rest-to-rest trapezoidal profile reaches each arc length."""
    arc_points = np.asarray(arc_points, dtype=float)
    d_acc = v_max**2 / (2 * a_max)
    if 2 * d_acc >= length:
        v_peak = np.sqrt(a_max * length)
        d_acc = length / 2
    else:
        v_peak = v_max
    t_acc = v_peak / a_max
    t_cruise = (length - 2 * d_acc) / v_peak
    out = np.empty_like(arc_points)
    for i, s in enumerate(arc_points):
        if s <= d_acc:
            out[i] = np.sqrt(2 * s / a_max)
        elif s <= length - d_acc:
            out[i] = t_acc + (s - d_acc) / v_peak
        else:
            rem = max(length - s, 0.0)
            out[i] = 2 * t_acc + t_cruise - np.sqrt(2 * rem / a_max)
    return out


def piece_count(length: float, piece_length: float = 1.5) -> int:
    return int(np.clip(round(length / piece_length), 3, 12))


def search_initial_path(
    esdf: EsdfGrid,
    start,
    goal,
    clearance: float,
    v_max: float,
    a_max: float,
    piece_length: float = 1.5,
    stride: int | None = None,
    preferred: float | None = None,
) -> InitialPath:
    """Collision-free polyline, downsampled waypoints and trapezoidal durations.

    ``clearance`` is a hard requirement; ``preferred`` is a softer margin the
    search trades against path length.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if stride is None:
        stride = max(1, int(round(0.2 / esdf.resolution)))
    if preferred is not None and preferred <= clearance:
        preferred = None
    if _segment_clear(esdf, start, goal, preferred or clearance):
        poly = np.stack([start, goal])
    else:
        path = grid_search(esdf, start, goal, clearance, stride=stride, preferred=preferred)
        poly = shortcut(esdf, path, clearance, preferred)
    length = float(np.sum(np.linalg.norm(np.diff(poly, axis=0), axis=1)))
    if length < 1e-6:
        raise PlanningError("start and goal coincide")
    M = piece_count(length, piece_length)
    waypoints = resample(poly, M)
    arc = length * np.arange(M + 1) / M
    times = trapezoid_times(length, arc, v_max, a_max)
    durations = np.maximum(np.diff(times), 1e-3)
    return InitialPath(polyline=poly, waypoints=waypoints, durations=durations)
