"""Voxel occupancy grid, Euclidean distance field and trilinear queries."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage


@dataclass
class VoxelGrid:
    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray  # bool (nx, ny, nz)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if self.occupancy.ndim != 3 or min(self.occupancy.shape) < 1:
            raise ValueError(f"occupancy must be a non-empty 3-D array, got {self.occupancy.shape}")

    @classmethod
    def empty(cls, lower, upper, resolution: float) -> "VoxelGrid":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        dims = np.maximum(np.ceil((upper - lower) / resolution - 1e-9).astype(int), 1)
        return cls(lower, resolution, np.zeros(tuple(dims), dtype=bool))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupancy.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.array(self.dims) * self.resolution

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.resolution

    def index_of(self, point) -> np.ndarray:
        idx = np.floor((np.asarray(point, dtype=float) - self.origin) / self.resolution).astype(int)
        return np.clip(idx, 0, np.array(self.dims) - 1)

    def center_of(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=float) + 0.5) * self.resolution

    def add_box(self, lower, upper) -> None:
        """Mark voxels whose centers lie inside the axis-aligned box."""
        X, Y, Z = np.meshgrid(self.centers(0), self.centers(1), self.centers(2), indexing="ij")
        lo, hi = np.asarray(lower, float), np.asarray(upper, float)
        inside = (X >= lo[0]) & (X <= hi[0]) & (Y >= lo[1]) & (Y <= hi[1]) & (Z >= lo[2]) & (Z <= hi[2])
        self.occupancy |= inside

    def add_cylinder(self, center_xy, radius: float, z_min: float, z_max: float) -> None:
        """Mark voxels whose centers lie inside a vertical cylinder."""
        X, Y, Z = np.meshgrid(self.centers(0), self.centers(1), self.centers(2), indexing="ij")
        cx, cy = center_xy
        inside = ((X - cx) ** 2 + (Y - cy) ** 2 <= radius**2) & (Z >= z_min) & (Z <= z_max)
        self.occupancy |= inside

    def add_voxels(self, indices) -> None:
        idx = np.asarray(indices, dtype=int).reshape(-1, 3)
        if len(idx) == 0:
            return
        if np.any(idx < 0) or np.any(idx >= np.array(self.dims)):
            raise ValueError("voxel index outside the grid")
        self.occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = True

    def load_voxel_list(self, path) -> None:
        """Import occupied voxels from a text file of ``x y z`` index triples."""
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 integers, got {line!r}")
            rows.append([int(p) for p in parts])
        self.add_voxels(rows)


@dataclass(frozen=True)
class EsdfGrid:
    origin: np.ndarray
    resolution: float
    distance: np.ndarray  # (nx, ny, nz), metres
    cap: float

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.distance.shape

    def query(self, point) -> tuple[float, np.ndarray, bool]:
        d, g, oob = self.query_batch(np.asarray(point, dtype=float)[None])
        return float(d[0]), g[0], bool(oob[0])

    def query_batch(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Trilinear distance and its analytic gradient at (n, 3) points.

        Interpolation nodes are voxel centers. Points outside the node hull are
        clamped onto it and flagged; the gradient is taken at the clamped point
        and zeroed along clamped axes.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        dims = np.array(self.dims)
        g = (pts - self.origin) / self.resolution - 0.5
        hi = (dims - 1).astype(float)
        clamped = (g < 0) | (g > hi)
        g = np.clip(g, 0.0, hi)
        i0 = np.minimum(np.floor(g).astype(int), np.maximum(dims - 2, 0))
        f = g - i0
        i1 = np.minimum(i0 + 1, dims - 1)
        D = self.distance
        idx = [(i0[:, a], i1[:, a]) for a in range(3)]
        c = np.empty((len(pts), 2, 2, 2))
        for a in (0, 1):
            for b in (0, 1):
                for e in (0, 1):
                    c[:, a, b, e] = D[idx[0][a], idx[1][b], idx[2][e]]
        fx, fy, fz = f[:, 0:1], f[:, 1:2], f[:, 2:3]
        # Collapse z, then y, then x.
        cz = c[:, :, :, 0] * (1 - fz[:, :, None]) + c[:, :, :, 1] * fz[:, :, None]
        dcz = c[:, :, :, 1] - c[:, :, :, 0]
        cy = cz[:, :, 0] * (1 - fy) + cz[:, :, 1] * fy
        dcy_dy = cz[:, :, 1] - cz[:, :, 0]
        dcy_dz = dcz[:, :, 0] * (1 - fy) + dcz[:, :, 1] * fy
        dist = cy[:, 0] * (1 - fx[:, 0]) + cy[:, 1] * fx[:, 0]
        grad = np.empty((len(pts), 3))
        grad[:, 0] = cy[:, 1] - cy[:, 0]
        grad[:, 1] = dcy_dy[:, 0] * (1 - fx[:, 0]) + dcy_dy[:, 1] * fx[:, 0]
        grad[:, 2] = dcy_dz[:, 0] * (1 - fx[:, 0]) + dcy_dz[:, 1] * fx[:, 0]
        grad /= self.resolution
        grad[clamped] = 0.0
        grad[:, dims == 1] = 0.0
        return dist, grad, clamped.any(axis=1)

    def voxel_distance(self, index) -> float:
        return float(self.distance[tuple(index)])


def build_esdf(grid: VoxelGrid, cap: float = 5.0) -> EsdfGrid:
    """Exact Euclidean distance from each voxel center to the nearest occupied center, capped."""
    occ = grid.occupancy
    if not occ.any():
        dist = np.full(occ.shape, float(cap))
    else:
        dist = ndimage.distance_transform_edt(~occ, sampling=grid.resolution)
        dist = np.minimum(dist, cap)
    return EsdfGrid(origin=grid.origin.copy(), resolution=float(grid.resolution), distance=dist, cap=float(cap))


def brute_force_distance(grid: VoxelGrid, cap: float) -> np.ndarray:
    """Reference O(n * n_occupied) distance field used by the tests and the verify command."""
    occ_idx = np.argwhere(grid.occupancy)
    all_idx = np.argwhere(np.ones(grid.dims, dtype=bool))
    if len(occ_idx) == 0:
        return np.full(grid.dims, float(cap))
    out = np.empty(len(all_idx))
    for start in range(0, len(all_idx), 4096):
        chunk = all_idx[start:start + 4096]
        d2 = ((chunk[:, None, :] - occ_idx[None, :, :]) ** 2).sum(axis=-1).min(axis=1)
        out[start:start + 4096] = np.sqrt(d2) * grid.resolution
    return np.minimum(out, cap).reshape(grid.dims)
