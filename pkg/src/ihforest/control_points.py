"""Control-point (index, weight) descriptors on an N x N x N lattice.

Each normalised point spreads the tensor-product uniform cubic B-spline basis
over the 4 x 4 x 4 lattice vertices around it; the weight of a vertex is the
basis mass it receives. This stands in for a full implicit B-spline fit: the
vertices carrying weight are the ones a locally supported spline would need to
represent the surface, so their number grows with the object's scale in the
cube.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import EmptyCloud
from .scalespace import NormalizedCloud


@dataclass(frozen=True)
class GridSpec:
    N: int = 100
    epsilon_w: float = 1e-6

    def __post_init__(self):
        if self.N < 8:
            raise ValueError("grid resolution N must be at least 8")
        if not self.epsilon_w >= 0:
            raise ValueError("epsilon_w must be non-negative")


@dataclass(frozen=True)
class ControlPoint:
    index: int
    position: tuple
    weight: float


@dataclass(frozen=True, eq=False)
class ControlPointSet:
    """Sparse set of weighted lattice vertices, sorted by flattened index.

    Flattened index is ``(ix * N + iy) * N + iz``; vertex ``i`` sits at
    ``i / (N - 1)`` along each axis.
    """

    indices: np.ndarray
    weights: np.ndarray
    N: int
    source_scale: float = 0.0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if idx.shape != w.shape:
            raise ValueError("indices and weights differ in length")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.N**3):
            raise ValueError("indices must be strictly increasing and inside the grid")
        idx.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        pos = self.positions
        for i, p, w in zip(self.indices, pos, self.weights):
            yield ControlPoint(int(i), tuple(p), float(w))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @cached_property
    def grid_coords(self) -> np.ndarray:
        N = self.N
        return np.stack([self.indices // (N * N), (self.indices // N) % N, self.indices % N], axis=1)

    @cached_property
    def positions(self) -> np.ndarray:
        return self.grid_coords / (self.N - 1)

    @cached_property
    def column_starts(self) -> np.ndarray:
        """CSR offsets of the (ix, iy) lattice columns into the sorted arrays."""
        col = self.indices // self.N
        return np.searchsorted(col, np.arange(self.N * self.N + 1)).astype(np.int64)

    def subset(self, keep: np.ndarray) -> "ControlPointSet":
        keep = np.asarray(keep, dtype=bool)
        return ControlPointSet(self.indices[keep], self.weights[keep], self.N, self.source_scale)


def cubic_bspline_basis(t: np.ndarray) -> np.ndarray:
    """Uniform cubic B-spline weights of the 4 vertices around local coordinate t in [0, 1)."""
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            (1.0 - t) ** 3 / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0,
        ],
        axis=-1,
    )


def compute_control_points(nc: NormalizedCloud, grid: GridSpec = GridSpec()) -> ControlPointSet:
    pts = np.asarray(nc.points_n, dtype=np.float64)
    if len(pts) == 0:
        raise EmptyCloud("cannot describe an empty cloud")
    N = grid.N
    g = np.clip(pts, 0.0, 1.0) * (N - 1)
    cell = np.minimum(np.floor(g).astype(np.int64), N - 1)
    t = g - cell
    basis = cubic_bspline_basis(t)  # (n, 3 axes, 4)
    # out-of-lattice support is folded onto the boundary vertex
    offs = np.arange(-1, 3)
    verts = np.clip(cell[:, :, None] + offs, 0, N - 1)  # (n, 3, 4)
    flat = (
        verts[:, 0, :, None, None] * (N * N) + verts[:, 1, None, :, None] * N + verts[:, 2, None, None, :]
    ).ravel()
    w = (basis[:, 0, :, None, None] * basis[:, 1, None, :, None] * basis[:, 2, None, None, :]).ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    acc = np.bincount(inv, weights=w)
    keep = acc >= grid.epsilon_w
    return ControlPointSet(uniq[keep], acc[keep], N, nc.h)


def restrict_to_window(cps: ControlPointSet, center, window) -> ControlPointSet:
    """Control points inside ``center - window <= p < center + window`` (per axis)."""
    center = np.asarray(center, dtype=np.float64)
    window = np.broadcast_to(np.asarray(window, dtype=np.float64), (3,))
    if np.any(window < 0):
        raise ValueError("window half-extents must be non-negative")
    lo = center - window
    hi = center + window
    pos = cps.positions
    inside = np.all((pos >= lo) & (pos < hi), axis=1)
    return cps.subset(inside)
