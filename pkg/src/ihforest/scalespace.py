"""Unit-cube normalisation and scale-space sampling of point clouds.

A cloud is centred on its mean, divided by ``s * alpha`` (``alpha`` being the
largest per-axis extent) and shifted to the cube centre. Larger ``s`` shrinks
the cloud inside the cube; the object scale ``h`` is the resulting z-extent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cloud import PointCloud
from .errors import DegenerateCloud

DEFAULT_SCHEDULE = (1.0, 1.15, 1.3, 1.45, 1.6)


@dataclass(frozen=True, eq=False)
class NormalizedCloud:
    points_n: np.ndarray
    source: PointCloud
    alpha: float
    s: float
    h: float

    def __len__(self):
        return len(self.points_n)

    @property
    def bbox_side(self) -> float:
        """Side of the normalised x/y bounding box (largest of the two extents)."""
        ext = self.points_n[:, :2].max(axis=0) - self.points_n[:, :2].min(axis=0)
        return float(ext.max())

    def to_camera(self, pts_n: np.ndarray) -> np.ndarray:
        """Invert the normalisation: unit-cube coordinates back to millimetres."""
        return (np.asarray(pts_n) - 0.5) * (self.s * self.alpha) + self.source.mean


@dataclass(frozen=True)
class ScaleSpaceSet:
    levels: tuple

    @property
    def m(self) -> int:
        return len(self.levels) - 1

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)


def extent(points: np.ndarray) -> np.ndarray:
    return points.max(axis=0) - points.min(axis=0)


def normalize(cloud: PointCloud, s: float = 1.0) -> NormalizedCloud:
    if s <= 0:
        raise ValueError("scale constant must be positive")
    alpha = float(extent(cloud.points).max())
    if alpha == 0.0:
        raise DegenerateCloud("all points coincide; scale factor is zero")
    # centred on the mean, so lopsided clouds can poke out of the cube by up to
    # 0.5/s per axis; the control-point lattice clamps those points
    pts = (cloud.points - cloud.mean) / (s * alpha) + 0.5
    pts.setflags(write=False)
    # same as the z-extent of pts, without the rounding that can push it past 1
    h = float(np.ptp(cloud.points[:, 2]) / (s * alpha))
    return NormalizedCloud(pts, cloud, alpha, float(s), h)


def build_scale_space(cloud: PointCloud, schedule: Sequence[float] = DEFAULT_SCHEDULE) -> ScaleSpaceSet:
    schedule = [float(s) for s in schedule]
    if not schedule or schedule[0] != 1.0:
        raise ValueError("scale schedule must start at 1.0")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("scale schedule must be strictly increasing")
    return ScaleSpaceSet(tuple(normalize(cloud, s) for s in schedule))


def subset_scale(nc: NormalizedCloud, mask: np.ndarray) -> float:
    """z-extent, in this cloud's unit cube, of the points selected by ``mask``.

    Used to track how large a fixed foreground appears once clutter around it
    has been removed and the cloud renormalised.
    """
    z = nc.points_n[np.asarray(mask, dtype=bool), 2]
    if z.size == 0:
        return 0.0
    return float(z.max() - z.min())
