"""Depth images, the pinhole camera and backprojection into point clouds.

Depths are millimetres; ``0`` marks a missing (or removed) pixel. Pixel
``(u, v)`` is column ``u``, row ``v`` and its ray passes through the pixel
centre, so ``X = (u - cx) * z / fx`` with no half-pixel shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .errors import EmptyCloud, FormatError, IoError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 575.8
    fy: float = 575.8
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points (n, 3) to pixel coordinates (n, 2)."""
        points = np.asarray(points, dtype=np.float64)
        z = points[:, 2]
        return np.stack([self.fx * points[:, 0] / z + self.cx, self.fy * points[:, 1] / z + self.cy], axis=1)


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Row-major depth map, ``data[v, u]`` in millimetres."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("depth image must be 2-D")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValueError("depths must be finite and non-negative")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def __eq__(self, other):
        return isinstance(other, DepthImage) and np.array_equal(self.data, other.data)

    @classmethod
    def zeros(cls, width: int, height: int) -> "DepthImage":
        return cls(np.zeros((height, width)))


@dataclass(frozen=True)
class BoundingBox2D:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if min(self.x, self.y, self.w, self.h) < 0:
            raise ValueError("bounding box fields must be non-negative")

    def fits(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)

    def contains(self, u, v):
        u = np.asarray(u)
        v = np.asarray(v)
        return (u >= self.x) & (u < self.x + self.w) & (v >= self.y) & (v < self.y + self.h)

    def as_list(self) -> list[int]:
        return [int(self.x), int(self.y), int(self.w), int(self.h)]

    @classmethod
    def full(cls, img: DepthImage) -> "BoundingBox2D":
        return cls(0, 0, img.width, img.height)

    @classmethod
    def of_nonzero(cls, img: DepthImage) -> "BoundingBox2D":
        """Tight box around the non-zero pixels of ``img``."""
        v, u = np.nonzero(img.data)
        if u.size == 0:
            raise EmptyCloud("image has no valid depth")
        return cls(int(u.min()), int(v.min()), int(u.max() - u.min() + 1), int(v.max() - v.min() + 1))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Camera-frame points in mm with the pixel each one came from."""

    points: np.ndarray
    pixel_refs: np.ndarray
    mean: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        refs = np.array(self.pixel_refs, dtype=np.int64).reshape(-1, 2)
        if len(pts) != len(refs):
            raise ValueError("pixel_refs must match points")
        if len(pts) == 0:
            raise EmptyCloud("point cloud is empty")
        pts.setflags(write=False)
        refs.setflags(write=False)
        mean = pts.mean(axis=0)
        mean.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "pixel_refs", refs)
        object.__setattr__(self, "mean", mean)

    def __len__(self):
        return len(self.points)


def backproject(img: DepthImage, cam: CameraIntrinsics, roi: BoundingBox2D | None = None) -> PointCloud:
    """Lift every pixel in ``roi`` with positive depth to a 3-D point."""
    if roi is None:
        roi = BoundingBox2D.full(img)
    if not roi.fits(img.width, img.height):
        raise ValueError(f"roi {roi} outside {img.width}x{img.height} image")
    if roi.w == 0 or roi.h == 0:
        raise EmptyCloud("empty roi")
    sub = img.data[roi.slices()]
    v, u = np.nonzero(sub)
    if u.size == 0:
        raise EmptyCloud("roi has no valid depth")
    z = sub[v, u]
    u = u + roi.x
    v = v + roi.y
    X = (u - cam.cx) * z / cam.fx
    Y = (v - cam.cy) * z / cam.fy
    return PointCloud(np.stack([X, Y, z], axis=1), np.stack([u, v], axis=1))


def apply_mask(img: DepthImage, keep: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> DepthImage:
    """Zero every pixel the predicate rejects.

    ``keep`` is either a boolean array shaped like the image or a callable
    taking the depth array and returning one.
    """
    mask = keep(img.data) if callable(keep) else keep
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.data.shape:
        raise ValueError("mask shape does not match image")
    return DepthImage(np.where(mask, img.data, 0.0))


def save_depth_png(img: DepthImage, path) -> None:
    data = np.rint(img.data)
    if data.max(initial=0) > 65535:
        raise FormatError("depth exceeds 16-bit range")
    try:
        Image.fromarray(data.astype(np.uint16)).save(str(path), format="PNG")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_depth_png(path) -> DepthImage:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("I;16", "I;16B", "I;16L"):
                raise FormatError(f"{path}: expected 16-bit single-channel PNG, got mode {im.mode}")
            data = np.array(im, dtype=np.float64)
    except FormatError:
        raise
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    return DepthImage(data)
