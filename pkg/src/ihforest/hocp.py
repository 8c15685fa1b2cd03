"""Histogram-of-control-points patch descriptors.

A patch is a window of the unit cube centred on one of the cloud's points.
Its control points are binned in spherical coordinates around the centre:
log radius (between r_min and the distance r_max of the farthest control
point), cosine of the inclination, and azimuth. The flattened counts form the
feature vector ``f``.

Two representations live here. :class:`Patch` carries a real
:class:`ControlPointSet` and is what the public functions take.
:class:`PatchBank` packs thousands of patches into flat arrays for training
and is what the compiled kernels read.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .control_points import ControlPointSet, GridSpec, restrict_to_window
from .errors import DegeneratePatch
from .scalespace import NormalizedCloud


@dataclass(frozen=True)
class HistogramSpec:
    h_r: int = 4
    h_theta: int = 8
    h_phi: int = 8
    r_min_fraction: float | None = None  # default 2**-h_r, one octave per radial bin

    def __post_init__(self):
        if min(self.h_r, self.h_theta, self.h_phi) < 2:
            raise ValueError("every bin count must be at least 2")
        if self.r_min_fraction is None:
            object.__setattr__(self, "r_min_fraction", 2.0 ** -self.h_r)
        if not 0 < self.r_min_fraction < 1:
            raise ValueError("r_min_fraction must lie in (0, 1)")

    @property
    def d(self) -> int:
        return self.h_r * self.h_theta * self.h_phi

    @property
    def n_ang(self) -> int:
        return self.h_theta * self.h_phi

    @property
    def ln_frac(self) -> float:
        return float(np.log(self.r_min_fraction))

    @classmethod
    def for_dimension(cls, d: int) -> "HistogramSpec":
        """Bin split used for the supported feature sizes."""
        splits = {128: (4, 4, 8), 256: (4, 8, 8), 512: (8, 8, 8)}
        if d not in splits:
            raise ValueError(f"no default bin split for d={d}; pick h_r, h_theta, h_phi explicitly")
        return cls(*splits[d])


@dataclass(frozen=True, eq=False)
class Patch:
    center_px: tuple
    center_n: np.ndarray
    center_mm: np.ndarray
    g: float
    cps: ControlPointSet
    r_max: float
    f: np.ndarray
    depth: float  # depth of the centre pixel, mm
    scale_h: float

    @property
    def offsets(self) -> np.ndarray:
        return self.cps.positions - self.center_n


def _spherical_bins(offsets: np.ndarray, r_max: float, spec: HistogramSpec) -> np.ndarray:
    x, y, z = offsets[:, 0], offsets[:, 1], offsets[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    if r_max > 0:
        r_min = spec.r_min_fraction * r_max
        with np.errstate(divide="ignore"):
            t_r = spec.h_r * np.log(r / r_min) / np.log(r_max / r_min)
        rb = np.where(r < r_min, 0, np.clip(np.floor(t_r), 0, spec.h_r - 1))
    else:
        rb = np.zeros(len(r))
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_incl = np.where(r > 0, z / np.where(r > 0, r, 1.0), 0.0)
    tb = np.clip(np.floor(spec.h_theta * (cos_incl + 1.0) / 2.0), 0, spec.h_theta - 1)
    pb = np.mod(np.floor(spec.h_phi * (np.arctan2(y, x) + np.pi) / (2 * np.pi)), spec.h_phi)
    return ((rb * spec.h_theta + tb) * spec.h_phi + pb).astype(np.int64)


def compute_histogram(center_n, cps: ControlPointSet, r_max: float, spec: HistogramSpec = HistogramSpec()) -> np.ndarray:
    """Feature vector of ``cps`` around ``center_n``; counts per spherical bin."""
    if len(cps) == 0:
        raise DegeneratePatch("patch has no control points")
    if not r_max > 0:
        raise DegeneratePatch("all control points sit at the patch centre")
    offsets = cps.positions - np.asarray(center_n, dtype=np.float64)
    return np.bincount(_spherical_bins(offsets, r_max, spec), minlength=spec.d)


def depth_check(candidate: Patch, template: Patch, delta_z: float) -> ControlPointSet:
    """Candidate control points whose depth offset fits the template's depth range."""
    tz = template.offsets[:, 2]
    lo = tz.min() - delta_z
    hi = tz.max() + delta_z
    cz = candidate.offsets[:, 2]
    return candidate.cps.subset((cz >= lo) & (cz <= hi))


def similarity(candidate: Patch, template: Patch, spec: HistogramSpec = HistogramSpec(), delta_z: float = 0.05) -> float:
    omega = depth_check(candidate, template, delta_z)
    if len(omega) == 0:
        f_omega = np.zeros(spec.d)
    else:
        offsets = omega.positions - candidate.center_n
        r_max = float(np.sqrt((offsets**2).sum(axis=1)).max())
        f_omega = np.bincount(_spherical_bins(offsets, r_max, spec), minlength=spec.d)
    return float(np.linalg.norm(f_omega - template.f))


def lattice_indices(nc: NormalizedCloud, stride: int) -> np.ndarray:
    """Cloud points on the pixel lattice of the given stride, anchored at the cloud's top-left pixel."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    refs = nc.source.pixel_refs
    u0, v0 = refs.min(axis=0)
    on = ((refs[:, 0] - u0) % stride == 0) & ((refs[:, 1] - v0) % stride == 0)
    return np.flatnonzero(on)


def window_half_extent(nc: NormalizedCloud, g: float) -> float:
    if not 0 < g <= 1:
        raise ValueError("patch size g must lie in (0, 1]")
    return 0.5 * g * nc.bbox_side


def extract_patches(nc: NormalizedCloud, cps: ControlPointSet, g: float, stride: int,
                    spec: HistogramSpec = HistogramSpec()) -> list[Patch]:
    w = window_half_extent(nc, g)
    out = []
    for i in lattice_indices(nc, stride):
        c = nc.points_n[i]
        sub = restrict_to_window(cps, c, w)
        if len(sub) == 0:
            continue
        r_max = float(np.sqrt(((sub.positions - c) ** 2).sum(axis=1)).max())
        if r_max == 0:
            continue
        u, v = nc.source.pixel_refs[i]
        out.append(Patch(
            center_px=(int(u), int(v)),
            center_n=c,
            center_mm=nc.source.points[i],
            g=g,
            cps=sub,
            r_max=r_max,
            f=compute_histogram(c, sub, r_max, spec),
            depth=float(nc.source.points[i, 2]),
            scale_h=nc.h,
        ))
    return out


@dataclass(eq=False)
class PatchBank:
    """Many patches packed into flat arrays.

    Per-point arrays ``zs``, ``lnr``, ``ang`` are sliced by ``start`` and sorted
    by z-offset within each patch; ``amax`` is the in-patch position of the
    farthest control point. Every other array has one row per patch.
    """

    zs: np.ndarray
    lnr: np.ndarray
    ang: np.ndarray
    start: np.ndarray
    F: np.ndarray
    zmin: np.ndarray
    zmax: np.ndarray
    amax: np.ndarray
    center_mm: np.ndarray
    center_px: np.ndarray
    scale_h: np.ndarray
    spec: HistogramSpec = field(default_factory=HistogramSpec)

    def __len__(self):
        return len(self.start) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.start)

    def points_of(self, p: int):
        a, b = self.start[p], self.start[p + 1]
        return self.zs[a:b], self.lnr[a:b], self.ang[a:b]

    @classmethod
    def from_cloud(cls, nc: NormalizedCloud, cps: ControlPointSet, g: float, stride: int,
                   spec: HistogramSpec = HistogramSpec(), indices: np.ndarray | None = None) -> "PatchBank":
        """Same patches as :func:`extract_patches`, packed."""
        w = window_half_extent(nc, g)
        if indices is None:
            indices = lattice_indices(nc, stride)
        gc = np.ascontiguousarray(cps.grid_coords)
        cols = cps.column_starts
        zs_l, lnr_l, ang_l, keep, rows = [], [], [], [], []
        for i in indices:
            c = nc.points_n[i]
            zs, lnr, ang = _kernels.window_points(gc, cols, cps.N, c[0], c[1], c[2], w, spec.h_theta, spec.h_phi)
            if len(zs) == 0:
                continue
            f = np.empty(spec.d, dtype=np.int64)
            ln_rmax = _kernels.full_histogram(lnr, ang, spec.h_r, spec.ln_frac, spec.n_ang, f)
            if ln_rmax == -np.inf:
                continue
            order = np.argsort(zs, kind="stable")
            zs, lnr = zs[order], lnr[order]
            zs_l.append(zs)
            lnr_l.append(lnr)
            ang_l.append(ang[order].astype(np.int16))
            keep.append(i)
            rows.append((f, zs[0], zs[-1], int(np.argmax(lnr))))
        keep = np.asarray(keep, dtype=np.int64)
        return cls(
            zs=np.concatenate(zs_l) if zs_l else np.empty(0),
            lnr=np.concatenate(lnr_l) if lnr_l else np.empty(0),
            ang=np.concatenate(ang_l) if ang_l else np.empty(0, dtype=np.int16),
            start=np.concatenate([[0], np.cumsum([len(z) for z in zs_l], dtype=np.int64)]).astype(np.int64),
            F=np.array([r[0] for r in rows], dtype=np.int32).reshape(-1, spec.d),
            zmin=np.array([r[1] for r in rows], dtype=np.float64),
            zmax=np.array([r[2] for r in rows], dtype=np.float64),
            amax=np.array([r[3] for r in rows], dtype=np.int64),
            center_mm=nc.source.points[keep].reshape(-1, 3),
            center_px=nc.source.pixel_refs[keep].reshape(-1, 2),
            scale_h=np.full(len(keep), nc.h),
            spec=spec,
        )

    @classmethod
    def concat(cls, banks: Sequence["PatchBank"]) -> "PatchBank":
        banks = [b for b in banks if len(b)]
        if not banks:
            raise ValueError("no patches to concatenate")
        offs = np.cumsum([0] + [len(b.zs) for b in banks])
        start = np.concatenate([b.start[:-1] + o for b, o in zip(banks, offs)] + [[offs[-1]]]).astype(np.int64)
        cat = lambda name: np.concatenate([getattr(b, name) for b in banks])
        return cls(cat("zs"), cat("lnr"), cat("ang"), start, cat("F"), cat("zmin"), cat("zmax"), cat("amax"),
                   cat("center_mm"), cat("center_px"), cat("scale_h"), banks[0].spec)

    def similarity_to(self, idx: np.ndarray, template: int, delta_z: float) -> np.ndarray:
        """Similarity of patches ``idx`` against bank patch ``template``."""
        return self.similarity_to_range(idx, self.zmin[template] - delta_z, self.zmax[template] + delta_z,
                                        self.F[template])

    def similarity_to_range(self, idx: np.ndarray, lo: float, hi: float, f_t: np.ndarray) -> np.ndarray:
        s = self.spec
        return _kernels.similarity_batch(np.asarray(idx, dtype=np.int64), self.start, self.zs, self.lnr, self.ang,
                                         self.amax, self.F, float(lo), float(hi),
                                         np.asarray(f_t), s.h_r, s.ln_frac, s.n_ang)


@dataclass(frozen=True)
class DescriptorConfig:
    """Everything needed to turn a depth crop into routable patches."""

    grid: GridSpec = field(default_factory=GridSpec)
    hist: HistogramSpec = field(default_factory=HistogramSpec)
    g: float = 0.5
    schedule: tuple = (1.0, 1.15, 1.3, 1.45, 1.6)
    delta_z: float = 0.05
    train_stride: int | None = None  # None: max(1, g * bbox side / 4) per view

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple(float(s) for s in self.schedule))
        if not 0 < self.g <= 1:
            raise ValueError("patch size g must lie in (0, 1]")
        if self.delta_z < 0:
            raise ValueError("delta_z must be non-negative")

    def to_dict(self) -> dict:
        return {
            "N": self.grid.N, "epsilon_w": self.grid.epsilon_w,
            "h_r": self.hist.h_r, "h_theta": self.hist.h_theta, "h_phi": self.hist.h_phi,
            "r_min_fraction": self.hist.r_min_fraction,
            "g": self.g, "schedule": list(self.schedule), "delta_z": self.delta_z,
            "train_stride": self.train_stride,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DescriptorConfig":
        return cls(
            grid=GridSpec(int(d["N"]), float(d["epsilon_w"])),
            hist=HistogramSpec(int(d["h_r"]), int(d["h_theta"]), int(d["h_phi"]), float(d["r_min_fraction"])),
            g=float(d["g"]), schedule=tuple(d["schedule"]), delta_z=float(d["delta_z"]),
            train_stride=d.get("train_stride"),
        )
