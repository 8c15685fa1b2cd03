"""Dense Hough voting, clutter removal and the iterative refinement loop.

Every patch of the test crop is routed down every tree; each leaf vote puts
a candidate object centre (patch centre + stored offset) into a 3-D
accumulator of ``bin_size`` mm cells. The hypothesis is the densest 3x3x3
block of cells. Refinement renders that hypothesis, drops pixels whose depth
falls outside the rendered depth band (widened by psi1/psi2), renormalises
what is left and votes again.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial.transform import Rotation

from . import _kernels
from .cloud import BoundingBox2D, CameraIntrinsics, DepthImage, backproject
from .control_points import compute_control_points
from .errors import (DegenerateCloud, DegenerateHypothesis, EmptyCloud, EmptyRender, IoError, NoVotes)
from .forest import Forest
from .hocp import lattice_indices, window_half_extent
from .render import Pose, matrix_to_euler, wrap_angle
from .scalespace import normalize


@dataclass(frozen=True)
class ClutterFilterParams:
    psi1: float = 0.9
    psi2: float = 1.1

    def __post_init__(self):
        if not 0 < self.psi1 <= 1 <= self.psi2:
            raise ValueError("need 0 < psi1 <= 1 <= psi2")


@dataclass(frozen=True)
class RegisterParams:
    stride: int = 2
    bin_size: float = 5.0
    k_max: int = 5
    clutter: ClutterFilterParams = field(default_factory=ClutterFilterParams)

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not self.bin_size > 0:
            raise ValueError("bin_size must be positive")
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")


@dataclass(frozen=True)
class Hypothesis:
    center: tuple
    theta: tuple
    confidence: float

    @property
    def pose(self) -> Pose:
        return Pose(self.theta, self.center)

    def to_dict(self) -> dict:
        return {"center_mm": list(self.center), "theta_rad": list(self.theta), "confidence": self.confidence}


def rpy_to_rotation(theta: np.ndarray) -> Rotation:
    theta = np.atleast_2d(theta)
    return Rotation.from_euler("ZYX", theta[:, ::-1])


@dataclass(eq=False)
class VoteAccumulator:
    """Votes kept as raw arrays; cells are derived from ``bin_size`` on demand."""

    bin_size: float
    centers: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    thetas: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    n_patches: int = 0
    n_control_points: int = 0

    def __post_init__(self):
        if not self.bin_size > 0:
            raise ValueError("bin_size must be positive")

    @property
    def total_mass(self) -> int:
        return len(self.centers)

    def add(self, centers, thetas) -> None:
        self.centers = np.concatenate([self.centers, np.asarray(centers, dtype=np.float64).reshape(-1, 3)])
        self.thetas = np.concatenate([self.thetas, np.asarray(thetas, dtype=np.float64).reshape(-1, 3)])
        self.__dict__.pop("cells", None)

    @cached_property
    def cells(self) -> np.ndarray:
        return np.floor(self.centers / self.bin_size).astype(np.int64)

    @property
    def bins(self) -> dict:
        """Sparse view: cell index -> (mass, theta votes)."""
        out = {}
        for c, th in zip(map(tuple, self.cells), self.thetas):
            m, lst = out.get(c, (0, []))
            lst.append(th)
            out[c] = (m + 1, lst)
        return out


def extract_mode(acc: VoteAccumulator, recenter: bool = True, max_shift_iter: int = 50) -> Hypothesis:
    if acc.total_mass == 0:
        raise NoVotes("accumulator is empty")
    cells = acc.cells
    # unique rows come out in lexicographic order, which is the flattened order
    uniq, mass = np.unique(cells, axis=0, return_counts=True)
    lo = uniq.min(axis=0) - 1
    span = uniq.max(axis=0) - lo + 2
    key = lambda c: ((c[..., 0] - lo[0]) * span[1] + (c[..., 1] - lo[1])) * span[2] + (c[..., 2] - lo[2])
    ukey = key(uniq)
    hood = np.zeros(len(uniq), dtype=np.int64)
    for off in np.stack(np.meshgrid(*[[-1, 0, 1]] * 3, indexing="ij"), -1).reshape(-1, 3):
        k = key(uniq + off)
        pos = np.clip(np.searchsorted(ukey, k), 0, len(ukey) - 1)
        hit = ukey[pos] == k
        hood[hit] += mass[pos[hit]]
    best = uniq[int(np.argmax(hood))]
    sel = np.all(np.abs(cells - best) <= 1, axis=1)
    mass = int(sel.sum())
    center = acc.centers[sel].mean(axis=0)
    if recenter:
        # the winning block is tied to the grid; slide a block-sized window onto the votes
        half = 1.5 * acc.bin_size
        for _ in range(max_shift_iter):
            win = np.all(np.abs(acc.centers - center) <= half, axis=1)
            nxt = acc.centers[win].mean(axis=0)
            done = np.array_equal(win, sel)
            sel, center = win, nxt
            if done:
                break
    rot = rpy_to_rotation(acc.thetas[sel]).mean()
    theta = wrap_angle(matrix_to_euler(rot.as_matrix()))
    return Hypothesis(tuple(float(c) for c in center), tuple(float(a) for a in theta),
                      float(mass / acc.total_mass))


def cast_votes(image: DepthImage, roi: BoundingBox2D | None, forest: Forest, stride: int = 2,
               cam: CameraIntrinsics = CameraIntrinsics(), bin_size: float = 5.0) -> VoteAccumulator:
    cloud = backproject(image, cam, roi)
    nc = normalize(cloud, 1.0)
    desc = forest.descriptor
    cps = compute_control_points(nc, desc.grid)
    idx = lattice_indices(nc, stride)
    spec = desc.hist
    tab = forest.routing_tables
    leaves, valid, counts = _kernels.describe_and_route(
        np.ascontiguousarray(cps.grid_coords), cps.column_starts, cps.N,
        np.ascontiguousarray(nc.points_n[idx]), window_half_extent(nc, desc.g),
        spec.h_r, spec.h_theta, spec.h_phi, spec.ln_frac, spec.d,
        tab["roots"], tab["node_tmpl"], tab["node_tau"], tab["node_left"], tab["node_right"],
        tab["t_lo"], tab["t_hi"], tab["t_f"])
    acc = VoteAccumulator(bin_size, n_patches=int(valid.sum()), n_control_points=len(cps))
    starts, dx, th = forest.leaf_votes
    pc = cloud.points[idx[valid]]
    lv = leaves[valid]
    patch = np.repeat(np.arange(len(lv)), lv.shape[1])
    s, c = starts[lv.ravel()].T
    rows = np.repeat(s - np.cumsum(c) + c, c) + np.arange(c.sum())
    acc.add(pc[np.repeat(patch, c)] + dx[rows], th[rows])
    return acc


def remove_clutter(image: DepthImage, roi: BoundingBox2D | None, hyp_depth: DepthImage,
                   params: ClutterFilterParams = ClutterFilterParams()) -> tuple[DepthImage, np.ndarray]:
    """Keep pixels of ``roi`` whose depth lies strictly inside the widened hypothesis band."""
    hd = hyp_depth.data
    nz = hd[hd > 0]
    if nz.size == 0:
        raise DegenerateHypothesis("rendered hypothesis covers no pixel")
    gamma, beta = float(nz.min()), float(nz.max())
    D = image.data
    keep = (D > gamma * params.psi1) & (D < beta * params.psi2)
    if roi is not None:
        inside = np.zeros_like(keep)
        inside[roi.slices()] = True
        keep &= inside
    return DepthImage(np.where(keep, D, 0.0)), keep


@dataclass(eq=False)
class RefinementState:
    """Histories of one registration; index k holds iteration k (k = 0 is the initial vote)."""

    image_k: DepthImage
    hypothesis_history: list = field(default_factory=list)
    removal_history: list = field(default_factory=list)
    feature_history: list = field(default_factory=list)
    alpha_history: list = field(default_factory=list)
    truncated: bool = False
    stop_reason: str = ""

    @property
    def k(self) -> int:
        return len(self.hypothesis_history) - 1

    @property
    def hypothesis(self) -> Hypothesis:
        return self.hypothesis_history[-1]

    @property
    def h_trace(self) -> list[float]:
        """Object scale per iteration: z-extent of the final foreground in each iteration's unit cube.

        The foreground is the point set surviving every removal; since the
        clouds are nested, each iteration's normalisation factor can only
        shrink and this trace can only grow.
        """
        fg = self.image_k.data[self.image_k.data > 0]
        if fg.size == 0:
            return [0.0] * len(self.alpha_history)
        zext = float(fg.max() - fg.min())
        return [zext / a for a in self.alpha_history]

    @property
    def h_k(self) -> float:
        return self.h_trace[-1]

    def to_record(self, scene_id: str | None = None) -> dict:
        return {
            "scene_id": scene_id,
            "k": self.k,
            "truncated": self.truncated,
            "stop_reason": self.stop_reason,
            "iterations": [
                {"k": k, **h.to_dict(), "h": hk, "cloud_h": m["h"], "n_patches": m["n_patches"],
                 "n_control_points": m["n_control_points"], "n_votes": m["n_votes"],
                 "kept_pixels": m["kept_pixels"]}
                for k, (h, hk, m) in enumerate(zip(self.hypothesis_history, self.h_trace, self.feature_history))
            ],
        }


def _vote_once(image, roi, forest, params, cam):
    cloud = backproject(image, cam, roi)
    nc = normalize(cloud, 1.0)
    acc = cast_votes(image, roi, forest, params.stride, cam, params.bin_size)
    hyp = extract_mode(acc)
    summary = {"h": nc.h, "n_patches": acc.n_patches, "n_control_points": acc.n_control_points,
               "n_votes": acc.total_mass, "kept_pixels": len(cloud)}
    return hyp, summary, nc.alpha


def refine(image: DepthImage, roi: BoundingBox2D | None, forest: Forest, renderer: Callable[[Pose], DepthImage],
           k_max: int | None = None, params: RegisterParams = RegisterParams(),
           cam: CameraIntrinsics = CameraIntrinsics()) -> RefinementState:
    k_max = params.k_max if k_max is None else k_max
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    hyp, summary, alpha = _vote_once(image, roi, forest, params, cam)
    state = RefinementState(image, [hyp], [], [summary], [alpha])
    current = image
    for k in range(1, k_max + 1):
        try:
            hyp_depth = renderer(state.hypothesis.pose)
            nxt, keep = remove_clutter(current, roi, hyp_depth, params.clutter)
            if nxt == current:
                # nothing removed: voting is deterministic, so the result repeats
                hyp, summary, alpha = state.hypothesis, state.feature_history[-1], state.alpha_history[-1]
            else:
                hyp, summary, alpha = _vote_once(nxt, roi, forest, params, cam)
        except (DegenerateHypothesis, EmptyRender, EmptyCloud, DegenerateCloud, NoVotes) as e:
            state.truncated = True
            state.stop_reason = f"iteration {k}: {type(e).__name__}: {e}"
            break
        current = nxt
        state.image_k = nxt
        state.hypothesis_history.append(hyp)
        state.removal_history.append(keep)
        state.feature_history.append(summary)
        state.alpha_history.append(alpha)
    return state


def register(image: DepthImage, roi: BoundingBox2D | None, forest: Forest, renderer, params: RegisterParams = RegisterParams(),
             cam: CameraIntrinsics = CameraIntrinsics()) -> RefinementState:
    return refine(image, roi, forest, renderer, params.k_max, params, cam)


def save_record(state: RefinementState, path, scene_id: str | None = None) -> None:
    try:
        Path(path).write_text(json.dumps(state.to_record(scene_id), indent=2, sort_keys=True))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def save_overlay_ply(path, image: DepthImage, hyp_depth: DepthImage, cam: CameraIntrinsics = CameraIntrinsics()) -> None:
    """Scene points (grey) and hypothesis-rendered points (red) in one coloured point cloud."""
    parts = []
    for img, rgb in ((image, (160, 160, 160)), (hyp_depth, (230, 40, 40))):
        if img.nonzero_count():
            pts = backproject(img, cam).points
            parts.append(np.hstack([pts, np.tile(rgb, (len(pts), 1))]))
    rows = np.vstack(parts) if parts else np.empty((0, 6))
    header = ("ply\nformat ascii 1.0\n"
              f"element vertex {len(rows)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
    try:
        with open(path, "w") as fh:
            fh.write(header)
            for r in rows:
                fh.write(f"{r[0]:.3f} {r[1]:.3f} {r[2]:.3f} {int(r[3])} {int(r[4])} {int(r[5])}\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
