"""Hough forest training on positive-only synthetic views, and the forest file format.

A split node holds a template patch and a threshold: a patch goes left when
its depth-checked histogram distance to the template is at most ``tau``.
Leaves keep up to ``max_leaf_samples`` votes, each an offset from the patch
centre to the object centre (camera frame, mm) plus the view's rotation.

Templates are stored as what the similarity needs: the feature vector and
the z-offset range of the control points, plus bookkeeping (r_max, centre,
scale).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .cloud import BoundingBox2D, CameraIntrinsics, DepthImage, backproject
from .control_points import compute_control_points
from .errors import FormatError, IoError
from .hocp import DescriptorConfig, PatchBank
from .render import Pose, wrap_angle
from .scalespace import build_scale_space

ENTROPY_RIDGE = 1e-6


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 3
    max_depth: int = 25
    max_leaf_samples: int = 15
    n_candidate_splits: int = 100
    subsample_fraction: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_trees", "max_depth", "max_leaf_samples", "n_candidate_splits"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class AnnotatedPatch:
    center_px: tuple
    center_mm: np.ndarray
    f: np.ndarray
    scale_h: float
    delta_x: np.ndarray
    theta: np.ndarray


@dataclass(eq=False)
class TrainingSet:
    """A :class:`PatchBank` with one (delta_x, theta) annotation per patch."""

    bank: PatchBank
    delta_x: np.ndarray
    theta: np.ndarray

    def __len__(self):
        return len(self.bank)

    def __getitem__(self, i: int) -> AnnotatedPatch:
        b = self.bank
        return AnnotatedPatch(tuple(int(c) for c in b.center_px[i]), b.center_mm[i], b.F[i], float(b.scale_h[i]),
                              self.delta_x[i], self.theta[i])

    @classmethod
    def concat(cls, sets: Sequence["TrainingSet"]) -> "TrainingSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            raise ValueError("no training patches")
        return cls(PatchBank.concat([s.bank for s in sets]),
                   np.concatenate([s.delta_x for s in sets]), np.concatenate([s.theta for s in sets]))


def default_train_stride(image: DepthImage, g: float) -> int:
    box = BoundingBox2D.of_nonzero(image)
    return max(1, int(g * max(box.w, box.h) / 4))


def sample_training_patches(image: DepthImage, pose: Pose, descriptor: DescriptorConfig = DescriptorConfig(),
                            cam: CameraIntrinsics = CameraIntrinsics()) -> TrainingSet:
    """Patches of every scale-space level of a foreground-only view, annotated with the view's pose."""
    cloud = backproject(image, cam)
    stride = descriptor.train_stride or default_train_stride(image, descriptor.g)
    banks = []
    for nc in build_scale_space(cloud, descriptor.schedule):
        cps = compute_control_points(nc, descriptor.grid)
        banks.append(PatchBank.from_cloud(nc, cps, descriptor.g, stride, descriptor.hist))
    banks = [b for b in banks if len(b)]
    if not banks:
        raise ValueError("view produced no patches")
    bank = PatchBank.concat(banks)
    center = np.asarray(pose.translation, dtype=np.float64)
    theta = np.broadcast_to(wrap_angle(np.asarray(pose.rotation, dtype=np.float64)), (len(bank), 3)).copy()
    return TrainingSet(bank, center - bank.center_mm, theta)


# ---------------------------------------------------------------- objective

def _logdet_cov(x: np.ndarray) -> float:
    c = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    sign, ld = np.linalg.slogdet(c + ENTROPY_RIDGE * np.eye(c.shape[0]))
    return float(ld)


def embed_angles(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    return np.concatenate([np.cos(theta), np.sin(theta)], axis=1)


def regression_entropy(delta_x: np.ndarray, theta_emb: np.ndarray) -> float:
    if len(delta_x) <= 1:
        return 0.0
    return _logdet_cov(delta_x * 1e-3) + _logdet_cov(theta_emb)


def split_objective(delta_x: np.ndarray, theta: np.ndarray, left: np.ndarray) -> float:
    """Information gain of partitioning the annotated set by the boolean mask ``left``.

    Returns ``-inf`` for a partition with an empty side.
    """
    left = np.asarray(left, dtype=bool)
    n = len(left)
    nl = int(left.sum())
    if nl == 0 or nl == n:
        return -np.inf
    emb = embed_angles(theta)
    gain = regression_entropy(delta_x, emb)
    for m in (left, ~left):
        gain -= m.sum() / n * regression_entropy(delta_x[m], emb[m])
    return gain


# ---------------------------------------------------------------- trees

NODE_DTYPE = np.dtype([
    ("tag", "u1"), ("template", "<i4"), ("tau", "<f8"), ("left", "<i4"), ("right", "<i4"),
    ("vote_start", "<i4"), ("vote_count", "<i4"),
])
LEAF, SPLIT = 0, 1


def template_dtype(d: int) -> np.dtype:
    return np.dtype([
        ("zmin", "<f8"), ("zmax", "<f8"), ("r_max", "<f8"), ("center_mm", "<f8", (3,)),
        ("center_px", "<i4", (2,)), ("scale_h", "<f8"), ("f", "<i4", (d,)),
    ])


VOTE_DTYPE = np.dtype([("delta_x", "<f8", (3,)), ("theta", "<f8", (3,))])


@dataclass(eq=False)
class Tree:
    """Flat node arrays; node 0 is the root and children follow in pre-order."""

    nodes: np.ndarray
    templates: np.ndarray
    votes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_leaves(self) -> int:
        return int((self.nodes["tag"] == LEAF).sum())

    def is_leaf(self, node: int) -> bool:
        return self.nodes["tag"][node] == LEAF

    def leaf_votes(self, node: int) -> np.ndarray:
        n = self.nodes[node]
        return self.votes[n["vote_start"]:n["vote_start"] + n["vote_count"]]

    @cached_property
    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, dep = stack.pop()
            best = max(best, dep)
            if not self.is_leaf(node):
                stack += [(int(self.nodes["left"][node]), dep + 1), (int(self.nodes["right"][node]), dep + 1)]
        return best

    def apply(self, bank: PatchBank, delta_z: float, idx: np.ndarray | None = None) -> np.ndarray:
        """Leaf node reached by each bank patch."""
        idx = np.arange(len(bank)) if idx is None else np.asarray(idx, dtype=np.int64)
        out = np.empty(len(idx), dtype=np.int64)
        stack = [(0, np.arange(len(idx)))]
        while stack:
            node, rows = stack.pop()
            n = self.nodes[node]
            if n["tag"] == LEAF:
                out[rows] = node
                continue
            t = self.templates[n["template"]]
            s = bank.similarity_to_range(idx[rows], t["zmin"] - delta_z, t["zmax"] + delta_z, t["f"])
            go_left = s <= n["tau"]
            stack += [(int(n["right"]), rows[~go_left]), (int(n["left"]), rows[go_left])]
        return out


def _reservoir(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform k-subset of range(n) by reservoir sampling, in stream order."""
    res = np.arange(min(n, k))
    for i in range(k, n):
        j = rng.integers(0, i + 1)
        if j < k:
            res[j] = i
    return np.sort(res)


def train_tree(data: TrainingSet, params: ForestParams = ForestParams(), seed: int = 0, delta_z: float = 0.05,
               subset: np.ndarray | None = None) -> Tree:
    if len(data) == 0:
        raise ValueError("cannot train on an empty patch set")
    rng = np.random.default_rng(seed)
    bank = data.bank
    subset = np.arange(len(data)) if subset is None else np.asarray(subset, dtype=np.int64)
    emb_all = embed_angles(data.theta)
    nodes, templates, votes = [], [], []

    def make_leaf(rows):
        keep = rows[_reservoir(len(rows), params.max_leaf_samples, rng)]
        nodes.append((LEAF, -1, 0.0, -1, -1, len(votes), len(keep)))
        votes.extend(zip(data.delta_x[keep], data.theta[keep]))

    def grow(rows, depth):
        me = len(nodes)
        if depth >= params.max_depth or len(rows) <= params.max_leaf_samples:
            make_leaf(rows)
            return
        dx, emb = data.delta_x[rows], emb_all[rows]
        h_parent = regression_entropy(dx, emb)
        best = (0.0, None)
        for _ in range(params.n_candidate_splits):
            t = int(rows[rng.integers(len(rows))])
            scores = bank.similarity_to(rows, t, delta_z)
            tau = rng.uniform(scores.min(), scores.max())
            left = scores <= tau
            nl = int(left.sum())
            if nl == 0 or nl == len(rows):
                continue
            gain = h_parent - (nl * regression_entropy(dx[left], emb[left])
                               + (len(rows) - nl) * regression_entropy(dx[~left], emb[~left])) / len(rows)
            if gain > best[0]:
                best = (gain, (t, tau, left))
        if best[1] is None:
            make_leaf(rows)
            return
        t, tau, left = best[1]
        templates.append((bank.zmin[t], bank.zmax[t], float(np.exp(bank.lnr[bank.start[t] + bank.amax[t]])),
                          bank.center_mm[t], bank.center_px[t], bank.scale_h[t], bank.F[t]))
        nodes.append((SPLIT, len(templates) - 1, tau, -1, -1, -1, 0))
        nodes[me] = nodes[me][:3] + (len(nodes),) + nodes[me][4:]
        grow(rows[left], depth + 1)
        nodes[me] = nodes[me][:4] + (len(nodes),) + nodes[me][5:]
        grow(rows[~left], depth + 1)

    grow(subset, 0)
    return Tree(np.array(nodes, dtype=NODE_DTYPE),
                np.array(templates, dtype=template_dtype(bank.spec.d)),
                np.array(votes, dtype=VOTE_DTYPE))


@dataclass(eq=False)
class Forest:
    trees: list
    params: ForestParams
    descriptor: DescriptorConfig
    training_depth_mm: float = 750.0

    def header(self) -> dict:
        return {"params": self.params.to_dict(), "descriptor": self.descriptor.to_dict(),
                "training_depth_mm": self.training_depth_mm}

    @cached_property
    def routing_tables(self) -> dict:
        """All trees fused into one set of arrays for the compiled router."""
        dz = self.descriptor.delta_z
        roots, tmpl, tau, left, right, lo, hi, f = [], [], [], [], [], [], [], []
        n_off = t_off = 0
        for tr in self.trees:
            nd = tr.nodes
            split = nd["tag"] == SPLIT
            roots.append(n_off)
            tmpl.append(np.where(split, nd["template"] + t_off, -1))
            tau.append(nd["tau"])
            left.append(np.where(split, nd["left"] + n_off, -1))
            right.append(np.where(split, nd["right"] + n_off, -1))
            lo.append(tr.templates["zmin"] - dz)
            hi.append(tr.templates["zmax"] + dz)
            f.append(tr.templates["f"].reshape(-1, self.descriptor.hist.d))
            n_off += len(nd)
            t_off += len(tr.templates)
        cat = lambda xs, dt: np.ascontiguousarray(np.concatenate(xs).astype(dt))
        return {"roots": np.array(roots, dtype=np.int64), "node_tmpl": cat(tmpl, np.int64),
                "node_tau": cat(tau, np.float64), "node_left": cat(left, np.int64),
                "node_right": cat(right, np.int64), "t_lo": cat(lo, np.float64), "t_hi": cat(hi, np.float64),
                "t_f": cat(f, np.int64)}

    @cached_property
    def leaf_votes(self) -> tuple:
        """(start offsets per fused node, delta_x, theta) over all trees."""
        starts, dx, th = [], [], []
        v_off = 0
        for tr in self.trees:
            starts.append(np.stack([tr.nodes["vote_start"] + v_off, tr.nodes["vote_count"]], axis=1))
            dx.append(tr.votes["delta_x"])
            th.append(tr.votes["theta"])
            v_off += len(tr.votes)
        return np.concatenate(starts).astype(np.int64), np.concatenate(dx), np.concatenate(th)


def train_forest(views: Sequence[tuple], params: ForestParams = ForestParams(),
                 descriptor: DescriptorConfig = DescriptorConfig(), cam: CameraIntrinsics = CameraIntrinsics(),
                 training_depth_mm: float = 750.0, data: TrainingSet | None = None) -> Forest:
    """Train on ``views``, a sequence of (foreground DepthImage, Pose) pairs.

    ``data`` skips patch sampling when the caller already has the training set.
    """
    if data is None:
        if not views:
            raise ValueError("need at least one training view")
        data = TrainingSet.concat([sample_training_patches(img, pose, descriptor, cam) for img, pose in views])
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng(params.rng_seed + t)
        if params.subsample_fraction < 1:
            k = max(1, int(round(params.subsample_fraction * len(data))))
            subset = np.sort(rng.choice(len(data), size=k, replace=False))
        else:
            subset = np.arange(len(data))
        trees.append(train_tree(data, params, seed=int(rng.integers(2**63)), delta_z=descriptor.delta_z,
                                subset=subset))
    return Forest(trees, params, descriptor, float(training_depth_mm))


# ---------------------------------------------------------------- file format

MAGIC = b"IHFOREST"
FORMAT_VERSION = 1


def forest_to_bytes(forest: Forest) -> bytes:
    buf = io.BytesIO()
    header = json.dumps(forest.header(), sort_keys=True, separators=(",", ":")).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<III", FORMAT_VERSION, len(header), len(forest.trees)))
    buf.write(header)
    for tr in forest.trees:
        buf.write(struct.pack("<III", len(tr.nodes), len(tr.templates), len(tr.votes)))
        buf.write(tr.nodes.tobytes())
        buf.write(tr.templates.tobytes())
        buf.write(tr.votes.tobytes())
    return buf.getvalue()


def save_forest(forest: Forest, path) -> None:
    try:
        Path(path).write_bytes(forest_to_bytes(forest))
    except OSError as e:
        raise IoError(f"cannot write forest to {path}: {e}") from e


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IoError("forest file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype: np.dtype, n: int) -> np.ndarray:
        return np.frombuffer(self.take(dtype.itemsize * n), dtype=dtype).copy()


def forest_from_bytes(data: bytes) -> Forest:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not a forest file (bad magic bytes)")
    version, hlen, n_trees = struct.unpack("<III", r.take(12))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported forest format version {version} (expected {FORMAT_VERSION})")
    try:
        header = json.loads(r.take(hlen).decode())
        params = ForestParams(**header["params"])
        descriptor = DescriptorConfig.from_dict(header["descriptor"])
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"bad forest header: {e}") from e
    tdt = template_dtype(descriptor.hist.d)
    trees = []
    for _ in range(n_trees):
        nn, nt, nv = struct.unpack("<III", r.take(12))
        trees.append(Tree(r.array(NODE_DTYPE, nn), r.array(tdt, nt), r.array(VOTE_DTYPE, nv)))
    if r.pos != len(data):
        raise FormatError("trailing bytes after the last tree")
    return Forest(trees, params, descriptor, float(header["training_depth_mm"]))


def load_forest(path) -> Forest:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read forest {path}: {e}") from e
    return forest_from_bytes(data)
