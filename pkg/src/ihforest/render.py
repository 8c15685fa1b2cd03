"""Software z-buffer rendering of triangle meshes into depth images.

Also holds the mesh/pose types, procedural test objects, training-view
sampling and synthetic cluttered scenes. Rotations everywhere use
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from pathlib import Path

import numba
import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from .cloud import BoundingBox2D, CameraIntrinsics, DepthImage
from .errors import EmptyRender, FormatError, IoError, SceneRejected

log = logging.getLogger(__name__)


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    out = np.mod(a + np.pi, 2 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    # in-range angles pass through untouched
    return np.where((a > -np.pi) & (a <= np.pi), a, out)


def euler_to_matrix(rpy) -> np.ndarray:
    roll, pitch, yaw = rpy
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def matrix_to_euler(R) -> np.ndarray:
    with warnings.catch_warnings():
        # at pitch = +-90 deg scipy pins roll to 0; the matrix is still reproduced exactly
        warnings.simplefilter("ignore", UserWarning)
        yaw, pitch, roll = Rotation.from_matrix(R).as_euler("ZYX")
    return wrap_angle([roll, pitch, yaw])


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        rot = tuple(float(a) for a in wrap_angle(self.rotation))
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    @property
    def R(self) -> np.ndarray:
        return euler_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.R.T + self.t

    def __eq__(self, other):
        return isinstance(other, Pose) and self.rotation == other.rotation and self.translation == other.translation

    def to_dict(self) -> dict:
        return {"rotation": list(self.rotation), "translation": list(self.translation)}

    @classmethod
    def from_dict(cls, d) -> "Pose":
        return cls(tuple(d["rotation"]), tuple(d["translation"]))


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) == 0:
            raise FormatError("mesh has no triangles")
        if t.min() < 0 or t.max() >= len(v):
            raise FormatError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @cached_property
    def diameter(self) -> float:
        """Largest distance between two vertices."""
        pts = np.unique(self.vertices, axis=0)
        if len(pts) > 4:
            try:
                pts = pts[ConvexHull(pts).vertices]
            except QhullError:
                pass
        return float(pdist(pts).max()) if len(pts) > 1 else 0.0


# ---------------------------------------------------------------- mesh files


def save_obj(mesh: Mesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def save_ply(mesh: Mesh, path) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\nproperty float x\nproperty float y\nproperty float z\n"
        f"element face {len(mesh.triangles)}\nproperty list uchar int vertex_indices\nend_header\n"
    )
    faces = np.zeros(len(mesh.triangles), dtype=[("n", "u1"), ("idx", "<i4", 3)])
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        fh.write(faces.tobytes())


def _load_obj(path: Path) -> Mesh:
    verts, tris = [], []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 3:
                raise FormatError(f"{path}: only triangulated meshes are supported")
            tris.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    if not tris:
        raise FormatError(f"{path}: no faces")
    return Mesh(np.array(verts), np.array(tris))


_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "short": "i2", "ushort": "u2", "int": "i4", "uint": "u4",
    "float": "f4", "double": "f8", "int8": "i1", "uint8": "u1", "int16": "i2", "uint16": "u2",
    "int32": "i4", "uint32": "u4", "float32": "f4", "float64": "f8",
}


def _load_ply(path: Path) -> Mesh:
    raw = path.read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len("end_header\n"):]
    fmt = None
    elements = []
    for line in header:
        p = line.split()
        if p[0] == "format":
            fmt = p[1]
        elif p[0] == "element":
            elements.append((p[1], int(p[2]), []))
        elif p[0] == "property":
            elements[-1][2].append(p[1:])
    if fmt != "binary_little_endian":
        raise FormatError(f"{path}: only binary little-endian PLY is supported")
    verts = tris = None
    off = 0
    for name, count, props in elements:
        if any(p[0] == "list" for p in props):
            if name != "face" or len(props) != 1:
                raise FormatError(f"{path}: unsupported list element {name}")
            _, ctype, itype, _ = props[0]
            dt = np.dtype([("n", "<" + _PLY_TYPES[ctype]), ("idx", "<" + _PLY_TYPES[itype], 3)])
            arr = np.frombuffer(body, dtype=dt, count=count, offset=off)
            if np.any(arr["n"] != 3):
                raise FormatError(f"{path}: only triangulated meshes are supported")
            tris = arr["idx"].astype(np.int64)
            off += dt.itemsize * count
        else:
            dt = np.dtype([(p[1], "<" + _PLY_TYPES[p[0]]) for p in props])
            arr = np.frombuffer(body, dtype=dt, count=count, offset=off)
            off += dt.itemsize * count
            if name == "vertex":
                verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    if verts is None or tris is None or len(tris) == 0:
        raise FormatError(f"{path}: missing vertices or faces")
    return Mesh(verts, tris)


def load_mesh(path) -> Mesh:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such mesh file: {path}")
    if path.stat().st_size == 0:
        raise FormatError(f"{path}: empty file")
    try:
        if path.suffix.lower() == ".ply":
            return _load_ply(path)
        return _load_obj(path)
    except (ValueError, IndexError, KeyError, UnicodeDecodeError, struct.error) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from exc


# ------------------------------------------------------- procedural objects


def _revolve(profile: np.ndarray, segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Surface of revolution about the model y-axis; profile rows are (radius, y)."""
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    verts = []
    for r, y in profile:
        verts.append(np.stack([r * np.cos(ang), np.full(segments, y), r * np.sin(ang)], axis=1))
    verts = np.concatenate(verts)
    tris = []
    for i in range(len(profile) - 1):
        for j in range(segments):
            a = i * segments + j
            b = i * segments + (j + 1) % segments
            c = a + segments
            d = b + segments
            tris += [[a, b, c], [b, d, c]]
    return verts, np.array(tris)


def _disc(center_y: float, radius: float, segments: int, base: int) -> tuple[np.ndarray, np.ndarray]:
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    rim = np.stack([radius * np.cos(ang), np.full(segments, center_y), radius * np.sin(ang)], axis=1)
    verts = np.vstack([[0.0, center_y, 0.0], rim])
    tris = [[base, base + 1 + j, base + 1 + (j + 1) % segments] for j in range(segments)]
    return verts, np.array(tris)


def _torus(major: float, minor: float, seg_major: int, seg_minor: int) -> tuple[np.ndarray, np.ndarray]:
    """Torus in the model x-y plane, centred at the origin."""
    u = np.linspace(0, 2 * np.pi, seg_major, endpoint=False)
    v = np.linspace(0, 2 * np.pi, seg_minor, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (major + minor * np.cos(vv)) * np.cos(uu)
    y = (major + minor * np.cos(vv)) * np.sin(uu)
    z = minor * np.sin(vv)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(seg_major):
        for j in range(seg_minor):
            a = i * seg_minor + j
            b = ((i + 1) % seg_major) * seg_minor + j
            c = i * seg_minor + (j + 1) % seg_minor
            d = ((i + 1) % seg_major) * seg_minor + (j + 1) % seg_minor
            tris += [[a, b, c], [b, d, c]]
    return verts, np.array(tris)


def _merge(parts) -> Mesh:
    verts, tris, base = [], [], 0
    for v, t in parts:
        verts.append(v)
        tris.append(t + base)
        base += len(v)
    v = np.concatenate(verts)
    v = v - (v.max(axis=0) + v.min(axis=0)) / 2  # origin at bounding-box centre
    return Mesh(v, np.concatenate(tris))


def _box(size) -> tuple[np.ndarray, np.ndarray]:
    sx, sy, sz = np.asarray(size) / 2
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    t = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
        [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ])
    return v, t


def make_box(size=(60.0, 60.0, 30.0)) -> Mesh:
    return Mesh(*_box(size))


def make_mug(radius: float = 40.0, height: float = 90.0, handle_major: float = 22.0,
             handle_minor: float = 7.0, segments: int = 48) -> Mesh:
    """Closed cylinder body (axis along model y) with a torus handle on +x."""
    prof = np.array([[radius, -height / 2], [radius, height / 2]])
    body_v, body_t = _revolve(prof, segments)
    top_v, top_t = _disc(-height / 2, radius, segments, 0)
    bot_v, bot_t = _disc(height / 2, radius, segments, 0)
    bot_t = bot_t[:, ::-1]
    tor_v, tor_t = _torus(handle_major, handle_minor, 36, 12)
    tor_v = tor_v + [radius + 0.25 * handle_major, 0.0, 0.0]
    return _merge([(body_v, body_t), (top_v, top_t), (bot_v, bot_t), (tor_v, tor_t)])


def make_camera(body=(100.0, 70.0, 50.0), lens_radius: float = 25.0, lens_length: float = 40.0,
                segments: int = 40) -> Mesh:
    """Box body with a lens cylinder pointing along model -z."""
    bv, bt = _box(body)
    prof = np.array([[lens_radius, 0.0], [lens_radius, lens_length]])
    lv, lt = _revolve(prof, segments)
    cv, ct = _disc(lens_length, lens_radius, segments, 0)
    lens_v = np.concatenate([lv, cv])
    lens_t = np.concatenate([lt, ct + len(lv)])
    # revolve about y then turn the lens to face -z, shifted off-centre in x
    R = euler_to_matrix((-np.pi / 2, 0.0, 0.0))
    lens_v = lens_v @ R.T + [15.0, 0.0, -body[2] / 2]
    return _merge([(bv, bt), (lens_v, lens_t)])


PROCEDURAL_MESHES = {"mug": make_mug, "camera": make_camera}


def resolve_mesh(name_or_path) -> Mesh:
    """A procedural object by name ("mug", "camera") or a mesh file."""
    if str(name_or_path) in PROCEDURAL_MESHES:
        return PROCEDURAL_MESHES[str(name_or_path)]()
    return load_mesh(name_or_path)


# ----------------------------------------------------------------- raster


@numba.njit(cache=True)
def _raster(V, T, fx, fy, cx, cy, width, height, buf):
    for k in range(T.shape[0]):
        a = V[T[k, 0]]
        b = V[T[k, 1]]
        c = V[T[k, 2]]
        if a[2] <= 0.0 or b[2] <= 0.0 or c[2] <= 0.0:
            continue
        ua = fx * a[0] / a[2] + cx
        va = fy * a[1] / a[2] + cy
        ub = fx * b[0] / b[2] + cx
        vb = fy * b[1] / b[2] + cy
        uc = fx * c[0] / c[2] + cx
        vc = fy * c[1] / c[2] + cy
        area = (ub - ua) * (vc - va) - (vb - va) * (uc - ua)
        if area == 0.0:
            continue
        umin = max(int(np.ceil(min(ua, ub, uc))), 0)
        umax = min(int(np.floor(max(ua, ub, uc))), width - 1)
        vmin = max(int(np.ceil(min(va, vb, vc))), 0)
        vmax = min(int(np.floor(max(va, vb, vc))), height - 1)
        if umin > umax or vmin > vmax:
            continue
        # plane normal; depth along the pixel ray is Z = az + n.(a - az*d) / n.d
        e1x, e1y, e1z = b[0] - a[0], b[1] - a[1], b[2] - a[2]
        e2x, e2y, e2z = c[0] - a[0], c[1] - a[1], c[2] - a[2]
        nx = e1y * e2z - e1z * e2y
        ny = e1z * e2x - e1x * e2z
        nz = e1x * e2y - e1y * e2x
        for v in range(vmin, vmax + 1):
            for u in range(umin, umax + 1):
                w0 = (ub - ua) * (v - va) - (vb - va) * (u - ua)
                w1 = (uc - ub) * (v - vb) - (vc - vb) * (u - ub)
                w2 = (ua - uc) * (v - vc) - (va - vc) * (u - uc)
                if area > 0.0:
                    if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                        continue
                else:
                    if w0 > 0.0 or w1 > 0.0 or w2 > 0.0:
                        continue
                dx = (u - cx) / fx
                dy = (v - cy) / fy
                den = nx * dx + ny * dy + nz
                if den == 0.0:
                    continue
                num = nx * (a[0] - a[2] * dx) + ny * (a[1] - a[2] * dy)
                z = a[2] + num / den
                if z > 0.0 and z < buf[v, u]:
                    buf[v, u] = z


def render_depth(mesh: Mesh, pose: Pose, cam: CameraIntrinsics, size: tuple | None = None) -> DepthImage:
    """Nearest-surface depth of ``mesh`` placed at ``pose``; background 0."""
    width, height = size if size is not None else (cam.width, cam.height)
    V = np.ascontiguousarray(pose.apply(mesh.vertices))
    if np.all(V[:, 2] <= 0):
        raise EmptyRender("object is behind the camera")
    buf = np.full((height, width), np.inf)
    _raster(V, mesh.triangles, cam.fx, cam.fy, cam.cx, cam.cy, width, height, buf)
    buf[~np.isfinite(buf)] = 0.0
    if not np.any(buf):
        raise EmptyRender("object does not cover any pixel")
    return DepthImage(buf)


def make_renderer(mesh: Mesh, cam: CameraIntrinsics):
    """Renderer hook for the refinement loop: ``pose -> DepthImage``."""

    def hook(pose: Pose) -> DepthImage:
        return render_depth(mesh, pose, cam)

    return hook


# ----------------------------------------------------------- training views


@dataclass(frozen=True)
class RotationGrid:
    """Euler grid in degrees."""

    roll: tuple = (-60.0, -30.0, 0.0)
    pitch: tuple = tuple(float(a) for a in range(-150, 181, 30))
    yaw: tuple = (-30.0, 0.0, 30.0)

    def rotations(self) -> list[tuple]:
        return [tuple(np.deg2rad([r, p, y])) for r, p, y in product(self.roll, self.pitch, self.yaw)]

    def __len__(self):
        return len(self.roll) * len(self.pitch) * len(self.yaw)


def sample_training_views(mesh: Mesh, grid: RotationGrid = RotationGrid(), depth: float = 750.0,
                          cam: CameraIntrinsics = CameraIntrinsics()) -> list[tuple[DepthImage, Pose]]:
    if len(grid) == 0:
        raise ValueError("rotation grid is empty")
    views = []
    for rpy in grid.rotations():
        pose = Pose(rpy, (0.0, 0.0, depth))
        try:
            views.append((render_depth(mesh, pose, cam), pose))
        except EmptyRender as exc:
            log.warning("skipping view %s: %s", rpy, exc)
    return views


# ------------------------------------------------------------------ scenes


@dataclass(frozen=True)
class SceneSpec:
    target: Mesh
    target_pose: Pose
    occluders: tuple = ()
    background_depth: float | None = None
    noise_sigma: float = 0.0
    seed: int = 0
    max_occlusion: float = 0.6
    bbox_inflation: float = 0.2

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")


@dataclass(frozen=True, eq=False)
class Scene:
    image: DepthImage
    pose: Pose
    bbox: BoundingBox2D
    occlusion: float
    target_mask: np.ndarray = field(repr=False, default=None)


def _zunion(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.where(a > 0, a, np.inf)
    b = np.where(b > 0, b, np.inf)
    out = np.minimum(a, b)
    return np.where(np.isfinite(out), out, 0.0)


def compose_scene(spec: SceneSpec, cam: CameraIntrinsics = CameraIntrinsics()) -> Scene:
    target = render_depth(spec.target, spec.target_pose, cam).data
    depth = target.copy()
    for mesh, pose in spec.occluders:
        try:
            depth = _zunion(depth, render_depth(mesh, pose, cam).data)
        except EmptyRender:
            continue
    if spec.background_depth is not None:
        depth = _zunion(depth, np.full_like(depth, spec.background_depth))
    tmask = target > 0
    visible = tmask & (depth == target)
    occlusion = 1.0 - visible.sum() / tmask.sum()
    if occlusion > spec.max_occlusion:
        raise SceneRejected(f"target {occlusion:.0%} occluded (limit {spec.max_occlusion:.0%})")
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        noise = rng.normal(0.0, spec.noise_sigma, depth.shape)
        depth = np.where(depth > 0, np.maximum(depth + noise, 0.0), 0.0)
    v, u = np.nonzero(tmask)
    x0, x1, y0, y1 = u.min(), u.max() + 1, v.min(), v.max() + 1
    mx = spec.bbox_inflation * (x1 - x0) / 2
    my = spec.bbox_inflation * (y1 - y0) / 2
    x0 = max(int(np.floor(x0 - mx)), 0)
    y0 = max(int(np.floor(y0 - my)), 0)
    x1 = min(int(np.ceil(x1 + mx)), cam.width)
    y1 = min(int(np.ceil(y1 + my)), cam.height)
    return Scene(DepthImage(depth), spec.target_pose, BoundingBox2D(x0, y0, x1 - x0, y1 - y0), float(occlusion), visible)
