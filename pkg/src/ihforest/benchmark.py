"""Seeded synthetic test scenes and the train / register / evaluate protocol run on them.

Each scene puts the target at 750 +- 35 mm under one of the training
rotations, a box occluder 140-170 mm in front of it covering 20-40 % of its
silhouette, two clutter boxes 150-180 mm behind it and a background plane
170-200 mm behind it, then adds Gaussian depth noise. The gaps put the
clutter just outside the depth band that a correct hypothesis keeps.
Scenes are described by small JSON recipes, so a scene set can be
regenerated exactly from its seed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .cloud import CameraIntrinsics
from .errors import SceneRejected
from .evaluation import EvalParams, EvalRecord, make_record
from .forest import Forest, ForestParams, train_forest
from .hocp import DescriptorConfig
from .register import RegisterParams, refine
from .render import (Mesh, Pose, RotationGrid, Scene, SceneSpec, compose_scene, make_box, make_renderer,
                     resolve_mesh, sample_training_views)

log = logging.getLogger(__name__)

BENCHMARK_GRID = RotationGrid(roll=(-30.0,), pitch=tuple(float(a) for a in range(-150, 181, 30)), yaw=(0.0,))


@dataclass(frozen=True)
class BenchmarkParams:
    mesh: str = "mug"
    n_scenes: int = 20
    seed: int = 0
    depth: float = 750.0
    depth_jitter: float = 35.0
    xy_jitter: float = 40.0
    occluder_size: tuple = (60.0, 60.0, 30.0)
    occluder_gap: tuple = (140.0, 170.0)
    occlusion_range: tuple = (0.2, 0.4)
    clutter_size: tuple = (50.0, 70.0, 40.0)
    n_clutter: int = 2
    clutter_gap: tuple = (150.0, 180.0)
    background_gap: tuple = (170.0, 200.0)
    noise_sigma: float = 1.0
    max_attempts: int = 200


@dataclass(frozen=True)
class SceneRecipe:
    """Everything :func:`build_scene` needs; JSON round-trips exactly."""

    scene_id: str
    mesh: str
    rotation: tuple
    translation: tuple
    occluders: tuple  # ((sx, sy, sz), rotation, translation) per box
    background_depth: float | None
    noise_sigma: float
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRecipe":
        occ = tuple((tuple(s), tuple(r), tuple(t)) for s, r, t in d["occluders"])
        return cls(d["scene_id"], d["mesh"], tuple(d["rotation"]), tuple(d["translation"]), occ,
                   d["background_depth"], float(d["noise_sigma"]), int(d["seed"]))

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.translation)

    def spec(self, mesh: Mesh | None = None) -> SceneSpec:
        mesh = resolve_mesh(self.mesh) if mesh is None else mesh
        occ = tuple((make_box(s), Pose(r, t)) for s, r, t in self.occluders)
        return SceneSpec(mesh, self.pose, occ, self.background_depth, self.noise_sigma, self.seed, max_occlusion=1.0)


def build_scene(recipe: SceneRecipe, mesh: Mesh | None = None, cam: CameraIntrinsics = CameraIntrinsics()) -> Scene:
    return compose_scene(recipe.spec(mesh), cam)


def _draw(rng: np.random.Generator, p: BenchmarkParams, rotations: list, scene_id: str, seed: int) -> SceneRecipe:
    rot = rotations[rng.integers(len(rotations))]
    tz = p.depth + rng.uniform(-p.depth_jitter, p.depth_jitter)
    t = (rng.uniform(-p.xy_jitter, p.xy_jitter), rng.uniform(-p.xy_jitter, p.xy_jitter), tz)
    occ = []
    # occluder: on roughly the same line of sight, pushed sideways
    oz = tz - rng.uniform(*p.occluder_gap)
    ang = rng.uniform(0, 2 * np.pi)
    off = rng.uniform(15.0, 60.0)
    occ.append((p.occluder_size, (0.0, 0.0, rng.uniform(-0.5, 0.5)),
                (t[0] * oz / tz + off * np.cos(ang), t[1] * oz / tz + off * np.sin(ang), oz)))
    for _ in range(p.n_clutter):
        cz = tz + rng.uniform(*p.clutter_gap)
        a = rng.uniform(0, 2 * np.pi)
        r = rng.uniform(50.0, 90.0)
        occ.append((p.clutter_size, tuple(rng.uniform(-0.6, 0.6, 3)),
                    (t[0] * cz / tz + r * np.cos(a), t[1] * cz / tz + r * np.sin(a), cz)))
    bg = tz + rng.uniform(*p.background_gap)
    to_f = lambda xs: tuple(float(x) for x in xs)
    return SceneRecipe(scene_id, p.mesh, to_f(rot), to_f(t), tuple((to_f(s), to_f(r), to_f(tt)) for s, r, tt in occ),
                       float(bg), p.noise_sigma, seed)


def make_recipes(params: BenchmarkParams = BenchmarkParams(), grid: RotationGrid = BENCHMARK_GRID,
                 cam: CameraIntrinsics = CameraIntrinsics()) -> list[SceneRecipe]:
    """Draw scenes until each one's occlusion falls inside ``occlusion_range``."""
    mesh = resolve_mesh(params.mesh)
    rotations = grid.rotations()
    rng = np.random.default_rng(params.seed)
    out = []
    for i in range(params.n_scenes):
        for attempt in range(params.max_attempts):
            rec = _draw(rng, params, rotations, f"scene_{i:03d}", params.seed * 100_003 + i * 1009 + attempt)
            try:
                occl = build_scene(rec, mesh, cam).occlusion
            except SceneRejected:
                continue
            if params.occlusion_range[0] <= occl <= params.occlusion_range[1]:
                out.append(rec)
                break
        else:
            raise SceneRejected(f"no acceptable layout for scene {i} after {params.max_attempts} attempts")
    return out


@dataclass
class BenchmarkResult:
    records: list = field(default_factory=list)
    states: list = field(default_factory=list)
    seconds: float = 0.0

    def at(self, k: int) -> list[EvalRecord]:
        return [r for r in self.records if r.k == k]

    def mean_omega(self, k: int) -> float:
        return float(np.mean([r.omega for r in self.at(k)]))

    def success_rate(self, k: int) -> float:
        return float(np.mean([r.correct for r in self.at(k)]))


def train_benchmark_forest(mesh_name: str = "mug", grid: RotationGrid = BENCHMARK_GRID,
                           params: ForestParams = ForestParams(), descriptor: DescriptorConfig = DescriptorConfig(),
                           cam: CameraIntrinsics = CameraIntrinsics(), depth: float = 750.0) -> Forest:
    views = sample_training_views(resolve_mesh(mesh_name), grid, depth, cam)
    return train_forest(views, params, descriptor, cam, depth)


def run_benchmark(forest: Forest, recipes: Sequence[SceneRecipe], params: RegisterParams = RegisterParams(),
                  eval_params: EvalParams = EvalParams(), cam: CameraIntrinsics = CameraIntrinsics()) -> BenchmarkResult:
    """Register every scene and score the hypothesis of every iteration 0..k_max.

    A truncated run keeps its last hypothesis for the iterations it never reached.
    """
    t0 = time.perf_counter()
    res = BenchmarkResult()
    meshes = {}
    for rec in recipes:
        mesh = meshes.setdefault(rec.mesh, resolve_mesh(rec.mesh))
        scene = build_scene(rec, mesh, cam)
        state = refine(scene.image, scene.bbox, forest, make_renderer(mesh, cam), params.k_max, params, cam)
        res.states.append(state)
        for k in range(params.k_max + 1):
            hyp = state.hypothesis_history[min(k, state.k)]
            res.records.append(make_record(rec.scene_id, scene.pose, hyp.pose, hyp.confidence, k, mesh, eval_params))
        log.info("%s: omega %.1f -> %.1f mm", rec.scene_id, res.records[-params.k_max - 1].omega, res.records[-1].omega)
    res.seconds = time.perf_counter() - t0
    return res


def save_recipes(recipes: Sequence[SceneRecipe], path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in recipes], fh, indent=1, sort_keys=True)


def load_recipes(path) -> list[SceneRecipe]:
    with open(path) as fh:
        return [SceneRecipe.from_dict(d) for d in json.load(fh)]
