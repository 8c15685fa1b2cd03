"""One JSON config for the whole pipeline, with ``section.key=value`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .benchmark import BenchmarkParams
from .cloud import CameraIntrinsics
from .errors import FormatError, IoError
from .evaluation import EvalParams
from .forest import ForestParams
from .hocp import DescriptorConfig
from .register import ClutterFilterParams, RegisterParams
from .render import RotationGrid


def _defaults() -> dict:
    cam = CameraIntrinsics()
    fp = ForestParams()
    rp = RegisterParams()
    grid = RotationGrid()
    bp = BenchmarkParams()
    return {
        "camera": {k: getattr(cam, k) for k in ("fx", "fy", "cx", "cy", "width", "height")},
        "descriptor": DescriptorConfig().to_dict(),
        "forest": {k: getattr(fp, k) for k in
                   ("n_trees", "max_depth", "max_leaf_samples", "n_candidate_splits", "subsample_fraction")},
        "register": {"stride": rp.stride, "bin_size": rp.bin_size, "k_max": rp.k_max,
                     "psi1": rp.clutter.psi1, "psi2": rp.clutter.psi2},
        "eval": {"z_omega": 0.08, "mode": "ADD"},
        "views": {"depth": 750.0, "roll": list(grid.roll), "pitch": list(grid.pitch), "yaw": list(grid.yaw)},
        "scenes": {k: (list(v) if isinstance(v, tuple) else v) for k, v in bp.__dict__.items() if k not in ("mesh", "seed")},
        "seed": 0,
    }


DEFAULTS = _defaults()


@dataclass(frozen=True, eq=False)
class Config:
    values: dict

    def __post_init__(self):
        # build every typed view once so a bad value fails at load time
        try:
            self.camera, self.descriptor, self.forest, self.register, self.eval, self.views, self.scenes
        except (TypeError, ValueError, KeyError) as e:
            raise FormatError(f"invalid config: {e}") from e

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(**self.values["camera"])

    @property
    def descriptor(self) -> DescriptorConfig:
        return DescriptorConfig.from_dict(self.values["descriptor"])

    @property
    def forest(self) -> ForestParams:
        return ForestParams(**self.values["forest"], rng_seed=self.seed)

    @property
    def register(self) -> RegisterParams:
        r = self.values["register"]
        return RegisterParams(int(r["stride"]), float(r["bin_size"]), int(r["k_max"]),
                              ClutterFilterParams(float(r["psi1"]), float(r["psi2"])))

    @property
    def eval(self) -> EvalParams:
        return EvalParams(float(self.values["eval"]["z_omega"]), self.values["eval"]["mode"])

    @property
    def views(self) -> RotationGrid:
        v = self.values["views"]
        return RotationGrid(tuple(map(float, v["roll"])), tuple(map(float, v["pitch"])), tuple(map(float, v["yaw"])))

    @property
    def training_depth(self) -> float:
        return float(self.values["views"]["depth"])

    def scene_params(self, mesh: str) -> BenchmarkParams:
        s = {k: (tuple(v) if isinstance(v, list) else v) for k, v in self.values["scenes"].items()}
        s["seed"] = self.seed
        return BenchmarkParams(mesh=mesh, **s)

    @property
    def scenes(self) -> BenchmarkParams:
        return self.scene_params("mug")

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True) + "\n"

    def with_overrides(self, items) -> "Config":
        vals = copy.deepcopy(self.values)
        for item in items or ():
            key, sep, raw = item.partition("=")
            if not sep:
                raise FormatError(f"override {item!r} is not key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            _assign(vals, key.strip(), value)
        return Config(vals)


def _assign(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node, ref = tree, DEFAULTS
    for p in parts[:-1]:
        if p not in ref or not isinstance(ref[p], dict):
            raise FormatError(f"unknown config section {p!r} in {dotted!r}")
        node, ref = node[p], ref[p]
    if parts[-1] not in ref:
        raise FormatError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if k not in base:
            raise FormatError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise FormatError(f"config key {path + k!r} must be an object")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def default_config() -> Config:
    return Config(copy.deepcopy(DEFAULTS))


def load_config(path=None, overrides=()) -> Config:
    """Defaults, then the file (if any), then overrides."""
    cfg = default_config()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as e:
            raise IoError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise FormatError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise FormatError("config must be a JSON object")
        cfg = Config(_merge(cfg.values, data))
    return cfg.with_overrides(overrides)
