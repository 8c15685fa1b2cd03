"""``ihforest`` command line: synth, train, register, evaluate, inspect.

A dataset directory holds ``<id>.png`` (16-bit depth, mm) next to
``<id>.json`` with ``{"pose": {"rotation": [r, p, y], "translation": [x, y, z]},
"bbox": [x, y, w, h], "mesh": "<name or path>"}``; ``bbox`` and ``mesh`` are
optional. Training views, synthetic scenes and external benchmarks all use
this layout.

Exit status: 0 success, 1 user error (bad input, missing file, bad flag),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .benchmark import build_scene, make_recipes
from .cloud import BoundingBox2D, load_depth_png, save_depth_png
from .config import Config, load_config
from .errors import FormatError, IHFError, IoError
from .evaluation import emit_report, make_record, table_text
from .forest import FORMAT_VERSION, load_forest, save_forest, train_forest
from .register import Hypothesis, refine, save_overlay_ply
from .render import Pose, make_renderer, resolve_mesh, sample_training_views

log = logging.getLogger("ihforest")


class UserError(IHFError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ datasets

def write_item(out_dir: Path, item_id: str, image, meta: dict) -> None:
    save_depth_png(image, out_dir / f"{item_id}.png")
    (out_dir / f"{item_id}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_dataset(root: Path) -> list[tuple[str, Path, dict]]:
    if not root.is_dir():
        raise IoError(f"not a directory: {root}")
    items = []
    for js in sorted(root.glob("*.json")):
        png = js.with_suffix(".png")
        if not png.exists():
            continue
        try:
            meta = json.loads(js.read_text())
            Pose.from_dict(meta["pose"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{js}: bad annotation ({e})") from e
        items.append((js.stem, png, meta))
    if not items:
        raise UserError(f"no <id>.png + <id>.json pairs in {root}")
    return items


def parse_bbox(text) -> BoundingBox2D:
    vals = text if isinstance(text, (list, tuple)) else str(text).replace(" ", "").split(",")
    try:
        x, y, w, h = (int(v) for v in vals)
    except ValueError as e:
        raise UserError(f"bbox must be x,y,w,h integers, got {text!r}") from e
    return BoundingBox2D(x, y, w, h)


# ------------------------------------------------------------------ commands

def cmd_synth(args, cfg: Config, wd: Path) -> int:
    out = wd / args.out
    mesh = resolve_mesh(_mesh_path(args.mesh, wd))
    cam = cfg.camera
    if args.what in ("views", "both"):
        vdir = out / "views"
        vdir.mkdir(parents=True, exist_ok=True)
        views = sample_training_views(mesh, cfg.views, cfg.training_depth, cam)
        for i, (img, pose) in enumerate(views):
            write_item(vdir, f"view_{i:03d}", img, {"pose": pose.to_dict(), "mesh": args.mesh})
        print(f"wrote {len(views)} training views to {vdir}")
    if args.what in ("scenes", "both"):
        sdir = out / "scenes"
        sdir.mkdir(parents=True, exist_ok=True)
        recipes = make_recipes(cfg.scene_params(args.mesh), cfg.views, cam)
        for rec in recipes:
            sc = build_scene(rec, mesh, cam)
            write_item(sdir, rec.scene_id, sc.image, {"pose": sc.pose.to_dict(), "bbox": sc.bbox.as_list(),
                                                     "mesh": args.mesh, "occlusion": sc.occlusion,
                                                     "recipe": rec.to_dict()})
        print(f"wrote {len(recipes)} scenes to {sdir}")
    return 0


def cmd_train(args, cfg: Config, wd: Path) -> int:
    items = read_dataset(wd / args.views)
    views = [(load_depth_png(png), Pose.from_dict(meta["pose"])) for _, png, meta in items]
    forest = train_forest(views, cfg.forest, cfg.descriptor, cfg.camera, cfg.training_depth)
    out = wd / args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    save_forest(forest, out)
    print(f"trained {len(forest.trees)} trees on {len(views)} views -> {out}")
    return 0


def _mesh_path(name, wd: Path) -> str:
    p = Path(str(name))
    if str(name) in ("mug", "camera"):
        return str(name)
    return str(p if p.is_absolute() else wd / p)


def _register_one(image, bbox, forest, mesh, cfg: Config, overlay_dir: Path | None, item_id: str):
    cam = cfg.camera
    if not bbox.fits(image.width, image.height):
        raise UserError(f"bbox {bbox.as_list()} lies outside the {image.width}x{image.height} image")
    params = cfg.register
    renderer = make_renderer(mesh, cam)
    state = refine(image, bbox, forest, renderer, params.k_max, params, cam)
    if overlay_dir is not None:
        overlay_dir.mkdir(parents=True, exist_ok=True)
        for k, hyp in enumerate(state.hypothesis_history):
            save_overlay_ply(overlay_dir / f"{item_id}_k{k}.ply", image, renderer(hyp.pose), cam)
    return state


def cmd_register(args, cfg: Config, wd: Path) -> int:
    forest = load_forest(wd / args.forest)
    overlay = wd / args.overlay_dir if args.overlay_dir else None
    if args.dataset:
        out_dir = wd / args.out
        out_dir.mkdir(parents=True, exist_ok=True)
        for item_id, png, meta in read_dataset(wd / args.dataset):
            if "bbox" not in meta:
                raise FormatError(f"{item_id}: annotation has no bbox")
            mesh = resolve_mesh(_mesh_path(args.mesh or meta.get("mesh", "mug"), wd))
            state = _register_one(load_depth_png(png), parse_bbox(meta["bbox"]), forest, mesh, cfg, overlay, item_id)
            (out_dir / f"{item_id}.json").write_text(json.dumps(state.to_record(item_id), indent=2, sort_keys=True) + "\n")
            print(f"{item_id}: k={state.k} confidence={state.hypothesis.confidence:.4f}")
        return 0
    if not (args.image and args.bbox):
        raise UserError("register needs --image and --bbox, or --dataset")
    image = load_depth_png(wd / args.image)
    item_id = Path(args.image).stem
    mesh = resolve_mesh(_mesh_path(args.mesh or "mug", wd))
    state = _register_one(image, parse_bbox(args.bbox), forest, mesh, cfg, overlay, item_id)
    text = json.dumps(state.to_record(item_id), indent=2, sort_keys=True) + "\n"
    if args.out:
        out = wd / args.out
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args, cfg: Config, wd: Path) -> int:
    gt = {i: meta for i, _, meta in read_dataset(wd / args.gt)}
    rdir = wd / args.results
    if not rdir.is_dir():
        raise IoError(f"not a directory: {rdir}")
    results = {p.stem: p for p in sorted(rdir.glob("*.json"))}
    if set(results) != set(gt):
        missing = sorted(set(gt) - set(results))[:5]
        extra = sorted(set(results) - set(gt))[:5]
        raise UserError(f"scene ids differ between results and ground truth (missing {missing}, unexpected {extra})")
    k_max = cfg.register.k_max
    records = []
    meshes = {}
    for sid in sorted(gt):
        meta = gt[sid]
        name = args.mesh or meta.get("mesh", "mug")
        mesh = meshes.setdefault(name, resolve_mesh(_mesh_path(name, wd)))
        try:
            its = json.loads(results[sid].read_text())["iterations"]
            hyps = [Hypothesis(tuple(it["center_mm"]), tuple(it["theta_rad"]), float(it["confidence"])) for it in its]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise FormatError(f"{results[sid]}: bad registration record ({e})") from e
        if not hyps:
            raise FormatError(f"{results[sid]}: no iterations")
        gt_pose = Pose.from_dict(meta["pose"])
        for k in range(k_max + 1):
            h = hyps[min(k, len(hyps) - 1)]
            records.append(make_record(sid, gt_pose, h.pose, h.confidence, k, mesh, cfg.eval))
    summary = emit_report(records, wd / args.out, cfg.eval)
    print(table_text(summary))
    return 0


def inspect_summary(path: Path) -> dict:
    forest = load_forest(path)
    return {
        "format_version": FORMAT_VERSION,
        "n_trees": len(forest.trees),
        "trees": [{"nodes": t.n_nodes, "leaves": t.n_leaves, "depth": t.depth, "templates": len(t.templates),
                   "votes": len(t.votes)} for t in forest.trees],
        "params": forest.params.to_dict(),
        "descriptor": forest.descriptor.to_dict(),
        "training_depth_mm": forest.training_depth_mm,
    }


def cmd_inspect(args, cfg: Config, wd: Path) -> int:
    s = inspect_summary(wd / args.forest)
    if args.json:
        sys.stdout.write(json.dumps(s, indent=2, sort_keys=True) + "\n")
        return 0
    print(f"forest format v{s['format_version']}, {s['n_trees']} trees, trained at {s['training_depth_mm']:g} mm")
    for i, t in enumerate(s["trees"]):
        print(f"  tree {i}: {t['nodes']} nodes, {t['leaves']} leaves, depth {t['depth']}, {t['votes']} votes")
    d = s["descriptor"]
    print(f"  descriptor: N={d['N']} d={d['h_r'] * d['h_theta'] * d['h_phi']} "
          f"({d['h_r']}x{d['h_theta']}x{d['h_phi']}) g={d['g']:g} schedule={d['schedule']}")
    print("  params: " + ", ".join(f"{k}={v}" for k, v in s["params"].items()))
    return 0


# ------------------------------------------------------------------ parser

def _common_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommands repeat the global flags; SUPPRESS keeps them from resetting values given earlier
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--workdir", default=d("."), help="base directory for every relative path")
    parser.add_argument("--config", default=d(None), help="JSON config file (defaults apply to missing keys)")
    parser.add_argument("--set", action="append", default=d([]), metavar="KEY=VALUE",
                        help="override a config value, e.g. --set forest.n_trees=1 (repeatable; wins over --config)")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _common_options(common, suppress=True)

    p = _Parser(prog="ihforest", description="Iterative Hough forest 6-DoF registration on depth images.")
    _common_options(p, suppress=False)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="render training views and cluttered test scenes")
    s.add_argument("--mesh", default="mug", help="'mug', 'camera' or an OBJ/PLY path")
    s.add_argument("--out", default="data")
    s.add_argument("--what", choices=("views", "scenes", "both"), default="both")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a forest on a directory of foreground views")
    s.add_argument("--views", required=True)
    s.add_argument("--out", default="forest.ihf")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("register", parents=[common], help="register one depth image or a whole dataset")
    s.add_argument("--forest", required=True)
    s.add_argument("--image", help="16-bit depth PNG")
    s.add_argument("--bbox", help="x,y,w,h")
    s.add_argument("--dataset", help="dataset directory; registers every item, --out is then a directory")
    s.add_argument("--mesh", help="model for hypothesis rendering (default: annotation 'mesh' or 'mug')")
    s.add_argument("--out", help="record JSON (single image; stdout if omitted) or output directory (--dataset)")
    s.add_argument("--overlay-dir", help="write a per-iteration overlay PLY here")
    s.set_defaults(func=cmd_register)

    s = sub.add_parser("evaluate", parents=[common], help="score registration records against ground truth")
    s.add_argument("--results", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mesh", help="model for the pose error (default: annotation 'mesh' or 'mug')")
    s.add_argument("--out", default="report")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("inspect", parents=[common], help="summarise a forest file")
    s.add_argument("forest")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    wd = Path(args.workdir)
    try:
        if args.command == "register" and args.dataset and not args.out:
            raise UserError("--dataset needs --out (a directory)")
        cfg = load_config(wd / args.config if args.config else None, args.set)
        return args.func(args, cfg, wd)
    except (IHFError, ValueError, OSError) as e:
        print(f"ihforest {args.command}: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"ihforest {args.command}: internal error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
