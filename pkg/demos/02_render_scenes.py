"""
Training views and cluttered scenes
===================================

Training data are clean renders at 750 mm. Test scenes add an occluder in
front, clutter boxes and a wall behind, and depth noise. Both are written
as 16-bit PNG depth maps.
"""

import sys
from pathlib import Path

from ihforest.benchmark import BENCHMARK_GRID, BenchmarkParams, build_scene, make_recipes
from ihforest.cloud import CameraIntrinsics, save_depth_png
from ihforest.render import make_mug, sample_training_views

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)
cam = CameraIntrinsics()
mug = make_mug()

views = sample_training_views(mug, BENCHMARK_GRID, 750.0, cam)
for i, (img, pose) in enumerate(views[:3]):
    save_depth_png(img, out / f"view_{i}.png")
    print(f"view {i}: rpy={[round(a, 3) for a in pose.rotation]} depth {img.data[img.data > 0].min():.0f}..{img.data.max():.0f} mm")

# scenes are drawn from a seed, so the same recipe always builds the same image
for rec in make_recipes(BenchmarkParams(n_scenes=3, seed=1), cam=cam):
    sc = build_scene(rec, mug, cam)
    save_depth_png(sc.image, out / f"{rec.scene_id}.png")
    print(f"{rec.scene_id}: occlusion {sc.occlusion:.0%}, bbox {sc.bbox.as_list()}, target at {rec.translation[2]:.0f} mm")

print("wrote PNGs to", out)
