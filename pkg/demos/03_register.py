"""
Iterative registration on a cluttered scene
===========================================

Train a small forest on the 12 benchmark views, then register one occluded
scene. Each iteration renders the current hypothesis, removes pixels
outside its depth band, renormalises and votes again.
"""

from ihforest.benchmark import BENCHMARK_GRID, BenchmarkParams, build_scene, make_recipes
from ihforest.cloud import CameraIntrinsics
from ihforest.evaluation import pose_error
from ihforest.forest import ForestParams, train_forest
from ihforest.hocp import DescriptorConfig
from ihforest.register import refine
from ihforest.render import make_mug, make_renderer, sample_training_views

cam = CameraIntrinsics()
mug = make_mug()

# a lighter forest than the default so the demo runs in about a minute
views = sample_training_views(mug, BENCHMARK_GRID, 750.0, cam)
forest = train_forest(views, ForestParams(n_trees=2, max_depth=15, n_candidate_splits=30),
                      DescriptorConfig(schedule=(1.0, 1.3, 1.6)), cam)
print(f"trained {len(forest.trees)} trees, {sum(t.n_leaves for t in forest.trees)} leaves")

rec = make_recipes(BenchmarkParams(n_scenes=1, seed=3), cam=cam)[0]
scene = build_scene(rec, mug, cam)
state = refine(scene.image, scene.bbox, forest, make_renderer(mug, cam), k_max=5)

limit = 0.08 * mug.diameter
for k, (hyp, it) in enumerate(zip(state.hypothesis_history, state.to_record()["iterations"])):
    w = pose_error(scene.pose, hyp.pose, mug)
    print(f"k={k}  omega={w:6.1f} mm {'ok ' if w <= limit else 'bad'}  confidence={hyp.confidence:.3f}  "
          f"h={it['h']:.3f}  pixels={it['kept_pixels']}")
