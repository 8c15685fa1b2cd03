"""
Scoring a batch: success rate, PR curve and F1
==============================================

Register a handful of scenes, score every iteration with the average
model-point distance, and write the report files.
"""

import sys
from pathlib import Path

from ihforest.benchmark import BENCHMARK_GRID, BenchmarkParams, make_recipes, run_benchmark, train_benchmark_forest
from ihforest.cloud import CameraIntrinsics
from ihforest.evaluation import emit_report, table_text
from ihforest.forest import ForestParams
from ihforest.hocp import DescriptorConfig
from ihforest.register import RegisterParams

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_report")
cam = CameraIntrinsics()

# a light forest, so scores sit well below the default 3-tree, depth-25 benchmark
forest = train_benchmark_forest("mug", BENCHMARK_GRID, ForestParams(n_trees=2, max_depth=15, n_candidate_splits=30),
                                DescriptorConfig(schedule=(1.0, 1.3, 1.6)), cam)
recipes = make_recipes(BenchmarkParams(n_scenes=5, seed=0), cam=cam)
res = run_benchmark(forest, recipes, RegisterParams(k_max=3), cam=cam)

for k in range(4):
    print(f"k={k}: success {res.success_rate(k):.2f}, mean omega {res.mean_omega(k):.1f} mm")

summary = emit_report(res.records, out)
print(table_text(summary))
print("records.csv, pr.csv and summary.json in", out)
