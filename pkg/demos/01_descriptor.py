"""
From a depth image to HoCP features
===================================

Render the procedural mug, lift it to a point cloud, normalise it at every
scale level and describe patches by their control-point histograms.
"""

import numpy as np

from ihforest import Pose, backproject, build_scale_space, compute_control_points, extract_patches, make_mug, render_depth
from ihforest.cloud import CameraIntrinsics

cam = CameraIntrinsics()
mug = make_mug()
pose = Pose(tuple(np.deg2rad([-30, 30, 0])), (0, 0, 750))
img = render_depth(mug, pose, cam)
print(f"{img.nonzero_count()} foreground pixels, mug diameter {mug.diameter:.1f} mm")

cloud = backproject(img, cam)
print("cloud mean (mm):", ", ".join(f"{v:.1f}" for v in cloud.mean))

# one normalised cloud per scale level; h shrinks as 1/s
for nc in build_scale_space(cloud):
    cps = compute_control_points(nc)
    print(f"s={nc.s:.2f}  h={nc.h:.4f}  control points={len(cps)}  weight={cps.total_weight:.1f}")

# patches of half the cube, every 8th pixel, at the finest level
nc = build_scale_space(cloud).levels[0]
patches = extract_patches(nc, compute_control_points(nc), g=0.5, stride=8)
p = patches[len(patches) // 2]
print(f"{len(patches)} patches; middle one has {len(p.cps)} control points in {np.count_nonzero(p.f)} of {p.f.size} bins")

# histogram as (radius, elevation, azimuth)
print(p.f.reshape(4, 8, 8).sum(axis=(1, 2)), "control points per radial shell, inner to outer")
