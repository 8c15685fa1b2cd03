"""Iterative Hough forest registration of 3-D objects in depth images."""

__version__ = "0.1.0"

from .cloud import BoundingBox2D, CameraIntrinsics, DepthImage, PointCloud, backproject, load_depth_png, save_depth_png
from .control_points import ControlPointSet, GridSpec, compute_control_points
from .errors import IHFError
from .evaluation import EvalParams, EvalRecord, is_correct, pose_error, pr_curve
from .forest import Forest, ForestParams, load_forest, save_forest, train_forest
from .hocp import DescriptorConfig, HistogramSpec, extract_patches, similarity
from .register import Hypothesis, RefinementState, RegisterParams, cast_votes, extract_mode, refine, remove_clutter
from .render import Mesh, Pose, load_mesh, make_camera, make_mug, render_depth, sample_training_views
from .scalespace import build_scale_space, normalize
