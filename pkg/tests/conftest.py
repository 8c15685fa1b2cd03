import numpy as np
import pytest

from ihforest.cloud import CameraIntrinsics
from ihforest.control_points import GridSpec
from ihforest.forest import ForestParams, train_forest
from ihforest.hocp import DescriptorConfig
from ihforest.render import Pose, make_mug, render_depth

# the canonical single view used for self-registration checks
CANON_RPY = tuple(np.deg2rad([-30.0, 30.0, 0.0]))


@pytest.fixture(scope="session")
def cam():
    return CameraIntrinsics()


@pytest.fixture(scope="session")
def mug():
    return make_mug()


@pytest.fixture(scope="session")
def mug_view(mug, cam):
    pose = Pose(CANON_RPY, (0.0, 0.0, 750.0))
    return render_depth(mug, pose, cam), pose


@pytest.fixture(scope="session")
def single_view_forest(mug_view, cam):
    """One tree memorising the canonical view."""
    params = ForestParams(n_trees=1, subsample_fraction=1.0, rng_seed=0)
    return train_forest([mug_view], params, DescriptorConfig(), cam)


@pytest.fixture(scope="session")
def tiny_forest(mug_view, cam):
    """Small, fast forest for format and CLI tests."""
    params = ForestParams(n_trees=2, max_depth=6, n_candidate_splits=10, rng_seed=3)
    desc = DescriptorConfig(grid=GridSpec(N=40), schedule=(1.0, 1.3))
    return train_forest([mug_view], params, desc, cam)
