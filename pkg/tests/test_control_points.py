import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ihforest.cloud import PointCloud, backproject
from ihforest.control_points import (ControlPointSet, GridSpec, compute_control_points, cubic_bspline_basis,
                                     restrict_to_window)
from ihforest.errors import EmptyCloud
from ihforest.scalespace import NormalizedCloud, build_scale_space, normalize

from oracles import control_points_bruteforce


def raw_cloud(points_n):
    """NormalizedCloud with given unit-cube points, bypassing normalisation."""
    pts = np.asarray(points_n, dtype=float).reshape(-1, 3)
    src = PointCloud(pts, np.zeros((len(pts), 2)))
    return NormalizedCloud(pts, src, 1.0, 1.0, float(np.ptp(pts[:, 2])))


unit_points = arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=st.floats(0, 1))


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(N=7)
    with pytest.raises(ValueError):
        GridSpec(epsilon_w=-1)


def test_basis_partition_of_unity():
    t = np.linspace(0, 1, 101)
    np.testing.assert_allclose(cubic_bspline_basis(t).sum(axis=1), 1.0, atol=1e-15)


def test_point_on_interior_vertex_is_symmetric():
    N = 11
    cps = compute_control_points(raw_cloud([[0.5, 0.5, 0.5]]), GridSpec(N=N))
    assert len(cps) == 27
    g = cps.grid_coords
    w = dict(zip(map(tuple, g), cps.weights))
    assert max(w, key=w.get) == (5, 5, 5)
    for (i, j, k), wt in w.items():
        assert wt == pytest.approx(w[(10 - i, 10 - j, 10 - k)], abs=1e-15)
    assert w[(5, 5, 5)] == pytest.approx((4 / 6) ** 3)


@settings(deadline=None)
@given(unit_points)
def test_matches_bruteforce(pts):
    N = 12
    cps = compute_control_points(raw_cloud(pts), GridSpec(N=N, epsilon_w=0.0))
    ref = control_points_bruteforce(pts, N)
    assert list(cps.indices) == sorted(ref)
    np.testing.assert_allclose(cps.weights, [ref[i] for i in sorted(ref)], rtol=1e-12, atol=1e-15)


@given(unit_points)
def test_partition_of_unity_and_invariants(pts):
    cps = compute_control_points(raw_cloud(pts), GridSpec(N=20, epsilon_w=0.0))
    assert cps.total_weight == pytest.approx(len(pts), rel=1e-9)
    assert np.all(np.diff(cps.indices) > 0)
    np.testing.assert_allclose(cps.positions, cps.grid_coords / 19)
    kept = compute_control_points(raw_cloud(pts), GridSpec(N=20))
    assert np.all(kept.weights >= 1e-6)


def test_out_of_cube_points_clamp_to_boundary():
    cps = compute_control_points(raw_cloud([[-0.05, 1.08, 0.5]]), GridSpec(N=10, epsilon_w=0))
    assert cps.total_weight == pytest.approx(1.0)
    assert cps.positions.min() >= 0 and cps.positions.max() <= 1


def test_deterministic(mug_view, cam):
    nc = normalize(backproject(mug_view[0], cam))
    a, b = compute_control_points(nc), compute_control_points(nc)
    assert a.indices.tobytes() == b.indices.tobytes() and a.weights.tobytes() == b.weights.tobytes()


def test_count_grows_with_scale(mug_view, cam):
    counts = [len(compute_control_points(nc)) for nc in build_scale_space(backproject(mug_view[0], cam))]
    # levels go from largest h to smallest
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_empty_cloud():
    with pytest.raises(EmptyCloud):
        compute_control_points(NormalizedCloud(np.empty((0, 3)), None, 1.0, 1.0, 0.0))


def test_set_rejects_unsorted():
    with pytest.raises(ValueError):
        ControlPointSet([3, 1], [1.0, 1.0], 10)
    cps = ControlPointSet([1, 3], [0.5, 2.0], 10)
    assert [c.index for c in cps] == [1, 3]


def test_restrict_examples():
    N = 11
    cps = ControlPointSet(np.arange(0, N**3, 97), np.ones(len(range(0, N**3, 97))), N)
    same = restrict_to_window(cps, [0.5] * 3, 0.6)
    np.testing.assert_array_equal(same.indices, cps.indices)
    assert len(restrict_to_window(cps, [0.5] * 3, 0.0)) == 0
    # three points on the x axis at 0.3, 0.5, 0.7; window [0.3, 0.7)
    idx = [(i * N) * N for i in (3, 5, 7)]
    tri = ControlPointSet(idx, [1.0, 1.0, 1.0], N)
    out = restrict_to_window(tri, [0.5, 0.0, 0.0], [0.2, 0.1, 0.1])
    inside = [i for i, p in zip(idx, tri.positions) if np.all((p >= [0.3, -0.1, -0.1]) & (p < [0.7, 0.1, 0.1]))]
    assert list(out.indices) == inside == idx[:2]
    with pytest.raises(ValueError):
        restrict_to_window(tri, [0.5] * 3, -0.1)
