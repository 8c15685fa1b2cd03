import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ihforest.cloud import backproject
from ihforest.control_points import ControlPointSet, compute_control_points
from ihforest.errors import DegeneratePatch
from ihforest.hocp import (DescriptorConfig, HistogramSpec, Patch, PatchBank, _spherical_bins, compute_histogram,
                           depth_check, extract_patches, lattice_indices, similarity)
from ihforest.scalespace import normalize

from oracles import spherical_histogram_bruteforce

SPEC = HistogramSpec()
N = 101  # vertex i sits at i / 100, so offsets are exact hundredths


def cps_at(offsets, center=(0.5, 0.5, 0.5)):
    """Control points at center + offsets (multiples of 0.01)."""
    g = np.rint((np.asarray(center) + np.asarray(offsets, float).reshape(-1, 3)) * (N - 1)).astype(int)
    idx = np.unique((g[:, 0] * N + g[:, 1]) * N + g[:, 2])
    return ControlPointSet(idx, np.ones(len(idx)), N)


def patch_of(cps, center=(0.5, 0.5, 0.5), spec=SPEC):
    c = np.asarray(center, float)
    off = cps.positions - c
    r_max = float(np.sqrt((off**2).sum(axis=1)).max())
    f = compute_histogram(c, cps, r_max, spec) if len(cps) else np.zeros(spec.d, int)
    return Patch((0, 0), c, c * 1000, 0.5, cps, r_max, f, 750.0, 1.0)


def test_spec_validation_and_dims():
    assert SPEC.d == 256 and SPEC.r_min_fraction == 1 / 16
    assert HistogramSpec.for_dimension(128).d == 128
    assert HistogramSpec.for_dimension(512).d == 512
    with pytest.raises(ValueError):
        HistogramSpec(h_r=1)
    with pytest.raises(ValueError):
        HistogramSpec(r_min_fraction=1.0)
    with pytest.raises(ValueError):
        HistogramSpec.for_dimension(100)


def test_single_point_on_axis():
    cps = cps_at([[0, 0, 0.2]])
    f = compute_histogram([0.5] * 3, cps, 0.2, SPEC)
    (b,) = np.flatnonzero(f)
    rb, rest = divmod(b, SPEC.n_ang)
    tb, pb = divmod(rest, SPEC.h_phi)
    assert (rb, tb, pb) == (SPEC.h_r - 1, SPEC.h_theta - 1, SPEC.h_phi // 2)


def test_degenerate_patch():
    with pytest.raises(DegeneratePatch):
        compute_histogram([0.5] * 3, cps_at([[0, 0, 0]]), 0.0)
    with pytest.raises(DegeneratePatch):
        compute_histogram([0.5] * 3, ControlPointSet([], [], N), 1.0)


offset_lists = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=st.floats(-0.3, 0.3))


@given(offset_lists)
def test_histogram_matches_bruteforce(offs):
    r = np.sqrt((offs**2).sum(axis=1))
    if r.max() == 0:
        return
    f = np.bincount(_spherical_bins(offs, float(r.max()), SPEC), minlength=SPEC.d)
    ref = spherical_histogram_bruteforce([tuple(o) for o in offs], 4, 8, 8, 1 / 16)
    np.testing.assert_array_equal(f, ref)


@given(offset_lists, st.integers(2, 8), st.integers(2, 8), st.integers(2, 8))
def test_every_point_lands_in_one_bin(offs, hr, ht, hp):
    spec = HistogramSpec(hr, ht, hp)
    r = np.sqrt((offs**2).sum(axis=1))
    b = _spherical_bins(offs, float(r.max()), spec)
    assert b.shape == (len(offs),)
    assert b.min() >= 0 and b.max() < spec.d


@given(st.lists(st.tuples(st.integers(0, 7), st.floats(0.1, 0.9), st.floats(0.02, 0.3), st.floats(-0.9, 0.9)),
                min_size=1, max_size=30))
def test_azimuth_rotation_permutes_bins(pts):
    """Rotating about z by one azimuth bin shifts every point one bin, nothing else."""
    step = 2 * math.pi / SPEC.h_phi
    offs, rot = [], []
    for j, frac, r, c in pts:
        # keep the azimuth inside bin j, away from its edges
        phi = -math.pi + (j + 0.1 + 0.8 * frac) * step
        s = math.sqrt(1 - c * c)
        offs.append((r * s * math.cos(phi), r * s * math.sin(phi), r * c))
        rot.append((r * s * math.cos(phi + step), r * s * math.sin(phi + step), r * c))
    offs, rot = np.array(offs), np.array(rot)
    r_max = float(np.sqrt((offs**2).sum(axis=1)).max())
    b0 = _spherical_bins(offs, r_max, SPEC)
    b1 = _spherical_bins(rot, r_max, SPEC)
    np.testing.assert_array_equal(b0 // SPEC.h_phi, b1 // SPEC.h_phi)
    np.testing.assert_array_equal((b0 % SPEC.h_phi + 1) % SPEC.h_phi, b1 % SPEC.h_phi)
    f0 = np.bincount(b0, minlength=SPEC.d).reshape(-1, SPEC.h_phi)
    f1 = np.bincount(b1, minlength=SPEC.d).reshape(-1, SPEC.h_phi)
    np.testing.assert_array_equal(np.roll(f0, 1, axis=1), f1)


def test_depth_check_examples():
    base = [[0.05, 0, 0.02], [-0.03, 0.04, -0.02], [0, -0.06, 0.01], [0.02, 0.02, 0.0]]
    t = patch_of(cps_at(base))
    assert len(depth_check(t, t, 0.05)) == len(t.cps)
    corrupted = patch_of(cps_at(base + [[0.01, 0.01, -0.15]]))
    omega = depth_check(corrupted, t, 0.05)
    assert len(omega) == len(t.cps)
    np.testing.assert_array_equal(omega.indices, t.cps.indices)
    assert len(depth_check(corrupted, t, np.inf)) == len(corrupted.cps)


def test_similarity_examples():
    t = patch_of(cps_at([[0.05, 0, 0.02], [-0.03, 0.04, -0.02], [0.02, 0.02, 0.0]]))
    assert similarity(t, t) == 0.0
    other = patch_of(cps_at([[0.06, 0.01, 0.0], [0.0, 0.05, 0.01]]))
    assert similarity(other, t) >= 0
    # once omega is fixed the score is a plain norm: 3-4-5
    a, b = np.zeros(SPEC.d), np.zeros(SPEC.d)
    a[3], b[7] = 3, 4
    assert float(np.linalg.norm(a - b)) == 5.0
    far = patch_of(cps_at([[0.0, 0.0, 0.3]]))
    assert similarity(far, t, SPEC, 0.01) == pytest.approx(float(np.linalg.norm(t.f)))


@settings(deadline=None, max_examples=50)
@given(st.lists(st.tuples(st.integers(-8, 8), st.integers(-8, 8), st.integers(-4, 4)), min_size=3, max_size=20,
                unique=True),
       st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.sampled_from([-15, -14, 14, 15])), min_size=1,
                max_size=5, unique=True),
       st.lists(st.tuples(st.integers(-8, 8), st.integers(-8, 8), st.integers(-4, 4)), min_size=1, max_size=20,
                unique=True))
def test_occlusion_robustness(clean, injected, probe):
    """Out-of-band descriptors added to a candidate do not change its similarity to a template."""
    to_off = lambda xs: np.array(xs, float) / 100
    if all(p == (0, 0, 0) for p in probe) or all(p == (0, 0, 0) for p in clean):
        return
    template = patch_of(cps_at(to_off(probe)))
    clean_p = patch_of(cps_at(to_off(clean)))
    dz = 0.05
    lo = template.offsets[:, 2].min() - dz
    hi = template.offsets[:, 2].max() + dz
    inj = to_off(injected)
    inj = inj[(inj[:, 2] < lo) | (inj[:, 2] > hi)]
    if len(inj) == 0:
        return
    corrupted = patch_of(cps_at(np.vstack([to_off(clean), inj])))
    # the clean set's own out-of-band points go either way, so compare the depth-checked sets
    assert similarity(corrupted, template, SPEC, dz) == similarity(clean_p, template, SPEC, dz)


@pytest.fixture(scope="module")
def mug_level(mug_view, cam):
    nc = normalize(backproject(mug_view[0], cam))
    return nc, compute_control_points(nc)


def test_patch_count_matches_pixel_scan(mug_level, mug_view):
    nc, cps = mug_level
    img = mug_view[0].data
    stride = 3
    patches = extract_patches(nc, cps, 0.5, stride)
    v, u = np.nonzero(img)
    u0, v0 = u.min(), v.min()
    expected = sum(1 for uu, vv in zip(u, v) if (uu - u0) % stride == 0 and (vv - v0) % stride == 0)
    assert len(patches) == expected
    for p in patches:
        assert img[p.center_px[1], p.center_px[0]] > 0
        assert p.f.sum() == len(p.cps)
        assert p.r_max > 0


def test_huge_stride_gives_few_patches(mug_level):
    nc, cps = mug_level
    patches = extract_patches(nc, cps, 0.5, 10_000)
    assert len(patches) <= 4
    for p in patches:
        assert tuple(p.center_px) in set(map(tuple, nc.source.pixel_refs))


def test_g_one_covers_cube(mug_level):
    nc, cps = mug_level
    for p in extract_patches(nc, cps, 1.0, 40):
        assert set(p.cps.indices) <= set(cps.indices)
        assert p.f.sum() == len(p.cps)


def test_bank_matches_patches(mug_level):
    nc, cps = mug_level
    patches = extract_patches(nc, cps, 0.5, 7)
    bank = PatchBank.from_cloud(nc, cps, 0.5, 7)
    assert len(bank) == len(patches)
    np.testing.assert_array_equal(bank.F, np.array([p.f for p in patches]))
    np.testing.assert_array_equal(bank.counts, [len(p.cps) for p in patches])
    idx = np.arange(len(bank))
    for t in (0, len(bank) // 3, len(bank) - 1):
        for dz in (0.0, 0.05):
            fast = bank.similarity_to(idx, t, dz)
            slow = [similarity(p, patches[t], SPEC, dz) for p in patches]
            np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-9)


def test_bank_concat(mug_level):
    nc, cps = mug_level
    a = PatchBank.from_cloud(nc, cps, 0.5, 9)
    b = PatchBank.from_cloud(nc, cps, 0.5, 13)
    ab = PatchBank.concat([a, b])
    assert len(ab) == len(a) + len(b)
    np.testing.assert_array_equal(ab.F[len(a):], b.F)
    for p in (0, len(b) - 1):
        for x, y in zip(ab.points_of(len(a) + p), b.points_of(p)):
            np.testing.assert_array_equal(x, y)


def test_lattice_stride_validation(mug_level):
    with pytest.raises(ValueError):
        lattice_indices(mug_level[0], 0)
    with pytest.raises(ValueError):
        extract_patches(*mug_level, g=0.0, stride=2)


def test_descriptor_config_round_trip():
    d = DescriptorConfig(g=0.2, schedule=(1.0, 1.5), train_stride=4)
    assert DescriptorConfig.from_dict(d.to_dict()) == d
    with pytest.raises(ValueError):
        DescriptorConfig(g=1.5)
