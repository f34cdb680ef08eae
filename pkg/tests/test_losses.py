from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import FIXTURES, ssim_naive
from thermoseed.geometry import RigidTransform
from thermoseed.losses import (
    EmptyValidSetError, LossWeights, directed_pairs, geometric_diff, geometric_loss,
    masked_reconstruction_loss, photometric_loss, smoothness_loss, ssim_map, total_loss,
    total_loss_enhanced,
)
from thermoseed.mapping import MappingConfig, enhance_group
from thermoseed.synth import bundled_scene, render_snippet

unit = arrays(np.float64, (6, 7), elements=st.floats(0, 1))


def test_ssim_constant_frames_fixture():
    s = ssim_map(np.full((5, 5), 0.5), np.full((5, 5), 0.6))
    assert np.allclose(s, FIXTURES["ssim_const_05_06"], atol=1e-12)


def test_photometric_fixtures():
    lpe = photometric_loss(np.full((4, 4), 0.5), np.full((4, 4), 0.6), 0.85)
    assert np.allclose(lpe, FIXTURES["l_pe_const_05_06"], atol=1e-12)
    x = np.random.default_rng(0).uniform(0, 1, (6, 6))
    assert np.array_equal(photometric_loss(x, x), np.zeros_like(x))
    y = np.random.default_rng(1).uniform(0, 1, (6, 6))
    assert np.allclose(photometric_loss(x, y, 0.0), np.abs(x - y), atol=1e-15)


def test_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        ssim_map(np.zeros((3, 3)), np.zeros((3, 4)))


@settings(max_examples=40, deadline=None)
@given(unit, unit)
def test_ssim_symmetric_and_bounded(a, b):
    s = ssim_map(a, b)
    assert np.allclose(s, ssim_map(b, a), atol=1e-15)
    assert np.all(s <= 1 + 1e-12) and np.all(s >= -1 - 1e-12)
    assert np.all(photometric_loss(a, b) >= -1e-12)


def test_ssim_matches_naive_windows():
    rng = np.random.default_rng(5)
    a, b = rng.uniform(0, 1, (2, 9, 11))
    assert np.max(np.abs(ssim_map(a, b) - np.array(ssim_naive(a.tolist(), b.tolist())))) < 1e-10


def test_smoothness_cases():
    flat = np.zeros((8, 10))
    assert smoothness_loss(np.full((8, 10), 3.0), flat) == 0.0
    g = 0.02
    u = np.arange(10) - 4.5
    ramp = np.tile(2.0 * (1 + g * u), (8, 1))     # mean 2, normalized slope g
    assert smoothness_loss(ramp, flat) == pytest.approx(g, abs=1e-12)
    edges = np.tile((np.arange(10) % 2).astype(float), (8, 1))
    assert smoothness_loss(ramp, edges) < smoothness_loss(ramp, flat)
    with pytest.raises(ValueError):
        smoothness_loss(np.zeros((4, 4)), np.zeros((4, 4)))


def test_geometric_diff_and_loss():
    mask = np.ones((1, 2), bool)
    g = geometric_diff(np.array([[2.0, 4.0]]), np.array([[4.0, 4.0]]), mask)
    assert g[0, 0] == pytest.approx(FIXTURES["g_diff_2_4"], abs=1e-15) and g[0, 1] == 0
    assert np.array_equal(g, geometric_diff(np.array([[4.0, 4.0]]), np.array([[2.0, 4.0]]), mask))
    assert geometric_loss(g, mask) == pytest.approx(1 / 6, abs=1e-15)
    assert geometric_loss(g, np.array([[False, True]])) == 0.0
    assert geometric_loss(np.zeros((2, 2)), np.ones((2, 2), bool)) == 0.0
    with pytest.raises(ValueError):
        geometric_diff(np.array([[-1.0]]), np.array([[1.0]]), np.ones((1, 1), bool))
    with pytest.raises(EmptyValidSetError):
        geometric_loss(g, np.zeros((1, 2), bool))


def test_reconstruction_masks():
    rng = np.random.default_rng(2)
    t = rng.uniform(0, 1, (8, 8))
    s = rng.uniform(0, 1, (8, 8))
    mask = np.ones((8, 8), bool)
    l_rec, m_gp, m_sp = masked_reconstruction_loss(t, t, s, np.zeros((8, 8)), mask)
    assert l_rec == 0.0 and np.all(m_sp == 1) and np.all(m_gp == 1)
    flat = np.full((8, 8), 0.4)
    l_rec, _, m_sp = masked_reconstruction_loss(flat, flat, flat, np.zeros((8, 8)), mask)
    assert l_rec == 0.0 and np.all(m_sp == 0)
    with pytest.raises(EmptyValidSetError):
        masked_reconstruction_loss(t, t, s, np.zeros((8, 8)), np.zeros((8, 8), bool))


def test_single_pixel_reconstruction_fixture():
    # one valid pixel whose photometric loss is 0.1 and whose G_diff is 0.25;
    # gamma = 0 makes L_pe the plain L1 difference
    target = np.zeros((3, 3))
    warped = np.zeros((3, 3))
    warped[1, 1] = 0.1
    source = np.ones((3, 3))
    g = np.zeros((3, 3))
    g[1, 1] = 0.25
    mask = np.zeros((3, 3), bool)
    mask[1, 1] = True
    l_rec, m_gp, m_sp = masked_reconstruction_loss(target, warped, source, g, mask, gamma=0.0)
    assert m_sp[1, 1] == 1 and m_gp[1, 1] == 0.75
    assert l_rec == pytest.approx(FIXTURES["l_rec_single_pixel"], abs=1e-12)


def test_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(gamma=1.5)
    with pytest.raises(ValueError):
        LossWeights(lambda_gc=-1)


def test_directed_pairs():
    T = RigidTransform.from_params([0.01, 0, 0, 0.1, 0, 0])
    pairs = directed_pairs(3, [T, T])
    assert [(t, s) for t, s, _ in pairs] == [(0, 1), (1, 0), (1, 2), (2, 1)]
    assert np.allclose(pairs[1][2].compose(pairs[0][2]).rotation, np.eye(3))
    with pytest.raises(ValueError):
        directed_pairs(3, [T])


@pytest.fixture(scope="module")
def snippet():
    return render_snippet(bundled_scene("plane"), 0)


def test_ground_truth_loss_floor():
    # an untilted plane keeps reference depth constant, so the depth resampling
    # error stays far below that of the tilted, wide-angle scene
    spec = replace(bundled_scene("plane"), plane_tilt_x=0.0, plane_tilt_y=0.0)
    snip = render_snippet(spec, 0)
    b = total_loss(snip.frames, snip.depths, snip.poses, snip.intrinsics,
                   LossWeights(), MappingConfig(mode="tctr"))
    assert b.l_rec <= 1e-3
    assert b.l_gc <= 1e-6


def test_breakdown_invariants(snippet):
    w = LossWeights(0.7, 0.3, 0.2)
    b = total_loss(snippet.frames, snippet.depths, snippet.poses, snippet.intrinsics, w)
    assert b.l_total == pytest.approx(b.l_rec + w.lambda_gc * b.l_gc + w.lambda_sm * b.l_sm, abs=1e-12)
    v = b.v_p
    assert np.all(b.m_gp[v] > 0) and np.all(b.m_gp[v] <= 1)
    assert set(np.unique(b.m_sp).tolist()) <= {0.0, 1.0}
    assert np.all(b.g_diff_map[v] >= 0) and np.all(b.g_diff_map[v] < 1)
    assert b.l_pe_map.shape == (4,) + snippet.frames[0].shape


def test_zero_weights_leave_reconstruction(snippet):
    b = total_loss(snippet.frames, snippet.depths, snippet.poses, snippet.intrinsics,
                   LossWeights(0.85, 0.0, 0.0))
    assert b.l_total == b.l_rec


@pytest.mark.parametrize("sign", [1, -1])
def test_rotating_away_from_truth_increases_loss(snippet, sign):
    gt = snippet.poses[0]
    base = total_loss(snippet.frames, snippet.depths, snippet.poses, snippet.intrinsics).l_total
    for axis in range(3):
        p = np.zeros(6)
        p[axis] = sign * np.radians(2)
        T = RigidTransform.from_params(p).compose(gt)
        off = total_loss(snippet.frames, snippet.depths, [T, T], snippet.intrinsics).l_total
        assert off > base


def test_forward_backward_geometric_symmetry(snippet):
    imgs = enhance_group(snippet.frames[:2], MappingConfig())
    T = snippet.poses[0]
    fwd = total_loss_enhanced(imgs, snippet.depths[:2], [T], snippet.intrinsics)
    bwd = total_loss_enhanced(imgs[::-1], snippet.depths[1::-1], [T.inverse()], snippet.intrinsics)
    assert abs(fwd.l_gc - bwd.l_gc) <= 1e-3


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 1), st.floats(0, 2), st.floats(0, 2), st.integers(0, 1000))
def test_decomposition_random_inputs(gamma, lgc, lsm, seed):
    rng = np.random.default_rng(seed)
    imgs = list(rng.uniform(0, 1, (3, 12, 12)))
    depths = list(rng.uniform(2, 4, (3, 12, 12)))
    from thermoseed.geometry import CameraIntrinsics
    K = CameraIntrinsics(10, 10, 5.5, 5.5)
    T = RigidTransform.from_params(rng.normal(0, 0.02, 6))
    w = LossWeights(gamma, lgc, lsm)
    b = total_loss_enhanced(imgs, depths, [T, T], K, w)
    assert b.l_total == pytest.approx(b.l_rec + lgc * b.l_gc + lsm * b.l_sm, abs=1e-12)
