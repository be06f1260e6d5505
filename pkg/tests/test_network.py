from __future__ import annotations

import numpy as np
import pytest

from adaptive_hsi.core import render_guide
from adaptive_hsi.maskgen import MaskGenParams, generate_mask
from adaptive_hsi.metrics import psnr_bands
from adaptive_hsi.network import (FilterNetWeights, conv3x3, default_weights, default_weights_for, fuse_network,
                                  handcrafted_weights, identity_refinement, refine)
from adaptive_hsi.recon import (GuidedParams, SparseSpectralImage, box_kernel, guided_filter_band,
                                reconstruct_frame)
from adaptive_hsi.sensor import DispersionModel, NoiseParams, capture
from adaptive_hsi.synth import synth_scene


def sparse_random(rng, bands=3, h=20, w=24, frac=0.25) -> SparseSpectralImage:
    mask = rng.random((h, w)) < frac
    vals = rng.random((bands, h, w)) * mask
    return SparseSpectralImage(vals, mask, np.broadcast_to(mask, vals.shape).copy())


def test_degenerate_network_is_guided_filter(rng):
    sparse = sparse_random(rng)
    guide = rng.random((20, 24))
    w = FilterNetWeights(box_kernel(5)[None], eps=1e-3, **identity_refinement(1))
    out = fuse_network(sparse, guide, w)
    for b in range(sparse.bands):
        ref, _ = guided_filter_band(sparse.values[b], sparse.mask, guide, box_kernel(5), 1e-3)
        np.testing.assert_allclose(out.data[b], np.clip(ref, 0, None), atol=1e-5)


def test_zero_projection_gives_zero_cube(rng):
    layers = identity_refinement(2)
    layers["proj_w"] = np.zeros_like(layers["proj_w"])
    w = FilterNetWeights(np.stack([box_kernel(3), box_kernel(3)]), **layers)
    out = fuse_network(sparse_random(rng), rng.random((20, 24, 3)), w)
    assert not out.data.any()


def dense_refine(x, w: FilterNetWeights):
    z = np.maximum(conv3x3(x, w.conv1_w, w.conv1_b), 0)
    z = np.maximum(conv3x3(z, w.conv2_w, w.conv2_b), 0)
    return np.tensordot(w.proj_w, z, axes=1) + w.proj_b


def test_pruned_refinement_matches_dense(rng):
    x = rng.normal(size=(4, 9, 11))
    w1 = rng.normal(size=(6, 4, 3, 3))
    w1[2] = 0.0
    w2 = rng.normal(size=(5, 6, 3, 3))
    w2[:, 4] = 0.0
    b2 = rng.normal(size=5)
    pw = rng.normal(size=5)
    pw[1] = 0.0
    w = FilterNetWeights(np.ones((4, 3, 3)), w1, rng.normal(size=6), w2, b2, pw, 0.3)
    np.testing.assert_allclose(refine(x, w), dense_refine(x, w), atol=1e-12)


def test_conv3x3_against_loops(rng):
    x = rng.normal(size=(2, 5, 6))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = conv3x3(x, k, b)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for y in range(5):
            for xx in range(6):
                ref = b[o] + np.sum(k[o] * xp[:, y:y + 3, xx:xx + 3])
                assert got[o, y, xx] == pytest.approx(ref)


def test_weight_file_round_trip(tmp_path):
    w = handcrafted_weights(3, (5, 9), width=4)
    w.save(tmp_path / "w.gfw")
    back = FilterNetWeights.load(tmp_path / "w.gfw")
    for name in ("kernels", "conv1_w", "conv1_b", "conv2_w", "conv2_b", "proj_w"):
        np.testing.assert_allclose(getattr(back, name), getattr(w, name), rtol=1e-6)
    assert back.eps == w.eps and back.k == 3


def test_malformed_weight_files(tmp_path):
    w = handcrafted_weights(2, (3, 5), width=4)
    w.save(tmp_path / "w.gfw")
    raw = (tmp_path / "w.gfw").read_bytes()
    with pytest.raises(ValueError, match="not a guided-filter"):
        FilterNetWeights.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="payload"):
        FilterNetWeights.from_bytes(raw[:-4])
    with pytest.raises(ValueError, match="header"):
        FilterNetWeights.from_bytes(raw[:8] + b"{" * (len(raw) - 8))
    with pytest.raises(ValueError, match="conv1"):
        FilterNetWeights(np.ones((2, 3, 3)), np.zeros((4, 3, 3, 3)), np.zeros(4), np.zeros((4, 4, 3, 3)),
                         np.zeros(4), np.zeros(4), 0.0)
    with pytest.raises(ValueError, match="non-negative"):
        FilterNetWeights(-np.ones((2, 3, 3)), **identity_refinement(2))
    with pytest.raises(ValueError, match="epsilon"):
        FilterNetWeights(np.ones((2, 3, 3)), eps=0.0, **identity_refinement(2))


def test_bundled_weights_are_the_handcrafted_set():
    bundled = default_weights()
    ref = handcrafted_weights()
    assert bundled.kernels.shape == (8, 51, 103)
    assert bundled.conv1_w.shape == (32, 8, 3, 3) and bundled.conv2_w.shape == (32, 32, 3, 3)
    np.testing.assert_allclose(bundled.kernels, ref.kernels, rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(bundled.conv1_w, ref.conv1_w, rtol=1e-6)
    assert default_weights_for(68) is bundled
    assert default_weights_for(16).kernels.shape[1:] == (13, 25)


def test_network_close_to_guided_filter():
    cube = synth_scene("natural", 96, 96, 16, seed=1).cube
    disp = DispersionModel.linear(16)
    guide, gray = render_guide(cube)
    params = MaskGenParams(16, sensor_width=96 + 15)
    mask, sp = generate_mask(guide, params)
    sensor = capture(cube, mask, disp, 0.0, NoiseParams(10000.0, 5.0, 1), sensor_width=params.sensor_width)
    args = (guide, gray, sensor, mask, sp, disp)
    net = psnr_bands(reconstruct_frame(*args, "network"), cube)
    gf = psnr_bands(reconstruct_frame(*args, "guided", guided=GuidedParams.for_spread(16)), cube)
    gap = np.array(net) - np.array(gf)
    assert np.all(np.abs(gap) <= 1.0), gap
