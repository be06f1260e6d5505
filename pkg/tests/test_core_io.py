from __future__ import annotations

import json

import numpy as np
import pytest

from adaptive_hsi import io
from adaptive_hsi.core import (GrayImage, GuideImage, HsiCube, SamplingMask, SpectralResponse,
                               SuperpixelMap, render_guide)


def _cube(rng, b=3, h=4, w=4):
    return HsiCube(rng.random((b, h, w)).astype(np.float32), np.linspace(450, 650, b))


def test_cube_round_trip(tmp_path, rng):
    cube = _cube(rng)
    io.save_cube(cube, tmp_path / "c.hsi")
    assert io.load_cube(tmp_path / "c.hsi") == cube


def test_cube_payload_is_little_endian_f32(tmp_path):
    vals = np.array([1.0, 2.0, 0.5, 0.25, 3.0, 4.0, 8.0, 16.0], dtype=np.float32)
    cube = HsiCube(vals.reshape(2, 2, 2), [500.0, 600.0])
    io.save_cube(cube, tmp_path / "c.hsi")
    raw = (tmp_path / "c.hsi").read_bytes()
    expected = b"".join(int(v).to_bytes(4, "little") for v in vals.view("<u4"))
    assert len(raw) == 32 and raw == expected
    head = json.loads((tmp_path / "c.hsi.json").read_text())
    assert head == {"width": 2, "height": 2, "bands": 2, "wavelengths": [500.0, 600.0],
                    "dtype": "f32le", "order": "bsq"}


def test_cube_size_mismatch(tmp_path, rng):
    cube = _cube(rng, b=9)
    io.save_cube(cube, tmp_path / "c.hsi")
    head = json.loads((tmp_path / "c.hsi.json").read_text())
    head["bands"] = 10
    head["wavelengths"] = list(range(10))
    (tmp_path / "c.hsi.json").write_text(json.dumps(head))
    with pytest.raises(io.FormatError, match="payload"):
        io.load_cube(tmp_path / "c.hsi")


def test_cube_rejects_decreasing_wavelengths(tmp_path, rng):
    io.save_cube(_cube(rng), tmp_path / "c.hsi")
    head = json.loads((tmp_path / "c.hsi.json").read_text())
    head["wavelengths"] = [600, 500, 400]
    (tmp_path / "c.hsi.json").write_text(json.dumps(head))
    with pytest.raises(io.FormatError, match="increasing"):
        io.load_cube(tmp_path / "c.hsi")


def test_cube_invariants():
    with pytest.raises(ValueError):
        HsiCube(np.zeros((0, 2, 2)), [])
    with pytest.raises(ValueError, match="negative"):
        HsiCube(-np.ones((1, 2, 2)), [500])
    with pytest.raises(ValueError, match="non-finite"):
        HsiCube(np.full((1, 2, 2), np.nan), [500])
    with pytest.raises(ValueError, match="wavelengths"):
        HsiCube(np.zeros((2, 2, 2)), [500])


def test_large_header_dimensions(tmp_path):
    # the full-resolution frame size: 698 rows by 931 columns, 2 bands to keep it light
    cube = HsiCube(np.zeros((2, 698, 931), dtype=np.float32), [500, 600])
    io.save_cube(cube, tmp_path / "big.hsi")
    back = io.load_cube(tmp_path / "big.hsi")
    assert (back.width, back.height) == (931, 698)


def test_render_constant_cube_box_response():
    cube = HsiCube(np.ones((6, 3, 3)), np.arange(6) + 400.0)
    resp = SpectralResponse(np.ones(6), np.ones(6), np.ones(6))
    guide, gray = render_guide(cube, resp)
    assert np.all(guide.rgb == 1.0) and np.all(gray.values == 1.0)


def test_render_band_inside_red_only():
    wl = np.linspace(400, 700, 9)
    resp = SpectralResponse.default(wl)
    red_only = np.flatnonzero((resp.r > 0) & (resp.g == 0) & (resp.b == 0))
    data = np.zeros((9, 4, 4))
    data[red_only[0]] = 1.0
    guide, _ = render_guide(HsiCube(data, wl), resp)
    assert np.all(guide.rgb[:, :, 1] == 0) and np.all(guide.rgb[:, :, 2] == 0)
    assert guide.rgb[:, :, 0].max() > 0


def test_render_matches_dot_product_oracle(rng):
    cube = HsiCube(rng.random((5, 8, 8)), np.linspace(420, 680, 5))
    resp = SpectralResponse(rng.random(5), rng.random(5), rng.random(5))
    guide, gray = render_guide(cube, resp)
    raw = np.zeros((8, 8, 4))
    for y in range(8):
        for x in range(8):
            s = cube.data[:, y, x].astype(float)
            raw[y, x] = [s @ resp.r, s @ resp.g, s @ resp.b, s @ resp.gray]
    raw /= raw.max()
    assert np.allclose(guide.rgb, raw[:, :, :3], atol=1e-6)
    assert np.allclose(gray.values, raw[:, :, 3], atol=1e-6)


def test_render_linearity_before_normalisation(rng):
    wl = np.linspace(400, 700, 4)
    resp = SpectralResponse(rng.random(4), rng.random(4), rng.random(4))
    h1, h2 = rng.random((4, 5, 5)), rng.random((4, 5, 5))
    m = resp.rgb_matrix

    def raw(d):
        return np.einsum("byx,bc->yxc", d, m)

    combo = 2.0 * h1 + 0.5 * h2
    assert np.allclose(raw(combo), 2.0 * raw(h1) + 0.5 * raw(h2))
    guide, _ = render_guide(HsiCube(combo, wl), resp)
    assert np.allclose(guide.rgb, raw(combo) / raw(combo).max(), atol=1e-6)


def test_default_gray_is_channel_mean(rng):
    cube = HsiCube(rng.random((7, 6, 6)), np.linspace(400, 700, 7))
    guide, gray = render_guide(cube)
    assert np.allclose(gray.values, guide.rgb.mean(axis=2), atol=1e-12)


def test_render_band_mismatch(rng):
    resp = SpectralResponse(np.ones(3), np.ones(3), np.ones(3))
    with pytest.raises(ValueError, match="bands"):
        render_guide(_cube(rng, b=4), resp)


def test_response_validation():
    with pytest.raises(ValueError, match="nonzero"):
        SpectralResponse(np.zeros(3), np.ones(3), np.ones(3))
    with pytest.raises(ValueError, match="non-negative"):
        SpectralResponse(-np.ones(3), np.ones(3), np.ones(3))


def test_mask_points_sorted_and_bitmap_consistent():
    m = SamplingMask(5, 4, [(3, 2), (0, 0), (1, 2)])
    assert m.points.tolist() == [[0, 0], [1, 2], [3, 2]]
    assert SamplingMask.from_bitmap(m.bitmap) == m
    with pytest.raises(ValueError, match="duplicate"):
        SamplingMask(5, 4, [(1, 1), (1, 1)])
    with pytest.raises(ValueError, match="bounds"):
        SamplingMask(5, 4, [(5, 0)])


def test_guide_and_gray_ranges():
    with pytest.raises(ValueError):
        GuideImage(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValueError):
        GrayImage(np.full((2, 2), -0.1))


def test_spmap_invariants():
    with pytest.raises(ValueError, match="occur"):
        SuperpixelMap(np.zeros((2, 2), dtype=int), [[0, 0], [1, 1]])
    sp = SuperpixelMap.from_labels(np.array([[0, 0, 1], [0, 1, 1]]))
    assert sp.q == 2 and np.allclose(sp.centroids[0], [1 / 3, 1 / 3])


def test_image_round_trips(tmp_path, rng):
    guide = GuideImage(np.round(rng.random((5, 7, 3)) * 65535) / 65535)
    io.save_guide(guide, tmp_path / "g.png")
    assert np.array_equal(io.load_guide(tmp_path / "g.png").rgb, guide.rgb)
    gray = GrayImage(np.round(rng.random((5, 7)) * 65535) / 65535)
    io.save_gray(gray, tmp_path / "gr.png")
    assert np.array_equal(io.load_gray(tmp_path / "gr.png").values, gray.values)
    mask = SamplingMask(7, 5, [(0, 0), (6, 4), (3, 2)])
    io.save_mask(mask, tmp_path / "m.png")
    assert io.load_mask(tmp_path / "m.png") == mask


def test_spmap_round_trip(tmp_path):
    sp = SuperpixelMap.from_labels(np.array([[0, 0, 1], [2, 2, 1]]), np.zeros((2, 3, 3)))
    io.save_spmap(sp, tmp_path / "l.bin")
    back = io.load_spmap(tmp_path / "l.bin")
    assert np.array_equal(back.labels, sp.labels) and np.array_equal(back.centroids, sp.centroids)
    assert (tmp_path / "l.bin").stat().st_size == 6 * 4
    io.save_label_preview(sp, tmp_path / "p.png")
    assert (tmp_path / "p.png").exists()
