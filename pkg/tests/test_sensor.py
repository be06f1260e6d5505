from __future__ import annotations

import numpy as np
import pytest

from adaptive_hsi.core import HsiCube, SamplingMask
from adaptive_hsi.maskgen import MaskGenParams, maximize_throughput, uniform_grid_mask
from adaptive_hsi.metrics import psnr_bands
from adaptive_hsi.sensor import (DispersionModel, NoiseParams, SensorImage, add_noise, blur_kernel, capture,
                                 extract_spectra, load_sensor, nyquist_scan, remove_offset, save_sensor)
from adaptive_hsi.synth import smooth_field, synth_scene

import oracles


def cube_of(data) -> HsiCube:
    data = np.asarray(data, dtype=np.float32)
    return HsiCube(data, np.arange(data.shape[0], dtype=float))


def greedy_mask(w, h, n, v=1, sensor_width=None) -> SamplingMask:
    empty = SamplingMask(w, h, np.zeros((0, 2), int))
    return maximize_throughput(empty, MaskGenParams(n, v=v, sensor_width=sensor_width))


def test_delta_capture():
    data = np.zeros((4, 8, 12))
    data[2, 3, 5] = 0.7
    disp = DispersionModel([0, 1, 2, 3], response=[1.0, 0.5, 0.25, 2.0])
    img = capture(cube_of(data), SamplingMask(12, 8, np.array([[5, 3]])), disp)
    nz = np.argwhere(img.values != 0)
    assert nz.tolist() == [[3, 5 + 2]]
    assert img.values[3, 7] == pytest.approx(0.7 * 0.25)


def test_zero_mask_gives_zero_signal(rng):
    cube = cube_of(rng.random((4, 8, 8)))
    img = capture(cube, SamplingMask(8, 8, np.zeros((0, 2), int)), DispersionModel.linear(4))
    assert not img.values.any()


def test_capture_matches_direct_summation(rng):
    cube = cube_of(rng.random((4, 16, 16)))
    disp = DispersionModel([0, 1, 2, 3], response=rng.uniform(0.5, 1.5, 4))
    mask = oracles_free_mask(rng, 16, 16, 4)
    for ws in (16, 19):
        img = capture(cube, mask, disp, 0.01, sensor_width=ws)
        ref = oracles.capture_loops(cube.data, mask.bitmap, disp.shifts, disp.response, 0.01, ws)
        np.testing.assert_allclose(img.values, ref, atol=1e-6)


def oracles_free_mask(rng, w, h, n, v=1):
    bm = np.zeros((h, w), dtype=bool)
    for _ in range(3 * w):
        x, y = int(rng.integers(0, w - n + 1)), int(rng.integers(0, h))
        if oracles.can_open(bm, x, y, n, v):
            bm[y, x] = True
    return SamplingMask.from_bitmap(bm)


def test_capture_linearity(rng):
    a, b = rng.random((2, 5, 12, 14))
    disp = DispersionModel.from_quadratic([0, 1, 2, 3, 4], (0.05, -0.2, 0.4))
    mask = greedy_mask(14, 12, disp.footprint[0])
    lhs = capture(cube_of(2.0 * a + 0.5 * b), mask, disp, 0.02).values
    rhs = 2.0 * capture(cube_of(a), mask, disp, 0.02).values + 0.5 * capture(cube_of(b), mask, disp, 0.02).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


def test_offset_model(rng):
    cube = cube_of(rng.random((4, 10, 16)))
    disp = DispersionModel.linear(4)
    mask = greedy_mask(16, 10, 4, v=2)
    full = SamplingMask.from_bitmap(np.ones((10, 16), dtype=bool))
    eps = 0.03
    lhs = capture(cube, mask, disp, eps).values
    rhs = (1 - eps) * capture(cube, mask, disp).values + eps * capture(cube, full, disp).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_no_multiplexing(rng):
    cube = cube_of(rng.random((6, 12, 24)))
    disp = DispersionModel.linear(6, 8)
    mask = greedy_mask(24, 12, 8)
    total = capture(cube, mask, disp).values
    parts = [capture(cube, SamplingMask(24, 12, p[None]), disp).values for p in mask.points]
    assert np.array_equal(np.sum(parts, axis=0), total)
    # every lit pixel comes from exactly one opening
    assert np.max(np.sum([p != 0 for p in parts], axis=0)) == 1


def test_noise_zero_levels():
    img = add_noise(SensorImage(np.full((4, 4), 3.0)), NoiseParams(0.0, 0.0, 1))
    assert not img.values.any()


def test_noise_moments():
    img = add_noise(SensorImage(np.ones((1000, 1000))), NoiseParams(10000.0, 5.0, 11))
    v = img.values
    assert abs(v.mean() - 10000) < 0.01 * 10000
    assert abs(v.var() - 10025) < 0.05 * 10025
    assert img.scale == 10000.0


def test_noise_is_seeded():
    sig = SensorImage(np.linspace(0, 1, 400).reshape(20, 20))
    a = add_noise(sig, NoiseParams(500.0, 5.0, 7)).values
    b = add_noise(sig, NoiseParams(500.0, 5.0, 7)).values
    c = add_noise(sig, NoiseParams(500.0, 5.0, 8)).values
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    with pytest.raises(ValueError, match="negative"):
        add_noise(SensorImage(-np.ones((2, 2))), NoiseParams(10.0))


def test_extract_ideal_is_exact(rng):
    cube = cube_of(rng.random((5, 12, 30)))
    disp = DispersionModel([0, 2, 3, 5, 6], response=[1.0, 0.7, 1.3, 0.9, 1.1])
    mask = greedy_mask(30, 12, disp.n, sensor_width=30 + disp.n - 1)
    img = capture(cube, mask, disp, sensor_width=30 + disp.n - 1)
    s = extract_spectra(img, mask, disp)
    assert not s.missing.any()
    for (x, y), spec in s:
        np.testing.assert_allclose(spec, cube.spectrum(x, y), rtol=1e-6)


def test_extract_with_blur_widths():
    bands = 16
    wl = np.linspace(405, 635, bands)
    disp = DispersionModel.from_blur_widths(np.arange(bands), wl, [(405, 4.0), (520, 1.0), (635, 4.0)])
    assert disp.blur_sigma[0] == pytest.approx(4 / 6) and disp.blur_sigma[-1] == pytest.approx(4 / 6)
    assert disp.blur_sigma.min() < 0.2
    cube = synth_scene("natural", 64, 16, bands, seed=3, wavelengths=wl).cube
    n_eff = disp.footprint[0]
    mask = uniform_grid_mask(64, 16, n_eff, 1, 64 + bands - 1)
    # interior points: the full blurred streak lies on the sensor
    r = int(disp.radii.max())
    img = capture(cube, mask, disp, sensor_width=64 + bands - 1)
    s = extract_spectra(img, mask, disp)
    inner = s.points[:, 0] >= r
    assert inner.sum() > 10
    for (x, y), spec in zip(s.points[inner].tolist(), s.spectra[inner]):
        np.testing.assert_allclose(spec, cube.spectrum(x, y), atol=1e-3)


def test_vertical_blur_sums_support():
    cube = cube_of(np.random.default_rng(2).random((4, 20, 20)))
    disp = DispersionModel.from_quadratic([0, 1, 2, 3], (0.0, 0.0, 0.5), blur_axis="vertical")
    v = disp.footprint[1]
    mask = uniform_grid_mask(20, 20, 4, v, 23)
    s = extract_spectra(capture(cube, mask, disp, sensor_width=23), mask, disp, guard=v)
    for (x, y), spec in s:
        if 2 <= y < 18:
            np.testing.assert_allclose(spec, cube.spectrum(x, y), rtol=1e-5)


def test_truncated_streak_flags_missing(rng):
    cube = cube_of(rng.random((8, 4, 32)))
    disp = DispersionModel.linear(8)
    x = 32 - 8 // 2
    mask = SamplingMask(32, 4, np.array([[x, 1]]))
    s = extract_spectra(capture(cube, mask, disp), mask, disp)
    assert s.missing[0].tolist() == [False] * 4 + [True] * 4
    np.testing.assert_allclose(s.spectra[0, :4], cube.spectrum(x, 1)[:4], rtol=1e-6)


def test_extract_errors(rng):
    disp = DispersionModel.linear(4)
    img = SensorImage(np.ones((4, 16)))
    with pytest.raises(ValueError, match="conflict"):
        extract_spectra(img, SamplingMask(16, 4, np.array([[0, 0], [2, 0]])), disp)
    with pytest.raises(ValueError, match="zero sensor response"):
        extract_spectra(img, SamplingMask(16, 4, np.array([[0, 0]])),
                        DispersionModel([0, 1, 2, 3], response=[1, 0, 1, 1]))
    with pytest.raises(ValueError, match="mask"):
        capture(cube_of(np.ones((4, 5, 5))), SamplingMask(6, 5, np.zeros((0, 2), int)), disp)
    with pytest.raises(ValueError, match="bands"):
        capture(cube_of(np.ones((3, 5, 5))), SamplingMask(5, 5, np.zeros((0, 2), int)), disp)


def smooth_cube(rng, bands, h, w) -> HsiCube:
    spec = np.linspace(0.4, 1.0, bands)
    return cube_of(0.2 + 0.8 * spec[:, None, None] * smooth_field(rng, h, w, 6.0)[None])


def test_remove_offset_without_leakage(rng):
    cube = smooth_cube(rng, 8, 48, 48)
    disp = DispersionModel.linear(8)
    mask = greedy_mask(48, 48, 8, v=2, sensor_width=55)
    img = capture(cube, mask, disp, 0.0, NoiseParams(10000.0, 5.0, 3), sensor_width=55)
    _, off = remove_offset(img, mask, disp)
    # background pixels hold read noise only: sigma 5 e-, in counts
    assert np.abs(off.values).max() < 5 * 5.0


def test_remove_offset_recovers_spectra(rng):
    cube = smooth_cube(rng, 8, 48, 48)
    disp = DispersionModel.linear(8)
    mask = greedy_mask(48, 48, 8, v=2, sensor_width=55)
    ref = extract_spectra(capture(cube, mask, disp, sensor_width=55), mask, disp).spectra
    img = capture(cube, mask, disp, 0.01, sensor_width=55)
    clean, off = remove_offset(img, mask, disp)
    got = extract_spectra(clean, mask, disp).spectra
    assert np.max(np.abs(got - ref) / ref) < 0.02
    np.testing.assert_allclose(clean.values + off.values, img.values, rtol=0, atol=1e-12)


def test_remove_offset_ramp(rng):
    cube = cube_of(rng.random((8, 40, 48)))
    disp = DispersionModel.linear(8)
    mask = greedy_mask(48, 40, 8, v=2, sensor_width=55)
    yy, xx = np.mgrid[0:40, 0:55]
    ramp = 0.05 + 0.002 * xx + 0.003 * yy
    img = SensorImage(capture(cube, mask, disp, sensor_width=55).values + ramp)
    _, off = remove_offset(img, mask, disp)
    rms = np.sqrt(np.mean((off.values - ramp) ** 2)) / np.sqrt(np.mean(ramp ** 2))
    assert rms < 0.01


def test_nyquist_scan_lossless(rng):
    cube = cube_of(rng.random((4, 16, 16)))
    out = nyquist_scan(cube, DispersionModel.linear(4), 8, 1)
    assert np.array_equal(out.data, cube.data)


def test_nyquist_scan_spacing_must_exceed_spread(rng):
    cube = cube_of(rng.random((4, 8, 8)))
    with pytest.raises(ValueError, match="spacing"):
        nyquist_scan(cube, DispersionModel.linear(4), 4, 1)


def test_nyquist_scan_noisy():
    cube = synth_scene("natural", 64, 64, 8, seed=5).cube
    for seed in (0, 1, 2):
        out = nyquist_scan(cube, DispersionModel.linear(8), 16, 1, NoiseParams(10000.0, 5.0, seed))
        assert min(psnr_bands(out, cube)) > 35.0


def test_dispersion_json_round_trip(tmp_path):
    d = DispersionModel.from_quadratic([0, 2, 4, 7], (0.1, -0.2, 0.5), response=[1, 0.9, 0.8, 0.7])
    d.save(tmp_path / "d.json")
    back = DispersionModel.load(tmp_path / "d.json")
    assert np.array_equal(back.shifts, d.shifts)
    np.testing.assert_allclose(back.blur_sigma, d.blur_sigma)
    np.testing.assert_allclose(back.response, d.response)
    quad = DispersionModel.from_json({"shifts": [0, 2, 4, 7], "blur_quadratic": [0.1, -0.2, 0.5]})
    np.testing.assert_allclose(quad.blur_sigma, d.blur_sigma)
    assert d.n == 8


def test_dispersion_validation():
    with pytest.raises(ValueError, match="non-decreasing"):
        DispersionModel([0, 2, 1])
    with pytest.raises(ValueError, match="integer"):
        DispersionModel([0, 1.5])
    with pytest.raises(ValueError, match="one entry per band"):
        DispersionModel([0, 1], response=[1.0])
    assert blur_kernel(0.0).tolist() == [1.0]
    assert blur_kernel(1.0).size == 7 and blur_kernel(1.0).sum() == pytest.approx(1.0)


def test_sensor_file_round_trip(tmp_path, rng):
    img = SensorImage(rng.random((6, 9)) * 1000, 12.5)
    save_sensor(img, tmp_path / "s.f32")
    back = load_sensor(tmp_path / "s.f32")
    np.testing.assert_allclose(back.values, img.values, rtol=1e-6)
    assert back.scale == 12.5
    save_sensor(img, tmp_path / "s.png16")
    png = load_sensor(tmp_path / "s.png16")
    assert np.array_equal(png.values, np.round(img.values)) and png.scale == 12.5
