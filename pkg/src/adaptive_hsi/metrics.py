"""Reconstruction quality metrics and the superpixel homogeneity statistic."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .core import HsiCube, SuperpixelMap


def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, HsiCube) else x, dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """PSNR of ``a`` against reference ``b`` with peak = max(b); inf when identical."""
    a, b = _array(a), _array(b)
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    peak = float(b.max())
    if peak <= 0:
        return -math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr_bands(a: HsiCube, b: HsiCube) -> list[float]:
    _same_shape(a.data, b.data)
    return [psnr(a.data[i], b.data[i]) for i in range(b.bands)]


def gaussian_taps(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    g = gaussian_taps(size, sigma)
    return np.outer(g, g)


def ssim(a, b, data_range: float | None = None, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully-inside 11x11 Gaussian windows (sigma 1.5).

    The dynamic range defaults to the reference peak ``max(b)``.
    """
    a, b = _array(a), _array(b)
    _same_shape(a, b)
    if a.ndim != 2:
        raise ValueError("ssim expects 2-D planes")
    g = gaussian_taps()
    r = g.size // 2
    if min(a.shape) < g.size:
        raise ValueError(f"image {a.shape} is smaller than the {g.size}x{g.size} window")
    rng = float(b.max()) if data_range is None else float(data_range)
    if rng <= 0:
        rng = 1.0
    c1, c2 = (k1 * rng) ** 2, (k2 * rng) ** 2

    def filt(x):
        # the window is separable; keep only positions where it fits entirely
        y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
        return y[r:-r, r:-r]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(np.clip(s.mean(), -1.0, 1.0))


def sam(s1, s2) -> float:
    """Spectral angle in degrees."""
    s1 = np.asarray(s1, dtype=np.float64).ravel()
    s2 = np.asarray(s2, dtype=np.float64).ravel()
    _same_shape(s1, s2)
    n1, n2 = np.linalg.norm(s1), np.linalg.norm(s2)
    if n1 == 0 or n2 == 0:
        raise ValueError("spectral angle is undefined for a zero spectrum")
    # half-angle form; acos of the cosine loses precision near 0 degrees
    u, v = s1 / n1, s2 / n2
    return math.degrees(2.0 * math.atan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def sam_map(a, b) -> np.ndarray:
    """Per-pixel spectral angle (degrees) between two (bands, H, W) arrays; NaN where undefined."""
    a, b = _array(a), _array(b)
    _same_shape(a, b)
    na = np.sqrt(np.einsum("bij,bij->ij", a, a))
    nb = np.sqrt(np.einsum("bij,bij->ij", b, b))
    out = np.full(na.shape, np.nan)
    ok = (na > 0) & (nb > 0)
    u, v = a[:, ok] / na[ok], b[:, ok] / nb[ok]
    out[ok] = np.degrees(2.0 * np.arctan2(np.linalg.norm(u - v, axis=0), np.linalg.norm(u + v, axis=0)))
    return out


@dataclass(frozen=True)
class Homogeneity:
    mean: float
    median: float
    histogram: list[int]
    bin_edges: list[float]
    pixels: int
    reference: str = "superpixel-mean"


def homogeneity_analysis(cube: HsiCube, spmap: SuperpixelMap, bins: int = 36) -> Homogeneity:
    """SAM between every pixel and the mean spectrum of its superpixel.

    Pixels whose spectrum (or whose superpixel mean) is all zero are skipped.
    """
    if (spmap.height, spmap.width) != (cube.height, cube.width):
        raise ValueError("superpixel map and cube differ in size")
    flat = cube.data.reshape(cube.bands, -1).astype(np.float64)
    lab = spmap.labels.ravel()
    counts = np.bincount(lab, minlength=spmap.q).astype(np.float64)
    means = np.stack([np.bincount(lab, weights=flat[b], minlength=spmap.q)
                      for b in range(cube.bands)]) / counts
    ref = means[:, lab]
    angles = sam_map(flat[:, None, :], ref[:, None, :]).ravel()
    angles = angles[np.isfinite(angles)]
    edges = np.linspace(0.0, 180.0, bins + 1)
    hist, _ = np.histogram(angles, edges)
    if angles.size == 0:
        return Homogeneity(math.nan, math.nan, hist.tolist(), edges.tolist(), 0)
    return Homogeneity(float(angles.mean()), float(np.median(angles)), hist.tolist(),
                       edges.tolist(), int(angles.size))


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass(frozen=True)
class EvalReport:
    psnr_bands: list[float]
    psnr_mean: float
    ssim_mean: float
    sam_mean: float
    uncovered_fraction: float = 0.0
    timings_ms: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return _jsonable(asdict(self))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")


def evaluate(ref: HsiCube, test: HsiCube, uncovered_fraction: float = 0.0,
             timings_ms: dict | None = None, extra: dict | None = None) -> EvalReport:
    """Per-band PSNR, mean SSIM (planes large enough for the window) and mean SAM."""
    _same_shape(ref.data, test.data)
    bands = psnr_bands(test, ref)
    mean_psnr = float(np.mean(bands))
    if min(ref.height, ref.width) >= 11:
        mean_ssim = float(np.mean([ssim(test.data[i], ref.data[i]) for i in range(ref.bands)]))
    else:
        mean_ssim = math.nan
    angles = sam_map(test, ref)
    mean_sam = float(np.nanmean(angles)) if np.isfinite(angles).any() else math.nan
    return EvalReport(bands, mean_psnr, mean_ssim, mean_sam, float(uncovered_fraction),
                      dict(timings_ms or {}), dict(extra or {}))
