"""Deterministic synthetic hyperspectral scenes for tests and benchmarks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import HsiCube

KINDS = ("rank1-patches", "gradient", "stripes", "two-cluster", "natural")


@dataclass(frozen=True, eq=False)
class SynthScene:
    cube: HsiCube
    labels: np.ndarray | None = None


def default_wavelengths(bands: int) -> np.ndarray:
    return np.linspace(400.0, 700.0, bands) if bands > 1 else np.array([550.0])


def smooth_spectra(rng: np.random.Generator, count: int, bands: int) -> np.ndarray:
    """(count, bands) positive spectra built from a few Gaussian bumps over a floor."""
    t = np.linspace(0.0, 1.0, bands)
    out = np.empty((count, bands))
    for i in range(count):
        s = np.full(bands, rng.uniform(0.05, 0.2))
        for _ in range(rng.integers(1, 4)):
            c, w, a = rng.uniform(-0.1, 1.1), rng.uniform(0.08, 0.4), rng.uniform(0.3, 1.0)
            s += a * np.exp(-0.5 * ((t - c) / w) ** 2)
        out[i] = s / s.max()
    return out


def smooth_field(rng: np.random.Generator, height: int, width: int, sigma: float) -> np.ndarray:
    """Gaussian-filtered noise rescaled to [0, 1]."""
    f = gaussian_filter(rng.standard_normal((height, width)), sigma, mode="wrap")
    lo, hi = f.min(), f.max()
    return (f - lo) / (hi - lo) if hi > lo else np.zeros_like(f)


def block_labels(height: int, width: int, patch: int) -> np.ndarray:
    """Rectangular tiling with tiles at least ``patch`` pixels on a side."""
    ny, nx = max(1, height // patch), max(1, width // patch)
    ry = np.minimum(np.arange(height) * ny // height, ny - 1)
    rx = np.minimum(np.arange(width) * nx // width, nx - 1)
    return (ry[:, None] * nx + rx[None, :]).astype(np.int32)


def _rank1_patches(rng, h, w, b, patch):
    labels = block_labels(h, w, patch)
    spectra = smooth_spectra(rng, int(labels.max()) + 1, b)
    amp = 0.3 + 0.7 * smooth_field(rng, h, w, max(2.0, patch / 3.0))
    data = amp[None] * spectra[labels].transpose(2, 0, 1)
    return data, labels


def _gradient(rng, h, w, b):
    s = smooth_spectra(rng, 2, b)
    t = np.linspace(0.0, 1.0, w)[None, :, None]
    shade = np.linspace(0.5, 1.0, h)[:, None, None]
    return (shade * ((1 - t) * s[0] + t * s[1])).transpose(2, 0, 1)


def _stripes(rng, h, w, b, period):
    s = smooth_spectra(rng, 2, b)
    which = (np.arange(w) // period) % 2
    return np.broadcast_to(s[which].T[:, None, :], (b, h, w)).copy()


def _two_cluster(h, w, b):
    """Left half and right half hold spectra with disjoint band support."""
    if b < 2:
        raise ValueError("two-cluster scene needs at least 2 bands")
    s1 = np.zeros(b)
    s2 = np.zeros(b)
    s1[: b // 2] = 1.0
    s2[b // 2:] = 1.0
    labels = (np.arange(w)[None, :] >= w // 2).astype(np.int32).repeat(h, axis=0)
    data = np.where(labels[None] == 0, s1[:, None, None], s2[:, None, None])
    return data, labels


def _natural(rng, h, w, b):
    """Objects on a background, in the manner of tabletop reflectance benchmarks.

    Each object is one material with soft edges, a slight spectral drift and
    achromatic shading and texture; objects may overlap.
    """
    k = 6
    ends = smooth_spectra(rng, k, b)
    size = max(h, w)
    region = np.zeros((h, w), dtype=np.int64)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(4, 9)):
        cy, cx = rng.uniform(0.1, 0.9) * h, rng.uniform(0.1, 0.9) * w
        ry, rx = rng.uniform(0.08, 0.2) * h, rng.uniform(0.08, 0.2) * w
        th = rng.uniform(0, np.pi)
        u = ((xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)) / rx
        v = (-(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)) / ry
        shape = np.maximum(np.abs(u), np.abs(v)) if rng.random() < 0.4 else np.hypot(u, v)
        region = np.where(shape <= 1.0, rng.integers(1, k), region)
    ab = gaussian_filter((region[None] == np.arange(k)[:, None, None]).astype(np.float64),
                         (0, 0.7, 0.7))
    drift = 0.05 * smooth_field(rng, h, w, size / 6.0)
    other = ends[rng.permutation(k)]
    mixed = np.einsum("kb,kyx->byx", ends, ab)
    mixed = (1 - drift) * mixed + drift * np.einsum("kb,kyx->byx", other, ab)
    shade = 0.35 + 0.65 * smooth_field(rng, h, w, size / 8.0)
    texture = 1.0 + 0.15 * (smooth_field(rng, h, w, 1.0) - 0.5)
    return shade[None] * texture[None] * mixed


def synth_scene(kind: str, width: int, height: int, bands: int, seed: int = 0, *,
                patch: int = 16, period: int = 1, wavelengths=None) -> SynthScene:
    """Build a cube of the named family; the same arguments always give the same cube.

    ``rank1-patches`` and ``two-cluster`` also return their region labels.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {KINDS}")
    if width < 1 or height < 1 or bands < 1:
        raise ValueError("scene dimensions must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, KINDS.index(kind)]))
    labels = None
    if kind == "rank1-patches":
        data, labels = _rank1_patches(rng, height, width, bands, patch)
    elif kind == "gradient":
        data = _gradient(rng, height, width, bands)
    elif kind == "stripes":
        data = _stripes(rng, height, width, bands, max(1, period))
    elif kind == "two-cluster":
        data, labels = _two_cluster(height, width, bands)
    else:
        data = _natural(rng, height, width, bands)
    wl = default_wavelengths(bands) if wavelengths is None else wavelengths
    return SynthScene(HsiCube(data.astype(np.float32), wl), labels)


def synth_video(kind: str, width: int, height: int, bands: int, frames: int, seed: int = 0,
                velocity: tuple[int, int] = (3, 0), **kw) -> list[HsiCube]:
    """A panning sequence: ``frames`` windows of one larger scene, moving ``velocity`` px per frame."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    vx, vy = (int(v) for v in velocity)
    big = synth_scene(kind, width + abs(vx) * (frames - 1), height + abs(vy) * (frames - 1),
                      bands, seed, **kw).cube
    out = []
    for t in range(frames):
        x0 = t * vx if vx >= 0 else (frames - 1 - t) * -vx
        y0 = t * vy if vy >= 0 else (frames - 1 - t) * -vy
        out.append(HsiCube(big.data[:, y0:y0 + height, x0:x0 + width], big.wavelengths))
    return out
