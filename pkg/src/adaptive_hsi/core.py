"""Core data types and guide-image rendering.

Arrays follow numpy image conventions: planes are indexed ``[y, x]`` and a
cube is stored band-sequential as ``data[band, y, x]``. Points are ``(x, y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

NDArrayF = npt.NDArray[np.floating]
NDArrayI = npt.NDArray[np.integer]


def _frozen(a: np.ndarray) -> np.ndarray:
    if a.flags.writeable or not a.flags.c_contiguous:
        a = np.array(a, order="C", copy=True)
        a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HsiCube:
    """Hyperspectral radiance volume, ``data[band, y, x]`` as float32."""

    data: NDArrayF
    wavelengths: NDArrayF

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"cube data must be 3-D (bands, height, width), got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1 or data.shape[2] < 1:
            raise ValueError(f"cube must have at least one band and pixel, got shape {data.shape}")
        data = data.astype(np.float32, copy=False)
        wl = np.asarray(self.wavelengths, dtype=np.float64).reshape(-1)
        if wl.size != data.shape[0]:
            raise ValueError(f"{wl.size} wavelengths given for {data.shape[0]} bands")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(data)):
            raise ValueError("cube contains non-finite radiance")
        if np.any(data < 0):
            raise ValueError("cube contains negative radiance")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "wavelengths", _frozen(wl))

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def spectrum(self, x: int, y: int) -> np.ndarray:
        return self.data[:, y, x]

    def __eq__(self, other):
        if not isinstance(other, HsiCube):
            return NotImplemented
        return (self.data.shape == other.data.shape
                and np.array_equal(self.wavelengths, other.wavelengths)
                and np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GuideImage:
    """RGB guide, ``rgb[y, x, c]`` with values in [0, 1]."""

    rgb: NDArrayF

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"guide must be (height, width, 3), got {rgb.shape}")
        if np.any(rgb < 0) or np.any(rgb > 1) or not np.all(np.isfinite(rgb)):
            raise ValueError("guide values must lie in [0, 1]")
        object.__setattr__(self, "rgb", _frozen(rgb))

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel guide, ``values[y, x]`` in [0, 1]."""

    values: NDArrayF

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"gray image must be 2-D, got {v.shape}")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("gray values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class SpectralResponse:
    """Per-band weights of the guide camera's R, G, B and gray channels."""

    r: NDArrayF
    g: NDArrayF
    b: NDArrayF
    gray: NDArrayF | None = None

    def __post_init__(self):
        chans = {}
        for name in ("r", "g", "b"):
            chans[name] = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
        if self.gray is None:
            chans["gray"] = (chans["r"] + chans["g"] + chans["b"]) / 3.0
        else:
            chans["gray"] = np.asarray(self.gray, dtype=np.float64).reshape(-1)
        n = chans["r"].size
        for name, w in chans.items():
            if w.size != n:
                raise ValueError(f"response channel {name!r} has {w.size} weights, expected {n}")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError(f"response channel {name!r} must be finite and non-negative")
            if not np.any(w > 0):
                raise ValueError(f"response channel {name!r} has no nonzero weight")
            object.__setattr__(self, name, _frozen(w))

    @property
    def bands(self) -> int:
        return self.r.size

    @property
    def rgb_matrix(self) -> np.ndarray:
        """(bands, 3) matrix with columns R, G, B."""
        return np.stack([self.r, self.g, self.b], axis=1)

    @classmethod
    def default(cls, wavelengths) -> "SpectralResponse":
        """Three half-overlapping raised-cosine bands centred on the range thirds."""
        wl = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
        lo, hi = float(wl.min()), float(wl.max())
        span = hi - lo
        if span <= 0:
            ones = np.ones_like(wl)
            return cls(ones, ones, ones)
        half = span / 3.0
        t = wl - lo

        def bump(center):
            d = np.abs(t - center)
            w = 0.5 * (1.0 + np.cos(np.pi * np.minimum(d / half, 1.0)))
            w[d >= half] = 0.0
            return w

        b, g, r = bump(span / 6.0), bump(span / 2.0), bump(5.0 * span / 6.0)
        return cls(r, g, b)


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Binary SLM mask together with its open points in row-major order."""

    width: int
    height: int
    points: NDArrayI = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("mask dimensions must be positive")
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        if pts.size:
            if (pts[:, 0].min() < 0 or pts[:, 0].max() >= self.width
                    or pts[:, 1].min() < 0 or pts[:, 1].max() >= self.height):
                raise ValueError("mask point out of bounds")
            order = np.lexsort((pts[:, 0], pts[:, 1]))
            pts = pts[order]
            flat = pts[:, 1] * self.width + pts[:, 0]
            if np.any(np.diff(flat) == 0):
                raise ValueError("duplicate mask points")
        object.__setattr__(self, "points", _frozen(pts))

    @classmethod
    def from_bitmap(cls, bitmap) -> "SamplingMask":
        bm = np.asarray(bitmap)
        if bm.ndim != 2:
            raise ValueError("bitmap must be 2-D")
        ys, xs = np.nonzero(bm)
        return cls(bm.shape[1], bm.shape[0], np.stack([xs, ys], axis=1))

    @property
    def bitmap(self) -> np.ndarray:
        bm = np.zeros((self.height, self.width), dtype=bool)
        if len(self.points):
            bm[self.points[:, 1], self.points[:, 0]] = True
        return bm

    @property
    def count(self) -> int:
        return len(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.points, other.points))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SuperpixelMap:
    """Label image with per-label spatial centroid ``(x, y)`` and mean colour."""

    labels: NDArrayI
    centroids: NDArrayF
    colors: NDArrayF | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("labels must be 2-D")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int32, copy=False)
        cen = np.asarray(self.centroids, dtype=np.float64).reshape(-1, 2)
        q = len(cen)
        if labels.min() < 0 or labels.max() >= q:
            raise ValueError(f"labels must lie in [0, {q})")
        if np.unique(labels).size != q:
            raise ValueError("every label must occur at least once")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "centroids", _frozen(cen))
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.float64).reshape(q, -1)
            object.__setattr__(self, "colors", _frozen(col))

    @property
    def q(self) -> int:
        return len(self.centroids)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @classmethod
    def from_labels(cls, labels, image=None) -> "SuperpixelMap":
        """Build a map from a label image, computing mean-position centroids.

        ``image`` (H, W, C) supplies per-label mean colours when given.
        """
        labels = np.asarray(labels)
        q = int(labels.max()) + 1
        flat = labels.ravel()
        h, w = labels.shape
        ys, xs = np.divmod(np.arange(flat.size), w)
        counts = np.bincount(flat, minlength=q).astype(np.float64)
        cx = np.bincount(flat, weights=xs, minlength=q) / np.maximum(counts, 1)
        cy = np.bincount(flat, weights=ys, minlength=q) / np.maximum(counts, 1)
        colors = None
        if image is not None:
            img = np.asarray(image, dtype=np.float64).reshape(h * w, -1)
            colors = np.stack([np.bincount(flat, weights=img[:, c], minlength=q)
                               for c in range(img.shape[1])], axis=1) / np.maximum(counts, 1)[:, None]
        return cls(labels, np.stack([cx, cy], axis=1), colors)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.q)


def render_guide(cube: HsiCube, resp: SpectralResponse | None = None) -> tuple[GuideImage, GrayImage]:
    """Render the RGB and gray guide images a colour camera would see.

    Each channel is the response-weighted band sum; all four channels share
    one normalisation so that the brightest channel value becomes 1.
    """
    if resp is None:
        resp = SpectralResponse.default(cube.wavelengths)
    if resp.bands != cube.bands:
        raise ValueError(f"response has {resp.bands} bands but cube has {cube.bands}")
    flat = cube.data.reshape(cube.bands, -1).astype(np.float64)
    rgb = (resp.rgb_matrix.T @ flat).T.reshape(cube.height, cube.width, 3)
    gray = (resp.gray @ flat).reshape(cube.height, cube.width)
    peak = max(rgb.max(), gray.max())
    if peak > 0:
        rgb = rgb / peak
        gray = gray / peak
    return GuideImage(np.clip(rgb, 0.0, 1.0)), GrayImage(np.clip(gray, 0.0, 1.0))
