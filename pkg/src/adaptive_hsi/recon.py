"""Full-cube reconstruction from a guide image and sparse spectral samples.

Two closed-form paths are provided: rank-1 propagation inside superpixels,
and a guided filter whose local affine fit only counts sampled pixels.
The learned variant lives in :mod:`adaptive_hsi.network`.
"""
from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .core import GrayImage, GuideImage, HsiCube, SamplingMask, SuperpixelMap
from .sensor import DispersionModel, SensorImage, SpectralSamples, extract_spectra, remove_offset


@dataclass(frozen=True, eq=False)
class SparseSpectralImage:
    """Per-band planes that are nonzero only at sampled pixels.

    ``valid[b]`` is the sample support of band ``b``: the open points minus
    those whose band-``b`` pixel fell off the sensor.
    """

    values: np.ndarray
    mask: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape != self.valid.shape:
            raise ValueError("values and valid must both be (bands, height, width)")
        if self.mask.shape != self.values.shape[1:]:
            raise ValueError("mask must be (height, width)")
        if np.any(self.valid & ~self.mask[None]):
            raise ValueError("band support must lie inside the sample mask")
        if np.any(self.values[~self.valid] != 0):
            raise ValueError("band planes must be zero off their support")

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @classmethod
    def from_samples(cls, samples: SpectralSamples, width: int, height: int) -> "SparseSpectralImage":
        nb = samples.spectra.shape[1]
        values = np.zeros((nb, height, width))
        valid = np.zeros((nb, height, width), dtype=bool)
        mask = np.zeros((height, width), dtype=bool)
        if len(samples):
            xs, ys = samples.points[:, 0], samples.points[:, 1]
            mask[ys, xs] = True
            ok = ~samples.missing.T
            valid[:, ys, xs] = ok
            values[:, ys, xs] = np.where(ok, samples.spectra.T, 0.0)
        return cls(values, mask, valid)


def rank1(gray: GrayImage, spmap: SuperpixelMap, samples: SpectralSamples,
          wavelengths=None) -> HsiCube:
    """Give every pixel its superpixel's summed sample spectrum, scaled by gray ratio.

    For label ``l`` with samples ``p``: ``H(u) = gray(u) / sum_p gray(p) * sum_p S_p``.
    Sampled pixels keep their measurements. Off-sensor bands are left out of
    both sums for that band.
    """
    h, w = gray.height, gray.width
    if (spmap.height, spmap.width) != (h, w):
        raise ValueError("superpixel map and gray image differ in size")
    pts = samples.points
    nb = samples.spectra.shape[1]
    q = spmap.q
    lab_p = spmap.labels[pts[:, 1], pts[:, 0]] if len(pts) else np.zeros(0, dtype=np.int64)
    per_label = np.bincount(lab_p, minlength=q)
    if np.any(per_label == 0):
        empty = np.flatnonzero(per_label == 0)
        raise ValueError(f"{empty.size} superpixel label(s) have no samples, e.g. label {int(empty[0])}")
    ok = ~samples.missing
    g_p = gray.values[pts[:, 1], pts[:, 0]]
    num = np.zeros((q, nb))
    den = np.zeros((q, nb))
    np.add.at(num, lab_p, np.where(ok, samples.spectra, 0.0))
    np.add.at(den, lab_p, ok * g_p[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / den, 0.0)
    dark = (den == 0) & (per_label[:, None] > 0)
    if dark.any():
        warnings.warn(f"{int(dark.any(axis=1).sum())} superpixel(s) have zero gray over their samples;"
                      " those bands are left at zero", RuntimeWarning, stacklevel=2)
    lab = spmap.labels.ravel()
    out = (ratio[lab] * gray.values.ravel()[:, None]).T.reshape(nb, h, w)
    out[:, pts[:, 1], pts[:, 0]] = np.where(ok, samples.spectra, out[:, pts[:, 1], pts[:, 0]].T).T
    wl = np.arange(nb, dtype=np.float64) if wavelengths is None else wavelengths
    return HsiCube(np.clip(out, 0.0, None), wl)


class _Correlator:
    """Zero-padded 2-D correlation with a fixed kernel, via real FFTs."""

    def __init__(self, shape: tuple[int, int], kernel: np.ndarray):
        kh, kw = kernel.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel dimensions must be odd, got {kernel.shape}")
        self.shape = shape
        self.pad = (shape[0] + kh - 1, shape[1] + kw - 1)
        self.fshape = tuple(fft.next_fast_len(n, real=True) for n in self.pad)
        self.off = (kh // 2, kw // 2)
        self.kf = fft.rfft2(kernel[::-1, ::-1], self.fshape)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        full = fft.irfft2(fft.rfft2(x, self.fshape) * self.kf, self.fshape)
        (h, w), (oy, ox) = self.shape, self.off
        return full[oy:oy + h, ox:ox + w]


class GuidedPlan:
    """Band-independent part of the masked guided filter for one mask and kernel.

    Moments are kernel-weighted means over sampled pixels, e.g.
    ``mu_x = corr(g M) / C_M`` with ``C_M = corr(M)``. For a gray guide the
    slope is ``alpha = (mu_xy - mu_x mu_y) / (mu_xx - mu_x^2 + eps)``; a
    multi-channel guide (H, W, C) solves the same least-squares fit with a
    C-vector slope and ``eps`` on the diagonal. ``apply`` returns
    ``alpha . g + beta``.
    """

    def __init__(self, guide: np.ndarray, mask: np.ndarray, kernel: np.ndarray,
                 eps: float = 1e-4, average: bool = False):
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2 or not np.all(np.isfinite(kernel)) or np.any(kernel < 0):
            raise ValueError("kernel must be a 2-D array of finite, non-negative weights")
        g = np.asarray(guide, dtype=np.float64)
        self.gray = g.ndim == 2
        g = g[:, :, None] if self.gray else g
        if g.ndim != 3 or g.shape[:2] != mask.shape:
            raise ValueError("guide and mask differ in size")
        self.guide = g
        self.mask = np.asarray(mask, dtype=np.float64)
        self.eps = eps
        self.average = average
        shape = self.mask.shape
        self.corr = _Correlator(shape, kernel)
        support = _Correlator(shape, (kernel > 0).astype(np.float64))
        self.covered = np.rint(support(self.mask)) > 0
        self.cm = np.where(self.covered, self.corr(self.mask), 1.0)
        gm = g * self.mask[:, :, None]
        nc = g.shape[2]
        self.mu_x = np.stack([self._mean(gm[:, :, c]) for c in range(nc)], axis=2)
        sigma = np.empty(shape + (nc, nc))
        for i in range(nc):
            for j in range(i, nc):
                sigma[:, :, i, j] = sigma[:, :, j, i] = (
                    self._mean(gm[:, :, i] * g[:, :, j]) - self.mu_x[:, :, i] * self.mu_x[:, :, j])
        sigma += eps * np.eye(nc)
        if self.gray:
            self.denom = sigma[:, :, 0, 0]
        else:
            self.inv = np.linalg.inv(sigma)
        if average:
            self.norm = self.corr(np.ones(shape))

    def _mean(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.covered, self.corr(x) / self.cm, 0.0)

    def coefficients(self, band: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel slope ``(H, W, C)`` and offset ``(H, W)``."""
        y = np.asarray(band, dtype=np.float64) * self.mask
        mu_y = self._mean(y)
        cov = np.stack([self._mean(y * self.guide[:, :, c]) - self.mu_x[:, :, c] * mu_y
                        for c in range(self.guide.shape[2])], axis=2)
        if self.gray:
            alpha = cov / self.denom[:, :, None]
        else:
            alpha = np.einsum("yxij,yxj->yxi", self.inv, cov)
        alpha = np.where(self.covered[:, :, None], alpha, 0.0)
        beta = np.where(self.covered, mu_y - np.sum(alpha * self.mu_x, axis=2), 0.0)
        return alpha, beta

    def apply(self, band: np.ndarray) -> np.ndarray:
        alpha, beta = self.coefficients(band)
        if self.average:
            # textbook variant: average the coefficients of every window covering a pixel
            alpha = np.stack([self.corr(alpha[:, :, c]) / self.norm
                              for c in range(alpha.shape[2])], axis=2)
            beta = self.corr(beta) / self.norm
        return np.where(self.covered, np.sum(alpha * self.guide, axis=2) + beta, 0.0)


def guided_filter_band(band: np.ndarray, mask: np.ndarray, guide, kernel: np.ndarray,
                       eps: float = 1e-4, average: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Masked guided filter of one band. Returns ``(output, uncovered)``.

    ``guide`` is a :class:`GrayImage`, a :class:`GuideImage` or a raw
    (H, W) / (H, W, C) array. ``uncovered`` marks pixels whose kernel
    support holds no sample; the output there is 0.
    """
    g = _guide_array(guide)
    if band.shape != g.shape[:2]:
        raise ValueError("band and guide differ in size")
    plan = GuidedPlan(g, mask, kernel, eps, average)
    return plan.apply(band), ~plan.covered


def _guide_array(guide) -> np.ndarray:
    if isinstance(guide, GrayImage):
        return guide.values
    if isinstance(guide, GuideImage):
        return guide.rgb
    return np.asarray(guide, dtype=np.float64)


def box_kernel(h: int, w: int | None = None) -> np.ndarray:
    return np.ones((h, h if w is None else w))


def gaussian_kernel(h: int, w: int, sigma_y: float, sigma_x: float) -> np.ndarray:
    """Separable Gaussian on an ``h x w`` grid, normalised to sum 1."""
    ty = np.arange(h) - (h - 1) / 2.0
    tx = np.arange(w) - (w - 1) / 2.0
    k = np.outer(np.exp(-0.5 * (ty / sigma_y) ** 2), np.exp(-0.5 * (tx / sigma_x) ** 2))
    return k / k.sum()


def _band_groups(sparse: SparseSpectralImage) -> list[tuple[np.ndarray, list[int]]]:
    """Bands sharing a sample support share one plan."""
    groups: list[tuple[np.ndarray, list[int]]] = []
    for b in range(sparse.bands):
        for support, members in groups:
            if np.array_equal(support, sparse.valid[b]):
                members.append(b)
                break
        else:
            groups.append((sparse.valid[b], [b]))
    return groups


def _map_bands(fn, bands: list[int], threads: int) -> list:
    if threads <= 1 or len(bands) < 2:
        return [fn(b) for b in bands]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, bands))


def guided_cube(sparse: SparseSpectralImage, guide, kernel: np.ndarray,
                eps: float = 1e-4, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Masked guided filter on every band. Returns ``(bands x H x W, uncovered[b, y, x])``."""
    g = _guide_array(guide)
    out = np.zeros(sparse.values.shape)
    uncovered = np.zeros(sparse.values.shape, dtype=bool)
    for support, members in _band_groups(sparse):
        plan = GuidedPlan(g, support, kernel, eps)
        planes = _map_bands(lambda b: plan.apply(sparse.values[b]), members, threads)
        for b, plane in zip(members, planes):
            out[b] = plane
            uncovered[b] = ~plan.covered
    return out, uncovered


def _odd(x: float) -> int:
    return max(1, int(round(x)) | 1)


@dataclass(frozen=True)
class GuidedParams:
    """Kernel for the ``guided`` method: an ``height x width`` Gaussian with sigma = size / 4."""

    height: int = 51
    width: int = 103
    eps: float = 1e-4

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.height % 2 == 0 or self.width % 2 == 0:
            raise ValueError("guided kernel dimensions must be odd and positive")
        if self.eps <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def for_spread(cls, n: int, **kw) -> "GuidedParams":
        """Kernel about 0.75 N tall and 1.5 N wide (51 x 103 at N = 68)."""
        return cls(_odd(0.75 * n), _odd(1.5 * n), **kw)

    def kernel(self) -> np.ndarray:
        return gaussian_kernel(self.height, self.width, self.height / 4.0, self.width / 4.0)


METHODS = ("rank1", "guided", "network")


def reconstruct_frame(guide_t, gray_t: GrayImage, sensor_t: SensorImage, mask_t: SamplingMask,
                      spmap_t: SuperpixelMap, disp: DispersionModel, method: str = "rank1",
                      *, guard: int = 1, guided: GuidedParams | None = None, weights=None,
                      guide_mode: str = "rgb", remove_background: bool = False, wavelengths=None,
                      threads: int = 1, report: dict | None = None) -> HsiCube:
    """Demultiplex one sensor frame and fuse it with the guide from the same instant.

    The filter-based methods fit against the RGB guide (``guide_mode="rgb"``)
    or its gray rendering. Pixels that no kernel reaches fall back to the
    rank-1 estimate.
    ``report`` (if given) receives stage timings and the uncovered fraction.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if guide_mode not in ("rgb", "gray"):
        raise ValueError(f"guide_mode must be 'rgb' or 'gray', not {guide_mode!r}")
    h, w = gray_t.height, gray_t.width
    if (mask_t.width, mask_t.height) != (w, h) or (spmap_t.width, spmap_t.height) != (w, h):
        raise ValueError("guide, mask and superpixel map must share one size")
    clock = time.perf_counter
    t0 = clock()
    img = remove_offset(sensor_t, mask_t, disp)[0] if remove_background else sensor_t
    samples = extract_spectra(img, mask_t, disp, guard)
    t1 = clock()
    wl = np.arange(disp.bands, dtype=np.float64) if wavelengths is None else wavelengths
    base = rank1(gray_t, spmap_t, samples, wl)
    uncovered_frac = 0.0
    if method != "rank1":
        sparse = SparseSpectralImage.from_samples(samples, w, h)
        g = guide_t if guide_mode == "rgb" else gray_t
        if method == "guided":
            params = guided or GuidedParams.for_spread(disp.n)
            fused, uncovered = guided_cube(sparse, g, params.kernel(), params.eps, threads)
        else:
            from .network import default_weights_for, fuse_network_planes
            fused, uncovered = fuse_network_planes(sparse, g, weights or default_weights_for(disp.n), threads)
        fused = np.where(uncovered, base.data, fused)
        uncovered_frac = float(uncovered.mean())
        base = HsiCube(np.clip(fused, 0.0, None), wl)
    t2 = clock()
    if report is not None:
        report["extract_ms"] = (t1 - t0) * 1e3
        report["fuse_ms"] = (t2 - t1) * 1e3
        report["uncovered_fraction"] = uncovered_frac
        report["samples"] = len(samples)
    return base
