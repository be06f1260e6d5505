"""Forward model of the mask + prism + grayscale sensor, and its inverse.

Band ``b`` of an open point at ``(x, y)`` lands on sensor pixel
``(x + shift[b], y)``, optionally smeared by a per-band Gaussian and
weighted by the sensor response. The blur runs along the dispersion
direction by default; it can be switched to the vertical axis, where
neighbouring streaks are kept apart by the vertical guard band.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import correlate1d, uniform_filter1d

from .core import HsiCube, SamplingMask, _frozen
from .io import load_plane, save_plane
from .maskgen import count_conflicts


def blur_kernel(sigma: float) -> np.ndarray:
    """Normalised Gaussian truncated at 3 sigma; a delta for sigma == 0."""
    if sigma <= 0:
        return np.ones(1)
    r = max(0, math.ceil(3.0 * sigma - 1e-9))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def quadratic_through(xs, ys) -> np.ndarray:
    """Coefficients ``[a, b, c]`` of ``a x^2 + b x + c`` through three points."""
    xs = np.asarray(xs, dtype=np.float64)
    return np.linalg.solve(np.vander(xs, 3), np.asarray(ys, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class DispersionModel:
    shifts: np.ndarray
    blur_sigma: np.ndarray | None = None
    response: np.ndarray | None = None
    blur_quadratic: tuple[float, float, float] | None = field(default=None)
    blur_axis: str = "horizontal"

    def __post_init__(self):
        if self.blur_axis not in ("horizontal", "vertical"):
            raise ValueError(f"blur_axis must be 'horizontal' or 'vertical', not {self.blur_axis!r}")
        shifts = np.asarray(self.shifts)
        if shifts.ndim != 1 or shifts.size < 1:
            raise ValueError("shifts must be a non-empty 1-D list")
        if not np.all(shifts == np.round(shifts)):
            raise ValueError("shifts must be integer pixels")
        shifts = shifts.astype(np.int64)
        if shifts[0] != 0 or np.any(np.diff(shifts) < 0):
            raise ValueError("shifts must start at 0 and be non-decreasing")
        b = shifts.size
        sigma = np.zeros(b) if self.blur_sigma is None else np.asarray(self.blur_sigma, dtype=np.float64)
        resp = np.ones(b) if self.response is None else np.asarray(self.response, dtype=np.float64)
        if sigma.shape != (b,) or resp.shape != (b,):
            raise ValueError("shifts, blur_sigma and response must have one entry per band")
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ValueError("blur widths must be finite and >= 0")
        if np.any(resp < 0) or not np.all(np.isfinite(resp)):
            raise ValueError("sensor response must be finite and >= 0")
        for name, arr in (("shifts", shifts), ("blur_sigma", sigma), ("response", resp)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def bands(self) -> int:
        return self.shifts.size

    @property
    def n(self) -> int:
        """Spectral spread in pixels."""
        return int(self.shifts[-1]) + 1

    @property
    def radii(self) -> np.ndarray:
        return np.array([(len(blur_kernel(s)) - 1) // 2 for s in self.blur_sigma], dtype=np.int64)

    @property
    def footprint(self) -> tuple[int, int]:
        """``(n, v)``: minimum horizontal and vertical point spacing for disjoint streaks."""
        r = int(self.radii.max())
        if self.blur_axis == "horizontal":
            return self.n + 2 * r, 1
        return self.n, 2 * r + 1

    @classmethod
    def linear(cls, bands: int, n: int | None = None, **kw) -> "DispersionModel":
        """Evenly spread ``bands`` over ``n`` pixels (one pixel per band by default)."""
        n = bands if n is None else n
        if bands == 1:
            return cls(np.zeros(1, dtype=np.int64), **kw)
        shifts = np.round(np.linspace(0, n - 1, bands)).astype(np.int64)
        return cls(shifts, **kw)

    @classmethod
    def from_quadratic(cls, shifts, coeffs, response=None, axis=None,
                       blur_axis: str = "horizontal") -> "DispersionModel":
        """Blur sigma per band from ``a t^2 + b t + c`` over ``axis`` (band index by default)."""
        shifts = np.asarray(shifts)
        t = np.arange(shifts.size, dtype=np.float64) if axis is None else np.asarray(axis, dtype=np.float64)
        a, b, c = (float(v) for v in coeffs)
        sigma = np.clip(a * t ** 2 + b * t + c, 0.0, None)
        return cls(shifts, sigma, response, (a, b, c), blur_axis)

    @classmethod
    def from_blur_widths(cls, shifts, axis, anchors, response=None,
                         blur_axis: str = "horizontal") -> "DispersionModel":
        """Quadratic blur through three ``(axis value, kernel width in px)`` anchors.

        A kernel of width ``w`` pixels is read as a Gaussian with ``3 sigma = w / 2``.
        """
        (t0, w0), (t1, w1), (t2, w2) = anchors
        coeffs = quadratic_through([t0, t1, t2], [w0 / 6.0, w1 / 6.0, w2 / 6.0])
        return cls.from_quadratic(shifts, coeffs, response, axis, blur_axis)

    def to_json(self) -> dict:
        out = {"shifts": self.shifts.tolist(), "blur_sigma": self.blur_sigma.tolist(),
               "response": self.response.tolist(), "blur_axis": self.blur_axis}
        if self.blur_quadratic is not None:
            out["blur_quadratic"] = list(self.blur_quadratic)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DispersionModel":
        shifts = obj["shifts"]
        axis = obj.get("blur_axis", "horizontal")
        if "blur_sigma" in obj:
            return cls(shifts, obj["blur_sigma"], obj.get("response"), None, axis)
        if "blur_quadratic" in obj:
            return cls.from_quadratic(shifts, obj["blur_quadratic"], obj.get("response"), blur_axis=axis)
        return cls(shifts, None, obj.get("response"), None, axis)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "DispersionModel":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class NoiseParams:
    photon_level: float
    read_std: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.photon_level < 0 or self.read_std < 0:
            raise ValueError("photon level and read noise must be >= 0")


@dataclass(frozen=True, eq=False)
class SensorImage:
    """Sensor frame; ``scale`` converts radiance units to stored counts."""

    values: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("sensor image must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("sensor image contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _check_dims(cube: HsiCube, mask: SamplingMask, disp: DispersionModel) -> None:
    if (mask.width, mask.height) != (cube.width, cube.height):
        raise ValueError(f"mask is {mask.width}x{mask.height} but cube is {cube.width}x{cube.height}")
    if disp.bands != cube.bands:
        raise ValueError(f"dispersion model has {disp.bands} bands but cube has {cube.bands}")


def capture(cube: HsiCube, mask: SamplingMask, disp: DispersionModel,
            contrast_eps: float = 0.0, noise: NoiseParams | None = None,
            sensor_width: int | None = None) -> SensorImage:
    """Simulate one sensor frame.

    Closed SLM pixels leak ``contrast_eps`` of their light. Streak pixels
    falling beyond ``sensor_width`` (the mask width by default) are lost.
    """
    _check_dims(cube, mask, disp)
    if not 0.0 <= contrast_eps < 1.0:
        raise ValueError("contrast_eps must lie in [0, 1)")
    h, w = cube.height, cube.width
    ws = w if sensor_width is None else int(sensor_width)
    if ws < 1:
        raise ValueError("sensor width must be positive")
    m = mask.bitmap.astype(np.float64)
    if contrast_eps:
        m = (1.0 - contrast_eps) * m + contrast_eps
    out = np.zeros((h, ws))
    for b in range(cube.bands):
        c = disp.response[b]
        s = int(disp.shifts[b])
        if c == 0:
            continue
        plane = cube.data[b].astype(np.float64) * m
        k = blur_kernel(disp.blur_sigma[b])
        r = (k.size - 1) // 2
        if r and disp.blur_axis == "vertical":
            plane = correlate1d(plane, k, axis=0, mode="constant")
            r = 0
        elif r:
            plane = correlate1d(np.pad(plane, ((0, 0), (r, r))), k, axis=1, mode="constant")
        # plane column j lands on sensor column j + s - r
        lo, hi = max(0, s - r), min(ws, s - r + plane.shape[1])
        if hi > lo:
            out[:, lo:hi] += plane[:, lo - s + r:hi - s + r] * c
    img = SensorImage(out)
    return img if noise is None else add_noise(img, noise)


def add_noise(signal: SensorImage, noise: NoiseParams) -> SensorImage:
    """Scale so the brightest pixel holds ``photon_level`` e-, then add shot and read noise."""
    v = signal.values
    if np.any(v < 0):
        raise ValueError("cannot add shot noise to a negative signal")
    peak = float(v.max()) if v.size else 0.0
    gain = noise.photon_level / peak if peak > 0 else 0.0
    rng = np.random.Generator(np.random.Philox(noise.seed))
    electrons = rng.poisson(v * gain).astype(np.float64)
    if noise.read_std > 0:
        electrons += rng.normal(0.0, noise.read_std, size=v.shape)
    return SensorImage(electrons, signal.scale * gain)


@dataclass(frozen=True, eq=False)
class SpectralSamples:
    """Demultiplexed spectra at the open points of a mask.

    ``missing[p, b]`` marks bands whose streak pixel fell off the sensor.
    """

    points: np.ndarray
    spectra: np.ndarray
    missing: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        for p, s in zip(self.points.tolist(), self.spectra):
            yield tuple(p), s


def extract_spectra(img: SensorImage, mask: SamplingMask, disp: DispersionModel,
                    guard: int = 1) -> SpectralSamples:
    """Read each open point's spectrum back off its streak.

    Without blur each band is a single sensor pixel divided by its
    response. Vertical blur is undone by summing the counts under the
    kernel support. Horizontal blur smears neighbouring bands into each
    other, so the streak is unmixed by least squares against the known
    per-band kernels.
    """
    if np.any(np.diff(disp.shifts) == 0):
        raise ValueError("bands sharing a sensor column cannot be separated")
    if np.any(disp.response == 0):
        raise ValueError("zero sensor response for band "
                         f"{int(np.flatnonzero(disp.response == 0)[0])}")
    if img.scale == 0:
        raise ValueError("sensor image carries no signal (scale 0)")
    if img.height != mask.height or img.width < mask.width:
        raise ValueError("sensor image does not cover the mask")
    n_eff, v_min = disp.footprint
    if count_conflicts(mask, n_eff, max(guard, v_min)):
        raise ValueError("mask is not conflict-free; streaks overlap")
    pts = mask.points
    p, nb = len(pts), disp.bands
    spectra = np.zeros((p, nb))
    missing = (pts[:, :1] + disp.shifts[None, :]) >= img.width
    if p == 0:
        return SpectralSamples(pts, spectra, missing)
    radii = disp.radii
    if disp.blur_axis == "horizontal" and radii.max() > 0:
        spectra = _unmix_rows(img, pts, disp)
    else:
        h, ws = img.height, img.width
        vals = img.values
        xs, ys = pts[:, 0], pts[:, 1]
        for b in range(nb):
            ok = ~missing[:, b]
            cc = np.where(ok, xs + disp.shifts[b], 0)
            r = int(radii[b])
            if r == 0:
                acc = vals[ys, cc]
            else:
                acc = np.zeros(p)
                for dy in range(-r, r + 1):
                    rows = ys + dy
                    inside = (rows >= 0) & (rows < h)
                    acc += np.where(inside, vals[np.clip(rows, 0, h - 1), cc], 0.0)
            spectra[:, b] = acc / disp.response[b]
        spectra /= img.scale
    spectra[missing] = 0.0
    return SpectralSamples(pts, spectra, missing)


def _unmix_rows(img: SensorImage, pts: np.ndarray, disp: DispersionModel) -> np.ndarray:
    big_r = int(disp.radii.max())
    length = disp.n + 2 * big_r
    mix = np.zeros((length, disp.bands))
    for b in range(disp.bands):
        k = blur_kernel(disp.blur_sigma[b])
        r = (k.size - 1) // 2
        start = int(disp.shifts[b]) + big_r - r
        mix[start:start + k.size, b] = k * disp.response[b]
    cols = pts[:, :1] + np.arange(length)[None, :] - big_r
    valid = (cols >= 0) & (cols < img.width)
    meas = np.where(valid, img.values[pts[:, 1:2], np.clip(cols, 0, img.width - 1)], 0.0)
    out = np.zeros((len(pts), disp.bands))
    full = valid.all(axis=1)
    out[full] = meas[full] @ np.linalg.pinv(mix).T
    for i in np.flatnonzero(~full):
        out[i] = np.linalg.lstsq(mix[valid[i]], meas[i, valid[i]], rcond=None)[0]
    return out / img.scale


def streak_footprint(mask: SamplingMask, disp: DispersionModel, sensor_width: int | None = None,
                     margin: int = 0) -> np.ndarray:
    """Boolean map of sensor pixels covered by predicted streaks (blur included)."""
    ws = mask.width if sensor_width is None else sensor_width
    h = mask.height
    r = int(disp.radii.max())
    rx, ry = (r, 0) if disp.blur_axis == "horizontal" else (0, r)
    foot = np.zeros((h, ws + 1), dtype=np.int64)
    x0 = np.clip(mask.points[:, 0] - rx - margin, 0, ws)
    x1 = np.clip(mask.points[:, 0] + disp.n + rx + margin, 0, ws)
    for dy in range(-ry - margin, ry + margin + 1):
        rows = mask.points[:, 1] + dy
        ok = (rows >= 0) & (rows < h)
        np.add.at(foot, (rows[ok], x0[ok]), 1)
        np.add.at(foot, (rows[ok], x1[ok]), -1)
    return np.cumsum(foot, axis=1)[:, :ws] > 0


def _interp_linear_ends(xq: np.ndarray, xp: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """``np.interp`` that continues the end segments linearly instead of clamping."""
    out = np.interp(xq, xp, fp)
    if xp.size >= 2:
        lo, hi = xq < xp[0], xq > xp[-1]
        out[lo] = fp[0] + (xq[lo] - xp[0]) * (fp[1] - fp[0]) / (xp[1] - xp[0])
        out[hi] = fp[-1] + (xq[hi] - xp[-1]) * (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
    return out


def _smooth_rows(a: np.ndarray, size: int) -> np.ndarray:
    """Vertical box filter; edges are padded by point reflection, which keeps linear trends."""
    p = min(size // 2, a.shape[0] - 1)
    if p < 1:
        return a
    top = 2 * a[:1] - a[p:0:-1]
    bottom = 2 * a[-1:] - a[-2:-p - 2:-1]
    padded = np.concatenate([top, a, bottom])
    return uniform_filter1d(padded, size=2 * p + 1, axis=0, mode="nearest")[p:p + a.shape[0]]


def remove_offset(img: SensorImage, mask: SamplingMask, disp: DispersionModel,
                  margin: int = 0) -> tuple[SensorImage, SensorImage]:
    """Estimate and subtract the smooth background from SLM leakage.

    Streak pixels are masked out. Gaps with free pixels on both sides are
    bridged by a natural cubic spline along the row; the rest (row ends and
    fully covered rows) are interpolated down their column, extending the
    end segments linearly. The estimate is then smoothed with a 5-row box
    filter.
    """
    h, ws = img.height, img.width
    known = ~streak_footprint(mask, disp, ws, margin)
    if not known.any():
        raise ValueError("every sensor pixel is covered by streaks; no background to fit")
    vals = img.values
    offset = np.array(vals, dtype=np.float64)
    xs = np.arange(ws)
    filled = known.copy()
    for y in np.flatnonzero(known.sum(axis=1) >= 2):
        free = known[y]
        if free.all():
            continue
        fx = xs[free]
        gap = ~free & (xs > fx[0]) & (xs < fx[-1])
        if gap.any():
            offset[y, gap] = CubicSpline(fx, vals[y, free], bc_type="natural")(xs[gap])
            filled[y, gap] = True
    if not filled.all():
        ys = np.arange(h)
        cols = np.flatnonzero(filled.any(axis=0))
        for x in np.flatnonzero(~filled.all(axis=0)):
            src = x
            if not filled[:, x].any():
                src = cols[np.argmin(np.abs(cols - x))]
            have = filled[:, src]
            offset[~filled[:, x], x] = _interp_linear_ends(ys[~filled[:, x]], ys[have], offset[have, src])
    offset = _smooth_rows(offset, 5)
    clean = vals - offset
    return SensorImage(clean, img.scale), SensorImage(offset, img.scale)


def nyquist_scan(cube: HsiCube, disp: DispersionModel, h_spacing: int = 100, v_spacing: int = 5,
                 noise: NoiseParams | None = None, contrast_eps: float = 0.0) -> HsiCube:
    """Raster-scan a shifted pinhole array and reassemble the full cube.

    The simulated sensor is ``N - 1`` pixels wider than the SLM image so
    that right-edge columns keep their full spectrum.
    """
    if disp.bands != cube.bands:
        raise ValueError(f"dispersion model has {disp.bands} bands but cube has {cube.bands}")
    n_eff, v_min = disp.footprint
    if h_spacing <= disp.n or h_spacing < n_eff:
        raise ValueError(f"horizontal pinhole spacing {h_spacing} must exceed the streak length {n_eff}")
    if v_spacing < v_min:
        raise ValueError(f"vertical pinhole spacing {v_spacing} is inside the blur support {v_min}")
    h, w = cube.height, cube.width
    ws = w + disp.n - 1
    out = np.zeros((cube.bands, h, w))
    seeds = None
    if noise is not None:
        seeds = np.random.SeedSequence(noise.seed).generate_state(h_spacing * v_spacing, dtype=np.uint64)
    frame = 0
    for j in range(v_spacing):
        for i in range(h_spacing):
            xs = np.arange(i, w, h_spacing)
            ys = np.arange(j, h, v_spacing)
            if xs.size == 0 or ys.size == 0:
                frame += 1
                continue
            gx, gy = np.meshgrid(xs, ys)
            mask = SamplingMask(w, h, np.stack([gx.ravel(), gy.ravel()], axis=1))
            fnoise = None
            if noise is not None:
                fnoise = NoiseParams(noise.photon_level, noise.read_std, int(seeds[frame]))
            img = capture(cube, mask, disp, contrast_eps, fnoise, sensor_width=ws)
            s = extract_spectra(img, mask, disp, guard=v_spacing)
            out[:, s.points[:, 1], s.points[:, 0]] = s.spectra.T
            frame += 1
    return HsiCube(np.clip(out, 0.0, None).astype(np.float32), cube.wavelengths)


def save_sensor(img: SensorImage, path) -> None:
    """Raw float32 with sidecar, or a clipped 16-bit PNG for ``.png``/``.png16``."""
    p = Path(path)
    if p.suffix.lower() in (".png", ".png16"):
        q = np.clip(np.round(img.values), 0, 65535).astype(np.uint16)
        ok, buf = cv2.imencode(".png", q)
        if not ok:
            raise OSError(f"failed to encode {path}")
        p.write_bytes(buf.tobytes())
        p.with_name(p.name + ".json").write_text(
            json.dumps({"width": img.width, "height": img.height, "scale": img.scale}) + "\n")
        return
    save_plane(img.values, p, scale=img.scale)


def load_sensor(path) -> SensorImage:
    p = Path(path)
    if p.suffix.lower() in (".png", ".png16"):
        raw = cv2.imdecode(np.frombuffer(p.read_bytes(), np.uint8), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise ValueError(f"cannot decode {path}")
        side = p.with_name(p.name + ".json")
        scale = json.loads(side.read_text())["scale"] if side.exists() else 1.0
        return SensorImage(raw.astype(np.float64), float(scale))
    values, header = load_plane(p)
    return SensorImage(values, float(header.get("scale", 1.0)))
