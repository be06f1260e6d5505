"""Scene-adaptive sampling masks.

Two open points ``p`` and ``q`` conflict when their spectral streaks would
land on the same sensor pixels: ``|y_p - y_q| < V`` and ``|x_p - x_q| < N``,
where every streak covers ``[x, x + N)`` on its row. All masks produced here
keep every streak fully on the sensor: ``x + N <= sensor_width``, where the
sensor is as wide as the mask unless a wider one is declared.
"""
from __future__ import annotations

import bisect
import time
from dataclasses import dataclass

import numba
import numpy as np

from .core import GuideImage, SamplingMask, SuperpixelMap
from .superpixel import SlicParams, reseed_slic, slic, to_lab


@dataclass(frozen=True)
class MaskGenParams:
    n: int
    v: int = 1
    q: int | None = None
    compactness: float = 10.0
    max_shift: int | None = None
    sensor_width: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("spectral spread N must be >= 1")
        if self.v < 1:
            raise ValueError("vertical guard V must be >= 1")
        if self.q is not None and self.q < 1:
            raise ValueError("superpixel count must be >= 1")
        if self.max_shift is not None and self.max_shift < 0:
            raise ValueError("max_shift must be >= 0")
        if self.sensor_width is not None and self.sensor_width < self.n:
            raise ValueError("sensor_width must be at least N")

    @property
    def shift_limit(self) -> int:
        return 2 * self.n if self.max_shift is None else self.max_shift

    def superpixels(self, height: int, width: int) -> int:
        """Q, defaulting to a quarter of the streak budget HW / N."""
        if self.q is not None:
            return self.q
        return max(1, round(height * width / (4 * self.n)))

    def check(self, height: int, width: int) -> None:
        if self.n > width:
            raise ValueError(f"spectral spread N={self.n} exceeds mask width {width}")
        if self.v > height:
            raise ValueError(f"vertical guard V={self.v} exceeds mask height {height}")

    def last_column(self, width: int) -> int:
        """Rightmost column whose streak still fits on the sensor."""
        ws = width if self.sensor_width is None else self.sensor_width
        return min(width - 1, ws - self.n)


@numba.njit(cache=True)
def _count_conflicts(bitmap, n, v):
    h, w = bitmap.shape
    count = 0
    for y in range(h):
        for x in range(w):
            if not bitmap[y, x]:
                continue
            for yy in range(y, min(h, y + v)):
                lo = x + 1 if yy == y else max(0, x - n + 1)
                for xx in range(lo, min(w, x + n)):
                    if bitmap[yy, xx]:
                        count += 1
    return count


def count_conflicts(mask: SamplingMask, n: int, v: int = 1) -> int:
    """Number of conflicting point pairs."""
    return int(_count_conflicts(mask.bitmap, n, v))


def is_conflict_free(mask: SamplingMask, n: int, v: int = 1) -> bool:
    return count_conflicts(mask, n, v) == 0


@numba.njit(cache=True)
def _nearest_members(labels, cx, cy, wanted, best_x, best_y):
    h, w = labels.shape
    best = np.full(wanted.shape[0], np.inf)
    for y in range(h):
        for x in range(w):
            l = labels[y, x]
            if wanted[l]:
                d = (x - cx[l]) ** 2 + (y - cy[l]) ** 2
                if d < best[l]:
                    best[l] = d
                    best_x[l] = x
                    best_y[l] = y


def centroid_mask(spmap: SuperpixelMap) -> SamplingMask:
    """One opening per superpixel, at the member pixel nearest its centroid."""
    labels = spmap.labels
    h, w = labels.shape
    cen = spmap.centroids
    rx = np.clip(np.floor(cen[:, 0] + 0.5).astype(np.int64), 0, w - 1)
    ry = np.clip(np.floor(cen[:, 1] + 0.5).astype(np.int64), 0, h - 1)
    outside = labels[ry, rx] != np.arange(spmap.q)
    if outside.any():
        _nearest_members(labels, cen[:, 0].copy(), cen[:, 1].copy(), outside, rx, ry)
    return SamplingMask(w, h, np.stack([rx, ry], axis=1))


def enforce_separation(mask: SamplingMask, params: MaskGenParams) -> SamplingMask:
    """Move or drop points until no two streaks conflict.

    Points are visited row-major and the first point of a conflict wins.
    A losing point moves to the nearest free column to its right within
    ``max_shift``, otherwise to its left, otherwise it is removed. Columns
    whose streak would run off the sensor count as occupied.
    """
    n, v, w = params.n, params.v, mask.width
    params.check(mask.height, w)
    limit = params.shift_limit
    last = params.last_column(w)
    kept_rows: dict[int, list[int]] = {}

    def blockers(x, y):
        lo = hi = None
        for r in range(y - v + 1, y + v):
            row = kept_rows.get(r)
            if not row:
                continue
            i = bisect.bisect_left(row, x - n + 1)
            j = bisect.bisect_left(row, x + n, i)
            if j > i:
                lo = row[i] if lo is None else min(lo, row[i])
                hi = row[j - 1] if hi is None else max(hi, row[j - 1])
        return lo, hi

    def search(x, y, step):
        cand = x
        while abs(cand - x) <= limit:
            if cand > last:
                if step > 0:
                    return None
                cand = last
                continue
            if cand < 0:
                return None
            lo, hi = blockers(cand, y)
            if lo is None:
                return cand
            nxt = hi + n if step > 0 else lo - n
            if step * (nxt - cand) <= 0:
                return None
            cand = nxt
        return None

    out = []
    for x, y in mask.points.tolist():
        target = search(x, y, +1)
        if target is None:
            target = search(x, y, -1)
        if target is None:
            continue
        bisect.insort(kept_rows.setdefault(y, []), target)
        out.append((target, y))
    pts = np.array(out, dtype=np.int64).reshape(-1, 2)
    return SamplingMask(w, mask.height, pts)


@numba.njit(cache=True)
def _greedy_fill(bitmap, n, v, last):
    h, w = bitmap.shape
    diff = np.zeros(w + 1, dtype=np.int64)
    for y in range(h):
        diff[:] = 0
        for r in range(max(0, y - v + 1), min(h, y + v)):
            for x in range(w):
                if bitmap[r, x]:
                    diff[max(0, x - n + 1)] += 1
                    diff[min(w, x + n)] -= 1
        run = 0
        next_free = 0
        for x in range(last + 1):
            run += diff[x]
            if run == 0 and x >= next_free:
                bitmap[y, x] = True
                next_free = x + n


def maximize_throughput(mask: SamplingMask, params: MaskGenParams) -> SamplingMask:
    """Greedily open every pixel that can take a full, non-conflicting streak.

    Rows are scanned top to bottom and columns left to right; existing
    openings are never closed.
    """
    params.check(mask.height, mask.width)
    if not is_conflict_free(mask, params.n, params.v):
        raise ValueError("input mask is not conflict-free")
    bm = mask.bitmap
    _greedy_fill(bm, params.n, params.v, params.last_column(mask.width))
    return SamplingMask.from_bitmap(bm)


def uniform_grid_mask(width: int, height: int, n: int, v: int = 1,
                      sensor_width: int | None = None) -> SamplingMask:
    """Regular pinhole grid with horizontal spacing N and vertical spacing V."""
    ws = width if sensor_width is None else sensor_width
    xs = np.arange(0, min(width - 1, ws - n) + 1, n)
    ys = np.arange(0, height, v)
    gx, gy = np.meshgrid(xs, ys)
    return SamplingMask(width, height, np.stack([gx.ravel(), gy.ravel()], axis=1))


def generate_mask(guide: GuideImage, params: MaskGenParams,
                  timings: dict | None = None) -> tuple[SamplingMask, SuperpixelMap]:
    """SLIC -> centroids -> separation -> re-segmentation -> greedy fill.

    The returned map is the re-segmented one; each of its labels holds the
    surviving centroid it was grown from, which is open in the mask.
    """
    h, w = guide.height, guide.width
    params.check(h, w)
    q = min(params.superpixels(h, w), h * w)
    clock = time.perf_counter
    t0 = clock()
    lab = to_lab(guide)
    sp = slic(guide, SlicParams(q, params.compactness), lab)
    t1 = clock()
    seeds = enforce_separation(centroid_mask(sp), params)
    t2 = clock()
    spmap = reseed_slic(guide, seeds.points, params.compactness, lab=lab)
    t3 = clock()
    mask = maximize_throughput(seeds, params)
    t4 = clock()
    if timings is not None:
        timings["slic_ms"] = (t1 - t0) * 1e3
        timings["separation_ms"] = (t2 - t1) * 1e3
        timings["reseed_ms"] = (t3 - t2) * 1e3
        timings["throughput_ms"] = (t4 - t3) * 1e3
    return mask, spmap


def label_coverage(mask: SamplingMask, spmap: SuperpixelMap) -> np.ndarray:
    """Open-point count per superpixel label."""
    if len(mask) == 0:
        return np.zeros(spmap.q, dtype=np.int64)
    hit = spmap.labels[mask.points[:, 1], mask.points[:, 0]]
    return np.bincount(hit, minlength=spmap.q)
