"""SLIC superpixels and re-segmentation around fixed sampling points.

Clustering runs in CIELAB on a 5-D (L, a, b, x, y) feature with the usual
SLIC distance ``D^2 = d_c^2 + (d_s / S)^2 * C^2``. Both entry points end
with a connectivity pass so every returned label is one 4-connected region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.ndimage import distance_transform_edt
from skimage.color import rgb2lab

from .core import GuideImage, SuperpixelMap


@dataclass(frozen=True)
class SlicParams:
    q: int
    compactness: float = 10.0
    iterations: int = 10

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("superpixel count must be >= 1")
        if not self.compactness > 0:
            raise ValueError("compactness must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def to_lab(guide: GuideImage) -> np.ndarray:
    return np.ascontiguousarray(rgb2lab(guide.rgb), dtype=np.float64)


def grid_step(height: int, width: int, q: int) -> float:
    return math.sqrt(height * width / q)


@numba.njit(cache=True)
def _assign(lab, cx, cy, ccol, step, compactness, labels, dist):
    h, w = labels.shape
    wgt = (compactness / step) ** 2
    labels[:, :] = -1
    dist[:, :] = np.inf
    for k in range(cx.shape[0]):
        x0 = max(0, int(math.ceil(cx[k] - step)))
        x1 = min(w - 1, int(math.floor(cx[k] + step)))
        y0 = max(0, int(math.ceil(cy[k] - step)))
        y1 = min(h - 1, int(math.floor(cy[k] + step)))
        for y in range(y0, y1 + 1):
            dy = y - cy[k]
            for x in range(x0, x1 + 1):
                dx = x - cx[k]
                d0 = lab[y, x, 0] - ccol[k, 0]
                d1 = lab[y, x, 1] - ccol[k, 1]
                d2 = lab[y, x, 2] - ccol[k, 2]
                d = d0 * d0 + d1 * d1 + d2 * d2 + (dx * dx + dy * dy) * wgt
                if d < dist[y, x]:
                    dist[y, x] = d
                    labels[y, x] = k


@numba.njit(cache=True)
def _sums(lab, labels, k):
    h, w = labels.shape
    acc = np.zeros((k, 6))
    for y in range(h):
        for x in range(w):
            l = labels[y, x]
            if l >= 0:
                acc[l, 0] += 1.0
                acc[l, 1] += x
                acc[l, 2] += y
                acc[l, 3] += lab[y, x, 0]
                acc[l, 4] += lab[y, x, 1]
                acc[l, 5] += lab[y, x, 2]
    return acc


@numba.njit(cache=True)
def _components(labels):
    """4-connected components of equal label; ids follow row-major first pixel."""
    h, w = labels.shape
    comp = -np.ones((h, w), dtype=np.int64)
    stack = np.empty(h * w, dtype=np.int64)
    sizes = []
    comp_label = []
    n = 0
    for y0 in range(h):
        for x0 in range(w):
            if comp[y0, x0] >= 0:
                continue
            lab = labels[y0, x0]
            comp[y0, x0] = n
            stack[0] = y0 * w + x0
            top = 1
            size = 0
            while top > 0:
                top -= 1
                p = stack[top]
                y = p // w
                x = p - y * w
                size += 1
                if x > 0 and comp[y, x - 1] < 0 and labels[y, x - 1] == lab:
                    comp[y, x - 1] = n
                    stack[top] = p - 1
                    top += 1
                if x < w - 1 and comp[y, x + 1] < 0 and labels[y, x + 1] == lab:
                    comp[y, x + 1] = n
                    stack[top] = p + 1
                    top += 1
                if y > 0 and comp[y - 1, x] < 0 and labels[y - 1, x] == lab:
                    comp[y - 1, x] = n
                    stack[top] = p - w
                    top += 1
                if y < h - 1 and comp[y + 1, x] < 0 and labels[y + 1, x] == lab:
                    comp[y + 1, x] = n
                    stack[top] = p + w
                    top += 1
            sizes.append(size)
            comp_label.append(lab)
            n += 1
    return comp, np.array(sizes, dtype=np.int64), np.array(comp_label, dtype=np.int64)


def _adjacency(comp: np.ndarray, n: int) -> list[set]:
    keys = []
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        a, b = a.ravel(), b.ravel()
        sel = a != b
        a, b = a[sel], b[sel]
        keys.append(a * n + b)
        keys.append(b * n + a)
    e = np.unique(np.concatenate(keys))
    src, dst = np.divmod(e, n)
    adj = [set() for _ in range(n)]
    bounds = np.searchsorted(src, np.arange(n + 1))
    dst = dst.tolist()
    for i in range(n):
        lo, hi = bounds[i], bounds[i + 1]
        if hi > lo:
            adj[i] = set(dst[lo:hi])
    return adj


class _Regions:
    """Union-find over components with size and adjacency bookkeeping."""

    def __init__(self, sizes, adj):
        self.parent = list(range(len(sizes)))
        self.size = [int(s) for s in sizes]
        self.adj = adj

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def neighbours(self, root):
        out = {self.find(j) for j in self.adj[root]}
        out.discard(root)
        return out

    def merge_into(self, src, dst):
        self.parent[src] = dst
        self.size[dst] += self.size[src]
        self.adj[dst] |= self.adj[src]
        self.adj[src] = set()


def enforce_connectivity(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Merge small or orphaned (-1) components into their largest neighbour.

    Components of at least ``min_size`` pixels survive as their own label,
    so a label split into two large pieces becomes two labels. Output
    labels are numbered by row-major first occurrence.
    """
    comp, sizes, comp_label = _components(np.ascontiguousarray(labels, dtype=np.int64))
    n = len(sizes)
    regions = _Regions(sizes, _adjacency(comp, n))
    small = [c for c in range(n) if sizes[c] < min_size or comp_label[c] < 0]
    for c in small:
        if regions.find(c) != c or (regions.size[c] >= min_size and comp_label[c] >= 0):
            continue
        nb = regions.neighbours(c)
        if not nb:
            continue
        target = min(nb, key=lambda r: (-regions.size[r], r))
        regions.merge_into(c, target)
    roots = np.array([regions.find(c) for c in range(n)], dtype=np.int64)
    _, first = np.unique(roots, return_index=True)
    order = np.argsort(first)
    remap = np.empty(n, dtype=np.int64)
    uniq = roots[first[order]]
    remap_root = {int(r): i for i, r in enumerate(uniq)}
    for c in range(n):
        remap[c] = remap_root[int(roots[c])]
    return remap[comp].astype(np.int32)


def _gradient(lab: np.ndarray) -> np.ndarray:
    p = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return (gx ** 2).sum(axis=2) + (gy ** 2).sum(axis=2)


def grid_seeds(lab: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regular grid of about ``q`` seeds, nudged to the lowest 3x3 gradient.

    A seed keeps its exact grid position unless some neighbour of its
    nearest pixel has a strictly lower gradient, in which case it jumps to
    that neighbour (first in row-major order on ties).
    """
    h, w = lab.shape[:2]
    nx = max(1, min(w, math.ceil(math.sqrt(q * w / h))))
    ny = max(1, min(h, round(q / nx)))
    grad = _gradient(lab)
    cx, cy = [], []
    for j in range(ny):
        for i in range(nx):
            gx = (i + 0.5) * w / nx - 0.5
            gy = (j + 0.5) * h / ny - 0.5
            px = min(w - 1, int(math.floor(gx + 0.5)))
            py = min(h - 1, int(math.floor(gy + 0.5)))
            best, bx, by = grad[py, px], None, None
            for yy in range(max(0, py - 1), min(h, py + 2)):
                for xx in range(max(0, px - 1), min(w, px + 2)):
                    if grad[yy, xx] < best:
                        best, bx, by = grad[yy, xx], xx, yy
            if bx is None:
                cx.append(gx)
                cy.append(gy)
            else:
                cx.append(float(bx))
                cy.append(float(by))
    cx = np.array(cx)
    cy = np.array(cy)
    pix_x = np.clip(np.floor(cx + 0.5).astype(int), 0, w - 1)
    pix_y = np.clip(np.floor(cy + 0.5).astype(int), 0, h - 1)
    return cx, cy, lab[pix_y, pix_x].copy()


def slic_iterate(lab, cx, cy, ccol, step, compactness, iterations):
    """Plain SLIC k-means loop; returns raw labels (may contain -1)."""
    h, w = lab.shape[:2]
    cx, cy, ccol = cx.astype(np.float64).copy(), cy.astype(np.float64).copy(), ccol.astype(np.float64).copy()
    labels = np.empty((h, w), dtype=np.int64)
    dist = np.empty((h, w), dtype=np.float64)
    for _ in range(iterations):
        _assign(lab, cx, cy, ccol, step, compactness, labels, dist)
        acc = _sums(lab, labels, len(cx))
        nz = acc[:, 0] > 0
        cx[nz] = acc[nz, 1] / acc[nz, 0]
        cy[nz] = acc[nz, 2] / acc[nz, 0]
        ccol[nz] = acc[nz, 3:] / acc[nz, 0:1]
    return labels


def slic(guide: GuideImage, params: SlicParams, lab: np.ndarray | None = None) -> SuperpixelMap:
    """``lab`` may carry ``to_lab(guide)`` when the caller already has it."""
    h, w = guide.height, guide.width
    if params.q > h * w:
        raise ValueError(f"superpixel count {params.q} exceeds pixel count {h * w}")
    lab = to_lab(guide) if lab is None else lab
    step = grid_step(h, w, params.q)
    cx, cy, ccol = grid_seeds(lab, params.q)
    labels = slic_iterate(lab, cx, cy, ccol, step, params.compactness, params.iterations)
    labels = enforce_connectivity(labels, max(1, int(h * w / params.q / 4)))
    return SuperpixelMap.from_labels(labels, guide.rgb)


def _check_centroids(centroids, h, w) -> np.ndarray:
    pts = np.asarray(centroids, dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("at least one centroid is required")
    if pts[:, 0].min() < 0 or pts[:, 0].max() >= w or pts[:, 1].min() < 0 or pts[:, 1].max() >= h:
        raise ValueError("centroid out of bounds")
    if len(np.unique(pts[:, 1] * w + pts[:, 0])) != len(pts):
        raise ValueError("duplicate centroids")
    return pts


def reseed_assign(lab, pts, compactness, max_iter: int = 10) -> np.ndarray:
    """Local k-means with spatial centres frozen at ``pts``; raw labels.

    Only cluster colours are updated. The pixel under each centre is
    pinned to its own label. Pixels outside every centre's search window
    (possible when centres are unevenly spread) take the label of the
    nearest assigned pixel.
    """
    h, w = lab.shape[:2]
    step = grid_step(h, w, len(pts))
    cx = pts[:, 0].astype(np.float64)
    cy = pts[:, 1].astype(np.float64)
    ccol = lab[pts[:, 1], pts[:, 0]].copy()
    own = np.arange(len(pts))
    labels = np.empty((h, w), dtype=np.int64)
    dist = np.empty((h, w), dtype=np.float64)
    prev = None
    fill = None
    for it in range(max_iter):
        _assign(lab, cx, cy, ccol, step, compactness, labels, dist)
        labels[pts[:, 1], pts[:, 0]] = own
        if it == 0:
            # centres never move, so the pixels outside every window stay the same
            gap = labels < 0
            if gap.any():
                fill = distance_transform_edt(gap, return_distances=False, return_indices=True)
        if fill is not None:
            labels = labels[fill[0], fill[1]]
        if prev is not None and np.array_equal(prev, labels):
            break
        prev = labels.copy()
        acc = _sums(lab, labels, len(pts))
        nz = acc[:, 0] > 0
        ccol[nz] = acc[nz, 3:] / acc[nz, 0:1]
    return labels


def anchored_connectivity(labels: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Keep, for each centre k, the component of label k holding the centre.

    Every other component is absorbed into an adjacent anchored region
    (largest first, lowest label on ties), working outward from anchors.
    """
    comp, sizes, comp_label = _components(np.ascontiguousarray(labels, dtype=np.int64))
    n = len(sizes)
    regions = _Regions(sizes, _adjacency(comp, n))
    anchor_of = {}
    for k, (x, y) in enumerate(pts.tolist()):
        anchor_of[int(comp[y, x])] = k
    owner = {c: k for c, k in anchor_of.items()}
    pending = [c for c in range(n) if c not in anchor_of]
    while pending:
        left = []
        for c in pending:
            nb = [r for r in regions.neighbours(c) if r in owner]
            if not nb:
                left.append(c)
                continue
            target = min(nb, key=lambda r: (-regions.size[r], owner[r]))
            regions.merge_into(c, target)
        if len(left) == len(pending):
            raise RuntimeError("region not reachable from any centroid")
        pending = left
    out = np.empty(n, dtype=np.int32)
    for c in range(n):
        out[c] = owner[regions.find(c)]
    return out[comp]


def reseed_slic(guide: GuideImage, centroids, compactness: float = 10.0,
                max_iter: int = 10, lab: np.ndarray | None = None) -> SuperpixelMap:
    h, w = guide.height, guide.width
    pts = _check_centroids(centroids, h, w)
    lab = to_lab(guide) if lab is None else lab
    raw = reseed_assign(lab, pts, compactness, max_iter)
    labels = anchored_connectivity(raw, pts)
    colors = SuperpixelMap.from_labels(labels, guide.rgb).colors
    return SuperpixelMap(labels, pts.astype(np.float64), colors)


def is_connected(spmap: SuperpixelMap) -> bool:
    """True when every label forms one 4-connected region."""
    _, _, comp_label = _components(spmap.labels.astype(np.int64))
    return len(comp_label) == spmap.q
