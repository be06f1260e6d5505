"""Inference for the guided-filter network.

Each band goes through K masked guided filters (one per kernel). The K
outputs are stacked as channels and refined by two 3x3 convolutions with
ReLU, then projected to a single plane by a 1x1 layer. Bands share the
weights and never see each other.

Weight files (``.gfw``) hold the magic ``GFW1``, a little-endian uint32
header length, a UTF-8 JSON header, and a little-endian float32 payload::

    {"k": K, "kernel": [h, w], "conv1": [C1, K, 3, 3], "conv2": [C2, C1, 3, 3],
     "proj": [1, C2], "epsilon": eps,
     "order": ["kernels", "conv1.w", "conv1.b", "conv2.w", "conv2.b", "proj.w", "proj.b"]}
"""
from __future__ import annotations

import functools
import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .core import HsiCube
from .recon import GuidedPlan, SparseSpectralImage, _band_groups, _guide_array, _map_bands, gaussian_kernel

MAGIC = b"GFW1"
ORDER = ["kernels", "conv1.w", "conv1.b", "conv2.w", "conv2.b", "proj.w", "proj.b"]


@dataclass(frozen=True, eq=False)
class FilterNetWeights:
    kernels: np.ndarray
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    proj_w: np.ndarray
    proj_b: float
    eps: float = 1e-4

    def __post_init__(self):
        arrs = {name: np.asarray(getattr(self, name), dtype=np.float64)
                for name in ("kernels", "conv1_w", "conv1_b", "conv2_w", "conv2_b", "proj_w")}
        k = arrs["kernels"]
        if k.ndim != 3 or k.shape[0] < 1:
            raise ValueError("kernels must be (K, h, w)")
        c1, c2 = arrs["conv1_w"], arrs["conv2_w"]
        if c1.ndim != 4 or c1.shape[1] != k.shape[0] or c1.shape[2:] != (3, 3):
            raise ValueError(f"conv1 weights {c1.shape} do not take {k.shape[0]} channels")
        if c2.ndim != 4 or c2.shape[1] != c1.shape[0] or c2.shape[2:] != (3, 3):
            raise ValueError(f"conv2 weights {c2.shape} do not follow conv1 {c1.shape}")
        if arrs["conv1_b"].shape != (c1.shape[0],) or arrs["conv2_b"].shape != (c2.shape[0],):
            raise ValueError("bias lengths must match layer widths")
        if arrs["proj_w"].shape != (c2.shape[0],):
            raise ValueError("projection must map conv2 channels to one plane")
        if not all(np.all(np.isfinite(a)) for a in arrs.values()) or not np.isfinite(self.proj_b):
            raise ValueError("weights must be finite")
        if np.any(k < 0):
            raise ValueError("guided-filter kernels must be non-negative")
        if not self.eps > 0:
            raise ValueError("epsilon must be positive")
        for name, a in arrs.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "proj_b", float(self.proj_b))

    @property
    def k(self) -> int:
        return self.kernels.shape[0]

    def header(self) -> dict:
        return {"k": self.k, "kernel": list(self.kernels.shape[1:]),
                "conv1": list(self.conv1_w.shape), "conv2": list(self.conv2_w.shape),
                "proj": [1, self.proj_w.size], "epsilon": self.eps, "order": ORDER}

    def save(self, path) -> None:
        head = json.dumps(self.header(), sort_keys=True).encode()
        payload = np.concatenate([self.kernels.ravel(), self.conv1_w.ravel(), self.conv1_b,
                                  self.conv2_w.ravel(), self.conv2_b, self.proj_w, [self.proj_b]])
        Path(path).write_bytes(MAGIC + struct.pack("<I", len(head)) + head
                               + payload.astype("<f4").tobytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "FilterNetWeights":
        if raw[:4] != MAGIC or len(raw) < 8:
            raise ValueError("not a guided-filter weight file")
        (n,) = struct.unpack("<I", raw[4:8])
        try:
            head = json.loads(raw[8:8 + n].decode())
            k, (kh, kw) = int(head["k"]), head["kernel"]
            c1 = tuple(head["conv1"])
            c2 = tuple(head["conv2"])
            eps = float(head["epsilon"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"malformed weight header: {exc}") from exc
        if head.get("order", ORDER) != ORDER:
            raise ValueError("unsupported payload order")
        shapes = [(k, kh, kw), c1, (c1[0],), c2, (c2[0],), (c2[0],), ()]
        sizes = [int(np.prod(s)) for s in shapes]
        data = np.frombuffer(raw[8 + n:], dtype="<f4").astype(np.float64)
        if data.size != sum(sizes):
            raise ValueError(f"payload holds {data.size} floats, header implies {sum(sizes)}")
        parts = np.split(data, np.cumsum(sizes)[:-1])
        kern, w1, b1, w2, b2, pw, pb = (p.reshape(s) for p, s in zip(parts, shapes))
        return cls(kern, w1, b1, w2, b2, pw, float(pb), eps)

    @classmethod
    def load(cls, path) -> "FilterNetWeights":
        return cls.from_bytes(Path(path).read_bytes())


def identity_refinement(k: int, width: int = 32) -> dict:
    """Layers that output the mean of the K channels exactly.

    ReLU discards negatives, so the signal is carried as a positive and a
    negative part and recombined by the projection.
    """
    w1 = np.zeros((width, k, 3, 3))
    w1[0, :, 1, 1] = 1.0 / k
    w1[1, :, 1, 1] = -1.0 / k
    w2 = np.zeros((width, width, 3, 3))
    w2[0, 0, 1, 1] = 1.0
    w2[1, 1, 1, 1] = 1.0
    proj = np.zeros(width)
    proj[:2] = (1.0, -1.0)
    return {"conv1_w": w1, "conv1_b": np.zeros(width), "conv2_w": w2,
            "conv2_b": np.zeros(width), "proj_w": proj, "proj_b": 0.0}


def handcrafted_weights(k: int = 8, shape: tuple[int, int] = (51, 103), eps: float = 1e-4,
                        width: int = 32) -> FilterNetWeights:
    """K Gaussian kernels with sigma from 0.6x to 1.4x of a quarter of the kernel size, averaged."""
    kh, kw = shape
    scales = np.linspace(0.6, 1.4, k) if k > 1 else np.ones(1)
    kernels = np.stack([gaussian_kernel(kh, kw, s * kh / 4.0, s * kw / 4.0) for s in scales])
    return FilterNetWeights(kernels, eps=eps, **identity_refinement(k, width))


@functools.lru_cache(maxsize=1)
def default_weights() -> FilterNetWeights:
    """The weight file bundled with the package."""
    raw = resources.files("adaptive_hsi").joinpath("data/filternet_default.gfw").read_bytes()
    return FilterNetWeights.from_bytes(raw)


@functools.lru_cache(maxsize=8)
def default_weights_for(n: int) -> FilterNetWeights:
    """Default weights for spectral spread ``n``.

    The bundled file is built for a 51 x 103 kernel grid (N = 68); other
    spreads get the same handcrafted family on the grid sized for them.
    """
    from .recon import GuidedParams
    gp = GuidedParams.for_spread(n)
    bundled = default_weights()
    if bundled.kernels.shape[1:] == (gp.height, gp.width):
        return bundled
    return handcrafted_weights(bundled.k, (gp.height, gp.width), bundled.eps)


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """'Same' 3x3 cross-correlation with zero padding: (C, H, W) -> (C', H, W)."""
    c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.broadcast_to(b[:, None], (w.shape[0], h * wd)).copy()
    for dy in range(3):
        for dx in range(3):
            tap = xp[:, dy:dy + h, dx:dx + wd].reshape(c, h * wd)
            out += w[:, :, dy, dx] @ tap
    return out.reshape(-1, h, wd)


def refine(channels: np.ndarray, weights: FilterNetWeights) -> np.ndarray:
    """conv3x3 + ReLU, conv3x3 + ReLU, 1x1 projection.

    Channels that provably stay zero (no weights and no bias feeding them,
    or no weight reading them downstream) are skipped; the result is the
    same as the dense computation.
    """
    w1, b1, w2, b2, pw = weights.conv1_w, weights.conv1_b, weights.conv2_w, weights.conv2_b, weights.proj_w
    live2 = (pw != 0) & (np.any(w2 != 0, axis=(1, 2, 3)) | (b2 != 0))
    need1 = np.any(w2[live2] != 0, axis=(0, 2, 3))
    live1 = need1 & (np.any(w1 != 0, axis=(1, 2, 3)) | (b1 != 0))
    z = np.maximum(conv3x3(channels, w1[live1], b1[live1]), 0.0)
    z = np.maximum(conv3x3(z, w2[live2][:, live1], b2[live2]), 0.0)
    return np.tensordot(pw[live2], z, axes=1) + weights.proj_b


def fuse_network_planes(sparse: SparseSpectralImage, guide, weights: FilterNetWeights,
                        threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Network output per band plus pixels no kernel reaches (``uncovered[b, y, x]``).

    ``guide`` may be gray or RGB, as for :func:`adaptive_hsi.recon.guided_filter_band`.
    """
    g = _guide_array(guide)
    if g.shape[:2] != (sparse.height, sparse.width):
        raise ValueError("guide and sparse image differ in size")
    out = np.zeros(sparse.values.shape)
    uncovered = np.zeros(sparse.values.shape, dtype=bool)
    for support, members in _band_groups(sparse):
        plans = [GuidedPlan(g, support, kern, weights.eps) for kern in weights.kernels]
        none = np.logical_and.reduce([~p.covered for p in plans])

        def one(b):
            chans = np.stack([p.apply(sparse.values[b]) for p in plans])
            return refine(chans, weights)

        for b, plane in zip(members, _map_bands(one, members, threads)):
            out[b] = plane
            uncovered[b] = none
    return out, uncovered


def fuse_network(sparse: SparseSpectralImage, guide, weights: FilterNetWeights | None = None,
                 wavelengths=None, threads: int = 1) -> HsiCube:
    planes, _ = fuse_network_planes(sparse, guide, weights or default_weights(), threads)
    wl = np.arange(sparse.bands, dtype=np.float64) if wavelengths is None else wavelengths
    return HsiCube(np.clip(planes, 0.0, None), wl)
