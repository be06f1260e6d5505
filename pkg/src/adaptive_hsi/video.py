"""Lock-step video reconstruction.

The mask for frame ``t`` comes from the guide at ``t - 1``, but the fusion
only ever pairs the guide and the sensor frame captured at ``t``. The
superpixels used for fusion are re-grown on guide ``t`` from the seed points
chosen at ``t - 1``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import GrayImage, GuideImage, HsiCube, SamplingMask, SpectralResponse, SuperpixelMap, render_guide
from .maskgen import MaskGenParams, generate_mask, label_coverage, uniform_grid_mask
from .metrics import psnr_bands
from .recon import GuidedParams, reconstruct_frame
from .sensor import DispersionModel, NoiseParams, capture
from .superpixel import SlicParams, reseed_slic, slic, to_lab


@dataclass(frozen=True)
class VideoParams:
    disp: DispersionModel
    maskgen: MaskGenParams
    method: str = "rank1"
    noise: NoiseParams | None = None
    contrast_eps: float = 0.0
    response: SpectralResponse | None = None
    guided: GuidedParams | None = None
    weights: object = None
    guide_mode: str = "rgb"
    threads: int = 1


@dataclass(frozen=True, eq=False)
class FrameResult:
    index: int
    mask: SamplingMask
    spmap: SuperpixelMap
    cube: HsiCube
    telemetry: dict = field(default_factory=dict)


def frame_noise(noise: NoiseParams | None, t: int) -> NoiseParams | None:
    """Per-frame noise parameters with a seed derived from the root seed and frame index."""
    if noise is None:
        return None
    seed = int(np.random.SeedSequence([noise.seed, t]).generate_state(1, dtype=np.uint64)[0])
    return NoiseParams(noise.photon_level, noise.read_std, seed)


def bootstrap_frame(guide: GuideImage, params: MaskGenParams) -> tuple[SamplingMask, SuperpixelMap]:
    """Uniform grid mask (spacing N by V) with superpixels grown from grid points.

    Each SLIC centroid of ``guide`` snaps to its nearest grid point, so every
    superpixel holds an open point.
    """
    h, w = guide.height, guide.width
    params.check(h, w)
    mask = uniform_grid_mask(w, h, params.n, params.v, params.sensor_width)
    lab = to_lab(guide)
    sp = slic(guide, SlicParams(min(params.superpixels(h, w), h * w), params.compactness), lab)
    last_x = int(mask.points[:, 0].max())
    last_y = int(mask.points[:, 1].max())
    gx = np.clip(np.rint(sp.centroids[:, 0] / params.n) * params.n, 0, last_x)
    gy = np.clip(np.rint(sp.centroids[:, 1] / params.v) * params.v, 0, last_y)
    seeds = np.unique(np.stack([gx, gy], axis=1).astype(np.int64), axis=0)
    return mask, reseed_slic(guide, seeds, params.compactness, lab=lab)


def run_video(cubes: Sequence[HsiCube], params: VideoParams,
              guides: Sequence[tuple[GuideImage, GrayImage]] | None = None) -> list[FrameResult]:
    """Simulate and reconstruct a sequence.

    ``guides`` replaces the rendered guide/gray pair per frame (useful for
    injecting a corrupted guide). Frame 0 is sampled with a uniform pinhole
    grid (see :func:`bootstrap_frame`). Per-frame telemetry holds stage timings, sample and label counts,
    labels without an open point, and the PSNR against the input cube.
    """
    if len(cubes) < 2:
        raise ValueError("a video needs at least 2 frames")
    if guides is not None and len(guides) != len(cubes):
        raise ValueError("one guide pair per frame is required")
    first = cubes[0]
    h, w = first.height, first.width
    mp = params.maskgen
    sw = mp.sensor_width
    results: list[FrameResult] = []
    prev_guide = None
    for t, cube in enumerate(cubes):
        if (cube.height, cube.width, cube.bands) != (h, w, first.bands):
            raise ValueError(f"frame {t} has shape {cube.shape}, expected {first.shape}")
        clock = time.perf_counter
        tel: dict = {}
        t0 = clock()
        guide, gray = guides[t] if guides is not None else render_guide(cube, params.response)
        if prev_guide is None:
            mask, prev_map = bootstrap_frame(guide, mp)
        else:
            mask, prev_map = generate_mask(prev_guide, mp)
        seeds = np.rint(prev_map.centroids).astype(np.int64)
        t1 = clock()
        spmap = reseed_slic(guide, seeds, mp.compactness)
        t2 = clock()
        sensor = capture(cube, mask, params.disp, params.contrast_eps,
                         frame_noise(params.noise, t), sensor_width=sw)
        t3 = clock()
        rec = reconstruct_frame(guide, gray, sensor, mask, spmap, params.disp, params.method,
                                guard=mp.v, guided=params.guided, weights=params.weights,
                                guide_mode=params.guide_mode,
                                remove_background=params.contrast_eps > 0,
                                wavelengths=cube.wavelengths, threads=params.threads, report=tel)
        t4 = clock()
        cov = label_coverage(mask, spmap)
        tel.update(mask_ms=(t1 - t0) * 1e3, reseed_ms=(t2 - t1) * 1e3, capture_ms=(t3 - t2) * 1e3,
                   reconstruct_ms=(t4 - t3) * 1e3, openings=len(mask), labels=spmap.q,
                   uncovered_labels=int(np.sum(cov == 0)),
                   psnr=float(np.mean(psnr_bands(rec, cube))))
        results.append(FrameResult(t, mask, spmap, rec, tel))
        prev_guide = guide
    return results
