"""Superpixel-guided adaptive spatio-spectral imaging: simulation and reconstruction."""
from __future__ import annotations

from .core import GrayImage, GuideImage, HsiCube, SamplingMask, SpectralResponse, SuperpixelMap, render_guide
from .maskgen import MaskGenParams, generate_mask
from .metrics import EvalReport, evaluate
from .recon import GuidedParams, reconstruct_frame
from .sensor import DispersionModel, NoiseParams, SensorImage, capture, extract_spectra
from .superpixel import SlicParams, reseed_slic, slic

__all__ = [
    "DispersionModel", "EvalReport", "GrayImage", "GuideImage", "GuidedParams", "HsiCube",
    "MaskGenParams", "NoiseParams", "SamplingMask", "SensorImage", "SlicParams", "SpectralResponse",
    "SuperpixelMap", "capture", "evaluate", "extract_spectra", "generate_mask", "reconstruct_frame",
    "render_guide", "reseed_slic", "slic",
]
