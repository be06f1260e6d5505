"""File formats for cubes, guide images, masks, label maps and sensor frames.

A cube is two files: the raw payload at ``path`` (little-endian float32,
band-sequential, row-major within a band) and a JSON header at
``path + ".json"``::

    {"width": W, "height": H, "bands": B, "wavelengths": [...],
     "dtype": "f32le", "order": "bsq"}

Label maps and sensor frames reuse the same header-plus-payload layout.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import cv2
import numpy as np

from .core import GrayImage, GuideImage, HsiCube, SamplingMask, SuperpixelMap

HEADER_SUFFIX = ".json"


class FormatError(ValueError):
    """A file does not follow the expected header/payload layout."""


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.name.endswith(HEADER_SUFFIX) and not p.name == HEADER_SUFFIX:
        payload = p.with_name(p.name[: -len(HEADER_SUFFIX)])
        return payload, p
    return p, p.with_name(p.name + HEADER_SUFFIX)


def _read_header(path: Path) -> dict:
    try:
        header = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read header {path}: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"header {path} is not a JSON object")
    return header


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_cube(cube: HsiCube, path) -> None:
    if cube.bands < 1:
        raise ValueError("cannot save a cube without bands")
    payload, header = _paths(path)
    payload.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "width": cube.width,
        "height": cube.height,
        "bands": cube.bands,
        "wavelengths": [float(w) for w in cube.wavelengths],
        "dtype": "f32le",
        "order": "bsq",
    }
    _write_atomic(payload, cube.data.astype("<f4", copy=False).tobytes(order="C"))
    _write_atomic(header, (json.dumps(meta, indent=1) + "\n").encode())


def load_cube(path) -> HsiCube:
    payload, header_path = _paths(path)
    header = _read_header(header_path)
    try:
        w, h, b = int(header["width"]), int(header["height"]), int(header["bands"])
        wl = np.asarray(header["wavelengths"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed cube header {header_path}: {exc}") from exc
    if header.get("dtype", "f32le") != "f32le" or header.get("order", "bsq") != "bsq":
        raise FormatError(f"unsupported cube layout {header.get('dtype')}/{header.get('order')}")
    if min(w, h, b) < 1:
        raise FormatError(f"non-positive cube dimensions in {header_path}")
    if wl.shape != (b,):
        raise FormatError(f"header lists {wl.size} wavelengths for {b} bands")
    if b > 1 and not np.all(np.diff(wl) > 0):
        raise FormatError("wavelengths must be strictly increasing")
    raw = np.fromfile(payload, dtype="<f4")
    if raw.size != w * h * b:
        raise FormatError(f"payload holds {raw.size} values, header implies {w}x{h}x{b} = {w * h * b}")
    return HsiCube(raw.reshape(b, h, w), wl)


def save_guide(guide: GuideImage, path) -> None:
    q = np.round(guide.rgb * 65535.0).astype(np.uint16)
    if not cv2.imwrite(str(path), q[:, :, ::-1]):
        raise OSError(f"failed to write {path}")


def load_guide(path) -> GuideImage:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FormatError(f"cannot read image {path}")
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    img = img[:, :, :3][:, :, ::-1]
    scale = 65535.0 if img.dtype == np.uint16 else 255.0
    return GuideImage(img.astype(np.float64) / scale)


def save_gray(gray: GrayImage, path) -> None:
    q = np.round(gray.values * 65535.0).astype(np.uint16)
    if not cv2.imwrite(str(path), q):
        raise OSError(f"failed to write {path}")


def load_gray(path) -> GrayImage:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FormatError(f"cannot read image {path}")
    if img.ndim == 3:
        img = img[:, :, :3].mean(axis=2)
    scale = 65535.0 if img.dtype == np.uint16 or img.max() > 255 else 255.0
    return GrayImage(img.astype(np.float64) / scale)


def save_mask(mask: SamplingMask, path) -> None:
    img = mask.bitmap.astype(np.uint8) * 255
    if not cv2.imwrite(str(path), img):
        raise OSError(f"failed to write {path}")


def load_mask(path) -> SamplingMask:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FormatError(f"cannot read mask {path}")
    if img.ndim == 3:
        img = img[:, :, 0]
    return SamplingMask.from_bitmap(img > 127)


def save_spmap(spmap: SuperpixelMap, path) -> None:
    payload, header = _paths(path)
    payload.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "width": spmap.width,
        "height": spmap.height,
        "q": spmap.q,
        "dtype": "i32le",
        "centroids": spmap.centroids.tolist(),
    }
    if spmap.colors is not None:
        meta["colors"] = spmap.colors.tolist()
    _write_atomic(payload, spmap.labels.astype("<i4").tobytes(order="C"))
    _write_atomic(header, (json.dumps(meta) + "\n").encode())


def load_spmap(path) -> SuperpixelMap:
    payload, header_path = _paths(path)
    header = _read_header(header_path)
    try:
        w, h = int(header["width"]), int(header["height"])
        centroids = np.asarray(header["centroids"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed label header {header_path}: {exc}") from exc
    raw = np.fromfile(payload, dtype="<i4")
    if raw.size != w * h:
        raise FormatError(f"label payload holds {raw.size} values, expected {w * h}")
    colors = header.get("colors")
    return SuperpixelMap(raw.reshape(h, w), centroids,
                         None if colors is None else np.asarray(colors, dtype=np.float64))


def label_preview(spmap: SuperpixelMap, seed: int = 0) -> np.ndarray:
    """False-colour uint8 RGB rendering of a label map."""
    palette = np.random.default_rng(seed).integers(40, 256, size=(spmap.q, 3), dtype=np.uint8)
    return palette[spmap.labels]


def save_label_preview(spmap: SuperpixelMap, path, seed: int = 0) -> None:
    if not cv2.imwrite(str(path), label_preview(spmap, seed)[:, :, ::-1]):
        raise OSError(f"failed to write {path}")


def save_plane(values: np.ndarray, path, **extra) -> None:
    """Raw float32 plane with a JSON sidecar; extra keys go into the header."""
    values = np.asarray(values)
    payload, header = _paths(path)
    payload.parent.mkdir(parents=True, exist_ok=True)
    meta = {"width": values.shape[1], "height": values.shape[0], "dtype": "f32le", **extra}
    _write_atomic(payload, values.astype("<f4").tobytes(order="C"))
    _write_atomic(header, (json.dumps(meta) + "\n").encode())


def load_plane(path) -> tuple[np.ndarray, dict]:
    payload, header_path = _paths(path)
    header = _read_header(header_path)
    try:
        w, h = int(header["width"]), int(header["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed plane header {header_path}: {exc}") from exc
    raw = np.fromfile(payload, dtype="<f4")
    if raw.size != w * h:
        raise FormatError(f"plane payload holds {raw.size} values, expected {w * h}")
    return raw.reshape(h, w).astype(np.float64), header
