"""Lossless 16-bit image files (``.png16``) and source image loading.

A ``.png16`` file is a 16-bit grayscale PNG.  Multi-channel images are
stored with their channels stacked vertically in one frame, so an
H x W x 3 image becomes a 3H x W frame.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import DimensionError

_MAX16 = 65535.0
SOURCE_EXTENSIONS = (".png", ".png16", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def write_png16(path: str, image: np.ndarray) -> str:
    """Write an (H, W) or (H, W, C) image in [0, 1] as a 16-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DimensionError(f"expected an H x W x C image, got shape {arr.shape}")
    h, w, c = arr.shape
    q = np.round(np.clip(arr, 0.0, 1.0) * _MAX16).astype(np.uint16)
    frame = np.ascontiguousarray(q.transpose(2, 0, 1).reshape(c * h, w))
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    Image.fromarray(frame).save(path, format="PNG")
    return os.path.abspath(path)


def read_png16(path: str, channels: int = 1) -> np.ndarray:
    """Read a ``.png16`` file back into an (H, W, C) float64 array in [0, 1]."""
    with Image.open(path) as img:
        frame = np.asarray(img).astype(np.float64)
    if frame.ndim != 2 or frame.shape[0] % channels:
        raise DimensionError(f"{path}: frame {frame.shape} does not hold {channels} stacked channel(s)")
    h = frame.shape[0] // channels
    return (frame.reshape(channels, h, frame.shape[1]).transpose(1, 2, 0) / _MAX16)


def load_source_image(path: str, res: tuple, channels: int = 1) -> np.ndarray:
    """Load any Pillow-readable image, convert, and resize to ``res`` (H, W)."""
    if path.endswith(".png16"):
        arr = read_png16(path, channels)
        if tuple(arr.shape[:2]) == tuple(res):
            return arr
        planes = [np.asarray(Image.fromarray(arr[:, :, k].astype(np.float32))
                             .resize((res[1], res[0]), Image.BILINEAR)) for k in range(channels)]
        return np.clip(np.stack(planes, axis=2).astype(np.float64), 0.0, 1.0)
    with Image.open(path) as img:
        img = img.convert("L" if channels == 1 else "RGB")
        img = img.resize((res[1], res[0]), Image.BILINEAR)
        arr = np.asarray(img).astype(np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr
