"""Shared helpers for report renderers."""

from __future__ import annotations

import os
import sys

import numpy as np
from PIL import Image, ImageFont

from ..config import ReportConfig

__all__ = ["ReportConfig", "load_font", "tile_image"]


def _font_dirs() -> list[str]:
    """Return platform-appropriate font directories."""
    if sys.platform == "darwin":
        return [
            "/System/Library/Fonts",
            "/System/Library/Fonts/Supplemental",
            "/Library/Fonts",
            os.path.expanduser("~/Library/Fonts"),
        ]
    if sys.platform == "win32":
        return [r"C:\Windows\Fonts"]
    return [
        "/usr/share/fonts/truetype",
        "/usr/share/fonts/truetype/dejavu",
        "/usr/share/fonts",
        "/usr/local/share/fonts",
    ]


def load_font(names, size: int) -> ImageFont.FreeTypeFont | ImageFont.ImageFont:
    """Try to load a TrueType font by name, falling back to Pillow default."""
    for name in names:
        for ext in (".ttf", ".otf"):
            for directory in _font_dirs():
                path = os.path.join(directory, name + ext)
                if os.path.isfile(path):
                    try:
                        return ImageFont.truetype(path, size)
                    except OSError:
                        continue
        try:
            return ImageFont.truetype(name, size)
        except OSError:
            continue
    try:
        return ImageFont.load_default(size=size)
    except TypeError:
        return ImageFont.load_default()


def tile_image(image: np.ndarray, size: int) -> Image.Image:
    """(H, W, C) float image in [0, 1] -> size x size RGB tile (nearest upscaling)."""
    arr = np.clip(np.nan_to_num(np.asarray(image, dtype=np.float64)), 0.0, 1.0)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    img = Image.fromarray(np.round(arr * 255.0).astype(np.uint8))
    return img.resize((size, size), Image.NEAREST)
