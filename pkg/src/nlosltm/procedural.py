"""Built-in procedural hidden images: digit-like strokes and simple shapes.

Glyphs are drawn with Pillow at 8x the target resolution and box-filtered
down, which gives anti-aliased strokes at 16 px.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigurationError

FAMILIES = ("digits", "shapes", "mixed")
_SUPERSAMPLE = 8

# Seven-segment layout in a unit box.
_SEGMENTS = {
    "a": ((0.3, 0.18), (0.7, 0.18)),
    "b": ((0.7, 0.18), (0.7, 0.5)),
    "c": ((0.7, 0.5), (0.7, 0.82)),
    "d": ((0.3, 0.82), (0.7, 0.82)),
    "e": ((0.3, 0.5), (0.3, 0.82)),
    "f": ((0.3, 0.18), (0.3, 0.5)),
    "g": ((0.3, 0.5), (0.7, 0.5)),
}
_DIGITS = ("abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abfgcd")


def _draw_digit(draw: ImageDraw.ImageDraw, size: int, rng: np.random.Generator) -> None:
    digit = _DIGITS[int(rng.integers(10))]
    scale = rng.uniform(0.8, 1.05)
    shift = rng.uniform(-0.08, 0.08, size=2)
    width = max(1, int(round(size * rng.uniform(0.08, 0.13))))
    for seg in digit:
        pts = []
        for (u, v) in _SEGMENTS[seg]:
            ju, jv = rng.normal(0.0, 0.035, size=2)
            x = ((u - 0.5) * scale + 0.5 + shift[0] + ju) * size
            y = ((v - 0.5) * scale + 0.5 + shift[1] + jv) * size
            pts.append((x, y))
        draw.line(pts, fill=255, width=width)
        for (x, y) in pts:
            r = width / 2.0
            draw.ellipse([x - r, y - r, x + r, y + r], fill=255)


def _draw_shapes(draw: ImageDraw.ImageDraw, size: int, rng: np.random.Generator) -> None:
    for _ in range(int(rng.integers(1, 4))):
        w, h = rng.uniform(0.15, 0.55, size=2) * size
        x0, y0 = rng.uniform(0.05, 0.95, size=2) * size - np.array([w, h]) / 2
        box = [x0, y0, x0 + w, y0 + h]
        level = int(rng.integers(128, 256))
        if rng.random() < 0.5:
            draw.rectangle(box, fill=level)
        else:
            draw.ellipse(box, fill=level)


def procedural_image(res: tuple, family: str, rng: np.random.Generator,
                     channels: int = 1) -> np.ndarray:
    """Draw one (H, W, C) image in [0, 1]."""
    if family not in FAMILIES:
        raise ConfigurationError(f"unknown procedural family {family!r}; choose from {FAMILIES}")
    if family == "mixed":
        family = "digits" if rng.random() < 0.5 else "shapes"
    big = max(res) * _SUPERSAMPLE
    canvas = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(canvas)
    if family == "digits":
        _draw_digit(draw, big, rng)
    else:
        _draw_shapes(draw, big, rng)
    small = canvas.resize((res[1], res[0]), Image.BOX)
    gray = np.asarray(small).astype(np.float64) / 255.0
    if channels == 1:
        return gray[:, :, None]
    tint = rng.uniform(0.4, 1.0, size=channels)
    return gray[:, :, None] * tint[None, None, :]


def procedural_images(n: int, res: tuple, family: str, seed: int,
                      channels: int = 1) -> list[np.ndarray]:
    """*n* images, image i drawn from its own generator seeded by ``(seed, i)``."""
    return [procedural_image(res, family, np.random.default_rng([seed, i]), channels)
            for i in range(n)]
