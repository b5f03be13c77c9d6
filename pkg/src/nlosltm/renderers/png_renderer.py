"""Render a MetricsReport comparison sheet to PNG using Pillow."""

from __future__ import annotations

import os
from typing import Optional

from PIL import Image, ImageDraw

from ._base import ReportConfig, load_font, tile_image

COLUMNS = ("projection", "reconstruction", "ground truth")


def _row_label(report, condition_id: int) -> str:
    for c in report.conditions:
        if c.condition_id == condition_id:
            if c.count == 0:
                return c.code
            return f"{c.code}  PSNR {c.psnr_mean:.2f} dB  SSIM {c.ssim_mean:.3f}"
    return str(condition_id)


def render_png(
    report,
    output_path: str,
    *,
    config: Optional[ReportConfig] = None,
) -> str:
    """Render the report's example triples as a labeled comparison sheet.

    One row per kept example: projection, reconstruction and ground truth
    tiles, with the condition code and its mean PSNR/SSIM above the row.

    Parameters
    ----------
    report : MetricsReport
        Report carrying ``examples`` (from ``evaluate``).
    output_path : str
        Destination PNG file path.
    config : ReportConfig, optional
        Rendering configuration.

    Returns
    -------
    str
        Absolute path of the written PNG.
    """
    if config is None:
        config = ReportConfig()

    ts = config.tile_size
    pad = max(4, ts // 8)
    label_h = config.label_font_size + 6
    examples = list(report.examples)

    title_h = 0
    if config.title or config.subtitle:
        title_h = config.title_font_size + 10 + (config.label_font_size + 6 if config.subtitle else 0)

    img_w = len(COLUMNS) * ts + (len(COLUMNS) + 1) * pad
    img_h = title_h + pad + label_h + max(1, len(examples)) * (ts + label_h + pad) + pad

    img = Image.new("RGB", (img_w, img_h), tuple(config.bg_color))
    draw = ImageDraw.Draw(img)
    title_font = load_font(config.font_family, config.title_font_size)
    label_font = load_font(config.font_family, config.label_font_size)
    text_color = tuple(config.text_color)

    y = pad // 2
    if config.title:
        bbox = draw.textbbox((0, 0), config.title, font=title_font)
        draw.text(((img_w - (bbox[2] - bbox[0])) / 2, y), config.title, fill=text_color, font=title_font)
        y += config.title_font_size + 8
    if config.subtitle:
        bbox = draw.textbbox((0, 0), config.subtitle, font=label_font)
        draw.text(((img_w - (bbox[2] - bbox[0])) / 2, y), config.subtitle, fill=text_color, font=label_font)

    y = title_h + pad
    for j, name in enumerate(COLUMNS):
        x = pad + j * (ts + pad)
        bbox = draw.textbbox((0, 0), name, font=label_font)
        draw.text((x + (ts - (bbox[2] - bbox[0])) / 2, y), name, fill=text_color, font=label_font)
    y += label_h

    if not examples:
        draw.text((pad, y), "no examples", fill=text_color, font=label_font)

    for ex in examples:
        draw.text((pad, y), _row_label(report, ex.condition_id), fill=text_color, font=label_font)
        y += label_h
        for j, arr in enumerate((ex.projection, ex.reconstruction, ex.hidden)):
            x = pad + j * (ts + pad)
            img.paste(tile_image(arr, ts), (x, y))
            draw.rectangle([x - 1, y - 1, x + ts, y + ts], outline=tuple(config.line_color), width=1)
        y += ts + pad

    os.makedirs(os.path.dirname(os.path.abspath(output_path)) or ".", exist_ok=True)
    img.save(output_path, dpi=(config.dpi, config.dpi))
    return os.path.abspath(output_path)
