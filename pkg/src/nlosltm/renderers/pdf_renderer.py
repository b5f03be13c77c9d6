"""Render a MetricsReport as a PDF using fpdf2."""

from __future__ import annotations

import dataclasses
import os
import tempfile
from typing import Optional

from fpdf import FPDF
from PIL import Image

from ._base import ReportConfig
from .png_renderer import render_png


def render_pdf(
    report,
    output_path: str,
    *,
    config: Optional[ReportConfig] = None,
    include_sheet: bool = True,
) -> str:
    """Render the report as a PDF.

    Page 1: title, run identifiers, the per-condition metrics table.
    Page 2 (optional): the embedded comparison sheet.

    Parameters
    ----------
    report : MetricsReport
        The evaluation report.
    output_path : str
        Destination PDF file path.
    config : ReportConfig, optional
        Rendering configuration.
    include_sheet : bool
        If True (default) and the report carries examples, append the
        comparison sheet page.

    Returns
    -------
    str
        Absolute path of the written PDF file.
    """
    if config is None:
        config = ReportConfig()

    pdf = FPDF()
    pdf.set_auto_page_break(auto=True, margin=20)

    pdf.add_page()
    _add_header(pdf, report, config)
    _add_table(pdf, report)

    if include_sheet and report.examples:
        pdf.add_page()
        pdf.set_font("Helvetica", "B", 14)
        pdf.cell(0, 10, "Projection / reconstruction / ground truth", new_x="LMARGIN", new_y="NEXT", align="C")
        pdf.ln(2)
        _add_sheet_image(pdf, report, config)

    os.makedirs(os.path.dirname(os.path.abspath(output_path)) or ".", exist_ok=True)
    pdf.output(output_path)
    return os.path.abspath(output_path)


def _ascii(text: str) -> str:
    # core fonts are latin-1 only
    return text.encode("latin-1", "replace").decode("latin-1")


def _add_header(pdf: FPDF, report, config: ReportConfig) -> None:
    if config.title:
        pdf.set_font("Helvetica", "B", 18)
        pdf.cell(0, 10, _ascii(config.title), new_x="LMARGIN", new_y="NEXT", align="C")
    if config.subtitle:
        pdf.set_font("Helvetica", "", 12)
        pdf.cell(0, 7, _ascii(config.subtitle), new_x="LMARGIN", new_y="NEXT", align="C")
    pdf.ln(4)

    pdf.set_font("Helvetica", "", 9)
    lines = [
        f"Method: {report.method}    Split: {report.split}",
        f"Config hash: {report.config_hash or '-'}",
        f"Checkpoint: {report.checkpoint_id or '-'}",
    ]
    if report.baselines:
        lines.append("Baselines: " + ", ".join(report.baselines))
    for line in lines:
        pdf.cell(0, 5, _ascii(line), new_x="LMARGIN", new_y="NEXT")
    pdf.ln(3)


def _add_table(pdf: FPDF, report) -> None:
    """Per-condition rows and the overall row, as fixed-width text."""
    pdf.set_font("Courier", "", 7)
    for line in report.format_table().splitlines():
        pdf.cell(0, 3.8, _ascii(line), new_x="LMARGIN", new_y="NEXT")
    pdf.ln(2)


def _add_sheet_image(pdf: FPDF, report, config: ReportConfig) -> None:
    """Render the comparison sheet to a temp PNG and embed it in the PDF."""
    with tempfile.NamedTemporaryFile(suffix=".png", delete=False) as tmp:
        tmp_path = tmp.name

    try:
        sheet_config = dataclasses.replace(config, title="", subtitle="")
        render_png(report, tmp_path, config=sheet_config)
        page_w = pdf.w - pdf.l_margin - pdf.r_margin
        page_h = pdf.h - pdf.get_y() - pdf.b_margin
        # keep aspect ratio and fit the remaining page
        with Image.open(tmp_path) as img:
            w_px, h_px = img.size
        w = min(page_w, 120.0, page_h * w_px / h_px)
        pdf.image(tmp_path, x=pdf.l_margin + (page_w - w) / 2, w=w)
        pdf.ln(4)
    finally:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
