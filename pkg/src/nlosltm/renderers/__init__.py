"""Evaluation report renderers.

``render()`` writes one comparison sheet (PNG) or report (PDF) for a
:class:`~nlosltm.evaluation.MetricsReport`; ``render_all()`` writes both.
Pillow and fpdf2 are imported only when their format is requested.
"""

from __future__ import annotations

import os
from typing import Optional

from ..config import ReportConfig
from ..errors import ConfigurationError

__all__ = ["render", "render_all", "ReportConfig"]

_FORMATS = ("png", "pdf")


def render(
    report,
    fmt: str,
    output_path: str,
    *,
    config: Optional[ReportConfig] = None,
    title: str = "",
    subtitle: str = "",
) -> str:
    """Render *report* to a single file.

    Parameters
    ----------
    report : MetricsReport
        Output of ``evaluate`` or ``tikhonov_report``.
    fmt : str
        ``"png"`` (comparison sheet) or ``"pdf"`` (table plus sheet).
    output_path : str
        Destination file path.
    config : ReportConfig, optional
        Rendering configuration.  If *None* a default is created, with
        *title* and *subtitle* applied when given.

    Returns
    -------
    str
        The absolute path of the written file.
    """
    fmt = fmt.lower().strip()
    if fmt not in _FORMATS:
        raise ConfigurationError(f"Unknown format {fmt!r}; choose from {_FORMATS}")

    config = _config(config, title, subtitle)
    os.makedirs(os.path.dirname(os.path.abspath(output_path)) or ".", exist_ok=True)

    if fmt == "png":
        from .png_renderer import render_png

        render_png(report, output_path, config=config)
    else:
        from .pdf_renderer import render_pdf

        render_pdf(report, output_path, config=config)

    return os.path.abspath(output_path)


def render_all(
    report,
    output_dir: str,
    *,
    basename: str = "report",
    config: Optional[ReportConfig] = None,
    title: str = "",
    subtitle: str = "",
) -> dict[str, str]:
    """Render *report* to every supported format.

    Produces ``<basename>.png`` (comparison sheet) and ``<basename>.pdf``.
    Returns a dict mapping format labels to absolute file paths.
    """
    config = _config(config, title, subtitle)
    os.makedirs(output_dir, exist_ok=True)
    return {
        fmt: render(report, fmt, os.path.join(output_dir, f"{basename}.{fmt}"), config=config)
        for fmt in _FORMATS
    }


def _config(config: Optional[ReportConfig], title: str, subtitle: str) -> ReportConfig:
    if config is not None:
        return config
    config = ReportConfig()
    if title:
        config.title = title
    if subtitle:
        config.subtitle = subtitle
    return config
