"""Tests for PDF renderer."""

import os

from src.nlosltm.renderers._base import ReportConfig
from src.nlosltm.renderers.pdf_renderer import render_pdf


class TestRenderPdf:
    def test_creates_file(self, sample_report, tmp_output):
        path = os.path.join(tmp_output, "test.pdf")
        result = render_pdf(sample_report, path)
        assert os.path.isfile(result)

    def test_returns_absolute_path(self, sample_report, tmp_output):
        path = os.path.join(tmp_output, "test.pdf")
        result = render_pdf(sample_report, path)
        assert os.path.isabs(result)

    def test_pdf_header(self, sample_report, tmp_output):
        path = os.path.join(tmp_output, "test.pdf")
        render_pdf(sample_report, path)
        with open(path, "rb") as f:
            header = f.read(5)
        assert header == b"%PDF-"

    def test_with_title_and_subtitle(self, sample_report, tmp_output):
        cfg = ReportConfig(title="Desk run", subtitle="four-anime / test")
        path = os.path.join(tmp_output, "titled.pdf")
        render_pdf(sample_report, path, config=cfg)
        assert os.path.getsize(path) > 0

    def test_no_sheet(self, sample_report, tmp_output):
        path_with = os.path.join(tmp_output, "with_sheet.pdf")
        path_without = os.path.join(tmp_output, "no_sheet.pdf")
        render_pdf(sample_report, path_with, include_sheet=True)
        render_pdf(sample_report, path_without, include_sheet=False)
        # the embedded sheet makes the PDF larger
        assert os.path.getsize(path_with) > os.path.getsize(path_without)

    def test_report_without_examples(self, empty_report, tmp_output):
        path = os.path.join(tmp_output, "empty.pdf")
        render_pdf(empty_report, path)
        assert os.path.isfile(path)

    def test_non_latin_title(self, sample_report, tmp_output):
        cfg = ReportConfig(title="Rekonstruktion → λ")
        path = os.path.join(tmp_output, "unicode.pdf")
        render_pdf(sample_report, path, config=cfg)
        assert os.path.isfile(path)

    def test_creates_parent_dirs(self, sample_report, tmp_output):
        path = os.path.join(tmp_output, "sub", "dir", "test.pdf")
        result = render_pdf(sample_report, path)
        assert os.path.isfile(result)
