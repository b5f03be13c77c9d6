"""Integration tests: evaluation reports through all renderers."""

import os

import pytest

from src.nlosltm import evaluate, render, render_all
from src.nlosltm.errors import ConfigurationError
from src.nlosltm.renderers import ReportConfig


class TestRenderDispatch:
    def test_render_png(self, sample_report, tmp_output):
        path = render(sample_report, "png", os.path.join(tmp_output, "out.png"))
        assert os.path.isfile(path)

    def test_render_pdf(self, sample_report, tmp_output):
        path = render(sample_report, "pdf", os.path.join(tmp_output, "out.pdf"))
        assert os.path.isfile(path)

    def test_format_is_case_insensitive(self, sample_report, tmp_output):
        path = render(sample_report, " PNG ", os.path.join(tmp_output, "out.png"))
        assert os.path.isfile(path)

    def test_render_unknown_format_raises(self, sample_report, tmp_output):
        with pytest.raises(ConfigurationError, match="Unknown format"):
            render(sample_report, "html", os.path.join(tmp_output, "out.html"))

    def test_unknown_format_is_value_error(self, sample_report, tmp_output):
        with pytest.raises(ValueError):
            render(sample_report, "docx", os.path.join(tmp_output, "out.docx"))


class TestRenderAll:
    def test_produces_all_files(self, sample_report, tmp_output):
        files = render_all(sample_report, str(tmp_output), basename="desk")
        assert set(files.keys()) == {"png", "pdf"}
        for path in files.values():
            assert os.path.isfile(path), f"Missing: {path}"

    def test_basenames_correct(self, sample_report, tmp_output):
        files = render_all(sample_report, str(tmp_output), basename="week03")
        assert files["png"].endswith("week03.png")
        assert files["pdf"].endswith("week03.pdf")

    def test_with_config(self, sample_report, tmp_output):
        cfg = ReportConfig(title="Desk run", subtitle="test split")
        files = render_all(sample_report, str(tmp_output), config=cfg)
        for path in files.values():
            assert os.path.isfile(path)


class TestEndToEnd:
    """Trained checkpoint -> evaluation report -> every format."""

    def test_pipeline(self, trained_run, tiny_dataset, tmp_output):
        _, _, joint = trained_run
        report = evaluate(joint, tiny_dataset, "test")
        files = render_all(report, str(tmp_output), basename="desk_eval", title="Desk evaluation")
        assert len(files) == 2
        for path in files.values():
            assert os.path.getsize(path) > 0
