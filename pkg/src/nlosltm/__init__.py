"""NLOS-LTM: passive non-line-of-sight reconstruction under mixed light transport conditions."""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import EvalConfig, ExperimentConfig, ReportConfig, SimConfig, TrainConfig, load_config
from .dataset import Manifest, iterate_batches, load_manifest, mix_manifests, save_manifest
from .errors import NlosError
from .evaluation import MetricsReport, codebook_stats, evaluate, reproject_dataset, tikhonov_report
from .metrics import psnr, ssim
from .networks import ArchSpec, NlosLtm
from .synthesis import generate_synthetic_dataset, ingest_passive_directory
from .training import pretrain_autoencoder, train_joint


def render(report, fmt, output_path, **kwargs):
    """Render a MetricsReport to a single format. Lazy-imports renderers."""
    from .renderers import render as _render
    return _render(report, fmt, output_path, **kwargs)


def render_all(report, output_dir, **kwargs):
    """Render a MetricsReport to all formats. Lazy-imports renderers."""
    from .renderers import render_all as _render_all
    return _render_all(report, output_dir, **kwargs)


__all__ = [
    "ArchSpec",
    "Checkpoint",
    "EvalConfig",
    "ExperimentConfig",
    "Manifest",
    "MetricsReport",
    "NlosError",
    "NlosLtm",
    "ReportConfig",
    "SimConfig",
    "TrainConfig",
    "codebook_stats",
    "evaluate",
    "generate_synthetic_dataset",
    "ingest_passive_directory",
    "iterate_batches",
    "load_checkpoint",
    "load_config",
    "load_manifest",
    "mix_manifests",
    "pretrain_autoencoder",
    "psnr",
    "render",
    "render_all",
    "reproject_dataset",
    "save_checkpoint",
    "save_manifest",
    "ssim",
    "tikhonov_report",
    "train_joint",
]
