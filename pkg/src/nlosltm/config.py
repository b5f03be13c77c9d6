"""Configuration dataclasses, config-file loading, and environment overrides.

A config file is an INI file with flat ``key = value`` pairs in the sections
``[simulate]``, ``[train]``, ``[eval]`` and ``[report]``.  Any key can be
overridden through the environment as ``NLOSLTM_<KEY>`` (upper case).
Tuples are written comma-separated (``hidden_res = 16, 16``).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .errors import ConfigurationError

ENV_PREFIX = "NLOSLTM_"


@dataclass
class SimConfig:
    """Synthetic dataset generation settings.

    Attributes:
        dataset_dir: Output directory for images, transport matrices and manifest.
        hidden_res: (H_x, W_x) of hidden images.  Not given by the real capture
            setup; 16 px is a desk-scale choice.
        wall_res: (H_y, W_y) of projection images.
        channels: 1 (grayscale) or 3.
        hidden_plane_size_cm: Physical extent of the hidden image plane.
        wall_size_cm: Physical extent of the relay surface patch seen by the
            camera (1 m default, not given by the real capture setup).
        geometry_seed: Seed for the wall albedo texture.
        mixture: Name of a condition mixture in ``lightsim.MIXTURES``, or a
            comma-separated list of condition codes such as ``70;1;A;Wall``.
        occluder: Place the default partial occluder in every condition.
        source: ``digits``, ``shapes``, ``mixed`` or a directory of images.
        n_train: Hidden images in the train split.
        n_val: Hidden images in a val split.  With 0, training holds out a
            share of the train images instead (``TrainConfig.val_fraction``).
        n_test: Hidden images in the test split.
        seed: Seed for procedural images, split assignment and sensor noise.
        workers: Threads rendering samples in parallel.
    """

    dataset_dir: str = "data/desk"
    hidden_res: tuple = (16, 16)
    wall_res: tuple = (16, 16)
    channels: int = 1
    hidden_plane_size_cm: tuple = (40.0, 40.0)
    wall_size_cm: tuple = (100.0, 100.0)
    geometry_seed: int = 7
    mixture: str = "four-anime"
    occluder: bool = True
    source: str = "digits"
    n_train: int = 160
    n_val: int = 0
    n_test: int = 40
    seed: int = 0
    workers: int = 4


@dataclass
class TrainConfig:
    """Two-stage training settings, architecture descriptor keys included.

    Epoch counts, batch size and every loss weight below are desk-scale
    defaults, unlike the optimizer settings and learning-rate endpoints.

    Attributes:
        manifest: Path of the dataset manifest.
        output_dir: Checkpoints and the step log are written here.
        seed: Seeds parameter init, codebook init and batch order.
        device: Torch device string.
        batch_size: Samples per step.
        ae_epochs / joint_epochs: Epochs of stage 1 and stage 2.
        ae_lr_start / ae_lr_end: Cosine endpoints of the autoencoder stage.
        ae_betas / ae_weight_decay: Adam settings of the autoencoder stage.
        joint_lr_start / joint_lr_end: Cosine endpoints of the joint stage.
        joint_betas / joint_weight_decay: AdamW settings of the joint stage.
        d_steps: Discriminator steps per generator step.
        grad_clip: Max gradient norm in the joint stage (0 disables).
        lambda1: OT (latent L1) weight inside the reconstruction loss.
        lambda2: Perceptual weight inside the reprojection generator loss.
        lambda_vq / lambda_gan: Weights of the VQ and reprojection objectives.
        tau / alpha / beta: InfoNCE temperature, codebook and commitment weights.
        no_ot / no_joint / single_scale_modulation / concat_modulation /
        no_vq / no_modulation: Ablation switches.
        freeze_decoder: Keep the pretrained decoder fixed in stage 2.
        stages / base_width / latent_channels: Autoencoder, G_r and G_p shape.
        cond_dim: Code dimensionality n_d.
        cond_widths: Channel widths of the condition encoder's four stages.
        disc_width / disc_layers / disc_scales: Patch discriminator shape.
        spatial_modulation: Spatially varying LTM parameters.
        perceptual_width / perceptual_seed: Frozen random feature network.
        checkpoint_every: Save a checkpoint every N epochs.
        val_fraction: Share of training images held out as the ``val`` split
            when the manifest has none.
        probe_split: Split used for model selection and codebook
            assignment accuracy; never the test split.
    """

    manifest: str = "data/desk/manifest.json"
    output_dir: str = "runs/desk"
    seed: int = 0
    device: str = "cpu"
    batch_size: int = 16
    ae_epochs: int = 50
    joint_epochs: int = 50
    ae_lr_start: float = 1e-4
    ae_lr_end: float = 1e-8
    ae_betas: tuple = (0.9, 0.999)
    ae_weight_decay: float = 0.0
    joint_lr_start: float = 1e-4
    joint_lr_end: float = 1e-7
    joint_betas: tuple = (0.9, 0.9)
    joint_weight_decay: float = 1e-4
    d_steps: int = 1
    grad_clip: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda_vq: float = 1.0
    lambda_gan: float = 0.1
    tau: float = 0.07
    alpha: float = 1.0
    beta: float = 0.25
    no_ot: bool = False
    no_joint: bool = False
    single_scale_modulation: bool = False
    concat_modulation: bool = False
    no_vq: bool = False
    no_modulation: bool = False
    freeze_decoder: bool = True
    stages: int = 4
    base_width: int = 32
    latent_channels: int = 64
    cond_dim: int = 128
    cond_widths: tuple = (32, 64, 128, 128)
    disc_width: int = 32
    disc_layers: int = 2
    disc_scales: int = 2
    spatial_modulation: bool = False
    perceptual_width: int = 16
    perceptual_seed: int = 1234
    checkpoint_every: int = 1
    val_fraction: float = 0.1
    probe_split: str = "val"


@dataclass
class EvalConfig:
    """Evaluation settings.

    Attributes:
        split: Manifest split to evaluate.
        batch_size: Samples per forward pass.
        tikhonov: ``auto`` adds the Tikhonov column when every transport
            matrix is cached, ``on`` requires it, ``off`` omits it.
        tikhonov_reg: Ridge weight of the Tikhonov baseline.
        transport_dir: Transport cache; empty means ``<manifest dir>/transport``.
        agnostic_checkpoint: Optional checkpoint of a condition-agnostic model
            evaluated as a second baseline column.
        examples_per_condition: Triples kept for the comparison sheet.
    """

    split: str = "test"
    batch_size: int = 32
    tikhonov: str = "auto"
    tikhonov_reg: float = 1e-3
    transport_dir: str = ""
    agnostic_checkpoint: str = ""
    examples_per_condition: int = 2


@dataclass
class ReportConfig:
    """Configuration shared across report renderers.

    Attributes:
        title: Report title.
        subtitle: Optional subtitle (e.g. dataset name).
        tile_size: Pixel size of each image tile on the comparison sheet.
        dpi: Dots per inch for raster output.
        font_family: Preferred font family names in priority order.
        bg_color: Sheet background colour.
        line_color: Tile border colour.
        text_color: Label colour.
        title_font_size: Title text size in points.
        label_font_size: Tile label size in points.
    """

    title: str = "NLOS-LTM evaluation"
    subtitle: str = ""
    tile_size: int = 96
    dpi: int = 300
    font_family: tuple = ("Helvetica", "Arial", "DejaVuSans", "FreeSans")
    bg_color: tuple = (255, 255, 255)
    line_color: tuple = (0, 0, 0)
    text_color: tuple = (0, 0, 0)
    title_font_size: int = 20
    label_font_size: int = 11


@dataclass
class ExperimentConfig:
    """All sections of one config file."""

    simulate: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    report: ReportConfig = field(default_factory=ReportConfig)


_SECTIONS = ("simulate", "train", "eval", "report")


def _coerce(key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(p) for p in parts)
            if default and isinstance(default[0], float):
                return tuple(float(p) for p in parts)
            return tuple(parts)
    except ValueError as exc:
        raise ConfigurationError(f"invalid value for {key!r}: {raw!r}") from exc
    return raw


def apply_overrides(obj: Any, values: Mapping[str, str], *, source: str) -> None:
    """Set dataclass fields of *obj* from string *values*; unknown keys fail."""
    names = {f.name for f in dataclasses.fields(obj)}
    for key, raw in values.items():
        if key not in names:
            raise ConfigurationError(f"unknown key {key!r} in {source}")
        setattr(obj, key, _coerce(key, raw, getattr(obj, key)))


def load_config(path: Optional[str] = None,
                env: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from defaults, *path*, and *env*.

    Parameters
    ----------
    path : str, optional
        INI file; missing sections keep their defaults.
    env : mapping, optional
        Environment to read ``NLOSLTM_*`` overrides from (default ``os.environ``).
    """
    cfg = ExperimentConfig()
    if path:
        if not os.path.isfile(path):
            raise ConfigurationError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read(path, encoding="utf-8")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigurationError(f"unknown section [{section}] in {path}")
            apply_overrides(getattr(cfg, section), dict(parser.items(section)),
                            source=f"{path} [{section}]")

    env = os.environ if env is None else env
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        targets = [getattr(cfg, s) for s in _SECTIONS
                   if key in {f.name for f in dataclasses.fields(getattr(cfg, s))}]
        if not targets:
            raise ConfigurationError(f"unknown key {key!r} in environment variable {name}")
        for target in targets:
            apply_overrides(target, {key: raw}, source=f"environment {name}")
    return cfg


def config_hash(obj: Any) -> str:
    """SHA-256 over the canonical JSON form of a config dataclass."""
    payload = json.dumps(dataclasses.asdict(obj), sort_keys=True, default=list)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
