"""Synthetic dataset generation and real-capture ingestion.

Images are written as ``<root>/<condition_id>/<split>/<index>_{hidden|proj}.png16``,
transport matrices into ``<root>/transport/`` and the manifest to
``<root>/manifest.json``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, Optional

import numpy as np

from .dataset import SPLITS, Manifest, SampleRecord, _load_chw, save_manifest
from .errors import ConfigurationError, SourceImageError
from .imageio import SOURCE_EXTENSIONS, load_source_image, write_png16
from .lightsim import ConditionSpec, SceneGeometry, TransportCache, desk_conditions, render_projection
from .procedural import FAMILIES, procedural_images

logger = logging.getLogger(__name__)

try:
    from tqdm import tqdm
except ImportError:  # progress bars are optional
    tqdm = None

_SPLIT_CODE = {"train": 0, "test": 1, "val": 2}


def sample_paths(root: str, condition_id: int, split: str, index: int) -> tuple[str, str]:
    """Hidden and projection paths of one sample."""
    d = os.path.join(os.path.abspath(root), str(condition_id), split)
    return (os.path.join(d, f"{index:05d}_hidden.png16"),
            os.path.join(d, f"{index:05d}_proj.png16"))


def noise_seed(seed: int, condition_id: int, split: str, index: int) -> int:
    """Sensor-noise seed of one sample, independent of generation order."""
    ss = np.random.SeedSequence([seed, condition_id, _SPLIT_CODE[split], index])
    return int(ss.generate_state(1)[0])


def _list_source_files(directory: str) -> list[str]:
    if not os.path.isdir(directory):
        raise ConfigurationError(f"source {directory!r} is neither a procedural family {FAMILIES} "
                                 "nor a directory")
    return sorted(
        os.path.join(directory, f) for f in os.listdir(directory)
        if f.lower().endswith(SOURCE_EXTENSIONS)
    )


def _load_hidden_images(source: str, total: int, res: tuple, channels: int, seed: int) -> list:
    if source in FAMILIES:
        return procedural_images(total, res, source, seed, channels)
    files = _list_source_files(source)
    if len(files) < total:
        raise ConfigurationError(f"{source} holds {len(files)} images, {total} requested")
    picked = [files[i] for i in np.random.default_rng(seed).permutation(len(files))[:total]]
    images, failures = [], []
    for path in picked:
        try:
            images.append(load_source_image(path, res, channels))
        except (OSError, ValueError) as exc:
            failures.append((path, str(exc)))
    if failures:
        raise SourceImageError(failures)
    return images


def generate_synthetic_dataset(source: str, conds: list, geom: SceneGeometry,
                               counts: Mapping[str, int], seed: int, out_dir: str, *,
                               channels: int = 1, workers: int = 1) -> Manifest:
    """Render every hidden image under every condition and write a manifest.

    Args:
        source: Procedural family (``digits``, ``shapes``, ``mixed``) or a
            directory of source images.
        conds: Conditions with ids 0..n_c-1.
        geom: Scene geometry shared by all conditions.
        counts: Hidden images per split, e.g. ``{"train": 10, "test": 2}``.
        seed: Seeds the images, the split assignment and the sensor noise.
        out_dir: Dataset root.
        channels: 1 or 3.
        workers: Rendering threads.

    Returns:
        The saved Manifest, with ``len(conds) * sum(counts)`` records.

    Raises:
        ConfigurationError: Bad counts, condition ids or source.
        SourceImageError: Any source image could not be decoded.
    """
    unknown = set(counts) - set(SPLITS)
    if unknown:
        raise ConfigurationError(f"unknown split(s) {sorted(unknown)}")
    if any(v < 0 for v in counts.values()):
        raise ConfigurationError("split counts must be >= 0")
    total = sum(counts.values())
    if total < 1:
        raise ConfigurationError("at least one hidden image is required")
    if not conds:
        raise ConfigurationError("at least one condition is required")
    if [c.id for c in conds] != list(range(len(conds))):
        raise ConfigurationError("condition ids must be contiguous from 0")
    if channels not in (1, 3):
        raise ConfigurationError(f"channels must be 1 or 3, got {channels}")

    images = _load_hidden_images(source, total, geom.hidden_res, channels, seed)
    perm = np.random.default_rng([seed, 1]).permutation(total)
    assignment = []  # (split, local index, hidden image index)
    offset = 0
    for split in SPLITS:
        n = counts.get(split, 0)
        assignment.extend((split, k, int(perm[offset + k])) for k in range(n))
        offset += n

    cache = TransportCache(os.path.join(out_dir, "transport"))
    matrices = [cache.get_or_build(c, geom) for c in conds]

    jobs = [(cond, split, k, img_idx) for cond in conds for (split, k, img_idx) in assignment]

    def render(job) -> SampleRecord:
        cond, split, k, img_idx = job
        x = images[img_idx]
        y = render_projection(matrices[cond.id], x, noise_seed(seed, cond.id, split, k))
        hidden_path, proj_path = sample_paths(out_dir, cond.id, split, k)
        write_png16(hidden_path, x)
        write_png16(proj_path, y)
        return SampleRecord(hidden_path=os.path.normpath(hidden_path),
                            projection_path=os.path.normpath(proj_path),
                            condition_id=cond.id, split=split, image_id=f"{img_idx:05d}")

    logger.info("Rendering %d samples (%d images x %d conditions) into %s",
                len(jobs), total, len(conds), out_dir)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = pool.map(render, jobs)
        if tqdm is not None:
            results = tqdm(results, total=len(jobs), desc="simulate", leave=False)
        records = list(results)

    _load_chw.cache_clear()
    manifest = Manifest(records=records, conditions=list(conds), hidden_res=geom.hidden_res,
                        wall_res=geom.wall_res, channels=channels, geometry=geom)
    manifest.root = os.path.abspath(out_dir)
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def _stems(directory: str) -> dict:
    if not os.path.isdir(directory):
        return {}
    return {os.path.splitext(f)[0]: os.path.join(directory, f)
            for f in sorted(os.listdir(directory)) if f.lower().endswith(SOURCE_EXTENSIONS)}


def ingest_passive_directory(root: str, out_dir: str, hidden_res: tuple, wall_res: tuple,
                             channels: int = 1) -> Manifest:
    """Convert a real-capture directory into a png16 dataset.

    Expected layout: ``<root>/<code>/<train|test>/{hidden,projection}/<name>.<ext>``
    where ``<code>`` is a condition code such as ``70_1_A_Wall``.  Condition ids
    follow sorted folder order; hidden and projection files pair by name.
    """
    if not os.path.isdir(root):
        raise ConfigurationError(f"{root} is not a directory")
    folders = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not folders:
        raise ConfigurationError(f"{root} has no condition folders")
    conds = [ConditionSpec.from_code(name, id=i) for i, name in enumerate(folders)]

    records, failures = [], []
    for cond, name in zip(conds, folders):
        for split in SPLITS:
            base = os.path.join(root, name, split)
            hidden = _stems(os.path.join(base, "hidden"))
            proj = _stems(os.path.join(base, "projection"))
            for stem in sorted(set(hidden) ^ set(proj)):
                failures.append((os.path.join(base, stem), "no matching hidden/projection pair"))
            for k, stem in enumerate(sorted(set(hidden) & set(proj))):
                try:
                    x = load_source_image(hidden[stem], hidden_res, channels)
                    y = load_source_image(proj[stem], wall_res, channels)
                except (OSError, ValueError) as exc:
                    failures.append((hidden[stem], str(exc)))
                    continue
                hidden_path, proj_path = sample_paths(out_dir, cond.id, split, k)
                write_png16(hidden_path, x)
                write_png16(proj_path, y)
                records.append(SampleRecord(hidden_path=os.path.normpath(hidden_path),
                                            projection_path=os.path.normpath(proj_path),
                                            condition_id=cond.id, split=split, image_id=stem))
    if failures:
        raise SourceImageError(failures)
    if not records:
        raise ConfigurationError(f"{root} holds no image pairs")

    _load_chw.cache_clear()
    manifest = Manifest(records=records, conditions=conds, hidden_res=hidden_res,
                        wall_res=wall_res, channels=channels, geometry=None)
    manifest.root = os.path.abspath(out_dir)
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    logger.info("Ingested %d pairs over %d conditions from %s", len(records), len(conds), root)
    return manifest


def build_from_config(cfg, source: Optional[str] = None) -> Manifest:
    """Generate the dataset described by a :class:`~nlosltm.config.SimConfig`."""
    geom = SceneGeometry(hidden_res=tuple(cfg.hidden_res), wall_res=tuple(cfg.wall_res),
                         hidden_plane_size_cm=tuple(cfg.hidden_plane_size_cm),
                         wall_size_cm=tuple(cfg.wall_size_cm), geometry_seed=cfg.geometry_seed)
    conds = desk_conditions(cfg.mixture, occluder=cfg.occluder)
    return generate_synthetic_dataset(source or cfg.source, conds, geom,
                                      {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test},
                                      cfg.seed, cfg.dataset_dir, channels=cfg.channels, workers=cfg.workers)
