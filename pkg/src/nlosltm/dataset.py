"""Manifests of (hidden image, projection, condition) triples and batching.

Manifest schema (``format_version`` 1), stored as JSON beside the images::

    {
      "format_version": 1,
      "hidden_res": [H_x, W_x],
      "wall_res": [H_y, W_y],
      "channels": C,
      "geometry": {...} | null,
      "conditions": [ConditionSpec dicts, ids 0..n_c-1],
      "records": [{"hidden_path", "projection_path", "condition_id", "split", "image_id"}, ...]
    }

Record paths are written relative to the manifest's directory and resolved
to absolute paths on load.
"""

from __future__ import annotations

import functools
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, EmptySplitError
from .imageio import read_png16
from .lightsim import ConditionSpec, SceneGeometry

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SampleRecord:
    """One hidden/projection pair and the condition that produced it.

    ``image_id`` names the source hidden image; records of one image under
    different conditions share it.  Empty means unknown and the hidden path
    stands in.
    """

    hidden_path: str
    projection_path: str
    condition_id: int
    split: str
    image_id: str = ""

    @property
    def image_key(self) -> str:
        return self.image_id or self.hidden_path

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigurationError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass
class Manifest:
    """A dataset: records, their conditions, and the declared resolutions.

    Attributes:
        records: All samples, every split.
        conditions: Condition of each id, ids contiguous from 0.
        hidden_res: (H_x, W_x).
        wall_res: (H_y, W_y).
        channels: Image channels.
        geometry: Scene geometry when the data is synthetic, else None.
        format_version: Schema version.
        root: Directory the manifest was loaded from (not compared).
    """

    records: list
    conditions: list
    hidden_res: tuple
    wall_res: tuple
    channels: int = 1
    geometry: Optional[SceneGeometry] = None
    format_version: int = MANIFEST_VERSION
    root: str = field(default="", compare=False)

    def __post_init__(self):
        self.hidden_res = tuple(int(v) for v in self.hidden_res)
        self.wall_res = tuple(int(v) for v in self.wall_res)
        self.validate()

    @property
    def n_conditions(self) -> int:
        return len(self.conditions)

    def validate(self) -> None:
        ids = [c.id for c in self.conditions]
        if ids != list(range(len(ids))):
            raise ConfigurationError(f"condition ids must be contiguous from 0, got {ids}")
        for rec in self.records:
            if not 0 <= rec.condition_id < len(ids):
                raise ConfigurationError(
                    f"record {rec.projection_path} references unknown condition {rec.condition_id}")

    def check_files(self) -> None:
        """Decode every referenced image and compare against the declared resolutions."""
        for rec in self.records:
            for path, res in ((rec.hidden_path, self.hidden_res), (rec.projection_path, self.wall_res)):
                if not os.path.isfile(path):
                    raise ConfigurationError(f"missing image {path}")
                img = read_png16(path, self.channels)
                if tuple(img.shape[:2]) != res:
                    raise DimensionError(f"{path} is {img.shape[:2]}, manifest declares {res}")

    def split_records(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def condition(self, cid: int) -> ConditionSpec:
        return self.conditions[cid]

    def condition_counts(self, split: Optional[str] = None) -> dict:
        """Records per condition id, optionally for one split."""
        recs = self.records if split is None else self.split_records(split)
        counts = Counter(r.condition_id for r in recs)
        return {c.id: counts.get(c.id, 0) for c in self.conditions}

    def hidden_view(self, split: str) -> "Manifest":
        """One record per distinct source image of *split*, for autoencoder pretraining."""
        seen = set()
        kept = []
        for rec in self.split_records(split):
            if rec.image_key not in seen:
                seen.add(rec.image_key)
                kept.append(rec)
        return replace(self, records=kept)

    def with_validation(self, fraction: float, seed: int) -> "Manifest":
        """Move a seeded share of the training images into a ``val`` split.

        Whole images move, so an image never appears in both splits under
        different conditions.  A manifest that already has ``val`` records,
        ``fraction <= 0`` or fewer than two training images is returned as is.
        """
        if fraction <= 0 or self.split_records("val"):
            return self
        keys = sorted({r.image_key for r in self.split_records("train")})
        if len(keys) < 2:
            return self
        n_val = min(len(keys) - 1, max(1, round(fraction * len(keys))))
        picked = np.random.default_rng([seed, 2]).permutation(len(keys))[:n_val]
        val_keys = {keys[i] for i in picked}
        records = [replace(r, split="val") if r.split == "train" and r.image_key in val_keys else r
                   for r in self.records]
        logger.info("Held out %d of %d training images for validation", n_val, len(keys))
        return replace(self, records=records)

    def to_dict(self, base_dir: Optional[str] = None) -> dict:
        def rel(p: str) -> str:
            return os.path.relpath(p, base_dir).replace(os.sep, "/") if base_dir else p

        return {
            "format_version": self.format_version,
            "hidden_res": list(self.hidden_res),
            "wall_res": list(self.wall_res),
            "channels": self.channels,
            "geometry": None if self.geometry is None else self.geometry.to_dict(),
            "conditions": [c.to_dict() for c in self.conditions],
            "records": [
                {"hidden_path": rel(r.hidden_path), "projection_path": rel(r.projection_path),
                 "condition_id": r.condition_id, "split": r.split, "image_id": r.image_id}
                for r in self.records
            ],
        }


def save_manifest(m: Manifest, path: str) -> str:
    """Write *m* as indented JSON; returns the absolute path."""
    path = os.path.abspath(path)
    base = os.path.dirname(path)
    os.makedirs(base, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(m.to_dict(base), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path: str) -> Manifest:
    """Read a manifest written by :func:`save_manifest`."""
    path = os.path.abspath(path)
    base = os.path.dirname(path)
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc
    version = d.get("format_version")
    if version != MANIFEST_VERSION:
        raise ConfigurationError(f"{path}: unsupported manifest format_version {version!r}")

    def resolve(p: str) -> str:
        return os.path.normpath(os.path.join(base, p))

    records = [
        SampleRecord(hidden_path=resolve(r["hidden_path"]), projection_path=resolve(r["projection_path"]),
                     condition_id=int(r["condition_id"]), split=r["split"],
                     image_id=str(r.get("image_id", "")))
        for r in d["records"]
    ]
    geometry = None if d.get("geometry") is None else SceneGeometry.from_dict(d["geometry"])
    return Manifest(
        records=records,
        conditions=[ConditionSpec.from_dict(c) for c in d["conditions"]],
        hidden_res=tuple(d["hidden_res"]),
        wall_res=tuple(d["wall_res"]),
        channels=int(d.get("channels", 1)),
        geometry=geometry,
        format_version=version,
        root=base,
    )


def _physical(cond: ConditionSpec) -> str:
    return json.dumps(cond.physical_key(), sort_keys=True)


def mix_manifests(parts: list) -> Manifest:
    """Concatenate manifests, merging physically identical conditions.

    Conditions are renumbered contiguously in order of first appearance, so
    mixing a manifest with itself doubles the records but keeps the
    condition list.
    """
    if not parts:
        raise ConfigurationError("mix_manifests needs at least one manifest")
    first = parts[0]
    for i, part in enumerate(parts[1:], start=1):
        if (part.hidden_res, part.wall_res) != (first.hidden_res, first.wall_res):
            raise ConfigurationError(
                f"part {i} has resolutions hidden={part.hidden_res} wall={part.wall_res}, "
                f"expected hidden={first.hidden_res} wall={first.wall_res}")
        if part.channels != first.channels:
            raise ConfigurationError(f"part {i} has {part.channels} channels, expected {first.channels}")

    merged: dict = {}
    conditions = []
    records = []
    for pi, part in enumerate(parts):
        remap = {}
        for cond in part.conditions:
            key = _physical(cond)
            if key not in merged:
                merged[key] = len(conditions)
                conditions.append(cond.with_id(len(conditions)))
            remap[cond.id] = merged[key]
        # image ids are only unique within one part
        records.extend(replace(r, condition_id=remap[r.condition_id],
                               image_id=f"{pi}/{r.image_id}" if r.image_id else "")
                       for r in part.records)

    geometries = {json.dumps(p.geometry.to_dict(), sort_keys=True) if p.geometry else None for p in parts}
    geometry = first.geometry if len(geometries) == 1 else None
    logger.info("Mixed %d manifests into %d conditions / %d records",
                len(parts), len(conditions), len(records))
    return Manifest(records=records, conditions=conditions, hidden_res=first.hidden_res,
                    wall_res=first.wall_res, channels=first.channels, geometry=geometry)


@dataclass(frozen=True)
class Batch:
    """B aligned samples as read-only (B, C, H, W) float32 arrays."""

    hidden: np.ndarray
    projection: np.ndarray
    condition_ids: tuple
    record_indices: tuple

    def __len__(self) -> int:
        return len(self.condition_ids)


@functools.lru_cache(maxsize=16384)
def _load_chw(path: str, channels: int) -> np.ndarray:
    arr = np.ascontiguousarray(read_png16(path, channels).transpose(2, 0, 1), dtype=np.float32)
    arr.setflags(write=False)
    return arr


def iterate_batches(m: Manifest, split: str, batch_size: int,
                    shuffle_seed: Optional[int] = None) -> Iterator[Batch]:
    """Yield every record of *split* exactly once, in a seeded random order.

    ``shuffle_seed=None`` keeps manifest order.  The final batch may be short.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    records = m.split_records(split)
    if not records:
        raise EmptySplitError(f"split {split!r} has no records")
    n = len(records)
    order = (np.arange(n) if shuffle_seed is None
             else np.random.default_rng(shuffle_seed).permutation(n))
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        chunk = [records[i] for i in idx]
        hidden = np.stack([_load_chw(r.hidden_path, m.channels) for r in chunk])
        proj = np.stack([_load_chw(r.projection_path, m.channels) for r in chunk])
        hidden.setflags(write=False)
        proj.setflags(write=False)
        yield Batch(hidden=hidden, projection=proj,
                    condition_ids=tuple(r.condition_id for r in chunk),
                    record_indices=tuple(int(i) for i in idx))
