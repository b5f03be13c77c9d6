"""Per-condition evaluation, baselines, codebook statistics and reprojection.

MetricsReport JSON schema::

    {
      "method": "nlos-ltm" | "tikhonov",
      "split": "test",
      "config_hash": "...", "checkpoint_id": "...", "manifest": "...",
      "baselines": ["tikhonov", "agnostic"],
      "conditions": [{"condition_id", "code", "count", "psnr_mean", "ssim_mean",
                      "tikhonov_psnr", "tikhonov_ssim", "agnostic_psnr", "agnostic_ssim",
                      "reproj_l1", "mean_image_l1"}, ...],
      "overall": {same keys, condition_id/code omitted}
    }

Absent values are ``null``; an infinite PSNR is the string ``"inf"``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint
from .config import EvalConfig
from .dataset import Manifest, SampleRecord, iterate_batches, save_manifest
from .errors import ConfigurationError, ContractError, EmptySplitError, MissingTransportError
from .imageio import write_png16
from .lightsim import TransportCache, classical_reconstruct
from .logs import _jsonable
from .metrics import psnr, ssim
from .networks import NlosLtm
from .training import model_from_checkpoint

logger = logging.getLogger(__name__)

_METRIC_KEYS = ("psnr_mean", "ssim_mean", "tikhonov_psnr", "tikhonov_ssim", "agnostic_psnr",
                "agnostic_ssim", "reproj_l1", "mean_image_l1")


@dataclass
class ConditionMetrics:
    condition_id: int
    code: str
    count: int
    psnr_mean: float
    ssim_mean: float
    tikhonov_psnr: Optional[float] = None
    tikhonov_ssim: Optional[float] = None
    agnostic_psnr: Optional[float] = None
    agnostic_ssim: Optional[float] = None
    reproj_l1: Optional[float] = None
    mean_image_l1: Optional[float] = None


@dataclass
class Example:
    """One (projection, reconstruction, ground truth) triple for the comparison sheet."""

    condition_id: int
    projection: np.ndarray
    reconstruction: np.ndarray
    hidden: np.ndarray


@dataclass
class MetricsReport:
    """Per-condition and overall metrics of one evaluation run."""

    conditions: list
    overall: dict
    split: str
    method: str = "nlos-ltm"
    baselines: list = field(default_factory=list)
    config_hash: str = ""
    checkpoint_id: str = ""
    manifest: str = ""
    examples: list = field(default_factory=list, compare=False, repr=False)

    def to_dict(self) -> dict:
        return _jsonable({
            "method": self.method,
            "split": self.split,
            "config_hash": self.config_hash,
            "checkpoint_id": self.checkpoint_id,
            "manifest": self.manifest,
            "baselines": list(self.baselines),
            "conditions": [asdict(c) for c in self.conditions],
            "overall": dict(self.overall),
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        def num(v):
            return math.inf if v == "inf" else (-math.inf if v == "-inf" else v)

        conds = [ConditionMetrics(**{k: num(v) for k, v in c.items()}) for c in d["conditions"]]
        return cls(conditions=conds, overall={k: num(v) for k, v in d["overall"].items()},
                   split=d["split"], method=d.get("method", "nlos-ltm"),
                   baselines=list(d.get("baselines", [])), config_hash=d.get("config_hash", ""),
                   checkpoint_id=d.get("checkpoint_id", ""), manifest=d.get("manifest", ""))

    def save(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        return os.path.abspath(path)

    def columns(self) -> list:
        cols = ["psnr_mean", "ssim_mean"]
        for name in self.baselines:
            cols += [f"{name}_psnr", f"{name}_ssim"]
        if any(c.reproj_l1 is not None for c in self.conditions):
            cols += ["reproj_l1", "mean_image_l1"]
        return cols

    def format_table(self) -> str:
        """Aligned text table, one row per condition plus an overall row."""
        cols = self.columns()
        header = ["id", "condition", "count"] + cols
        rows = [[str(c.condition_id), c.code, str(c.count)] + [_fmt(getattr(c, k)) for k in cols]
                for c in self.conditions]
        rows.append(["", "overall", str(self.overall["count"])] + [_fmt(self.overall.get(k)) for k in cols])
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows]
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.4f}"


def _mean(values: list) -> Optional[float]:
    return float(np.mean(values)) if values else None


def _hwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().double().numpy().transpose(1, 2, 0)


def _check_resolutions(ckpt: Checkpoint, m: Manifest) -> None:
    a = ckpt.arch
    if (a.hidden_res, a.wall_res, a.channels) != (m.hidden_res, m.wall_res, m.channels):
        raise ConfigurationError(
            f"checkpoint expects hidden={a.hidden_res} wall={a.wall_res} C={a.channels}, manifest has "
            f"hidden={m.hidden_res} wall={m.wall_res} C={m.channels}")


def transport_matrices(m: Manifest, transport_dir: str = "") -> dict:
    """Cached transport matrix per condition id; missing ones are absent."""
    if m.geometry is None:
        return {}
    root = transport_dir or os.path.join(m.root or ".", "transport")
    cache = TransportCache(root)
    found = {}
    for cond in m.conditions:
        A = cache.get(cond, m.geometry)
        if A is not None:
            found[cond.id] = A
    return found


def _resolve_tikhonov(m: Manifest, cfg: EvalConfig) -> dict:
    if cfg.tikhonov == "off":
        return {}
    if cfg.tikhonov not in ("auto", "on"):
        raise ConfigurationError(f"tikhonov must be auto, on or off, got {cfg.tikhonov!r}")
    found = transport_matrices(m, cfg.transport_dir)
    missing = [c.code for c in m.conditions if c.id not in found]
    if missing:
        if cfg.tikhonov == "on":
            raise MissingTransportError(f"no cached transport matrix for condition(s) {missing}")
        if found:
            logger.info("Tikhonov column omitted: %d of %d matrices missing",
                        len(missing), len(m.conditions))
        return {}
    return found


def _mean_projections(m: Manifest) -> dict:
    """Mean training projection per condition (falls back to test)."""
    split = "train" if m.split_records("train") else "test"
    sums, counts = {}, defaultdict(int)
    for batch in iterate_batches(m, split, 64):
        for cid, y in zip(batch.condition_ids, batch.projection):
            sums[cid] = sums.get(cid, 0.0) + y.astype(np.float64)
            counts[cid] += 1
    return {cid: sums[cid] / counts[cid] for cid in sums}


@torch.no_grad()
def evaluate(ckpt: Checkpoint, m: Manifest, split: str = "test", cfg: Optional[EvalConfig] = None,
             *, checkpoint_id: str = "", device: str = "cpu") -> MetricsReport:
    """Reconstruct every record of *split* with test-time quantization and score it.

    Optional columns: Tikhonov (cached transport matrices), a condition-agnostic
    checkpoint (``cfg.agnostic_checkpoint``), and reprojection L1 against the
    per-condition mean projection when the model has a reprojection network.

    Raises:
        ConfigurationError: Resolutions differ between checkpoint and manifest.
        EmptySplitError: *split* has no records.
        MissingTransportError: ``cfg.tikhonov == "on"`` and matrices are missing.
    """
    cfg = cfg or EvalConfig()
    _check_resolutions(ckpt, m)
    if not m.split_records(split):
        raise EmptySplitError(f"split {split!r} has no records")
    model = model_from_checkpoint(ckpt, device)
    matrices = _resolve_tikhonov(m, cfg)
    agnostic: Optional[NlosLtm] = None
    if cfg.agnostic_checkpoint:
        other = load_checkpoint(cfg.agnostic_checkpoint)
        _check_resolutions(other, m)
        agnostic = model_from_checkpoint(other, device)
    mean_proj = _mean_projections(m) if model.reprojector is not None else {}

    per = defaultdict(lambda: defaultdict(list))
    examples = []
    kept = defaultdict(int)
    for batch in iterate_batches(m, split, cfg.batch_size):
        x = torch.tensor(batch.hidden, device=device)
        y = torch.tensor(batch.projection, device=device)
        out = model.reconstruct(y, "test")
        alt = agnostic.reconstruct(y, "test").x if agnostic is not None else None
        y_gen = model.reproject(x, out.z_q) if model.reprojector is not None else None
        for i, cid in enumerate(batch.condition_ids):
            truth = _hwc(x[i])
            rec = _hwc(out.x[i])
            bucket = per[cid]
            bucket["psnr_mean"].append(psnr(rec, truth))
            bucket["ssim_mean"].append(ssim(rec, truth))
            if matrices:
                tk = classical_reconstruct(matrices[cid], _hwc(y[i]), cfg.tikhonov_reg, subtract_ambient=True)
                bucket["tikhonov_psnr"].append(psnr(tk, truth))
                bucket["tikhonov_ssim"].append(ssim(tk, truth))
            if alt is not None:
                a = _hwc(alt[i])
                bucket["agnostic_psnr"].append(psnr(a, truth))
                bucket["agnostic_ssim"].append(ssim(a, truth))
            if y_gen is not None:
                target = y[i].detach().cpu().double().numpy()
                bucket["reproj_l1"].append(float(np.mean(np.abs(y_gen[i].cpu().double().numpy() - target))))
                if cid in mean_proj:
                    bucket["mean_image_l1"].append(float(np.mean(np.abs(mean_proj[cid] - target))))
            if kept[cid] < cfg.examples_per_condition:
                examples.append(Example(cid, _hwc(y[i]), rec, truth))
                kept[cid] += 1

    baselines = []
    if matrices:
        baselines.append("tikhonov")
    if agnostic is not None:
        baselines.append("agnostic")
    return _assemble(m, split, per, examples, baselines, method="nlos-ltm",
                     config_hash=ckpt.config_hash, checkpoint_id=checkpoint_id)


def _assemble(m: Manifest, split: str, per: dict, examples: list, baselines: list, *,
              method: str, config_hash: str = "", checkpoint_id: str = "") -> MetricsReport:
    conditions = []
    pooled = defaultdict(list)
    for cond in m.conditions:
        bucket = per.get(cond.id, {})
        values = {k: _mean(bucket.get(k, [])) for k in _METRIC_KEYS}
        count = len(bucket.get("psnr_mean", []))
        conditions.append(ConditionMetrics(condition_id=cond.id, code=cond.code, count=count, **values))
        for k in _METRIC_KEYS:
            pooled[k].extend(bucket.get(k, []))
    overall = {"count": sum(c.count for c in conditions)}
    overall.update({k: _mean(pooled[k]) for k in _METRIC_KEYS})
    return MetricsReport(conditions=conditions, overall=overall, split=split, method=method,
                         baselines=baselines, config_hash=config_hash, checkpoint_id=checkpoint_id,
                         manifest=os.path.join(m.root, "manifest.json") if m.root else "",
                         examples=examples)


def tikhonov_report(m: Manifest, split: str = "test", reg: float = 1e-3, transport_dir: str = "",
                    examples_per_condition: int = 2) -> MetricsReport:
    """Score the classical Tikhonov inversion alone.

    Raises:
        MissingTransportError: Any condition lacks a cached transport matrix.
    """
    if not m.split_records(split):
        raise EmptySplitError(f"split {split!r} has no records")
    matrices = transport_matrices(m, transport_dir)
    missing = [c.code for c in m.conditions if c.id not in matrices]
    if missing:
        raise MissingTransportError(f"no cached transport matrix for condition(s) {missing}")
    per = defaultdict(lambda: defaultdict(list))
    examples, kept = [], defaultdict(int)
    for batch in iterate_batches(m, split, 64):
        for cid, x, y in zip(batch.condition_ids, batch.hidden, batch.projection):
            truth = x.transpose(1, 2, 0).astype(np.float64)
            proj = y.transpose(1, 2, 0).astype(np.float64)
            rec = classical_reconstruct(matrices[cid], proj, reg, subtract_ambient=True)
            per[cid]["psnr_mean"].append(psnr(rec, truth))
            per[cid]["ssim_mean"].append(ssim(rec, truth))
            if kept[cid] < examples_per_condition:
                examples.append(Example(cid, proj, rec, truth))
                kept[cid] += 1
    return _assemble(m, split, per, examples, [], method="tikhonov")


@torch.no_grad()
def codebook_stats(ckpt: Checkpoint, m: Manifest, split: str = "test", batch_size: int = 64,
                   device: str = "cpu") -> dict:
    """Test-time code assignments versus true condition labels.

    Returns a dict with ``assignments`` (records per code), ``counts``
    (records per true condition), ``confusion`` (rows true condition,
    columns code index) and ``accuracy``.
    """
    _check_resolutions(ckpt, m)
    model = model_from_checkpoint(ckpt, device)
    if model.codebook is None:
        raise ContractError("checkpoint has no codebook")
    n_codes = model.codebook.n_conditions
    confusion = np.zeros((m.n_conditions, n_codes), dtype=np.int64)
    for batch in iterate_batches(m, split, batch_size):
        y = torch.tensor(batch.projection, device=device)
        idx = model.condition(y, "test")[2].cpu().numpy()
        for cid, k in zip(batch.condition_ids, idx):
            confusion[cid, int(k)] += 1
    total = int(confusion.sum())
    diag = sum(int(confusion[i, i]) for i in range(min(m.n_conditions, n_codes)))
    return {
        "split": split,
        "conditions": [c.code for c in m.conditions],
        "assignments": confusion.sum(axis=0).tolist(),
        "counts": confusion.sum(axis=1).tolist(),
        "confusion": confusion.tolist(),
        "accuracy": diag / total if total else 0.0,
    }


@torch.no_grad()
def reproject_image(model: NlosLtm, x: np.ndarray, condition_id: int) -> np.ndarray:
    """G_p projection (H_y, W_y, C) of one (H_x, W_x, C) hidden image under a condition's code."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2:
        x = x[:, :, None]
    xt = torch.tensor(x.transpose(2, 0, 1)[None])
    return _hwc(model.reproject(xt, model.code_for(condition_id))[0])


@torch.no_grad()
def reproject_dataset(ckpt: Checkpoint, m: Manifest, out_dir: str, split: Optional[str] = None,
                      batch_size: int = 64) -> Manifest:
    """Replace every projection of *m* by the reprojection network's output.

    Hidden images are referenced in place; projections are written under
    *out_dir* with the usual layout and a new manifest is saved there.
    """
    from .synthesis import sample_paths

    _check_resolutions(ckpt, m)
    model = model_from_checkpoint(ckpt)
    splits = [split] if split else [s for s in ("train", "val", "test") if m.split_records(s)]
    records = []
    for s in splits:
        recs = m.split_records(s)
        next_index = defaultdict(int)
        for batch in iterate_batches(m, s, batch_size):
            x = torch.tensor(batch.hidden)
            y_gen = model.reproject(x, model.code_for(list(batch.condition_ids)))
            for i, ridx in enumerate(batch.record_indices):
                rec = recs[ridx]
                k = next_index[rec.condition_id]
                next_index[rec.condition_id] += 1
                _, proj_path = sample_paths(out_dir, rec.condition_id, s, k)
                write_png16(proj_path, _hwc(y_gen[i]))
                records.append(SampleRecord(hidden_path=rec.hidden_path,
                                            projection_path=os.path.normpath(proj_path),
                                            condition_id=rec.condition_id, split=s,
                                            image_id=rec.image_id))
    out = Manifest(records=records, conditions=list(m.conditions), hidden_res=m.hidden_res,
                   wall_res=m.wall_res, channels=m.channels, geometry=None)
    out.root = os.path.abspath(out_dir)
    save_manifest(out, os.path.join(out_dir, "manifest.json"))
    logger.info("Wrote %d reprojected samples to %s", len(records), out_dir)
    return out
