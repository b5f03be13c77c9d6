"""Versioned checkpoint container.

Layout::

    b"NLCKPT" | u32 format version | u64 header length | header JSON
    | raw little-endian tensor bytes | sha256 of everything before

The header is canonical JSON (sorted keys) listing every tensor's name,
dtype, shape and byte offset, so saving a loaded checkpoint reproduces the
file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .errors import ConfigurationError, IntegrityError
from .logs import _jsonable
from .networks import ArchSpec

logger = logging.getLogger(__name__)

MAGIC = b"NLCKPT"
FORMAT_VERSION = 1
STAGES = ("autoencoder", "joint")

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.float16: "<f2",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_DTYPE_NAMES = {str(k).replace("torch.", ""): k for k in _DTYPES}


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run.

    Attributes:
        stage: ``autoencoder`` or ``joint``.
        arch: Architecture descriptor the tensors belong to.
        config_hash: Hash of the training config that produced it.
        epoch: Epochs completed in this stage.
        model: Model state, name -> tensor.
        optimizers: name -> optimizer ``state_dict()``.
        metrics: Metric snapshot (losses, probe accuracy).
        extra: Free-form JSON (codebook seed, global step, ...).
    """

    stage: str
    arch: ArchSpec
    config_hash: str
    epoch: int
    model: dict
    optimizers: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"stage must be one of {STAGES}, got {self.stage!r}")


def _flatten_optimizer(name: str, state: dict, tensors: dict) -> dict:
    """Move tensors of an optimizer state_dict into *tensors*; return the JSON rest."""
    scalars = {}
    for pid, pstate in state["state"].items():
        for key, value in pstate.items():
            if isinstance(value, torch.Tensor):
                tensors[f"optim.{name}.{pid}.{key}"] = value
            else:
                scalars[f"{pid}.{key}"] = value
    return {"param_groups": state["param_groups"], "scalars": scalars}


def _unflatten_optimizer(name: str, meta: dict, tensors: dict) -> dict:
    state: dict = {}
    prefix = f"optim.{name}."
    for full, value in tensors.items():
        if full.startswith(prefix):
            pid, key = full[len(prefix):].split(".", 1)
            state.setdefault(int(pid), {})[key] = value
    for full, value in meta["scalars"].items():
        pid, key = full.split(".", 1)
        state.setdefault(int(pid), {})[key] = value
    return {"state": state, "param_groups": meta["param_groups"]}


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize *ckpt* into the container format."""
    tensors = {f"model.{k}": v for k, v in ckpt.model.items()}
    optim_meta = {name: _flatten_optimizer(name, st, tensors) for name, st in ckpt.optimizers.items()}

    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        t = tensors[name].detach().to("cpu").contiguous()
        if t.dtype not in _DTYPES:
            raise ConfigurationError(f"cannot store tensor {name} of dtype {t.dtype}")
        raw = np.ascontiguousarray(t.numpy(), dtype=_DTYPES[t.dtype]).tobytes()
        entries.append({"name": name, "dtype": str(t.dtype).replace("torch.", ""),
                        "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    header = {
        "format_version": FORMAT_VERSION,
        "stage": ckpt.stage,
        "arch": ckpt.arch.to_dict(),
        "config_hash": ckpt.config_hash,
        "epoch": ckpt.epoch,
        "metrics": _jsonable(ckpt.metrics),
        "extra": _jsonable(ckpt.extra),
        "optimizers": optim_meta,
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ckpt: Checkpoint, path: str) -> str:
    """Write *ckpt* atomically; returns the absolute path."""
    data = checkpoint_bytes(ckpt)
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    logger.info("Saved %s checkpoint (epoch %d) to %s", ckpt.stage, ckpt.epoch, path)
    return os.path.abspath(path)


def load_checkpoint(path: str) -> Checkpoint:
    """Read and verify a checkpoint.

    Raises:
        IntegrityError: Bad magic, unknown version, or content hash mismatch.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 12 + 32 or not data.startswith(MAGIC):
        raise IntegrityError(f"{path}: not a checkpoint container")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: content hash mismatch (corrupt or tampered)")
    version, head_len = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise IntegrityError(f"{path}: unknown checkpoint format version {version}")
    start = len(MAGIC) + 12
    try:
        header = json.loads(body[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable header ({exc})") from exc
    blob_start = start + head_len

    tensors = {}
    for e in header["tensors"]:
        dtype = _DTYPE_NAMES[e["dtype"]]
        lo = blob_start + e["offset"]
        arr = np.frombuffer(body[lo:lo + e["nbytes"]], dtype=_DTYPES[dtype]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.copy())

    model = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    optimizers = {name: _unflatten_optimizer(name, meta, tensors)
                  for name, meta in header["optimizers"].items()}
    return Checkpoint(stage=header["stage"], arch=ArchSpec.from_dict(header["arch"]),
                      config_hash=header["config_hash"], epoch=header["epoch"], model=model,
                      optimizers=optimizers, metrics=header["metrics"], extra=header["extra"])


def checkpoint_id(path: str) -> str:
    """Short content hash identifying a checkpoint file."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def check_arch(ckpt: Checkpoint, arch: ArchSpec, *, keys: Optional[tuple] = None) -> None:
    """Raise ConfigurationError if *arch* differs from the checkpoint's descriptor."""
    have, want = ckpt.arch.to_dict(), arch.to_dict()
    keys = keys or tuple(want)
    diff = [k for k in keys if have.get(k) != want.get(k)]
    if diff:
        detail = ", ".join(f"{k}: checkpoint={have.get(k)!r} expected={want.get(k)!r}" for k in diff)
        raise ConfigurationError(f"architecture mismatch ({detail})")


def parameter_hash(state: dict) -> str:
    """SHA-256 over the sorted names and raw bytes of a state dict."""
    h = hashlib.sha256()
    for name in sorted(state):
        t = state[name].detach().to("cpu").contiguous()
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(t.numpy()).tobytes())
    return h.hexdigest()
