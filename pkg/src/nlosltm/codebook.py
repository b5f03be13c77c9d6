"""Light transport condition encoder, codebook and vector quantizer.

The encoder maps a projection image to a unit vector ``l``; the codebook
holds one unit row per condition.  During training the quantizer returns the
labelled row, at test time the nearest row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError, DimensionError, NumericError

QUANTIZE_MODES = ("train", "test")


class ConditionEncoder(nn.Module):
    """Strided conv encoder -> global average pool -> linear -> L2 normalize.

    Args:
        in_channels: Projection image channels.
        wall_res: Expected (H_y, W_y) of the input.
        widths: Output channels of the downsampling stages.
        cond_dim: Code dimensionality n_d.
    """

    def __init__(self, in_channels: int, wall_res: tuple, widths: tuple = (32, 64, 128, 128),
                 cond_dim: int = 128):
        super().__init__()
        self.in_channels = in_channels
        self.wall_res = tuple(wall_res)
        layers = []
        prev = in_channels
        for w in widths:
            layers += [nn.Conv2d(prev, w, kernel_size=3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            prev = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev, cond_dim)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.dim() != 4 or y.shape[1] != self.in_channels or tuple(y.shape[2:]) != self.wall_res:
            raise DimensionError(
                f"condition encoder expects (B, {self.in_channels}, {self.wall_res[0]}, "
                f"{self.wall_res[1]}), got {tuple(y.shape)}")
        h = self.features(y).mean(dim=(2, 3))
        return F.normalize(self.head(h), dim=1)


class Codebook(nn.Module):
    """n_c unit-norm codes of dimension n_d, Gaussian-initialized from *seed*."""

    def __init__(self, n_conditions: int, cond_dim: int, seed: int = 0):
        super().__init__()
        if n_conditions < 1:
            raise ContractError("a codebook needs at least one code")
        gen = torch.Generator().manual_seed(seed)
        codes = torch.randn(n_conditions, cond_dim, generator=gen)
        self.codes = nn.Parameter(F.normalize(codes, dim=1))

    @property
    def n_conditions(self) -> int:
        return self.codes.shape[0]

    @property
    def cond_dim(self) -> int:
        return self.codes.shape[1]

    @torch.no_grad()
    def renormalize(self) -> None:
        """Project every row back onto the unit sphere."""
        self.codes.copy_(F.normalize(self.codes, dim=1))

    def forward(self, index: torch.Tensor) -> torch.Tensor:
        return self.codes[index]


@dataclass
class QuantizeResult:
    """Selected code(s) and index(es); batched when the input was batched."""

    z_q: torch.Tensor
    index: Union[torch.Tensor, int]
    mode: str


def _codes(cb: Union[Codebook, torch.Tensor]) -> torch.Tensor:
    return cb.codes if isinstance(cb, Codebook) else cb


def _as_label_tensor(label, batch: int, n_c: int, device) -> torch.Tensor:
    labels = torch.as_tensor(label, dtype=torch.long, device=device).reshape(-1)
    if labels.numel() == 1 and batch > 1:
        labels = labels.expand(batch)
    if labels.numel() != batch:
        raise ContractError(f"{labels.numel()} labels for a batch of {batch}")
    if labels.min() < 0 or labels.max() >= n_c:
        raise ContractError(f"labels must lie in [0, {n_c}), got {labels.tolist()}")
    return labels


def quantize(l: torch.Tensor, cb: Union[Codebook, torch.Tensor], mode: str,
             label=None) -> QuantizeResult:
    """Map latent condition(s) to codebook rows.

    ``mode="train"`` returns the row of *label* whatever the distances;
    ``mode="test"`` returns the nearest row, ties going to the lowest index.
    """
    if mode not in QUANTIZE_MODES:
        raise ContractError(f"mode must be one of {QUANTIZE_MODES}, got {mode!r}")
    codes = _codes(cb)
    single = l.dim() == 1
    lb = l.unsqueeze(0) if single else l
    if lb.shape[1] != codes.shape[1]:
        raise DimensionError(f"latent has {lb.shape[1]} dims, codebook has {codes.shape[1]}")
    if mode == "train":
        if label is None:
            raise ContractError("train-mode quantization requires a label")
        index = _as_label_tensor(label, lb.shape[0], codes.shape[0], codes.device)
    else:
        dist = ((lb.unsqueeze(1) - codes.unsqueeze(0)) ** 2).sum(dim=2)
        index = torch.argmin(dist, dim=1)
    z_q = codes[index]
    if single:
        return QuantizeResult(z_q=z_q[0], index=int(index[0]), mode=mode)
    return QuantizeResult(z_q=z_q, index=index, mode=mode)


@dataclass
class VQLoss:
    """InfoNCE, codebook and commitment terms (already weighted) and their sum."""

    infonce: torch.Tensor
    codebook: torch.Tensor
    commit: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.infonce + self.codebook + self.commit


def vq_loss(l: torch.Tensor, cb: Union[Codebook, torch.Tensor], label, tau: float,
            alpha: float, beta: float) -> VQLoss:
    """Contrastive VQ objective with stop-gradient routing.

    InfoNCE over ``l·z_i / tau`` reaches both encoder and codebook;
    ``alpha ||sg[l] - z_+||²`` reaches only the selected code;
    ``beta ||sg[z_+] - l||²`` reaches only the encoder.  Batch terms are means.
    """
    if not tau > 0:
        raise ContractError(f"tau must be > 0, got {tau}")
    codes = _codes(cb)
    lb = l.unsqueeze(0) if l.dim() == 1 else l
    if not (torch.isfinite(lb).all() and torch.isfinite(codes).all()):
        raise NumericError("non-finite latent or codebook entries")
    labels = _as_label_tensor(label, lb.shape[0], codes.shape[0], codes.device)

    logits = lb @ codes.t() / tau
    infonce = F.cross_entropy(logits, labels)
    z_plus = codes[labels]
    codebook_term = alpha * ((lb.detach() - z_plus) ** 2).sum(dim=1).mean()
    commit_term = beta * ((z_plus.detach() - lb) ** 2).sum(dim=1).mean()
    return VQLoss(infonce=infonce, codebook=codebook_term, commit=commit_term)


def encode_condition(encoder: ConditionEncoder, y: torch.Tensor) -> torch.Tensor:
    """Latent condition(s) of projection(s) *y*, (C, H, W) or (B, C, H, W)."""
    single = y.dim() == 3
    out = encoder(y.unsqueeze(0) if single else y)
    return out[0] if single else out


def probe_accuracy(encoder: ConditionEncoder, cb: Codebook, projections: torch.Tensor,
                   labels: torch.Tensor, *, device: Optional[torch.device] = None) -> float:
    """Fraction of projections whose test-time code index equals their label."""
    with torch.no_grad():
        l = encoder(projections.to(device) if device is not None else projections)
        idx = quantize(l, cb, "test").index
    return float((idx.cpu() == labels.cpu()).float().mean())
