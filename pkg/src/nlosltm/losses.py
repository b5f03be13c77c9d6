"""Reconstruction, adversarial and perceptual objectives, and the per-step report."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError, DimensionError


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def recon_loss(x: torch.Tensor, x_rec: torch.Tensor, lat_h: Optional[torch.Tensor],
               lat_r: Optional[torch.Tensor], lambda1: float) -> tuple[torch.Tensor, dict]:
    """mean|x - x'| + lambda1 * mean|lat_h - lat_r|.

    Without latents (``lat_h is None``) the second term is zero.

    Returns:
        (total, {"l1": ..., "ot": ...}) with unweighted components.
    """
    _same_shape(x, x_rec, "recon_loss images")
    l1 = (x - x_rec).abs().mean()
    if lat_h is None or lat_r is None:
        ot = torch.zeros((), dtype=l1.dtype, device=l1.device)
    else:
        _same_shape(lat_h, lat_r, "recon_loss latents")
        ot = (lat_h - lat_r).abs().mean()
    return l1 + lambda1 * ot, {"l1": l1, "ot": ot}


def _check_scores(*score_lists: list) -> None:
    lengths = {len(s) for s in score_lists}
    if 0 in lengths:
        raise ContractError("discriminator score lists must not be empty")
    if len(lengths) != 1:
        raise ContractError(f"discriminator score lists differ in length: {sorted(lengths)}")


def _as_tensor(v) -> torch.Tensor:
    return v if isinstance(v, torch.Tensor) else torch.tensor(float(v), dtype=torch.float64)


def hinge_d_loss(d_real: list, d_fake: list) -> torch.Tensor:
    """mean over scales of mean[relu(1 - real) + relu(1 + fake)]."""
    _check_scores(d_real, d_fake)
    terms = [F.relu(1.0 - _as_tensor(r)).mean() + F.relu(1.0 + _as_tensor(f)).mean()
             for r, f in zip(d_real, d_fake)]
    return torch.stack(terms).mean()


def hinge_g_loss(d_fake: list) -> torch.Tensor:
    """mean over scales of -mean(fake)."""
    _check_scores(d_fake)
    return torch.stack([-_as_tensor(f).mean() for f in d_fake]).mean()


def gan_losses(d_real: list, d_fake: list) -> tuple[torch.Tensor, torch.Tensor]:
    """Hinge pair (L_G, L_D) from per-scale scores."""
    return hinge_g_loss(d_fake), hinge_d_loss(d_real, d_fake)


class PerceptualFeatures(nn.Module):
    """Three-stage convolutional feature extractor with seeded, frozen weights."""

    def __init__(self, channels: int = 1, width: int = 16, seed: int = 1234):
        super().__init__()
        self.stages = nn.ModuleList([
            nn.Sequential(nn.Conv2d(channels, width, 3, padding=1), nn.LeakyReLU(0.2)),
            nn.Sequential(nn.Conv2d(width, 2 * width, 3, stride=2, padding=1), nn.LeakyReLU(0.2)),
            nn.Sequential(nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1), nn.LeakyReLU(0.2)),
        ])
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for stage in self.stages:
                conv = stage[0]
                fan_in = conv.weight[0].numel()
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in))
                conv.bias.zero_()
        self.requires_grad_(False)
        self.eval()

    def forward(self, y: torch.Tensor) -> list:
        feats = []
        h = y
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


def perceptual_loss(y: torch.Tensor, y_gen: torch.Tensor, features: PerceptualFeatures) -> torch.Tensor:
    """Sum over the three stages of the MSE between features of *y* and *y_gen*."""
    _same_shape(y, y_gen, "perceptual_loss")
    fa = features(y.to(features.stages[0][0].weight.dtype))
    fb = features(y_gen.to(features.stages[0][0].weight.dtype))
    return sum(F.mse_loss(a, b) for a, b in zip(fa, fb))


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda_vq: float = 1.0
    lambda_gan: float = 0.1

    @classmethod
    def from_config(cls, cfg) -> "LossWeights":
        return cls(lambda1=0.0 if cfg.no_ot else cfg.lambda1, lambda2=cfg.lambda2,
                   lambda_vq=cfg.lambda_vq, lambda_gan=0.0 if cfg.no_joint else cfg.lambda_gan)


def generator_total(c: dict, w: LossWeights):
    """l1 + λ1·ot + λ_vq·(vq terms) + λ_gan·(gan_g + λ2·perceptual).

    Works on tensors and on floats alike.
    """
    return (c["l1"] + w.lambda1 * c["ot"]
            + w.lambda_vq * (c["vq_infonce"] + c["vq_codebook"] + c["vq_commit"])
            + w.lambda_gan * (c["gan_g"] + w.lambda2 * c["perceptual"]))


@dataclass
class LossReport:
    """Per-step loss values.

    ``vq_codebook`` and ``vq_commit`` already carry α and β; ``ot`` and
    ``perceptual`` are unweighted.  ``total_d`` equals ``gan_d``.
    """

    l1: float = 0.0
    ot: float = 0.0
    vq_infonce: float = 0.0
    vq_codebook: float = 0.0
    vq_commit: float = 0.0
    gan_g: float = 0.0
    gan_d: float = 0.0
    perceptual: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    @classmethod
    def from_components(cls, components: dict, weights: LossWeights) -> "LossReport":
        values = {f.name: 0.0 for f in fields(cls)}
        for k, v in components.items():
            values[k] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        values["total_g"] = generator_total(values, weights)
        values["total_d"] = values["gan_d"]
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())

    def non_finite_terms(self) -> list:
        return [k for k, v in asdict(self).items() if not math.isfinite(v)]

    def is_consistent(self, weights: LossWeights, tol: float = 1e-6) -> bool:
        d = asdict(self)
        return (abs(generator_total(d, weights) - self.total_g) <= tol
                and abs(self.total_d - self.gan_d) <= tol)
