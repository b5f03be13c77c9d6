"""Light transport modulation.

A condition code z_q becomes a chain of representations O_0, O_1, ... whose
spatial size doubles at every step.  Each LTM block turns one O_k into a
per-channel scale and shift and applies them to a standardized feature map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DimensionError

EPS = 1e-5


@dataclass
class ScaleRep:
    """Representation O_k, (B, C_k, 2^k, 2^k) for the chain built from a code."""

    values: torch.Tensor
    scale_index: int


def channel_moments(feat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample, per-channel spatial mean and population variance."""
    mean = feat.mean(dim=(2, 3), keepdim=True)
    var = feat.var(dim=(2, 3), keepdim=True, unbiased=False)
    return mean, var


def ltm_modulate(feat: torch.Tensor, t_s: torch.Tensor, t_b: torch.Tensor,
                 eps: float = EPS) -> torch.Tensor:
    """t_s * (F - mean) / sqrt(var + eps) + t_b, statistics per sample and channel.

    ``t_s`` and ``t_b`` broadcast against *feat*: shape (C,), (B, C, 1, 1) or
    (B, C, H, W).
    """
    c = feat.shape[1]
    if t_s.dim() == 1:
        t_s = t_s.view(1, -1, 1, 1)
    if t_b.dim() == 1:
        t_b = t_b.view(1, -1, 1, 1)
    if t_s.shape[1] != c or t_b.shape[1] != c:
        raise DimensionError(
            f"modulation parameters have {t_s.shape[1]}/{t_b.shape[1]} channels, features have {c}")
    mean, var = channel_moments(feat)
    return t_s * (feat - mean) / torch.sqrt(var + eps) + t_b


def inject_encoder(feat: torch.Tensor, t_s: torch.Tensor, t_b: torch.Tensor,
                   eps: float = EPS) -> torch.Tensor:
    """[ltm_modulate(F) | F] along channels."""
    return torch.cat([ltm_modulate(feat, t_s, t_b, eps), feat], dim=1)


class UpsampleRep(nn.Module):
    """Nearest 2x upsample followed by a 3x3 convolution."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)

    def forward(self, values: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(values, scale_factor=2, mode="nearest"))


def upsample_rep(prev: ScaleRep, up: UpsampleRep) -> ScaleRep:
    """O_{k+1} from O_k."""
    return ScaleRep(values=up(prev.values), scale_index=prev.scale_index + 1)


class ConditionPyramid(nn.Module):
    """z_q -> [O_0, ..., O_{n-1}] with O_0 at 1x1 and C_k = ``channels[k]``."""

    def __init__(self, cond_dim: int, channels: list):
        super().__init__()
        self.channels = list(channels)
        self.head = nn.Linear(cond_dim, self.channels[0])
        self.ups = nn.ModuleList(UpsampleRep(a, b) for a, b in zip(self.channels[:-1], self.channels[1:]))

    def forward(self, z_q: torch.Tensor) -> list:
        if z_q.dim() == 1:
            z_q = z_q.unsqueeze(0)
        rep = ScaleRep(values=self.head(z_q)[:, :, None, None], scale_index=0)
        reps = [rep]
        for up in self.ups:
            rep = upsample_rep(ScaleRep(F.leaky_relu(rep.values, 0.2), rep.scale_index), up)
            reps.append(rep)
        return reps


class LTMBlock(nn.Module):
    """Derives (t_s, t_b) from O with one 3x3 convolution and modulates F.

    The convolution yields 2C maps; without ``spatial`` they are globally
    average-pooled to per-channel constants.  The scale half is read as
    ``1 + t``; the head is zero-initialized, so a fresh block is plain
    standardization.
    """

    def __init__(self, rep_channels: int, feat_channels: int, spatial: bool = False):
        super().__init__()
        self.feat_channels = feat_channels
        self.spatial = spatial
        self.conv = nn.Conv2d(rep_channels, 2 * feat_channels, kernel_size=3, padding=1)
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def params(self, rep: torch.Tensor, size: tuple) -> tuple[torch.Tensor, torch.Tensor]:
        p = self.conv(rep)
        if self.spatial:
            if tuple(p.shape[2:]) != tuple(size):
                p = F.interpolate(p, size=size, mode="bilinear", align_corners=False)
        else:
            p = p.mean(dim=(2, 3), keepdim=True)
        t_s, t_b = torch.split(p, self.feat_channels, dim=1)
        return 1.0 + t_s, t_b

    def forward(self, feat: torch.Tensor, rep: torch.Tensor,
                override: Optional[tuple] = None) -> torch.Tensor:
        if override is not None:
            t_s, t_b = override
        else:
            t_s, t_b = self.params(rep, tuple(feat.shape[2:]))
        return ltm_modulate(feat, t_s, t_b)

    def inject(self, feat: torch.Tensor, rep: torch.Tensor,
               override: Optional[tuple] = None) -> torch.Tensor:
        t_s, t_b = override if override is not None else self.params(rep, tuple(feat.shape[2:]))
        return inject_encoder(feat, t_s, t_b)


class ConcatModulation(nn.Module):
    """Concatenates the resized representation to F, then a residual block.

    Same interface as :class:`LTMBlock`; used by the concat ablation.
    """

    def __init__(self, rep_channels: int, feat_channels: int, spatial: bool = False):
        super().__init__()
        self.fuse = nn.Conv2d(feat_channels + rep_channels, feat_channels, kernel_size=1)
        self.body = nn.Sequential(
            nn.Conv2d(feat_channels, feat_channels, kernel_size=3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(feat_channels, feat_channels, kernel_size=3, padding=1),
        )

    def forward(self, feat: torch.Tensor, rep: torch.Tensor, override: Optional[tuple] = None) -> torch.Tensor:
        if tuple(rep.shape[2:]) != tuple(feat.shape[2:]):
            rep = F.interpolate(rep, size=feat.shape[2:], mode="nearest")
        h = self.fuse(torch.cat([feat, rep], dim=1))
        return h + self.body(h)

    def inject(self, feat: torch.Tensor, rep: torch.Tensor, override: Optional[tuple] = None) -> torch.Tensor:
        return torch.cat([self.forward(feat, rep), feat], dim=1)


def make_modulator(kind: str, rep_channels: int, feat_channels: int, spatial: bool = False) -> nn.Module:
    if kind == "ltm":
        return LTMBlock(rep_channels, feat_channels, spatial)
    if kind == "concat":
        return ConcatModulation(rep_channels, feat_channels, spatial)
    raise ConfigurationError(f"unknown modulation kind {kind!r}")
