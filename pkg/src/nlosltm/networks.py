"""Hidden-image autoencoder, reconstruction and reprojection networks, discriminator.

All encoders use strided 4x4 convolutions with LeakyReLU(0.2) and no
normalization layers; decoders mirror them with transposed convolutions and
end in a sigmoid.  Stage j has ``min(base * 2**j, base * 8)`` channels.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codebook import Codebook, ConditionEncoder, quantize
from .errors import ConfigurationError, ContractError, DimensionError
from .modulation import ConditionPyramid, make_modulator

logger = logging.getLogger(__name__)

MODULATION_KINDS = ("ltm", "concat", "none")


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor; fully determines every parameter shape.

    Attributes:
        hidden_res / wall_res: (H, W) of hidden and projection images.
        channels: Image channels.
        n_conditions: Codebook size n_c.
        stages: Downsampling stages S of every encoder.
        base_width: Channels of the first stage.
        latent_channels: Channels of the shared bottleneck.
        cond_dim: Code dimensionality n_d.
        cond_widths: Condition encoder stage widths.
        disc_width / disc_layers / disc_scales: Patch discriminator shape.
        modulation: ``ltm``, ``concat`` or ``none``.
        single_scale: Modulate only the deepest stage.
        spatial_modulation: Spatially varying LTM parameters.
        use_vq: Quantize the latent condition through the codebook.
        joint: Build the reprojection network and the discriminator.
    """

    hidden_res: tuple = (16, 16)
    wall_res: tuple = (16, 16)
    channels: int = 1
    n_conditions: int = 4
    stages: int = 4
    base_width: int = 32
    latent_channels: int = 64
    cond_dim: int = 128
    cond_widths: tuple = (32, 64, 128, 128)
    disc_width: int = 32
    disc_layers: int = 2
    disc_scales: int = 2
    modulation: str = "ltm"
    single_scale: bool = False
    spatial_modulation: bool = False
    use_vq: bool = True
    joint: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_res", tuple(int(v) for v in self.hidden_res))
        object.__setattr__(self, "wall_res", tuple(int(v) for v in self.wall_res))
        object.__setattr__(self, "cond_widths", tuple(int(v) for v in self.cond_widths))
        if self.modulation not in MODULATION_KINDS:
            raise ConfigurationError(f"modulation must be one of {MODULATION_KINDS}")
        if self.stages < 1 or self.n_conditions < 1:
            raise ConfigurationError("stages and n_conditions must be >= 1")
        step = 2 ** self.stages
        if any(v % step for v in self.hidden_res):
            raise ConfigurationError(f"hidden_res {self.hidden_res} must be divisible by 2**stages = {step}")
        if min(self.wall_res) < step:
            raise ConfigurationError(f"wall_res {self.wall_res} is smaller than 2**stages = {step}")
        if self.joint and min(self.wall_res) < 2 ** (self.disc_layers + self.disc_scales - 1):
            raise ConfigurationError(f"wall_res {self.wall_res} too small for the discriminator")

    @property
    def widths(self) -> list:
        return [min(self.base_width * 2 ** j, self.base_width * 8) for j in range(self.stages)]

    @property
    def bottleneck_shape(self) -> tuple:
        """(c, h, w) of the shared hidden latent."""
        step = 2 ** self.stages
        return (self.latent_channels, self.hidden_res[0] // step, self.hidden_res[1] // step)

    @property
    def modulated_stages(self) -> list:
        if self.modulation == "none":
            return []
        return [self.stages - 1] if self.single_scale else list(range(self.stages))

    @classmethod
    def from_config(cls, cfg, hidden_res: tuple, wall_res: tuple, channels: int,
                    n_conditions: int) -> "ArchSpec":
        """Descriptor for a :class:`~nlosltm.config.TrainConfig` and a dataset."""
        if cfg.no_modulation:
            modulation = "none"
        elif cfg.concat_modulation:
            modulation = "concat"
        else:
            modulation = "ltm"
        return cls(
            hidden_res=tuple(hidden_res), wall_res=tuple(wall_res), channels=channels,
            n_conditions=n_conditions, stages=cfg.stages, base_width=cfg.base_width,
            latent_channels=cfg.latent_channels, cond_dim=cfg.cond_dim,
            cond_widths=tuple(cfg.cond_widths), disc_width=cfg.disc_width,
            disc_layers=cfg.disc_layers, disc_scales=cfg.disc_scales, modulation=modulation,
            single_scale=cfg.single_scale_modulation, spatial_modulation=cfg.spatial_modulation,
            use_vq=not cfg.no_vq, joint=not cfg.no_joint,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("hidden_res", "wall_res", "cond_widths"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**d)


def _down(in_c: int, out_c: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(in_c, out_c, kernel_size=4, stride=2, padding=1), nn.LeakyReLU(0.2))


def _up(in_c: int, out_c: int) -> nn.Sequential:
    return nn.Sequential(nn.ConvTranspose2d(in_c, out_c, kernel_size=4, stride=2, padding=1),
                         nn.LeakyReLU(0.2))


def _check_input(t: torch.Tensor, channels: int, res: tuple, what: str) -> None:
    if t.dim() != 4 or t.shape[1] != channels or tuple(t.shape[2:]) != tuple(res):
        raise DimensionError(f"{what} must be (B, {channels}, {res[0]}, {res[1]}), got {tuple(t.shape)}")


class HiddenAutoencoder(nn.Module):
    """E_h / D_h over hidden images."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        w = arch.widths
        enc, prev = [], arch.channels
        for wj in w:
            enc.append(_down(prev, wj))
            prev = wj
        enc.append(nn.Conv2d(prev, arch.latent_channels, kernel_size=1))
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(arch.latent_channels, w[-1], kernel_size=1), nn.LeakyReLU(0.2)]
        for j in range(arch.stages - 1, 0, -1):
            dec.append(_up(w[j], w[j - 1]))
        dec += [_up(w[0], w[0]), nn.Conv2d(w[0], arch.channels, kernel_size=3, padding=1), nn.Sigmoid()]
        self.decoder = nn.Sequential(*dec)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, self.arch.channels, self.arch.hidden_res, "hidden image")
        return self.encoder(x)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if tuple(z.shape[1:]) != self.arch.bottleneck_shape:
            raise DimensionError(f"latent must be {self.arch.bottleneck_shape}, got {tuple(z.shape[1:])}")
        return self.decoder(z)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = self.encode(x)
        return z, self.decode(z)


def _pyramid_channels(arch: ArchSpec) -> list:
    # O_k modulates encoder stage S-1-k
    w = arch.widths
    if arch.single_scale:
        return [w[-1]]
    return [w[arch.stages - 1 - k] for k in range(arch.stages)]


def _rep_for_stage(arch: ArchSpec, reps: list, j: int) -> torch.Tensor:
    k = 0 if arch.single_scale else arch.stages - 1 - j
    return reps[k].values


class ReconstructionEncoder(nn.Module):
    """E_r: projection -> hidden latent, modulated stage by stage.

    A modulated stage passes ``[modulated F | F]`` to the next block.
    """

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        w = arch.widths
        modulated = set(arch.modulated_stages)
        self.blocks = nn.ModuleList()
        self.mods = nn.ModuleList()
        prev = arch.channels
        for j, wj in enumerate(w):
            self.blocks.append(_down(prev, wj))
            if j in modulated:
                self.mods.append(make_modulator(arch.modulation, wj, wj, arch.spatial_modulation))
                prev = 2 * wj
            else:
                self.mods.append(nn.Identity())
                prev = wj
        self.to_latent = nn.Conv2d(prev, arch.latent_channels, kernel_size=1)

    def forward(self, y: torch.Tensor, reps: Optional[list]) -> torch.Tensor:
        _check_input(y, self.arch.channels, self.arch.wall_res, "projection")
        modulated = set(self.arch.modulated_stages)
        if modulated and reps is None:
            raise ContractError("a modulated encoder needs condition representations")
        h = y
        for j, (block, mod) in enumerate(zip(self.blocks, self.mods)):
            h = block(h)
            if j in modulated:
                h = mod.inject(h, _rep_for_stage(self.arch, reps, j))
        z = self.to_latent(h)
        target = self.arch.bottleneck_shape[1:]
        if tuple(z.shape[2:]) != target:
            z = F.adaptive_avg_pool2d(z, target)
        return z


class ReprojectionNet(nn.Module):
    """G_p: hidden image -> projection, U-Net whose skips are modulated."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        w = arch.widths
        modulated = set(arch.modulated_stages)
        self.downs = nn.ModuleList()
        self.skip_mods = nn.ModuleList()
        prev = arch.channels
        for j, wj in enumerate(w):
            self.downs.append(_down(prev, wj))
            self.skip_mods.append(make_modulator(arch.modulation, wj, wj, arch.spatial_modulation)
                                  if j in modulated else nn.Identity())
            prev = wj
        self.ups = nn.ModuleList()
        for j in range(arch.stages - 1, 0, -1):
            in_c = w[j] if j == arch.stages - 1 else 2 * w[j]
            self.ups.append(_up(in_c, w[j - 1]))
        final_in = w[0] if arch.stages == 1 else 2 * w[0]
        self.final = nn.Sequential(_up(final_in, w[0]),
                                   nn.Conv2d(w[0], arch.channels, kernel_size=3, padding=1),
                                   nn.Sigmoid())

    def forward(self, x: torch.Tensor, reps: Optional[list]) -> torch.Tensor:
        _check_input(x, self.arch.channels, self.arch.hidden_res, "hidden image")
        modulated = set(self.arch.modulated_stages)
        if modulated and reps is None:
            raise ContractError("a modulated reprojector needs condition representations")
        skips = []
        h = x
        for j, (down, mod) in enumerate(zip(self.downs, self.skip_mods)):
            h = down(h)
            skips.append(mod(h, _rep_for_stage(self.arch, reps, j)) if j in modulated else h)
        u = skips[-1]
        for up, skip in zip(self.ups, reversed(skips[:-1])):
            u = torch.cat([up(u), skip], dim=1)
        out = self.final(u)
        if tuple(out.shape[2:]) != self.arch.wall_res:
            out = F.interpolate(out, size=self.arch.wall_res, mode="bilinear", align_corners=False)
        return out


class PatchDiscriminator(nn.Module):
    """Strided 4x4 convolutions followed by a 3x3 one-channel patch head."""

    def __init__(self, in_channels: int, width: int, layers: int):
        super().__init__()
        mods, prev = [], in_channels
        for n in range(layers):
            out = width * min(2 ** n, 8)
            mods += [nn.Conv2d(prev, out, kernel_size=4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            prev = out
        mods.append(nn.Conv2d(prev, 1, kernel_size=3, padding=1))
        self.model = nn.Sequential(*mods)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.model(h)


class MultiScaleDiscriminator(nn.Module):
    """K patch discriminators on (x resampled to the wall, y) at successive halvings.

    Each head returns the mean patch score per sample, shape (B,).
    """

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        self.heads = nn.ModuleList(
            PatchDiscriminator(2 * arch.channels, arch.disc_width, arch.disc_layers)
            for _ in range(arch.disc_scales))

    def forward(self, x: torch.Tensor, y_like: torch.Tensor) -> list:
        _check_input(x, self.arch.channels, self.arch.hidden_res, "hidden image")
        _check_input(y_like, self.arch.channels, self.arch.wall_res, "projection")
        if tuple(x.shape[2:]) != self.arch.wall_res:
            x = F.interpolate(x, size=self.arch.wall_res, mode="bilinear", align_corners=False)
        h = torch.cat([x, y_like], dim=1)
        scores = []
        for k, head in enumerate(self.heads):
            if k:
                h = F.avg_pool2d(h, kernel_size=3, stride=2, padding=1, count_include_pad=False)
            scores.append(head(h).mean(dim=(1, 2, 3)))
        return scores


@dataclass
class ReconOutput:
    """Result of one reconstruction pass."""

    x: torch.Tensor
    latent: torch.Tensor
    l: torch.Tensor
    z_q: torch.Tensor
    index: Optional[torch.Tensor]


class NlosLtm(nn.Module):
    """Every network of the model behind one interface.

    ``codebook`` is None without VQ; ``reprojector`` and ``discriminator``
    are None without joint reprojection training.
    """

    def __init__(self, arch: ArchSpec, codebook_seed: int = 0):
        super().__init__()
        self.arch = arch
        self.autoencoder = HiddenAutoencoder(arch)
        self.cond_encoder = ConditionEncoder(arch.channels, arch.wall_res, arch.cond_widths, arch.cond_dim)
        self.codebook = Codebook(arch.n_conditions, arch.cond_dim, seed=codebook_seed) if arch.use_vq else None
        modulated = bool(arch.modulated_stages)
        self.recon_pyramid = ConditionPyramid(arch.cond_dim, _pyramid_channels(arch)) if modulated else None
        self.recon_encoder = ReconstructionEncoder(arch)
        if arch.joint:
            self.reproj_pyramid = ConditionPyramid(arch.cond_dim, _pyramid_channels(arch)) if modulated else None
            self.reprojector = ReprojectionNet(arch)
            self.discriminator = MultiScaleDiscriminator(arch)
        else:
            self.reproj_pyramid = None
            self.reprojector = None
            self.discriminator = None

    def condition(self, y: torch.Tensor, mode: str = "test", labels=None):
        """(l, z, index): latent condition, code fed to the generators, code index."""
        l = self.cond_encoder(y)
        if self.codebook is None:
            return l, l, None
        q = quantize(l, self.codebook, mode, labels)
        return l, q.z_q, q.index

    def code_for(self, condition_id) -> torch.Tensor:
        """Codebook row(s) of the given condition id(s)."""
        if self.codebook is None:
            raise ContractError("this model has no codebook; condition ids cannot be mapped to codes")
        idx = torch.as_tensor(condition_id, dtype=torch.long, device=self.codebook.codes.device).reshape(-1)
        if idx.min() < 0 or idx.max() >= self.codebook.n_conditions:
            raise ContractError(f"condition id out of range [0, {self.codebook.n_conditions})")
        return self.codebook.codes[idx]

    def _check_code(self, z: torch.Tensor, batch: int) -> torch.Tensor:
        if z.dim() == 1:
            z = z.unsqueeze(0)
        if z.shape[1] != self.arch.cond_dim:
            raise DimensionError(f"code has {z.shape[1]} dims, networks expect {self.arch.cond_dim}")
        if z.shape[0] == 1 and batch > 1:
            z = z.expand(batch, -1)
        return z

    def reconstruct_with_code(self, y: torch.Tensor, z_q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """G_r: (x', bottleneck) for projections *y* under code(s) *z_q*."""
        reps = self.recon_pyramid(self._check_code(z_q, y.shape[0])) if self.recon_pyramid is not None else None
        latent = self.recon_encoder(y, reps)
        return self.autoencoder.decode(latent), latent

    def reconstruct(self, y: torch.Tensor, mode: str = "test", labels=None) -> ReconOutput:
        l, z, index = self.condition(y, mode, labels)
        x, latent = self.reconstruct_with_code(y, z)
        return ReconOutput(x=x, latent=latent, l=l, z_q=z, index=index)

    def reproject(self, x: torch.Tensor, z_q: torch.Tensor) -> torch.Tensor:
        """G_p: projection y' of hidden image(s) *x* under code(s) *z_q*."""
        if self.reprojector is None:
            raise ContractError("this model was trained without the reprojection network")
        reps = self.reproj_pyramid(self._check_code(z_q, x.shape[0])) if self.reproj_pyramid is not None else None
        return self.reprojector(x, reps)

    def discriminate(self, x: torch.Tensor, y_like: torch.Tensor) -> list:
        if self.discriminator is None:
            raise ContractError("this model was trained without the discriminator")
        return self.discriminator(x, y_like)

    def generator_parameters(self, *, include_decoder: bool, include_hidden_encoder: bool = False) -> list:
        """Parameters updated by the joint generator step."""
        params = list(self.cond_encoder.parameters()) + list(self.recon_encoder.parameters())
        for mod in (self.codebook, self.recon_pyramid, self.reproj_pyramid, self.reprojector):
            if mod is not None:
                params += list(mod.parameters())
        if include_decoder:
            params += list(self.autoencoder.decoder.parameters())
        if include_hidden_encoder:
            params += list(self.autoencoder.encoder.parameters())
        return params
