"""Two-stage training: autoencoder pretraining, then joint training.

Stage 1 fits E_h/D_h on hidden images with an L1 loss.  Stage 2 trains the
condition encoder, codebook, reconstruction encoder, modulation chains and
the reprojection GAN, alternating discriminator and generator steps.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
from collections import Counter, defaultdict
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint, check_arch, parameter_hash, save_checkpoint
from .codebook import quantize, vq_loss
from .config import TrainConfig, config_hash
from .dataset import Batch, Manifest, iterate_batches, load_manifest
from .errors import ConfigurationError, ContractError, EmptySplitError, NumericError
from .logs import StepLog
from .losses import (
    LossReport,
    LossWeights,
    PerceptualFeatures,
    generator_total,
    hinge_d_loss,
    hinge_g_loss,
    perceptual_loss,
    recon_loss,
)
from .networks import ArchSpec, NlosLtm

logger = logging.getLogger(__name__)

# Descriptor keys that shape the autoencoder.
AUTOENCODER_KEYS = ("hidden_res", "channels", "stages", "base_width", "latent_channels")


def cosine_lr(step: int, total: int, start: float, end: float) -> float:
    """Cosine interpolation from *start* (step 0) to *end* (step total-1)."""
    if total <= 1:
        return end
    progress = min(max(step / (total - 1), 0.0), 1.0)
    return end + 0.5 * (start - end) * (1.0 + math.cos(math.pi * progress))


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def _shuffle_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _tensors(batch: Batch, device: torch.device) -> tuple:
    x = torch.tensor(batch.hidden, device=device)
    y = torch.tensor(batch.projection, device=device)
    labels = torch.tensor(batch.condition_ids, dtype=torch.long, device=device)
    return x, y, labels


def _dump_failure(cfg: TrainConfig, stage: str, epoch: int, batch_index: int,
                  batch: Batch, report: dict) -> str:
    path = os.path.join(cfg.output_dir, "numeric_failure.json")
    os.makedirs(cfg.output_dir, exist_ok=True)
    payload = {"stage": stage, "epoch": epoch, "batch_index": batch_index,
               "record_indices": list(batch.record_indices),
               "condition_ids": list(batch.condition_ids),
               "report": {k: repr(v) for k, v in report.items()}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return path


def build_arch(cfg: TrainConfig, m: Manifest) -> ArchSpec:
    return ArchSpec.from_config(cfg, m.hidden_res, m.wall_res, m.channels, m.n_conditions)


def model_from_checkpoint(ckpt: Checkpoint, device: str = "cpu") -> NlosLtm:
    """Rebuild the model of *ckpt* in eval mode."""
    model = NlosLtm(ckpt.arch, codebook_seed=int(ckpt.extra.get("codebook_seed", 0)))
    if ckpt.stage == "autoencoder":
        model.autoencoder.load_state_dict(
            {k[len("autoencoder."):]: v for k, v in ckpt.model.items()}, strict=True)
    else:
        model.load_state_dict(ckpt.model, strict=True)
    return model.to(device).eval()


def _checkpoint_path(cfg: TrainConfig, name: str) -> str:
    return os.path.join(cfg.output_dir, f"{name}.ckpt")


def _steps_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


def _with_validation(cfg: TrainConfig, m: Manifest) -> Manifest:
    if cfg.probe_split == "test":
        raise ConfigurationError("probe_split must not be the test split")
    return m.with_validation(cfg.val_fraction, cfg.seed)


# -- stage 1 -------------------------------------------------------------

@torch.no_grad()
def _autoencoder_val_l1(model: NlosLtm, view: Manifest, split: str, cfg: TrainConfig,
                        device: torch.device) -> float:
    total, count = 0.0, 0
    for batch in iterate_batches(view, split, cfg.batch_size):
        x = torch.tensor(batch.hidden, device=device)
        _, xh = model.autoencoder(x)
        total += float((xh - x).abs().mean(dim=(1, 2, 3)).sum())
        count += len(batch)
    return total / count


def pretrain_autoencoder(cfg: TrainConfig, manifest: Optional[Manifest] = None) -> Checkpoint:
    """Stage 1: fit E_h/D_h to the distinct training hidden images.

    Saves ``autoencoder_epochNNN.ckpt`` every ``checkpoint_every`` epochs,
    ``autoencoder_last.ckpt`` and ``autoencoder_best.ckpt`` (lowest
    validation L1, or training L1 without a validation split).  The
    validation split is ``probe_split``, held out from train when the
    manifest has none.  Returns the best checkpoint.

    Raises:
        ConfigurationError: ``probe_split`` is the test split.
        EmptySplitError: No training hidden images.
        NumericError: Non-finite loss; the batch is described in
            ``numeric_failure.json`` under ``output_dir``.
    """
    if cfg.ae_epochs < 1:
        raise ConfigurationError("ae_epochs must be >= 1")
    m = _with_validation(cfg, manifest or load_manifest(cfg.manifest))
    seed_everything(cfg.seed)
    device = torch.device(cfg.device)
    arch = build_arch(cfg, m)
    model = NlosLtm(arch, codebook_seed=cfg.seed).to(device)
    ae = model.autoencoder
    train_view = m.hidden_view("train")
    if not train_view.records:
        raise EmptySplitError("no training hidden images")
    val_view = m.hidden_view(cfg.probe_split)
    has_val = bool(val_view.records) and cfg.probe_split != "train"

    opt = torch.optim.Adam(ae.parameters(), lr=cfg.ae_lr_start, betas=tuple(cfg.ae_betas),
                           weight_decay=cfg.ae_weight_decay)
    total_steps = cfg.ae_epochs * _steps_per_epoch(len(train_view.records), cfg.batch_size)
    chash = config_hash(cfg)
    step = 0
    best: Optional[Checkpoint] = None
    best_score = math.inf
    last: Optional[Checkpoint] = None

    with StepLog(os.path.join(cfg.output_dir, "train_log.jsonl")) as log:
        for epoch in range(1, cfg.ae_epochs + 1):
            ae.train()
            losses = []
            batches = iterate_batches(train_view, "train", cfg.batch_size,
                                      shuffle_seed=_shuffle_seed(cfg.seed, epoch))
            for bi, batch in enumerate(batches):
                lr = cosine_lr(step, total_steps, cfg.ae_lr_start, cfg.ae_lr_end)
                _set_lr(opt, lr)
                x = torch.tensor(batch.hidden, device=device)
                _, xh = ae(x)
                loss = F.l1_loss(xh, x)
                if not torch.isfinite(loss):
                    report = {"l1": float(loss)}
                    path = _dump_failure(cfg, "autoencoder", epoch, bi, batch, report)
                    raise NumericError(f"non-finite autoencoder loss at epoch {epoch}, batch {bi} "
                                       f"(details in {path})", report=report, batch_index=bi)
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(float(loss))
                log.write({"stage": "autoencoder", "epoch": epoch, "step": step, "lr": lr,
                           "l1": float(loss)})
                step += 1

            ae.eval()
            train_l1 = float(np.mean(losses))
            val_l1 = _autoencoder_val_l1(model, val_view, cfg.probe_split, cfg, device) if has_val else train_l1
            state = {f"autoencoder.{k}": v.detach().cpu().clone() for k, v in ae.state_dict().items()}
            ckpt = Checkpoint(stage="autoencoder", arch=arch, config_hash=chash, epoch=epoch,
                              model=state, optimizers={"autoencoder": copy.deepcopy(opt.state_dict())},
                              metrics={"train_l1": train_l1, "val_l1": val_l1},
                              extra={"codebook_seed": cfg.seed, "step": step})
            logger.info("autoencoder epoch %d/%d: train_l1=%.5f val_l1=%.5f lr=%.3g",
                        epoch, cfg.ae_epochs, train_l1, val_l1, opt.param_groups[0]["lr"])
            if epoch % max(1, cfg.checkpoint_every) == 0 or epoch == cfg.ae_epochs:
                save_checkpoint(ckpt, _checkpoint_path(cfg, f"autoencoder_epoch{epoch:03d}"))
            if val_l1 < best_score:
                best_score, best = val_l1, ckpt
                save_checkpoint(ckpt, _checkpoint_path(cfg, "autoencoder_best"))
            last = ckpt

    save_checkpoint(last, _checkpoint_path(cfg, "autoencoder_last"))
    return best if best is not None else last


# -- stage 2 -------------------------------------------------------------

@torch.no_grad()
def codebook_probe(model: NlosLtm, m: Manifest, split: str, batch_size: int,
                   device: torch.device) -> dict:
    """Test-time code assignments on *split*: accuracy and per-code counts."""
    counts: Counter = Counter()
    correct = total = 0
    for batch in iterate_batches(m, split, batch_size):
        _, y, labels = _tensors(batch, device)
        idx = quantize(model.cond_encoder(y), model.codebook, "test").index
        counts.update(int(i) for i in idx.cpu())
        correct += int((idx == labels).sum())
        total += len(batch)
    assignments = [counts.get(i, 0) for i in range(model.codebook.n_conditions)]
    return {"accuracy": correct / total, "assignments": assignments}


def _set_requires_grad(module: Optional[torch.nn.Module], flag: bool) -> None:
    if module is not None:
        module.requires_grad_(flag)


def _joint_step(model: NlosLtm, cfg: TrainConfig, weights: LossWeights, x: torch.Tensor,
                y: torch.Tensor, labels: torch.Tensor, opt_g, opt_d,
                perceptual: Optional[PerceptualFeatures], train_params: list) -> tuple:
    """One discriminator step (or ``d_steps``) followed by one generator step."""
    gan_d = torch.zeros((), device=x.device)
    if model.discriminator is not None:
        for _ in range(max(1, cfg.d_steps)):
            with torch.no_grad():
                _, z, _ = model.condition(y, "train", labels)
                y_fake = model.reproject(x, z)
            gan_d = hinge_d_loss(model.discriminate(x, y), model.discriminate(x, y_fake))
            if not torch.isfinite(gan_d):
                return LossReport.from_components({"gan_d": gan_d.detach()}, weights), False
            opt_d.zero_grad()
            gan_d.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.discriminator.parameters(), cfg.grad_clip)
            opt_d.step()

    _set_requires_grad(model.discriminator, False)
    out = model.reconstruct(y, "train", labels)
    lat_h = None
    if not cfg.no_ot:
        with torch.no_grad():
            lat_h = model.autoencoder.encode(x)
    _, rec = recon_loss(x, out.x, lat_h, out.latent, weights.lambda1)
    components = {"l1": rec["l1"], "ot": rec["ot"], "gan_d": gan_d.detach()}
    zero = torch.zeros((), device=x.device)
    if model.codebook is not None:
        vq = vq_loss(out.l, model.codebook, labels, cfg.tau, cfg.alpha, cfg.beta)
        components.update(vq_infonce=vq.infonce, vq_codebook=vq.codebook, vq_commit=vq.commit)
    else:
        components.update(vq_infonce=zero, vq_codebook=zero, vq_commit=zero)
    if model.reprojector is not None:
        y_fake = model.reproject(x, out.z_q)
        components["gan_g"] = hinge_g_loss(model.discriminate(x, y_fake))
        components["perceptual"] = perceptual_loss(y, y_fake, perceptual)
    else:
        components.update(gan_g=zero, perceptual=zero)
    total_g = generator_total(components, weights)

    report = LossReport.from_components(components, weights)
    if not report.is_finite() or not torch.isfinite(total_g):
        _set_requires_grad(model.discriminator, True)
        return report, False

    opt_g.zero_grad()
    total_g.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(train_params, cfg.grad_clip)
    opt_g.step()
    if model.codebook is not None:
        model.codebook.renormalize()
    _set_requires_grad(model.discriminator, True)
    return report, True


def train_joint(cfg: TrainConfig, ae_ckpt: Optional[Checkpoint],
                manifest: Optional[Manifest] = None) -> Checkpoint:
    """Stage 2: joint training of every network except the frozen parts.

    E_h is always frozen; D_h is frozen unless ``freeze_decoder`` is off or
    ``no_ot`` is set, in which case the autoencoder is re-initialized and its
    decoder trained jointly.  Writes ``joint_epochNNN.ckpt`` and
    ``joint_last.ckpt``; returns the final checkpoint.
    The codebook probe runs on the same held-out split as stage 1.

    Raises:
        ConfigurationError: *ae_ckpt* does not match the configured architecture.
        NumericError: A non-finite loss term, discriminator loss included;
            carries the LossReport.
    """
    if cfg.joint_epochs < 1:
        raise ConfigurationError("joint_epochs must be >= 1")
    m = _with_validation(cfg, manifest or load_manifest(cfg.manifest))
    seed_everything(cfg.seed)
    device = torch.device(cfg.device)
    arch = build_arch(cfg, m)
    model = NlosLtm(arch, codebook_seed=cfg.seed)

    if cfg.no_ot:
        logger.info("no_ot: autoencoder re-initialized, decoder trained jointly")
    else:
        if ae_ckpt is None:
            raise ContractError("joint training needs a pretrained autoencoder checkpoint")
        check_arch(ae_ckpt, arch, keys=AUTOENCODER_KEYS)
        model.autoencoder.load_state_dict(
            {k[len("autoencoder."):]: v for k, v in ae_ckpt.model.items() if k.startswith("autoencoder.")},
            strict=True)
    model.to(device)

    train_decoder = cfg.no_ot or not cfg.freeze_decoder
    model.autoencoder.encoder.requires_grad_(False)
    model.autoencoder.decoder.requires_grad_(train_decoder)
    train_params = model.generator_parameters(include_decoder=train_decoder)
    opt_g = torch.optim.AdamW(train_params, lr=cfg.joint_lr_start, betas=tuple(cfg.joint_betas),
                              weight_decay=cfg.joint_weight_decay)
    opt_d = None
    perceptual = None
    if model.discriminator is not None:
        opt_d = torch.optim.AdamW(model.discriminator.parameters(), lr=cfg.joint_lr_start,
                                  betas=tuple(cfg.joint_betas), weight_decay=cfg.joint_weight_decay)
        perceptual = PerceptualFeatures(arch.channels, cfg.perceptual_width, cfg.perceptual_seed).to(device)

    weights = LossWeights.from_config(cfg)
    n_train = len(m.split_records("train"))
    if n_train == 0:
        raise EmptySplitError("no training records")
    total_steps = cfg.joint_epochs * _steps_per_epoch(n_train, cfg.batch_size)
    has_probe = bool(m.split_records(cfg.probe_split))
    chash = config_hash(cfg)
    step = 0
    final: Optional[Checkpoint] = None

    with StepLog(os.path.join(cfg.output_dir, "train_log.jsonl")) as log:
        for epoch in range(1, cfg.joint_epochs + 1):
            model.train()
            sums: dict = defaultdict(float)
            n_steps = 0
            batches = iterate_batches(m, "train", cfg.batch_size, shuffle_seed=_shuffle_seed(cfg.seed, epoch))
            for bi, batch in enumerate(batches):
                lr = cosine_lr(step, total_steps, cfg.joint_lr_start, cfg.joint_lr_end)
                _set_lr(opt_g, lr)
                if opt_d is not None:
                    _set_lr(opt_d, lr)
                x, y, labels = _tensors(batch, device)
                report, ok = _joint_step(model, cfg, weights, x, y, labels, opt_g, opt_d,
                                         perceptual, train_params)
                record = {"stage": "joint", "epoch": epoch, "step": step, "lr": lr, **report.to_dict()}
                log.write(record)
                if not ok:
                    path = _dump_failure(cfg, "joint", epoch, bi, batch, report.to_dict())
                    raise NumericError(
                        f"non-finite loss terms {report.non_finite_terms()} at epoch {epoch}, "
                        f"batch {bi} (details in {path})", report=report.to_dict(), batch_index=bi)
                for k, v in report.to_dict().items():
                    sums[k] += v
                n_steps += 1
                step += 1

            model.eval()
            means = {k: v / n_steps for k, v in sums.items()}
            metrics = {"mean_" + k: v for k, v in means.items()}
            if model.codebook is not None and has_probe:
                probe = codebook_probe(model, m, cfg.probe_split, cfg.batch_size, device)
                metrics["probe_accuracy"] = probe["accuracy"]
                metrics["probe_assignments"] = probe["assignments"]
                unused = [i for i, c in enumerate(probe["assignments"]) if c == 0]
                if unused:
                    logger.warning("codebook collapse: code(s) %s received no %s assignments",
                                   unused, cfg.probe_split)
            state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
            phash = parameter_hash(state)
            logger.info("joint epoch %d/%d: total_g=%.5f l1=%.5f total_d=%.5f probe_acc=%s params=%s",
                        epoch, cfg.joint_epochs, means.get("total_g", 0.0), means.get("l1", 0.0),
                        means.get("total_d", 0.0), metrics.get("probe_accuracy", "n/a"), phash[:12])
            optimizers = {"generator": copy.deepcopy(opt_g.state_dict())}
            if opt_d is not None:
                optimizers["discriminator"] = copy.deepcopy(opt_d.state_dict())
            final = Checkpoint(stage="joint", arch=arch, config_hash=chash, epoch=epoch, model=state,
                               optimizers=optimizers, metrics=metrics,
                               extra={"codebook_seed": cfg.seed, "step": step, "parameter_hash": phash})
            if epoch % max(1, cfg.checkpoint_every) == 0 or epoch == cfg.joint_epochs:
                save_checkpoint(final, _checkpoint_path(cfg, f"joint_epoch{epoch:03d}"))

    save_checkpoint(final, _checkpoint_path(cfg, "joint_last"))
    return final
