"""Command-line interface.

Every subcommand takes ``--config`` (INI file) and ``--seed``.  Exit codes:
0 on success, 2 on usage errors, 1 on any library error, which is reported
on stderr as a single ``error: <error_class>: <message>`` line.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional

import numpy as np
import torch

from . import __version__
from .checkpoint import checkpoint_id, load_checkpoint
from .config import ExperimentConfig, load_config
from .dataset import load_manifest
from .errors import ConfigurationError, NlosError
from .imageio import load_source_image, write_png16
from .logs import configure_logging

logger = logging.getLogger(__name__)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--seed", type=int, default=None, help="Override every seed in the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlosltm",
        description="Passive NLOS imaging with light transport modulation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Render the synthetic desk dataset (or ingest captures)")
    _common(p)
    p.add_argument("--ingest", metavar="DIR", default=None,
                   help="Convert a <code>/<split>/{hidden,projection}/ capture tree instead")
    p.add_argument("--source", default=None, help="digits | shapes | mixed | image directory")
    p.add_argument("--out", default=None, help="Dataset directory (overrides dataset_dir)")

    p = sub.add_parser("pretrain-ae", help="Stage 1: hidden-image autoencoder")
    _common(p)
    p.add_argument("--manifest", default=None)

    p = sub.add_parser("train", help="Stage 2: joint training")
    _common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--ae-ckpt", default=None,
                   help="Stage-1 checkpoint (default <output_dir>/autoencoder_best.ckpt)")

    p = sub.add_parser("eval", help="Per-condition PSNR/SSIM report")
    _common(p)
    p.add_argument("--ckpt", default=None, help="Default <output_dir>/joint_last.ckpt")
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--out", default=None, help="Report directory (default <output_dir>/eval)")
    p.add_argument("--render", choices=("none", "png", "pdf", "all"), default="none")

    p = sub.add_parser("reconstruct", help="Reconstruct the hidden image of one projection")
    _common(p)
    p.add_argument("--in", dest="input", required=True, help="Projection image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="Output .png16 path")

    p = sub.add_parser("reproject", help="Render projections through the reprojection network")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--hidden", default=None, help="Hidden image")
    p.add_argument("--condition-id", type=int, default=None)
    p.add_argument("--manifest", default=None, help="Reproject every hidden image of a manifest")
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True, help="Output .png16 path, or directory with --manifest")

    p = sub.add_parser("codebook-stats", help="Code assignments and confusion matrix as JSON")
    _common(p)
    p.add_argument("--ckpt", default=None, help="Default <output_dir>/joint_last.ckpt")
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--out", default=None, help="Also write the JSON here")

    p = sub.add_parser("baseline", help="Classical reconstruction baseline")
    _common(p)
    p.add_argument("--method", choices=("tikhonov",), default="tikhonov")
    p.add_argument("--reg", type=float, default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--out", default=None, help="Report directory (default <dataset>/baseline)")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.simulate.seed = args.seed
        cfg.train.seed = args.seed
    manifest = getattr(args, "manifest", None)
    if manifest:
        cfg.train.manifest = manifest
    return cfg


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise ConfigurationError(f"{what} not found: {path}")
    return path


def _default_ckpt(cfg: ExperimentConfig, given: Optional[str]) -> str:
    return _require_file(given or os.path.join(cfg.train.output_dir, "joint_last.ckpt"), "checkpoint")


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_report(report, out_dir: str, cfg: ExperimentConfig, render: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    report.save(os.path.join(out_dir, "metrics.json"))
    table = report.format_table()
    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    sys.stdout.write(table)
    if render != "none":
        from .renderers import render as render_one, render_all

        if render == "all":
            render_all(report, out_dir, basename="metrics", config=cfg.report)
        else:
            render_one(report, render, os.path.join(out_dir, f"metrics.{render}"), config=cfg.report)
    logger.info("Report written to %s", out_dir)


# -- subcommands ---------------------------------------------------------

def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    from .synthesis import build_from_config, ingest_passive_directory

    if args.out:
        cfg.simulate.dataset_dir = args.out
    sim = cfg.simulate
    if args.ingest:
        m = ingest_passive_directory(args.ingest, sim.dataset_dir, tuple(sim.hidden_res),
                                     tuple(sim.wall_res), sim.channels)
    else:
        m = build_from_config(sim, source=args.source)
    counts = m.condition_counts()
    print(json.dumps({"manifest": os.path.join(m.root, "manifest.json"), "records": len(m.records),
                      "per_condition": {m.condition(k).code: v for k, v in sorted(counts.items())}},
                     sort_keys=True))
    return 0


def cmd_pretrain_ae(args, cfg: ExperimentConfig) -> int:
    from .training import pretrain_autoencoder

    ckpt = pretrain_autoencoder(cfg.train)
    print(json.dumps({"stage": ckpt.stage, "epoch": ckpt.epoch, "metrics": ckpt.metrics}, sort_keys=True))
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    from .training import train_joint

    tc = cfg.train
    ae = None
    if not tc.no_ot:
        path = _require_file(args.ae_ckpt or os.path.join(tc.output_dir, "autoencoder_best.ckpt"),
                             "autoencoder checkpoint")
        ae = load_checkpoint(path)
    ckpt = train_joint(tc, ae)
    print(json.dumps({"stage": ckpt.stage, "epoch": ckpt.epoch, "metrics": ckpt.metrics}, sort_keys=True))
    return 0


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    from .evaluation import evaluate

    path = _default_ckpt(cfg, args.ckpt)
    m = load_manifest(cfg.train.manifest)
    split = args.split or cfg.eval.split
    report = evaluate(load_checkpoint(path), m, split, cfg.eval,
                      checkpoint_id=checkpoint_id(path), device=cfg.train.device)
    _write_report(report, args.out or os.path.join(cfg.train.output_dir, "eval"), cfg, args.render)
    return 0


def cmd_reconstruct(args, cfg: ExperimentConfig) -> int:
    from .training import model_from_checkpoint

    ckpt = load_checkpoint(_require_file(args.ckpt, "checkpoint"))
    arch = ckpt.arch
    y = load_source_image(_require_file(args.input, "projection image"), arch.wall_res, arch.channels)
    model = model_from_checkpoint(ckpt)
    with torch.no_grad():
        yt = torch.tensor(y.transpose(2, 0, 1)[None].astype(np.float32))
        out = model.reconstruct(yt, "test")
    write_png16(args.out, out.x[0].numpy().transpose(1, 2, 0))
    index = None if out.index is None else int(out.index[0])
    print(json.dumps({"out": os.path.abspath(args.out), "code_index": index}, sort_keys=True))
    return 0


def cmd_reproject(args, cfg: ExperimentConfig) -> int:
    from .evaluation import reproject_dataset, reproject_image
    from .training import model_from_checkpoint

    ckpt = load_checkpoint(_require_file(args.ckpt, "checkpoint"))
    if args.manifest:
        m = reproject_dataset(ckpt, load_manifest(args.manifest), args.out, split=args.split)
        print(json.dumps({"manifest": os.path.join(m.root, "manifest.json"), "records": len(m.records)}))
        return 0
    if args.hidden is None or args.condition_id is None:
        raise ConfigurationError("reproject needs --hidden and --condition-id (or --manifest)")
    x = load_source_image(_require_file(args.hidden, "hidden image"), ckpt.arch.hidden_res, ckpt.arch.channels)
    y = reproject_image(model_from_checkpoint(ckpt), x, args.condition_id)
    write_png16(args.out, y)
    print(json.dumps({"out": os.path.abspath(args.out)}))
    return 0


def cmd_codebook_stats(args, cfg: ExperimentConfig) -> int:
    from .evaluation import codebook_stats

    path = _default_ckpt(cfg, args.ckpt)
    stats = codebook_stats(load_checkpoint(path), load_manifest(cfg.train.manifest),
                           args.split or cfg.eval.split)
    stats["checkpoint_id"] = checkpoint_id(path)
    if args.out:
        _write_json(args.out, stats)
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_baseline(args, cfg: ExperimentConfig) -> int:
    from .evaluation import tikhonov_report

    m = load_manifest(cfg.train.manifest)
    reg = cfg.eval.tikhonov_reg if args.reg is None else args.reg
    report = tikhonov_report(m, args.split or cfg.eval.split, reg, cfg.eval.transport_dir,
                             cfg.eval.examples_per_condition)
    _write_report(report, args.out or os.path.join(m.root, "baseline"), cfg, "none")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "pretrain-ae": cmd_pretrain_ae,
    "train": cmd_train,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
    "reproject": cmd_reproject,
    "codebook-stats": cmd_codebook_stats,
    "baseline": cmd_baseline,
}


def main(argv: Optional[list] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        cfg = _load(args)
        return _COMMANDS[args.command](args, cfg)
    except NlosError as exc:
        print(f"error: {exc.error_class}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io_error: {_one_line(exc)}", file=sys.stderr)
        return 1


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
