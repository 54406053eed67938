"""Command-line entry point: ``dfbp <command> [flags]``.

Exit codes: 0 ok, 1 usage, 2 config validation, 3 runtime failure. Errors
are reported as a single JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as dio
from .checks import run_suite
from .config import RunConfig, load_config
from .diffusion import ancestral_sample
from .dit import ConfigError, DiTModel
from .head import finetune_head
from .metrics import VARIANTS, comparison_table, cross_validate, kfold_split, read_folds_csv, run_ablation
from .optim import AdamWState
from .rng import DiffusionRng
from .training import (
    Checkpoint,
    PretrainRun,
    load_checkpoint,
    save_checkpoint,
    write_loss_csv,
)

EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 1, 2, 3

log = logging.getLogger("dfbp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, code: int, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "code": code, "message": message}) + "\n")
    return code


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.with_seed(args.seed)
    return cfg


def _need(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} requires {' '.join(missing)}")


def _load_images(path) -> np.ndarray:
    samples = dio.read_image_dir(path)
    if not samples:
        raise RuntimeError(f"no images found in {path}")
    return dio.stack_images(samples)


def _encoder(ckpt: Checkpoint, cfg: RunConfig) -> DiTModel:
    model = ckpt.build_model()
    if model.config.feature_pooling != cfg.feature.pooling:
        raise ConfigError(
            f"checkpoint was trained with pooling={model.config.feature_pooling!r}, "
            f"config asks for {cfg.feature.pooling!r}"
        )
    model.freeze()
    return model


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    _need(args, "out")
    seed = 0 if args.seed is None else args.seed
    samples = dio.generate_synthetic_corpus(args.n, args.size, seed, labeled=not args.unlabeled,
                                            rating_noise=args.rating_noise)
    dio.write_corpus(samples, args.out, seed, args.size)
    print(f"wrote {len(samples)} images to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    _need(args, "data", "out")
    cfg = _config(args)
    images = _load_images(args.data)
    if args.ckpt:
        run = PretrainRun.resume(load_checkpoint(args.ckpt), images)
    else:
        o = cfg.optim
        state = AdamWState(lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps, weight_decay=o.weight_decay)
        model = DiTModel(cfg.model, seed=cfg.train.seed)
        run = PretrainRun(images, model, cfg.schedule, state, cfg.train.seed, cfg.train.batch)
    remaining = max(0, cfg.train.steps - run.step)
    trace = run.run(remaining, cfg.train.log_every)
    save_checkpoint(run.checkpoint(), args.out)
    write_loss_csv(str(args.out) + ".loss.csv", trace)
    if trace:
        print(f"step {run.step}: last loss {trace[-1][1]:.6f}")
    return 0


def cmd_finetune(args) -> int:
    _need(args, "ckpt", "labels", "out")
    cfg = _config(args)
    encoder = _encoder(load_checkpoint(args.ckpt), cfg)
    data = dio.load_labeled(args.labels)
    head = finetune_head(encoder, data, cfg.head, seed=cfg.train.seed, t_feat=cfg.feature.t_feat)
    head.save(args.out)
    print(f"trained head on {len(data)} samples -> {args.out}")
    return 0


def _split(cfg: RunConfig, data):
    if cfg.eval.folds_csv:
        return read_folds_csv(cfg.eval.folds_csv, [s.id for s in data])
    return kfold_split(len(data), cfg.eval.k, cfg.eval.seed)


def cmd_evaluate(args) -> int:
    _need(args, "ckpt", "labels")
    cfg = _config(args)
    encoder = _encoder(load_checkpoint(args.ckpt), cfg)
    data = dio.load_labeled(args.labels)
    split = _split(cfg, data)
    rep = cross_validate(encoder, data, split.k, cfg.eval.seed, cfg.head, cfg.feature.t_feat,
                         split, label="generative-pretrained")
    if args.out:
        Path(args.out).write_text(rep.to_csv())
    else:
        sys.stdout.write(rep.to_csv())
    sys.stdout.write(rep.to_table())
    return 0


def cmd_ablation(args) -> int:
    _need(args, "labels")
    cfg = _config(args)
    variants = [v.strip() for v in (args.variants or ",".join(VARIANTS)).split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s) {bad}; choose from {list(VARIANTS)}")
    data = dio.load_labeled(args.labels)
    pretrained = None
    if "generative-pretrained" in variants:
        if args.ckpt:
            pretrained = _encoder(load_checkpoint(args.ckpt), cfg)
        else:
            # self-supervised on --data if given, else on the labeled images (labels unused)
            images = _load_images(args.data) if args.data else dio.stack_images(data)
            o = cfg.optim
            state = AdamWState(lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps,
                               weight_decay=o.weight_decay)
            run = PretrainRun(images, DiTModel(cfg.model, seed=cfg.train.seed), cfg.schedule,
                              state, cfg.train.seed, cfg.train.batch)
            run.run(cfg.train.steps, cfg.train.log_every)
            pretrained = run.model
            pretrained.freeze()
    reports = run_ablation(data, cfg.eval.k, cfg.eval.seed, variants, model_cfg=cfg.model,
                           pretrained=pretrained, head_cfg=cfg.head, t_feat=cfg.feature.t_feat,
                           split=_split(cfg, data))
    rows = ["variant,pcc,mae"] + [f"{r.label},{r.mean_pcc:.6f},{r.mean_mae:.6f}" for r in reports]
    if args.out:
        Path(args.out).write_text("\n".join(rows) + "\n")
    sys.stdout.write(comparison_table(reports))
    return 0


def cmd_sample(args) -> int:
    _need(args, "ckpt", "out")
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    model.freeze()
    seed = 0 if args.seed is None else args.seed
    img = ancestral_sample(model, ckpt.schedule.build(), DiffusionRng(seed))
    dio.write_pgm(args.out, img)
    print(f"wrote sample to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config).model if args.config else None
    seed = 0 if args.seed is None else args.seed
    failed = 0
    for r in run_suite(cfg, seed=seed, max_coords=args.max_coords):
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} max_rel_err={r.error:.3e}")
        failed += not r.passed
    if failed:
        return _fail("gradcheck", EXIT_RUNTIME, f"{failed} gradient check(s) failed")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "ablation": cmd_ablation,
    "sample": cmd_sample,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dfbp", description="Diffusion pre-training + frozen-feature score regression")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--data")
        s.add_argument("--labels")
        s.add_argument("--ckpt")
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--variants")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "synth":
            s.add_argument("--n", type=int, default=8)
            s.add_argument("--size", type=int, default=16)
            s.add_argument("--unlabeled", action="store_true")
            s.add_argument("--rating-noise", type=float, default=0.0)
        if name == "gradcheck":
            s.add_argument("--max-coords", type=int, default=None)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; choose from " + ", ".join(COMMANDS))
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, str(exc))
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, str(exc))
    except Exception as exc:  # noqa: BLE001
        return _fail("runtime", EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
