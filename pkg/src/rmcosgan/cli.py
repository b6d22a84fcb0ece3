"""Command-line entry point.

Machine-readable results go to stdout as JSON (``gen`` writes a file and
prints its path); diagnostics and progress go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import zipfile
from pathlib import Path

import numpy as np

from .autodiff import DomainError, ShapeError
from .data import IdxFormatError, denormalize_images, RngStream, write_idx
from .harness import (ConfigError, ExperimentConfig, TrainingDiverged, cached_reference, evaluate, generate,
                      load_training_checkpoint, make_dataset, parse_overrides, run_seed_variance,
                      sweep_margin, sweep_sample_count, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_DIVERGED = 4
EXIT_VERIFY = 5

OUT_ENV = "RMCOSGAN_OUT"

log = logging.getLogger("rmcosgan")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, args.set)
    else:
        cfg = ExperimentConfig.from_dict(parse_overrides(args.set))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


class CheckpointError(Exception):
    pass


def _load(path: str):
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    try:
        return load_training_checkpoint(p)
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"unreadable checkpoint {p}: {exc}") from None


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=float)
    sys.stdout.write("\n")


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out) if args.out else _out_root() / f"{cfg.loss}-{cfg.dataset}-{cfg.hash()}"
    cfg = cfg.replace(out_dir=str(out))
    if args.resume:
        _load(args.resume)
    try:
        res = train(cfg, resume=args.resume)
    except TrainingDiverged as exc:
        print(f"error: {exc}; partial report in {out}", file=sys.stderr)
        return EXIT_DIVERGED
    summary = res.report.summary()
    summary.update(out_dir=str(out), checkpoints=[str(p) for p in res.checkpoints])
    _emit(summary)
    return EXIT_OK


def _dataset_for(cfg: ExperimentConfig, args):
    dataset = make_dataset(cfg)
    reference = None
    if getattr(args, "reference_cache", None):
        reference = cached_reference(dataset, args.reference_cache, cfg.reference_samples)
    return dataset, reference


def cmd_eval(args) -> int:
    cfg, G, *_ = _load(args.checkpoint)
    dataset, reference = _dataset_for(cfg, args)
    ev = evaluate(G, args.samples or cfg.eval_samples, dataset, seed=args.seed if args.seed is not None else cfg.seed,
                  reference=reference, latent_dim=cfg.latent_dim, is_splits=cfg.is_splits,
                  reference_samples=cfg.reference_samples)
    _emit(vars(ev))
    return EXIT_OK


def cmd_sweep_margin(args) -> int:
    cfg = _config(args)
    try:
        sweep = sweep_margin(cfg, args.margins, args.seeds, n_jobs=args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _emit({"table": sweep.table(), "runs": [vars(r) for r in sweep.runs]})
    return EXIT_OK


def cmd_sweep_samples(args) -> int:
    cfg, G, *_ = _load(args.checkpoint)
    dataset, reference = _dataset_for(cfg, args)
    try:
        rows = sweep_sample_count(G, args.counts, dataset, seed=args.seed if args.seed is not None else cfg.seed,
                                  reference=reference, latent_dim=cfg.latent_dim, repeats=args.repeats)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _emit([{"n": n, "fid": fid, "fid_std": std, "repeats": args.repeats} for n, fid, std in rows])
    return EXIT_OK


def cmd_seed_variance(args) -> int:
    cfg = _config(args)
    try:
        sv = run_seed_variance(cfg, args.seeds, n_jobs=args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _emit({"summary": sv.summary(), "table": sv.table()})
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg, G, *_ = _load(args.checkpoint)
    seed = args.seed if args.seed is not None else cfg.seed
    x = generate(G, args.n, cfg.latent_dim, RngStream(seed, "eval"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if cfg.dataset == "mnist":
        side = int(round(np.sqrt(x.shape[1])))
        shape = (args.n, side, side) if side * side == x.shape[1] else x.shape
        write_idx(out, denormalize_images(x).reshape(shape))
    else:
        np.savetxt(out, x, delimiter=",", header="x,y", comments="", fmt="%.17g")
    _emit({"path": str(out), "n": args.n, "format": "idx" if cfg.dataset == "mnist" else "csv"})
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_verify

    try:
        results = run_verify(args.only or None, echo=lambda line: print(line, file=sys.stderr))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _emit([{"property": c.name, "passed": c.passed, "detail": c.detail, "seconds": c.seconds} for c in results])
    failed = [c.name for c in results if not c.passed]
    if failed:
        print(f"verify failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmcosgan", description="Margin-cosine GAN laboratory at toy scale.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable; JSON values)")
        p.add_argument("--seed", type=int, help="override the run seed")
        return p

    def with_checkpoint(p):
        p.add_argument("checkpoint", help="training checkpoint (.npz)")
        p.add_argument("--seed", type=int, help="evaluation seed (default: the run seed)")
        p.add_argument("--reference-cache", help="cache real-data statistics at this .npz path")
        return p

    p = with_config(sub.add_parser("train", help="train one model"))
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<loss>-<dataset>-<hash>)")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.set_defaults(func=cmd_train)

    p = with_checkpoint(sub.add_parser("eval", help="FID, IS and mode coverage of a checkpoint"))
    p.add_argument("--samples", type=int, help="number of generated samples")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("sweep-margin", help="train across margins and seeds"))
    p.add_argument("--margins", type=_floats, default=[0.0, 0.15, 0.8])
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep_margin)

    p = with_checkpoint(sub.add_parser("sweep-samples", help="FID against number of generated samples"))
    p.add_argument("--counts", type=_ints, default=[500, 2000, 10000])
    p.add_argument("--repeats", type=int, default=20, help="independent sample sets per count")
    p.set_defaults(func=cmd_sweep_samples)

    p = with_config(sub.add_parser("seed-variance", help="best FID across seeds"))
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3])
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_seed_variance)

    p = with_checkpoint(sub.add_parser("gen", help="write generated samples (CSV for 2D data, IDX for images)"))
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("--only", action="append", metavar="PROPERTY", help="run only this property (repeatable)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, FileNotFoundError, IdxFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ShapeError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
