"""Command-line front end: ``deepmix {run,train,track,eval,bench,demo}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bench import bench_augmentor, parse_shape
from .experiment import (
    ConfigError,
    ExperimentConfig,
    load_config,
    run_experiment_config,
    train_weights,
    write_summary,
)
from .mixnet import save_weights
from .tracker import AUGMENTORS


def _cmd_run(args) -> None:
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, out=args.out)
    summary = run_experiment_config(cfg)
    print(json.dumps(summary, indent=2))


def _cmd_train(args) -> None:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = replace(cfg, mode=args.mode)
    weights = train_weights(cfg, cfg.branches)
    save_weights(weights, args.out)
    print(f"wrote {cfg.branches} MixNet weights to {args.out}")


def _cmd_track(args) -> None:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = dict(augmentors=(args.augmentor,), sequences=args.seqs, frames=args.frames,
                     seed=args.seed, out=args.out, train=False)
    if args.augmentor == "mixnet":
        overrides["weights"] = args.weights or ""
    elif args.augmentor == "single":
        overrides["single_weights"] = args.weights or ""
    summary = run_experiment_config(replace(cfg, **overrides))
    print(json.dumps(summary, indent=2))


def _cmd_eval(args) -> None:
    print(json.dumps(write_summary(args.results), indent=2))


def _cmd_bench(args) -> None:
    shapes = [parse_shape(s) for s in args.shapes.split(",")]
    print(f"{'shape':>16} {'augmentor':>9} {'median_s':>10} {'p90_s':>10}")
    for shape in shapes:
        for name in args.augmentors.split(","):
            st = bench_augmentor(shape, name.strip(), args.reps)
            label = "x".join(str(v) for v in shape)
            print(f"{label:>16} {st.augmentor:>9} {st.median:10.5f} {st.p90:10.5f}")


DEMO_CONFIG = dict(
    sequences=3, frames=60, augmentors=("none", "mixnet", "opt"),
    train_videos=8, train_frames=30, epochs=2, samples_per_epoch=8, reset=False,
)


def _cmd_demo(args) -> None:
    cfg = replace(ExperimentConfig(), out=args.out, **DEMO_CONFIG)
    summary = run_experiment_config(cfg)
    for name, m in summary["augmentors"].items():
        print(f"{name:>7}: AUC {m['auc']:.3f}  precision {m['precision']:.3f}  fps {m['mean_fps']:.1f}")
    print(f"results in {Path(args.out).resolve()}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepmix", description="Embedding-mixing augmentation for tracking.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a full experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="override the config's output directory")
    r.set_defaults(func=_cmd_run)

    t = sub.add_parser("train", help="train a MixNet and save its weights")
    t.add_argument("--mode", choices=("siamese", "classifier"), default="classifier")
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="weights file to write")
    t.set_defaults(func=_cmd_train)

    k = sub.add_parser("track", help="track synthetic sequences with one augmentor")
    k.add_argument("--weights", help="MixNet weights (mixnet and single augmentors)")
    k.add_argument("--augmentor", choices=AUGMENTORS, default="none")
    k.add_argument("--seqs", type=int, default=20)
    k.add_argument("--frames", type=int, default=200)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--config", help="optional config for the remaining keys")
    k.add_argument("--out", required=True)
    k.set_defaults(func=_cmd_track)

    e = sub.add_parser("eval", help="recompute summary.json from a results directory")
    e.add_argument("--results", required=True)
    e.set_defaults(func=_cmd_eval)

    b = sub.add_parser("bench", help="time the augmentation step")
    b.add_argument("--shapes", default="50x32x22x22", help="comma list of NxCxHxW")
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--augmentors", default="mixnet,single,opt")
    b.set_defaults(func=_cmd_bench)

    d = sub.add_parser("demo", help="small end-to-end run")
    d.add_argument("--out", default="demo_results")
    d.set_defaults(func=_cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
