"""Command-line front end.

Exit codes: 0 success, 1 invariant/check failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config, save_config
from .core import ConfigurationError, InputError
from .experiment import (
    ablate_command,
    eval_command,
    gen_data,
    load_grid,
    output_root,
    train_command,
)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _cmd_gen_data(args) -> int:
    cfg = _config(args)
    root = output_root(args.out)
    path = gen_data(cfg, root)
    print(f"wrote {path} ({cfg.data.prompts} pairs, {cfg.data.method.value})")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _config(args)
    if not args.dataset:
        raise ConfigurationError("train needs --dataset")
    root = output_root(args.out)
    rows = train_command(cfg, Path(args.dataset), root)
    for r in rows:
        print(f"epoch {r['epoch']}: win_rate={r['win_rate']:.4f} pairwise_accuracy={r['pairwise_accuracy']:.4f} "
              f"avg_length={r['avg_length']:.3f} loss={r['epoch_loss']:.5f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _config(args)
    if not args.dataset:
        raise ConfigurationError("eval needs --dataset")
    root = output_root(args.out)
    row = eval_command(cfg, Path(args.dataset), Path(args.checkpoint) if args.checkpoint else None, root)
    print(" ".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    if not args.grid:
        raise ConfigurationError("ablate needs --grid")
    grid = load_grid(args.grid)
    if args.seed is not None:
        grid = dataclasses.replace(grid, base=grid.base.with_seed(args.seed))
    root = output_root(args.out)
    rows = ablate_command(grid, root, args.jobs)
    print((root / "ablation.md").read_text(encoding="utf-8"), end="")
    print(f"{len(rows)} runs")
    return EXIT_OK


def _cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks(args.only or None)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def _cmd_init_config(args) -> int:
    root = output_root(args.out)
    path = save_config(_config(args), root / "config.json")
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rainbowpo", description="Toy-scale preference-optimisation laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False):
        p.add_argument("--config", help="experiment config (JSON); defaults when omitted")
        p.add_argument("--out", help="output directory (default: $RAINBOW_RESULTS_DIR or ./results)")
        p.add_argument("--seed", type=int, help="overrides world and training seeds")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker slots")
        if dataset:
            p.add_argument("--dataset", help="preference dataset (.jsonl)")
        return p

    common(sub.add_parser("gen-data", help="generate a preference dataset")).set_defaults(fn=_cmd_gen_data)
    common(sub.add_parser("train", help="train and evaluate per epoch"), True).set_defaults(fn=_cmd_train)
    p = common(sub.add_parser("eval", help="evaluate a checkpoint (or the initial policy)"), True)
    p.add_argument("--checkpoint")
    p.set_defaults(fn=_cmd_eval)
    p = common(sub.add_parser("ablate", help="greedy component ablation grid"))
    p.add_argument("--grid", help="grid spec (JSON)")
    p.set_defaults(fn=_cmd_ablate)
    p = common(sub.add_parser("check", help="run the invariant suite"))
    p.add_argument("--only", nargs="*", help="subset of checks to run")
    p.set_defaults(fn=_cmd_check)
    common(sub.add_parser("init-config", help="write the default config")).set_defaults(fn=_cmd_init_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
