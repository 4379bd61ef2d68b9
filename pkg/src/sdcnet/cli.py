"""``sdcnet`` command line: synth, train, eval and toy subcommands.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error
(bad flags or an invalid config file).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from .config import ConfigError, RunConfig, load_run_config, parse_run_config, write_config_echo
from .train.losses import VARIANTS

log = logging.getLogger("sdcnet")


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="run configuration (JSON)")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded reference path (ignores SDC_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdcnet", description="Closed-set counting with spatial divide-and-conquer.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic cell dataset")
    _common(p)

    p = sub.add_parser("train", help="train one model")
    _common(p, out_required=False)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--variant", choices=VARIANTS, help="model variant")
    p.add_argument("--stages", type=int, help="division stages N (S-DC variants)")

    p = sub.add_parser("eval", help="evaluate a checkpoint (or the GT oracle)")
    _common(p, out_required=False)
    p.add_argument("--data", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--oracle", action="store_true", help="predict the annotated counts exactly")
    p.add_argument("--split", default=None, help="dataset split (default from config: test)")
    p.add_argument("--game", type=int, default=0, metavar="L", help="report GAME(0..L)")
    p.add_argument("--dump-masks", action="store_true", help="write one PGM per W_i per image")

    p = sub.add_parser("toy", help="closed-to-open toy experiment: synth, train 3 models, evaluate")
    _common(p)
    return ap


def _threads(args):
    if args.deterministic:
        n = 1
    else:
        env = os.environ.get("SDC_THREADS")
        n = int(env) if env else None
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, n))


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else parse_run_config({})
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_synth(args, cfg: RunConfig) -> int:
    from .experiment import synth_data

    manifest = synth_data(cfg, args.out)
    write_config_echo(cfg, args.out)
    n = {k: len(v["items"]) for k, v in manifest["splits"].items()}
    print(f"wrote {n['train']} train and {n['test']} test images to {args.out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from .experiment import train_run

    variant = args.variant or cfg.variant
    out = args.out or Path("runs") / variant
    res = train_run(cfg, args.data, out, variant=variant, stages=args.stages)
    last = res.history[-1] if res.history else {}
    print(f"checkpoint {out / 'model.ckpt'}  epochs {len(res.history)}  final loss {last.get('loss', float('nan')):.5f}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from .dataset import load_split
    from .evaluate import checkpoint_predictor, evaluate, oracle_predictor
    from .experiment import write_eval
    from .train.checkpoint import load_checkpoint

    if args.game < 0:
        raise ConfigError("--game must be >= 0")
    out = args.out or Path("runs") / "eval"
    out.mkdir(parents=True, exist_ok=True)
    samples = load_split(args.data, args.split or cfg.eval_split)
    c_max = None
    if args.oracle:
        predictor, label = oracle_predictor(), "oracle"
    else:
        ckpt = load_checkpoint(args.checkpoint)
        predictor, label = checkpoint_predictor(ckpt), ckpt.config.get("variant", {}).get("name", "model")
        c_max = ckpt.config.get("partition", {}).get("c_max")
    res = evaluate(samples, predictor, game_levels=args.game, mask_dir=out / "masks" if args.dump_masks else None)
    write_eval(res, out, label=label, c_max=c_max)
    write_config_echo(cfg, out, {"eval": {"data": str(args.data), "checkpoint": str(args.checkpoint),
                                          "oracle": args.oracle, "game": args.game}})
    print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in res.summary.items()))
    return 0


def cmd_toy(args, cfg: RunConfig) -> int:
    from .experiment import run_toy

    outcome = run_toy(cfg, args.out)
    for k, v in outcome.criteria().items():
        print(f"{k}: {v}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "toy": cmd_toy}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load_config(args)
        with _threads(args):
            return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        ap.print_usage(sys.stderr)
        print(f"sdcnet: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"sdcnet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
