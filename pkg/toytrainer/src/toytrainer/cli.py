"""Command-line entry points: train on generated shards, export bridge
probability files, and score a checkpoint in-process."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ToyModelConfig


def cmd_train(args) -> int:
    from .train import train

    overrides = {}
    for item in args.set or []:
        key, value = item.split("=", 1)
        overrides[key.strip()] = json.loads(value)
    cfg_dict = ToyModelConfig().to_dict()
    cfg_dict.update(overrides)
    if args.steps is not None:
        cfg_dict["total_steps"] = args.steps
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = ToyModelConfig.from_dict(cfg_dict)
    ckpt = train(cfg, args.data, args.out)
    print(f"checkpoint -> {ckpt}")
    return 0


def cmd_export(args) -> int:
    from .export import export_probs
    from .tasks import load_tasks
    from .train import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    tasks = load_tasks(args.tasks)
    n = export_probs(model, tasks, args.out, dur_s=model.cfg.dur_s,
                     dur_q=model.cfg.dur_q, shuffle_seed=args.shuffle_labels)
    print(f"wrote {n} probability files -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .evalmini import evaluate_model
    from .tasks import load_tasks
    from .train import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    tasks = load_tasks(args.tasks)
    f1 = evaluate_model(model, tasks, dur_s=model.cfg.dur_s,
                        dur_q=model.cfg.dur_q,
                        shuffle_seed=args.shuffle_labels)
    print(f"F1 = {f1:.6f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="toytrainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train")
    p.add_argument("--data", nargs="+", required=True,
                   help="one or more generated pair datasets (shards)")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shuffle-labels", type=int, default=None,
                   help="seed for destroying the support labels at inference")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--shuffle-labels", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
