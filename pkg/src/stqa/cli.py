"""Command-line entry point: ``stqa {synth,train,eval,gradcheck,inspect}``.

Exit status is 0 on success, 1 when data, configuration or a numeric check
fails, and 2 on usage errors (argparse's own convention).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .data import QUESTION_TYPES, SynthConfig, generate_synthetic, load_dataset
from .errors import ConfigError, STQAError, TrainingDiverged
from .gradtargets import TARGETS, build_target
from .io import Checkpoint, dumps_json
from .trainer import PRESETS, TRAINABLE, dump_scores, evaluate, merge_dumps, preset_config, train_channel

log = logging.getLogger("stqa")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args) -> dict:
    cfg = {}
    if args.config:
        try:
            cfg.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: cannot read config ({exc})") from None
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg[key] = _parse_value(value)
    return cfg


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_questions=args.questions,
        n_frames=args.frames,
        spatial_size=args.size,
        n_candidates=args.candidates,
        n_visual_classes=max(args.candidates, args.visual_classes),
        question_types=tuple(args.types),
    )
    out = generate_synthetic(args.out, cfg, seed=args.seed)
    print(f"wrote {cfg.n_questions} questions to {out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.data, require_video=args.channel != "text")
    cfg = preset_config(args.channel, args.preset, _overrides(args))
    if args.verbose:
        cfg.setdefault("verbose", 1)
    try:
        ckpt, history = train_channel(args.channel, ds, cfg, seed=args.seed,
                                      metrics_path=args.metrics, types=args.types)
    except TrainingDiverged as exc:
        if exc.checkpoint is not None:
            exc.checkpoint.save(args.out)
            print(f"saved last good parameters to {args.out}", file=sys.stderr)
        raise
    ckpt.save(args.out)
    best = max((h.get("val_acc", float("nan")) for h in history), default=float("nan"))
    print(f"{args.channel}: {len(history)} epochs, best val acc {best:.4f}, saved {args.out}")
    return 0


def _print_report(report: dict) -> None:
    print(f"split {report['split']}  channels {'+'.join(report['channels'])}  "
          f"n={report['n']}  accuracy {report['accuracy']:.4f}")
    for qtype, acc in report["per_type"].items():
        print(f"  {qtype:10s} {acc:.4f}")


def cmd_eval(args) -> int:
    if args.from_dumps:
        ds = load_dataset(args.data, require_video=False)
        report = merge_dumps(args.from_dumps, ds)
    else:
        ckpts = [Checkpoint.load(p) for p in args.checkpoints]
        ds = load_dataset(args.data, require_video=any(c.channel != "text" for c in ckpts))
        report = evaluate(ckpts, ds, args.split, args.types)
        if args.dump_scores:
            out = Path(args.dump_scores)
            out.mkdir(parents=True, exist_ok=True)
            for c in ckpts:
                dump_scores(c, ds, args.split, args.types, out / f"{c.channel}.json")
    _print_report(report)
    if args.report:
        Path(args.report).write_text(dumps_json(report), encoding="utf-8")
    return 0


def cmd_gradcheck(args) -> int:
    names = sorted(TARGETS) if args.target == "all" else [args.target]
    worst_ok = True
    for name in names:
        target = build_target(name, args.seed)
        err = target.check(args.eps)
        ok = err <= target.tolerance
        worst_ok &= ok
        print(f"{name}\tmax_rel_err={err:.3e}\ttol={target.tolerance:g}\t{'ok' if ok else 'FAIL'}")
    return 0 if worst_ok else 1


def cmd_inspect(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    print(f"channel {ckpt.channel}  seed {ckpt.seed}  engine {ckpt.engine_version}")
    print(f"estimator {ckpt.config.get('estimator', '?')}")
    total = 0
    for name, shape, size in ckpt.table():
        print(f"  {name:40s} {str(list(shape)):20s} {size}")
        total += size
    print(f"{len(ckpt.params)} tensors, {total} parameters")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stqa", description="Video question answering on synthetic clips.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("out")
    p.add_argument("--questions", type=int, default=500)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=16, help="frame height and width in pixels")
    p.add_argument("--candidates", type=int, default=5)
    p.add_argument("--visual-classes", type=int, default=5)
    p.add_argument("--types", nargs="+", choices=QUESTION_TYPES, default=list(QUESTION_TYPES))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one channel")
    p.add_argument("--channel", choices=TRAINABLE, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    p.add_argument("--config", help="JSON file of estimator parameters")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one parameter")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics", help="write the per-epoch metrics log here")
    p.add_argument("--types", nargs="+", choices=QUESTION_TYPES)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate one to three channel checkpoints")
    p.add_argument("--data", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoints", nargs="+")
    src.add_argument("--from-dumps", nargs="+", metavar="JSON", help="merge stored score dumps")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--types", nargs="+", choices=QUESTION_TYPES)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--dump-scores", metavar="DIR", help="write per-channel softmax scores here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare tape gradients with central differences")
    p.add_argument("--target", choices=sorted(TARGETS) + ["all"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="print a checkpoint's parameter table")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except STQAError as exc:
        print(f"stqa {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"stqa {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
