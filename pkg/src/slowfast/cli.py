"""Command-line entry point: ``slowfast <verb> [flags] [key=value ...]``."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .arch import ArchConfig, ConfigError, ShapeError, build_graph, count_flops, format_config, infer_shapes, \
    load_config, parse_config, parse_overrides, sweep_table, sweep_variants
from .data import DataError

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2

VERBS = ("describe", "cost", "sweep", "gradcheck", "synth-gen", "train-toy", "eval", "lr-dump", "detect-eval")
DESCRIBE_SIDE = 224
COST_SIDE = 256


class ValidationFailure(Exception):
    """A check ran to completion and did not pass."""


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="architecture config file (key = value lines)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", metavar="PATH", help="output file (or directory for synth-gen/train-toy)")
    common.add_argument("--spatial", type=int, metavar="N",
                        help=f"input side; default {DESCRIBE_SIDE} for describe, {COST_SIDE} for cost/sweep/eval")
    common.add_argument("--structured", action="store_true", help="emit JSON lines instead of TSV")
    common.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides, applied last")

    p = argparse.ArgumentParser(prog="slowfast", description="Two-pathway video network toolkit.")
    sub = p.add_subparsers(dest="verb", metavar="verb")
    sub.required = True
    sub.add_parser("describe", parents=[common], help="per-stage output shapes")
    sub.add_parser("cost", parents=[common], help="per-layer multiply-adds and parameters")
    s = sub.add_parser("sweep", parents=[common], help="GFLOPs tradeoff table over one config axis")
    s.add_argument("--axis", default="phi")
    s.add_argument("--values", default="1/4,1/6,1/8,1/12,1/16,1/32", help="comma-separated values")
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of backprop")
    g.add_argument("--samples", type=int, default=210)
    g.add_argument("--tolerance", type=float, default=1e-4)
    sg = sub.add_parser("synth-gen", parents=[common], help="write a synthetic motion corpus as SFV1 files")
    sg.add_argument("--classes", type=int, default=4)
    sg.add_argument("--clips", type=int, default=50, help="clips per class")
    tt = sub.add_parser("train-toy", parents=[common], help="desk-scale training run")
    tt.add_argument("--data", metavar="DIR", help="SFV1 training clips (default: synthetic corpus)")
    tt.add_argument("--val", metavar="DIR", help="SFV1 validation clips")
    tt.add_argument("--iters", type=int, default=2000)
    tt.add_argument("--eta", type=float, default=0.1)
    tt.add_argument("--warmup", type=int, default=100)
    tt.add_argument("--batch", type=int, default=8)
    tt.add_argument("--crop", type=int, default=32)
    tt.add_argument("--eval-every", type=int, default=0)
    tt.add_argument("--checkpoint-every", type=int, default=0)
    ev = sub.add_parser("eval", parents=[common], help="multi-view evaluation of a checkpoint")
    ev.add_argument("--checkpoint", metavar="PATH", required=True)
    ev.add_argument("--data", metavar="DIR", required=True)
    ev.add_argument("--clips", type=int, default=10)
    ev.add_argument("--crops", type=int, default=3)
    lr = sub.add_parser("lr-dump", parents=[common], help="print the learning-rate schedule")
    lr.add_argument("--eta", type=float, default=1.6)
    lr.add_argument("--n-max", type=int, default=100)
    lr.add_argument("--warmup", type=int, default=0)
    lr.add_argument("--warmup-start", type=float, default=0.0)
    de = sub.add_parser("detect-eval", parents=[common], help="frame-level mAP from interchange files")
    de.add_argument("--gt", metavar="PATH", required=True)
    de.add_argument("--pred", metavar="PATH", required=True)
    de.add_argument("--iou", type=float, default=0.5)
    de.add_argument("--compare", metavar="PATH", help="second prediction file for a side-by-side AP table")
    return p


def _config(args, default: ArchConfig | None = None) -> ArchConfig:
    if args.config:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        return load_config(args.config, args.overrides)
    if default is not None:
        return default.with_changes(**parse_overrides(args.overrides))
    return parse_config("", args.overrides)


def _emit(args, text: str):
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _side(args, default: int) -> int:
    side = default if args.spatial is None else args.spatial
    if side < 1:
        raise ConfigError("--spatial must be positive")
    return side


def cmd_describe(args):
    cfg = _config(args)
    rep = infer_shapes(build_graph(cfg), (cfg.raw_frames, _side(args, DESCRIBE_SIDE)))
    _emit(args, rep.to_jsonl() if args.structured else rep.to_tsv())


def cmd_cost(args):
    cfg = _config(args)
    rep = count_flops(build_graph(cfg), (cfg.raw_frames, _side(args, COST_SIDE)))
    _emit(args, rep.to_jsonl() if args.structured else rep.to_tsv())


def cmd_sweep(args):
    cfg = _config(args)
    values = [parse_overrides([f"{args.axis}={v}"])[args.axis] for v in args.values.split(",") if v.strip()]
    rows = sweep_variants(cfg, args.axis, values, (None, _side(args, COST_SIDE)))
    if args.structured:
        lines = []
        for c, rep in rows:
            if c is None:
                lines.append({"value": str(rep.value), "error": rep.message})
            else:
                lines.append({"value": str(getattr(c, args.axis)), "gflops": rep.gflops,
                              "params": rep.total_params})
        _emit(args, "".join(json.dumps(r, sort_keys=True) + "\n" for r in lines))
    else:
        _emit(args, sweep_table(args.axis, rows))


def cmd_gradcheck(args):
    from .net import gradient_check

    if args.config or args.overrides:
        raise ConfigError("gradcheck runs on the built-in tiny networks and takes no config")
    worst = gradient_check(args.seed, num_samples=args.samples)
    _emit(args, f"{worst:.3e}\n")
    if not worst < args.tolerance:
        raise ValidationFailure(f"max relative error {worst:.3e} >= {args.tolerance:g}")


def cmd_synth_gen(args):
    from .data import generate_synthetic_corpus, write_sfv

    if not args.out:
        raise ConfigError("synth-gen needs --out DIR")
    os.makedirs(args.out, exist_ok=True)
    videos = generate_synthetic_corpus(args.seed, args.classes, args.clips)
    names = []
    for i, v in enumerate(videos):
        name = f"clip_{i:05d}.sfv"
        write_sfv(os.path.join(args.out, name), v)
        names.append(f"{name}\t{v.label}")
    with open(os.path.join(args.out, "index.tsv"), "w", encoding="utf-8") as fh:
        fh.write("#file\tlabel\n" + "\n".join(names) + "\n")


def _read_dir(path):
    from .data import read_sfv

    if not os.path.isdir(path):
        raise DataError(f"not a directory: {path}")
    files = sorted(f for f in os.listdir(path) if f.endswith(".sfv"))
    if not files:
        raise DataError(f"no .sfv clips in {path}")
    return [read_sfv(os.path.join(path, f)) for f in files]


def cmd_train_toy(args):
    from .data import generate_synthetic_corpus
    from .net import NetworkInstance
    from .train import LrSchedule, TrainConfig, desk_config, train_loop

    cfg = _config(args, desk_config())
    if args.data:
        train = _read_dir(args.data)
        val = _read_dir(args.val) if args.val else None
    else:
        train = generate_synthetic_corpus(args.seed, cfg.num_classes, 50)
        val = generate_synthetic_corpus(args.seed + 1, cfg.num_classes, 50)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    net = NetworkInstance.create(cfg, args.seed)
    sched = LrSchedule(args.eta, args.iters, warmup_iters=min(args.warmup, args.iters - 1))
    optim = TrainConfig(batch_size=args.batch, crop=args.crop, scale_range=(args.crop, args.crop + args.crop // 4),
                        eval_every=args.eval_every, checkpoint_every=args.checkpoint_every,
                        checkpoint_dir=os.path.join(out, "checkpoints"))
    log = train_loop(net, train, sched, optim, args.seed, val, os.path.join(out, "train_log.jsonl"))
    net.params.save(os.path.join(out, "final.sfck"))
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))
    last = log[-1]
    sys.stdout.write(json.dumps({k: last[k] for k in sorted(last)}) + "\n")


def cmd_eval(args):
    from .evaluation import evaluate_videos, metric_lines
    from .net import NetworkInstance
    from .tensor import ParamStore

    cfg = _config(args)
    net = NetworkInstance(build_graph(cfg), ParamStore.load(args.checkpoint), "eval")
    videos = _read_dir(args.data)
    res = evaluate_videos(net, videos, _side(args, COST_SIDE), args.clips, args.crops)
    metrics = {k: v for k, v in res.items() if k != "scores"}
    if args.structured:
        _emit(args, metric_lines(metrics))
    else:
        _emit(args, "#metric\tvalue\n" + "".join(f"{k}\t{v:.4f}\n" for k, v in metrics.items()))


def cmd_lr_dump(args):
    from .train import LrSchedule, lr_at

    sched = LrSchedule(args.eta, args.n_max, args.warmup, args.warmup_start)
    vals = [lr_at(sched, n) for n in range(args.n_max + 1)]
    if args.structured:
        _emit(args, "".join(json.dumps({"iter": n, "lr": v}) + "\n" for n, v in enumerate(vals)))
    else:
        _emit(args, "#iter\tlr\n" + "".join(f"{n}\t{v!r}\n" for n, v in enumerate(vals)))


def cmd_detect_eval(args):
    from .detect import ap_comparison_table, build_frames, frame_map, read_ground_truth, read_predictions

    truths = read_ground_truth(args.gt)
    preds = read_predictions(args.pred)
    rep = frame_map(build_frames(preds, truths), args.iou)
    if args.compare:
        other = frame_map(build_frames(read_predictions(args.compare), truths), args.iou)
        _emit(args, ap_comparison_table(rep, other, headers=("pred", "compare")))
        return
    if args.structured:
        _emit(args, rep.to_jsonl())
    else:
        _emit(args, rep.to_tsv() + f"mAP\t{rep.mean_ap:.6f}\n")


COMMANDS = {
    "describe": cmd_describe, "cost": cmd_cost, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck,
    "synth-gen": cmd_synth_gen, "train-toy": cmd_train_toy, "eval": cmd_eval, "lr-dump": cmd_lr_dump,
    "detect-eval": cmd_detect_eval,
}


def _cap_threads():
    raw = os.environ.get("SFB_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SFB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"SFB_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    for item in args.overrides:
        if "=" not in item:
            parser.print_usage(sys.stderr)
            sys.stderr.write(f"slowfast: error: expected key=value override, got {item!r}\n")
            return EXIT_USAGE
    try:
        limiter = _cap_threads()
        try:
            COMMANDS[args.verb](args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ValidationFailure as exc:
        sys.stderr.write(f"slowfast: check failed: {exc}\n")
        return EXIT_INVALID
    except (ConfigError, ShapeError, DataError, ValueError, OSError) as exc:
        sys.stderr.write(f"slowfast: error: {exc}\n")
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
