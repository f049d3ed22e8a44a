"""Command-line surface: train / infer / eval / bench / selftest.

Usage errors exit 2 (argparse convention); runtime failures print a
diagnostic to stderr and exit 1.  Inference accepts any image size by
reflect-padding up to the next multiple of 32 and cropping the output
back; inputs already divisible by 32 bypass padding entirely, so the
padded path is bitwise identical to a direct forward there.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import formats
from .loss import LossNetwork
from .metrics import benchmark_latency, evaluate_dataset
from .model import ModelConfig, build_unet
from .tensor import Tensor, no_grad
from .training import NormalizationStats, compressed_schedule, fit


def pad_to_multiple(image, multiple=32):
    """Reflect-pad (C, H, W) on the bottom/right up to a multiple.

    Reflection can only mirror size-1 strips per pass on tiny images,
    so padding is applied in rounds; a 1-pixel dimension falls back to
    edge replication.  Returns (padded, (H, W)) for cropping back.
    """
    c, h, w = image.shape
    need_h = (-h) % multiple
    need_w = (-w) % multiple
    if need_h == 0 and need_w == 0:
        return image, (h, w)
    out = image
    while need_h > 0 or need_w > 0:
        dh = min(need_h, out.shape[1] - 1)
        dw = min(need_w, out.shape[2] - 1)
        if need_h > 0 and dh == 0:
            out = np.pad(out, ((0, 0), (0, 1), (0, 0)), mode="edge")
            need_h -= 1
            continue
        if need_w > 0 and dw == 0:
            out = np.pad(out, ((0, 0), (0, 0), (0, 1)), mode="edge")
            need_w -= 1
            continue
        out = np.pad(out, ((0, 0), (0, dh), (0, dw)), mode="reflect")
        need_h -= dh
        need_w -= dw
    return out, (h, w)


def infer_image(model, rgb):
    """Forward one (3, H, W) image of any size; returns (31, H, W)."""
    padded, (h, w) = pad_to_multiple(np.asarray(rgb, dtype=np.float32))
    with no_grad():
        out = model(Tensor(padded[None])).data[0]
    return out[:, :h, :w]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mxrunet",
        description="RGB-to-hyperspectral reconstruction: train, infer, "
                    "evaluate, benchmark, selftest.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--depth", type=int, choices=(18, 34, 50), default=None,
                        help="encoder depth")
    common.add_argument("--width-mult", type=float, default=None,
                        help="channel width multiplier (1.0 = full scale)")
    common.add_argument("--seed", type=int, default=None, help="rng seed")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread count")
    common.add_argument("--out", type=str, default=None, help="output directory")

    p_train = sub.add_parser("train", parents=[common],
                             help="fit a model on paired rgb/cube data")
    p_train.add_argument("--config", type=str, default=None,
                         help="run configuration JSON")
    p_train.add_argument("--data", type=str, default=None,
                         help="training root (rgb/ + cubes/)")
    p_train.add_argument("--val", type=str, default=None, help="validation root")
    p_train.add_argument("--track", choices=("clean", "real"), default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.add_argument("--loss-net", type=str, default=None,
                         help="loss-network checkpoint (default: seeded random)")

    p_infer = sub.add_parser("infer", parents=[common],
                             help="reconstruct cubes from rgb images")
    p_infer.add_argument("inputs", nargs="+", help="P6 PPM images")
    p_infer.add_argument("--checkpoint", type=str, default=None)

    p_eval = sub.add_parser("eval", parents=[common],
                            help="MRAE/RMSE over a paired dataset")
    p_eval.add_argument("--data", type=str, required=True)
    p_eval.add_argument("--checkpoint", type=str, default=None)
    p_eval.add_argument("--track", choices=("clean", "real"), default=None)
    p_eval.add_argument("--clamp", action="store_true",
                        help="clamp outputs to [0,1] (unit-range datasets)")
    p_eval.add_argument("--skip-errors", action="store_true",
                        help="skip unreadable pairs instead of aborting")

    p_bench = sub.add_parser("bench", parents=[common],
                             help="forward-pass latency benchmark")
    p_bench.add_argument("--size", type=int, default=256, help="input H=W")
    p_bench.add_argument("--runs", type=int, default=10)
    p_bench.add_argument("--warmup", type=int, default=3)
    p_bench.add_argument("--checkpoint", type=str, default=None)

    p_self = sub.add_parser("selftest", help="run the built-in check suites")
    p_self.add_argument("--only", type=str, default=None,
                        help="comma-separated subset of check names")
    p_self.add_argument("--list", action="store_true", help="list check names")
    return parser


def _fresh_model(args, default_depth=18):
    config = ModelConfig(encoder_depth=args.depth or default_depth,
                         width_multiplier=args.width_mult or 1.0)
    return build_unet(config, seed=args.seed or 0)


def _load_or_build(args):
    if getattr(args, "checkpoint", None):
        model, _ = formats.load_checkpoint(args.checkpoint)
        return model
    return _fresh_model(args)


def _cmd_train(args):
    if args.config:
        config = formats.RunConfig.from_json(args.config)
    else:
        config = formats.RunConfig()
    overrides = {"data": "train_root", "val": "val_root", "track": "track",
                 "epochs": "epochs", "batch_size": "batch_size", "seed": "seed",
                 "threads": "threads", "out": "out_dir"}
    for arg_name, field_name in overrides.items():
        value = getattr(args, arg_name)
        if value is not None:
            setattr(config, field_name, value)
    if args.depth is not None:
        config.model.encoder_depth = args.depth
    if args.width_mult is not None:
        config.model.width_multiplier = args.width_mult
    config.validate()
    if config.train_root is None:
        raise formats.ConfigError("train needs --data (or train_root in --config)")

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.to_json(out_dir / "config.json")

    pair_paths = formats.pair_dataset(config.train_root)
    pairs = [(formats.read_rgb(r), formats.read_cube(c)) for r, c in pair_paths]
    val_pairs = None
    if config.val_root:
        val_pairs = [(formats.read_rgb(r), formats.read_cube(c))
                     for r, c in formats.pair_dataset(config.val_root)]
    stats = NormalizationStats.from_pairs(pairs)

    model = build_unet(config.model, seed=config.seed)
    if args.loss_net:
        loss_net, _ = formats.load_checkpoint(args.loss_net)
        if not isinstance(loss_net, LossNetwork):
            raise formats.ConfigError(
                f"{args.loss_net} is not a loss-network checkpoint")
    else:
        loss_net = LossNetwork(in_channels=config.model.out_channels,
                               seed=config.seed)
    schedule = config.schedule or compressed_schedule(config.epochs)

    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=config.threads):
        log = fit(model, pairs, loss_net, config.epochs, schedule=schedule,
                  weights=config.loss, batch_size=config.batch_size, stats=stats,
                  seed=config.seed, log_path=out_dir / "training_log.jsonl",
                  val_pairs=val_pairs, checkpoint_path=out_dir / "model.ckpt")
    epochs_done = sum(1 for rec in log if rec.get("kind") == "epoch")
    print(f"trained {epochs_done} epochs on {len(pairs)} pairs; "
          f"outputs in {out_dir}")
    return 0


def _cmd_infer(args):
    model = _load_or_build(args)
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=args.threads or 1):
        for source in args.inputs:
            source = Path(source)
            rgb = formats.read_rgb(source)
            cube = infer_image(model, rgb)
            target = (out_dir or source.parent) / (source.stem + ".hsc")
            formats.write_cube(cube, target)
            print(f"{source} -> {target}  cube {cube.shape}")
    return 0


def _cmd_eval(args):
    model = _load_or_build(args)
    pairs = formats.pair_dataset(args.data)
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=args.threads or 1):
        report = evaluate_dataset(model, pairs, clamp_to_unit=args.clamp,
                                  skip_errors=args.skip_errors)
    for line in report.lines():
        print(line)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "metrics.jsonl", "w") as f:
            for record in report.records():
                f.write(json.dumps(record) + "\n")
        print(f"records written to {out_dir / 'metrics.jsonl'}")
    return 0


def _cmd_bench(args):
    depth = args.depth or 50
    model = _load_or_build(args) if args.checkpoint else _fresh_model(args, depth)
    label = f"depth-{model.config.encoder_depth}"
    report = benchmark_latency(model, args.size, warmup=args.warmup,
                               runs=args.runs, threads=args.threads or 1,
                               model_id=label, seed=args.seed or 0)
    for line in report.lines():
        print(line)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "latency.json", "w") as f:
            json.dump(report.record(), f, indent=2)
        print(f"record written to {out_dir / 'latency.json'}")
    return 0


def _cmd_selftest(args):
    from . import selftest
    if args.list:
        for name in selftest.check_names():
            print(name)
        return 0
    only = args.only.split(",") if args.only else None
    return selftest.run_checks(only=only)


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {"train": _cmd_train, "infer": _cmd_infer, "eval": _cmd_eval,
                "bench": _cmd_bench, "selftest": _cmd_selftest}
    try:
        return handlers[args.command](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
