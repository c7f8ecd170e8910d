"""``scene`` command line: train, enhance, eval, bdrate, gen-fixtures, probe.

Exit status is 0 on success, 1 on usage errors (bad flags, bad config keys)
and 2 on runtime failures (I/O, encoder, numerical problems).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import config as cfgio
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, SceneError
from .eval import DEFAULT_LADDER, bd_rate, compare_pipelines, read_rd_csv
from .fixtures import synthetic_clip, synthetic_frame
from .harness import Encoder, VideoClip, load_dataset, read_png_sequence, read_y4m, write_png_sequence, write_y4m
from .inference import enhance
from .model import ModelConfig, init_params, param_count
from .semantics import make_provider
from .trainer import TrainConfig, train

log = logging.getLogger("scene")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _epilog() -> str:
    return "config keys (set with --set key=value, dotted for sections):\n" + "\n".join(cfgio.describe_schema())


def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config file (missing keys take defaults)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="scene", description=__doc__.splitlines()[0], epilog=_epilog(), formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a pre-processor", epilog=_epilog(), formatter_class=fmt)
    _common(p, out_required=True)
    p.add_argument("--dataset", metavar="DIR", help="clip directory (overrides config 'dataset')")
    p.add_argument("--resume", metavar="DIR", help="checkpoint directory holding final.scn and final.state.npz")

    p = sub.add_parser("enhance", help="run a checkpoint over a clip", epilog=_epilog(), formatter_class=fmt)
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="Y4M file or PNG-sequence directory")
    p.add_argument("--output", required=True, help="Y4M file or directory for PNG frames")

    p = sub.add_parser("eval", help="anchor vs enhanced RD curves and BD-rate", epilog=_epilog(),
                       formatter_class=fmt)
    _common(p, out_required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="Y4M file or PNG-sequence directory")
    p.add_argument("--codec", default="h264", choices=["h264", "h265", "av1"])
    p.add_argument("--ladder", default=",".join(map(str, DEFAULT_LADDER)), help="comma-separated QPs")
    p.add_argument("--metric", default="ms_ssim", help="'ms_ssim' or 'external:DIR'")
    p.add_argument("--method", default="cubic", choices=["cubic", "pchip"])
    p.add_argument("--ffmpeg", help="path to the ffmpeg binary")
    p.add_argument("--parallel", type=int, default=1)

    p = sub.add_parser("bdrate", help="BD-rate between two RD CSV files")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--anchor-prefix", help="only rows whose label starts with this")
    p.add_argument("--test-prefix")
    p.add_argument("--method", default="cubic", choices=["cubic", "pchip"])

    p = sub.add_parser("gen-fixtures", help="write synthetic clips, configs and oracles")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips", type=int, default=4)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=64)

    p = sub.add_parser("probe", help="check the external encoder")
    p.add_argument("--ffmpeg", help="path to the ffmpeg binary")
    return parser


def _load_config(args) -> TrainConfig:
    overrides = list(args.overrides)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return cfgio.load_config(args.config, overrides)


def _read_clip(path) -> VideoClip:
    path = Path(path)
    return read_png_sequence(path) if path.is_dir() else read_y4m(path)


def _provider(config: TrainConfig):
    return make_provider(config.provider.kind, config.model.embed_dim, config.provider.seed, config.provider.path)


def cmd_train(args) -> int:
    config = _load_config(args)
    dataset_dir = args.dataset or config.dataset
    if dataset_dir is None:
        raise UsageError("train needs --dataset or a 'dataset' config key")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgio.dump_config(config, out / "config.json")
    ds = load_dataset(dataset_dir)
    resume = None
    if args.resume:
        r = Path(args.resume)
        resume = (r / "final.scn", r / "final.state.npz")
    result = train(ds.train, config, resume=resume, out_dir=out)
    last = result.history[-1].total if result.history else float("nan")
    print(f"trained {result.state.step} steps, final total {last:.6f}, checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    config = _load_config(args)
    params = load_checkpoint(args.checkpoint)
    if params.config != config.model:
        # the checkpoint is authoritative for architecture
        config = dataclasses.replace(config, model=params.config)
    provider = _provider(config)
    clip = _read_clip(args.input)
    frames = np.concatenate([enhance(clip.frame(i), params, provider, indices=[i]) for i in range(len(clip))])
    result = VideoClip(frames, clip.frame_rate, name=f"{clip.name}-enhanced")
    out = Path(args.output)
    if out.suffix.lower() == ".y4m":
        write_y4m(result, out)
    else:
        write_png_sequence(result, out)
    print(f"wrote {len(result)} frames to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    try:
        ladder = [int(q) for q in args.ladder.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --ladder {args.ladder!r}") from exc
    params = load_checkpoint(args.checkpoint)
    config = dataclasses.replace(config, model=params.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = compare_pipelines(
        _read_clip(args.input),
        params,
        ladder=ladder,
        codec=args.codec,
        encoder=Encoder(args.ffmpeg),
        provider=_provider(config),
        metric=args.metric,
        report_path=out / "rd.csv",
        workdir=out,
        parallel=args.parallel,
        method=args.method,
    )
    print(f"BD-rate ({args.codec}, {args.method}): {report.bd}")
    return EXIT_OK


def cmd_bdrate(args) -> int:
    anchor = read_rd_csv(args.anchor, args.anchor_prefix)
    test = read_rd_csv(args.test, args.test_prefix)
    print(bd_rate(anchor, test, args.method))
    return EXIT_OK


def cmd_gen_fixtures(args) -> int:
    out = Path(args.out)
    clips_dir = out / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)
    size = args.size
    if size % 16:
        raise UsageError("--size must be divisible by 16")
    for i in range(args.clips):
        clip = VideoClip(synthetic_clip(args.frames, size, size, seed=args.seed + i), Fraction(30, 1), f"synth{i:02d}")
        write_y4m(clip, clips_dir / f"synth{i:02d}.y4m")
    eval_clip = VideoClip(synthetic_clip(8, size, size, seed=args.seed + 100), Fraction(30, 1), "eval")
    write_y4m(eval_clip, out / "eval.y4m")

    toy = TrainConfig.toy(dataset=str(clips_dir))
    cfgio.dump_config(TrainConfig(), out / "default.json")
    cfgio.dump_config(toy, out / "toy.json")
    save_checkpoint(init_params(toy.model, seed=args.seed), out / "identity.scn")

    x = synthetic_frame(64, 64, seed=args.seed)
    y = np.clip(x + np.random.default_rng(args.seed + 1).normal(0, 0.05, x.shape), 0, 1)
    np.savez(out / "ms_ssim_pair.npz", x=x, y=y)
    oracles = {
        "param_count_default": param_count(ModelConfig()),
        "param_count_toy": param_count(toy.model),
        "loss_total_unit_components": 0.01 + 1 + 5 + 1,
        "bd_rate_identity": 0.0,
        "bd_rate_half_rate": -50.0,
        "dct_dc_constant_block_factor": 8.0,
    }
    (out / "oracles.json").write_text(json.dumps(oracles, indent=2) + "\n")
    print(f"wrote fixtures to {out}")
    return EXIT_OK


def cmd_probe(args) -> int:
    enc = Encoder(args.ffmpeg)
    support = enc.probe()
    print(f"ffmpeg: {enc.ffmpeg}")
    print(enc.version)
    for codec, ok in support.items():
        print(f"  {codec}: {'yes' if ok else 'no'}")
    return EXIT_OK if any(support.values()) else EXIT_RUNTIME


COMMANDS = {
    "train": cmd_train,
    "enhance": cmd_enhance,
    "eval": cmd_eval,
    "bdrate": cmd_bdrate,
    "gen-fixtures": cmd_gen_fixtures,
    "probe": cmd_probe,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"scene {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SceneError, OSError, ValueError, ArithmeticError) as exc:
        print(f"scene {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
