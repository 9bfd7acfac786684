"""Command-line entry point: ``geopose <stage> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import pipeline
from .config import ConfigError, RunConfig, describe_keys, parse_override
from .tensor import set_debug
from .training import TrainingError

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_PROTOCOL, EXIT_TRAINING = 0, 1, 2, 3, 4


def configure_logging(env=None) -> str:
    """Apply ``GEOPOSE_LOG`` (error, info or debug; default info)."""
    env = os.environ if env is None else env
    name = env.get("GEOPOSE_LOG", "info").strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"GEOPOSE_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(asctime)s %(name)s %(levelname)s %(message)s", force=True)
    set_debug(name == "debug")
    return name


def _common(p: argparse.ArgumentParser, run_flag: bool = True) -> None:
    if run_flag:
        p.add_argument("--run", "--out", dest="run", required=True, metavar="DIR", help="run directory")
    p.add_argument("--config", metavar="FILE", help="key=value file layered over the run's config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable), e.g. --set unet.max_epochs=5")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="cap BLAS worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geopose", description="Geocentric pose ensemble on synthetic oblique scenes.")
    parser.add_argument("--list-keys", action="store_true", help="print every config key with its default and exit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("generate", help="render a synthetic dataset into <out>/raw")
    p.add_argument("--out", "--run", dest="run", required=True, metavar="DIR", help="run directory")
    p.add_argument("--n", type=int, help="number of scenes")
    p.add_argument("--size", type=int, help="scene side in pixels")
    _common(p, run_flag=False)

    for name, text in (
        ("clean", "apply per-city outlier rules"),
        ("train-unet", "train the elevation U-Net on NaN-free scenes"),
        ("interpolate", "fill NaN elevation pixels with U-Net predictions"),
        ("train-autoencoder", "train the RGB autoencoder"),
        ("evaluate", "score both models and write metrics.json"),
        ("mds", "embed autoencoder latents in 2-D and write mds.csv"),
    ):
        _common(sub.add_parser(name, help=text))

    for name, text in (
        ("train-scale-angle", "train the Scale-Angle model on interpolated scenes"),
        ("sensitivity", "train RGB-only / RGB-elevation / elevation-only variants"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--data", metavar="DIR", help="dataset directory (default: <run>/interp)")

    p = sub.add_parser("predict", help="predict elevation, scale and angle for PPM images")
    _common(p)
    p.add_argument("--input", nargs="+", required=True, metavar="PPM", help="input images")
    p.add_argument("--dest", metavar="DIR", help="output directory (default: <run>/predict)")
    return parser


def resolve_config(args, run: pipeline.Run) -> RunConfig:
    base = RunConfig() if args.command == "generate" else run.base_config()
    cfg = RunConfig.load(args.config, base) if args.config else base
    for text in args.overrides:
        cfg.set(*parse_override(text))
    for key in ("seed", "n", "size"):
        value = getattr(args, key, None)
        if value is not None:
            cfg.set(key, value)
    return cfg


def _dispatch(args) -> None:
    run = pipeline.Run(Path(args.run))
    cfg = resolve_config(args, run)
    cmd = args.command
    if cmd == "generate":
        pipeline.generate(run.root, cfg)
    elif cmd == "clean":
        pipeline.clean(run.root, cfg)
    elif cmd == "train-unet":
        pipeline.train_unet(run.root, cfg)
    elif cmd == "interpolate":
        pipeline.interpolate(run.root, cfg)
    elif cmd == "train-scale-angle":
        pipeline.train_scale_angle(run.root, cfg, args.data)
    elif cmd == "train-autoencoder":
        pipeline.train_autoencoder(run.root, cfg)
    elif cmd == "evaluate":
        metrics = pipeline.evaluate(run.root)
        print(f"cumulative val R2: {metrics['cumulative_r2']:.4f}")
    elif cmd == "sensitivity":
        result = pipeline.sensitivity(run.root, cfg, args.data)
        print(result.to_csv(), end="")
    elif cmd == "mds":
        pipeline.mds(run.root)
    elif cmd == "predict":
        for rid, scale, angle in pipeline.predict(run.root, args.input, args.dest):
            print(f"{rid}: scale {scale:.4f} px/dam, angle {angle:.4f} rad")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list_keys:
        print(describe_keys())
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        configure_logging()
        with threadpool_limits(limits=args.threads):
            _dispatch(args)
    except pipeline.MissingStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
