"""Command-line entry point: ``synth-data``, ``train``, ``translate`` and ``evaluate``.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage or configuration errors.
Each subcommand prints its resolved configuration to stderr before doing any work.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .data import SyntheticTask, decode_png, encode_png, generate_synthetic, list_pngs
from .errors import ConfigError, ScganError
from .metrics import DEFAULT_EXTRACTOR_SEED, EXTRACTOR_KINDS, FeatureExtractor, evaluate_dirs
from .models import TranslationModel
from .trainer import LATEST, fit, format_config, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _echo_config(command: str, settings: dict) -> None:
    lines = [f"# {command}"] + [f"{k} = {v}" for k, v in settings.items()]
    print("\n".join(lines), file=sys.stderr)


def cmd_synth_data(args: argparse.Namespace) -> int:
    task = SyntheticTask(args.task, args.n_train, args.n_test, args.size, args.seed)
    _echo_config("synth-data", {"out": args.out, **vars(task), "overwrite": args.overwrite})
    generate_synthetic(task, args.out, overwrite=args.overwrite)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    print(f"# train ({cfg.model_name})\n" + format_config(cfg), file=sys.stderr, end="")
    state = fit(cfg)
    print(f"finished epoch {state.epoch}, step {state.global_step}", file=sys.stderr)
    return EXIT_OK


def resolve_checkpoint(path: str | Path) -> Path:
    """Accept either a checkpoint directory or a run directory holding ``latest/``."""
    path = Path(path)
    if (path / "manifest.txt").is_file():
        return path
    if (path / LATEST / "manifest.txt").is_file():
        return path / LATEST
    raise FileNotFoundError(f"no checkpoint manifest under {path}")


@torch.no_grad()
def translate_dir(model: TranslationModel, input_dir: str | Path, output_dir: str | Path, direction: str) -> int:
    """Translate every PNG in ``input_dir`` to a same-named PNG in ``output_dir``; returns the count."""
    net = model.gen_xy if direction == "AtoB" else model.gen_yx
    paths = list_pngs(input_dir)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for p in paths:
        img = decode_png(p)
        encode_png(net(img[None])[0], out / p.name)
    return len(paths)


def cmd_translate(args: argparse.Namespace) -> int:
    path = resolve_checkpoint(args.checkpoint)
    _echo_config("translate", {"checkpoint": path, "input_dir": args.input_dir,
                               "output_dir": args.output_dir, "direction": args.direction})
    model, _ = ckpt.load_model(path)
    model.eval()
    n = translate_dir(model, args.input_dir, args.output_dir, args.direction)
    print(f"translated {n} images", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    extractor = FeatureExtractor(args.extractor, args.seed, args.extractor_path)
    _echo_config("evaluate", {"real_dir": args.real_dir, "fake_dir": args.fake_dir, "extractor": extractor.kind,
                              "extractor_path": extractor.path, "seed": args.seed, "subset_size": args.subset_size,
                              "n_subsets": args.n_subsets, "size": args.size, "out": args.out})
    report = evaluate_dirs(
        args.real_dir, args.fake_dir, extractor,
        subset_size=args.subset_size, n_subsets=args.n_subsets, seed=args.seed, size=args.size,
    )
    text = json.dumps(report.as_dict(), indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scgan", description="Unpaired image translation with a self-supervised discriminator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic two-domain dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--task", default="channel-swap", choices=["channel-swap", "stripes"])
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train from a key = value config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate a folder of PNGs with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory or run directory")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--direction", default="AtoB", choices=["AtoB", "BtoA"])
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="FID and KID between two PNG folders")
    p.add_argument("--real-dir", required=True)
    p.add_argument("--fake-dir", required=True)
    p.add_argument("--extractor", default="random-conv", choices=EXTRACTOR_KINDS)
    p.add_argument("--extractor-path", default=None, help="TorchScript module for the external-file extractor")
    p.add_argument("--seed", type=int, default=DEFAULT_EXTRACTOR_SEED)
    p.add_argument("--subset-size", type=int, default=100)
    p.add_argument("--n-subsets", type=int, default=10)
    p.add_argument("--size", type=int, default=None, help="resize both folders to this size (default: first real image)")
    p.add_argument("--out", default=None, help="also write the JSON report here")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"scgan {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScganError, OSError, ValueError, RuntimeError) as exc:
        print(f"scgan {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
