#!/usr/bin/env python
"""Command-line utility for prompt-tuning experiments."""

import argparse
import logging.config
import os
import sys
from pathlib import Path


def build_parser() -> argparse.ArgumentParser:
    from prompt_vit_cli.commands import Command

    parser = argparse.ArgumentParser(prog="manage.py", description="Prompt tuning experiments on a frozen ViT")
    parser.add_argument("command", choices=[c.value for c in Command])
    parser.add_argument("--config", type=Path, help="YAML config or a previous run.json")
    parser.add_argument("--seed", type=int, help="root seed (overrides the config)")
    parser.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    parser.add_argument("--mode", choices=["LP", "FT", "pathotune"], help="tuning mode")
    for family in ("tvp", "ttp", "ivp"):
        parser.add_argument(f"--{family}", choices=["on", "off"], help=f"enable {family.upper()} in pathotune mode")
    parser.add_argument("--checkpoint", type=Path, help="checkpoint for the evaluate command")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    if args.mode is not None:
        overrides["train.mode"] = args.mode
    for family in ("tvp", "ttp", "ivp"):
        value = getattr(args, family)
        if value is not None:
            overrides[f"train.{family}"] = value == "on"
    return overrides


def main(argv: list[str] | None = None) -> int:
    """Run one experiment command and print its result envelope."""
    os.environ.setdefault("PROMPT_VIT_ENV", "development")

    import torch

    from prompt_vit_cli.commands import run_experiment
    from prompt_vit_cli.configs import config_from_dict, parse_config, validate
    from prompt_vit_commons.exceptions import custom_exception_handler
    from prompt_vit_commons.renderers import dumps
    from prompt_vit_lab import settings

    logging.config.dictConfig(settings.LOGGING)
    if settings.TORCH_NUM_THREADS > 0:
        torch.set_num_threads(settings.TORCH_NUM_THREADS)

    args = build_parser().parse_args(argv)
    overrides = overrides_from_args(args)
    try:
        if args.config is not None:
            cfg = parse_config(args.config, overrides=overrides)
        else:
            cfg = config_from_dict(overrides)
            validate(cfg)
    except Exception as exc:
        print(dumps(custom_exception_handler(exc)))
        return 2

    status, envelope = run_experiment(cfg, args.command, checkpoint=args.checkpoint)
    print(dumps(envelope))
    return status


if __name__ == "__main__":
    sys.exit(main())
