"""Command line entry point: ``stephrl <command> --config run.cfg [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
4 failed direction check under ``ablate --assert``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from . import pipeline
from .config import RunConfig
from .exceptions import ConfigError, MissingArtifact, MissingCheckpoint

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_ASSERT = 0, 2, 3, 4


def _overrides(pairs: Sequence[str]) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(args) -> RunConfig:
    overrides = _overrides(args.set)
    if args.mode:
        overrides["mode"] = args.mode
    if args.config:
        try:
            return RunConfig.from_file(args.config, overrides)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
    return RunConfig.from_mapping(overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stephrl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--workdir", default="run", help="artifact directory (default: ./run)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key; repeatable")
        p.add_argument("--mode", choices=("full", "nolp", "nohier"), help="variant to build")
        return p

    command("gen-data", "expert sweep and BC/RL datasets")
    command("train-bc", "behavior cloning from the generated datasets")
    command("collect", "roll out the BC policy to gather offline data")
    p = command("train-rl", "offline RL from the BC checkpoint")
    p.add_argument("--tag", default="", help="checkpoint suffix, e.g. beta=0.5 for sweeps")
    p = command("eval", "success rate and step counts on one split")
    p.add_argument("--checkpoint", default="rl", help="bc, rl, expert or a path")
    p.add_argument("--split", default="Unseen", choices=("Seen", "Unseen"))
    p.add_argument("--summarizer", default="learned", choices=("learned", "oracle"))
    p = command("tokens", "per-step token counts for three agent paradigms")
    p.add_argument("--checkpoint", default="expert", help="expert, bc, rl or a path")
    p.add_argument("--episodes", type=int, default=50)
    p = command("ablate", "variant comparison and sweep tables on the unseen split")
    p.add_argument("--assert", dest="check", action="store_true",
                   help="exit 4 if Full loses to any ablation")
    return parser


def run(args) -> int:
    cfg = load_config(args)
    wd = args.workdir
    cmd = args.command
    if cmd == "gen-data":
        manifest = pipeline.gen_data(cfg, wd)
        print(json.dumps(manifest["counts"], sort_keys=True))
    elif cmd == "train-bc":
        print(pipeline.train_bc_stage(cfg, wd))
    elif cmd == "collect":
        manifest = pipeline.collect_stage(cfg, wd)
        print(json.dumps(manifest["counts"], sort_keys=True))
    elif cmd == "train-rl":
        print(pipeline.train_rl_stage(cfg, wd, args.tag))
    elif cmd == "eval":
        summary, path = pipeline.eval_stage(cfg, wd, args.checkpoint, args.split,
                                            args.summarizer)
        sys.stdout.write(path.read_text())
    elif cmd == "tokens":
        print(pipeline.tokens_stage(cfg, wd, args.episodes, args.checkpoint))
    elif cmd == "ablate":
        report, path = pipeline.ablate_stage(cfg, wd)
        sys.stdout.write(path.read_text())
        if args.check and not all(report["directions"].values()):
            return EXIT_ASSERT
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, MissingCheckpoint) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
