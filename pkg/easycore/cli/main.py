"""EasyCore — Command-line entry point.

    easycore <score|select|train|attack|analyze> --config <path> [--flag value]...

Exit codes: 0 success, 2 validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .. import __version__
from ..core.runlog import configure_logging, resolve_log_path
from .commands import dispatch, guarded
from .config import apply_overrides, load_config, validate

logger = logging.getLogger(__name__)

# flag attribute -> config key it overrides
FLAG_OVERRIDES = {
    "seed": "seed",
    "output": "output.dir",
    "method": "select.method",
    "fraction": "select.fraction",
    "epsilon": "attack.epsilon",
    "bins": "analysis.bins",
}


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or YAML config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. train.epochs=5 (repeatable)")
    common.add_argument("--seed", type=int, help="top-level seed")
    common.add_argument("--output", help="output directory (output.dir)")
    common.add_argument("--tag", help="suffix for artifact and manifest names")
    common.add_argument("--verify", action="store_true",
                        help="check the existing manifest against the current config and inputs instead of running")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    return common


def build_parser():
    parser = argparse.ArgumentParser(prog="easycore", description="AIGN hardness scoring and EasyCore coresets")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    score = sub.add_parser("score", parents=[common], help="train a scoring model and write AIGN scores")
    score.add_argument("--replay", metavar="DIR", help="score saved epoch checkpoints instead of training")

    select = sub.add_parser("select", parents=[common], help="select a coreset from a score file")
    select.add_argument("--scores", help="score CSV (default: <output>/scores.csv)")
    select.add_argument("--method", help="easycore | easycore_balanced | uniform | hardest")
    select.add_argument("--fraction", type=float, help="coreset fraction in (0, 1]")
    select.add_argument("--labels", help="CSV with id,label columns for the balanced method")

    train = sub.add_parser("train", parents=[common], help="train on the full set or a selection")
    train.add_argument("--selection", help="selection CSV (rank,id)")

    attack = sub.add_parser("attack", parents=[common], help="PGD-attack a checkpoint")
    attack.add_argument("--checkpoint", help="EZC1 checkpoint (default: <output>/model.ezc)")
    attack.add_argument("--epsilon", type=float, help="l-inf radius")

    analyze = sub.add_parser("analyze", parents=[common], help="run one analysis")
    analyze.add_argument("--kind", required=True,
                         help="boundary | kappa | curve | lemma1 | histogram | project2d | agreement")
    analyze.add_argument("--checkpoint", help="EZC1 checkpoint (default: <output>/model.ezc)")
    analyze.add_argument("--scores", help="score CSV")
    analyze.add_argument("--scores-b", dest="scores_b", help="second score CSV (agreement)")
    analyze.add_argument("--attack", help="attack CSV (curve; default: <output>/attack.csv)")
    analyze.add_argument("--bins", type=int, help="curve bins (analysis.bins)")

    return parser


def flag_assignments(args):
    """Command-line flags as 'key=value' overrides, applied after --set."""
    assignments = []
    for attr, key in FLAG_OVERRIDES.items():
        value = getattr(args, attr, None)
        if value is not None:
            assignments.append(f"{key}={json.dumps(value)}")
    return assignments


def resolve(args):
    raw = load_config(args.config)
    raw = apply_overrides(raw, list(args.overrides) + flag_assignments(args))
    return validate(raw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    configure_logging(level)

    resolved = {}

    def load():
        resolved["cfg"] = resolve(args)

    code = guarded("config", load)
    if code:
        return code
    cfg = resolved["cfg"]
    configure_logging(level, resolve_log_path(None, cfg.output.log_file, cfg.output.dir))
    return dispatch(args.command, cfg, args)


if __name__ == "__main__":
    sys.exit(main())
