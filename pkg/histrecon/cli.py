# Copyright (C) 2024- The histrecon Developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.
"""The ``histrecon`` command line: ``simulate``, ``train``, ``reconstruct`` and
``evaluate``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from histrecon.corpus import write_corpus
from histrecon.exceptions import EXIT_OK, EXIT_USAGE, UsageError, error_to_exit_code
from histrecon.history import filter_frame_navigations, group_by_user, parse_history
from histrecon.pipeline import Config, Model, Pipeline, write_reconstruction
from histrecon.simulator import generate_corpus, load_profile
from histrecon.types import Method

log = logging.getLogger(__name__)

PROG = "histrecon"
SPLITS = ("test", "train", "all")


class ArgumentParser(argparse.ArgumentParser):
    """Raises :class:`UsageError` instead of exiting on bad arguments."""

    def error(self, message: str) -> Any:
        raise UsageError(message)


def _positive(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError("must be at least 1, got %d" % number)
    return number


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog=PROG, description="Reconstruct browsing activity from browser histories"
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity (default: INFO)",
    )
    parser.add_argument(
        "--processes", type=_positive, help="Worker threads (default: from config, 2)"
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    simulate = subparsers.add_parser("simulate", help="Write a simulated corpus")
    simulate.add_argument("--users", type=_positive, required=True, help="Number of users")
    simulate.add_argument("--seed", type=int, default=0, help="Master seed")
    simulate.add_argument("--profile", type=Path, help="Profile file (default: bundled)")
    simulate.add_argument("--days", type=_positive, help="Override the profile's days")
    simulate.add_argument("--out", type=Path, required=True, help="Corpus directory")
    simulate.set_defaults(handler=cmd_simulate)

    train = subparsers.add_parser("train", help="Train a model on a corpus' train split")
    train.add_argument("--data", type=Path, required=True, help="Corpus directory")
    train.add_argument("--out", type=Path, required=True, help="Model directory")
    train.add_argument("--seed", type=int, help="Seed (default: from config, 0)")
    train.add_argument("--productivity", type=Path, help="Productivity CSV")
    train.add_argument("--config", type=Path, help="Settings file")
    train.set_defaults(handler=cmd_train)

    reconstruct = subparsers.add_parser("reconstruct", help="Reconstruct activity from a history")
    reconstruct.add_argument("--model", type=Path, required=True, help="Model directory")
    reconstruct.add_argument("--history", type=Path, required=True, help="History export file")
    reconstruct.add_argument("--out", type=Path, required=True, help="Output directory")
    reconstruct.add_argument(
        "--method", choices=[m.value for m in Method], default=Method.forest.value
    )
    reconstruct.add_argument("--config", type=Path, help="Settings file")
    reconstruct.set_defaults(handler=cmd_reconstruct)

    evaluate = subparsers.add_parser("evaluate", help="Score a model on a corpus split")
    evaluate.add_argument("--model", type=Path, required=True, help="Model directory")
    evaluate.add_argument("--data", type=Path, required=True, help="Corpus directory")
    evaluate.add_argument("--out", type=Path, required=True, help="Report directory")
    evaluate.add_argument("--split", choices=SPLITS, default="test")
    evaluate.add_argument(
        "--method", choices=[m.value for m in Method], default=Method.forest.value
    )
    evaluate.add_argument("--config", type=Path, help="Settings file")
    evaluate.set_defaults(handler=cmd_evaluate)
    return parser


def _config(args: argparse.Namespace, trained: Optional[Config] = None, **overrides: Any) -> Config:
    """Settings of a command: those a model was trained with, then the settings
    file, then the command line options."""
    base = trained.to_json() if trained is not None else {}
    values: Dict[str, Any] = {k: v for k, v in overrides.items() if v is not None}
    if args.processes is not None:
        values["processes"] = args.processes
    path = getattr(args, "config", None)
    if path is not None:
        return Config.from_file(path, base, **values)
    return Config(**{**base, **values})


def cmd_simulate(args: argparse.Namespace) -> None:
    profile = load_profile(args.profile)
    if args.days is not None:
        profile = replace(profile, days=args.days)
    processes = args.processes if args.processes is not None else Config().processes
    corpus = generate_corpus(args.users, args.seed, profile, processes)
    write_corpus(corpus, args.out)


def cmd_train(args: argparse.Namespace) -> None:
    pipeline = Pipeline(_config(args, seed=args.seed))
    model = pipeline.train(args.data, args.productivity)
    model.save(args.out)


def cmd_reconstruct(args: argparse.Namespace) -> None:
    model = Model.load(args.model)
    pipeline = Pipeline(_config(args, model.config))
    with args.history.open("rb") as stream:
        visits = parse_history(stream)
    histories = {
        user_id: filter_frame_navigations(user_visits)
        for user_id, user_visits in group_by_user(visits).items()
    }
    grids = pipeline.reconstruct(model, histories, Method(args.method))
    write_reconstruction(grids, args.out)


def cmd_evaluate(args: argparse.Namespace) -> None:
    model = Model.load(args.model)
    pipeline = Pipeline(_config(args, model.config))
    evaluation = pipeline.evaluate(model, args.data, args.split, Method(args.method))
    evaluation.write(args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run a command and return its exit code: 0 on success, 1 for usage errors and
    2 for data errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print("%s: error: %s" % (PROG, e), file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "handler", None) is None:
        parser.print_help()
        return EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        args.handler(args)
    except Exception as e:
        code = error_to_exit_code(e)
        if code is None:
            raise
        log.error("%s failed: %s", args.command, e)
        return code
    return EXIT_OK
