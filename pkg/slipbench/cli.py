import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import uvicorn
from pydantic import ValidationError

from slipbench.harness import cmd_collect, cmd_demo, cmd_report, cmd_stabilize, cmd_train_eval
from slipbench.models import ConfigError, MethodEnum, SlipbenchError
from slipbench.utils import get_jobs, get_poetry_version, init_sentry, load_config, setup_logging

logger = logging.getLogger(__name__)

COMMANDS = {
    "collect": cmd_collect,
    "train-eval": cmd_train_eval,
    "stabilize": cmd_stabilize,
    "demo": cmd_demo,
}


def parse_methods(value: str) -> list[str]:
    methods = [m.strip() for m in value.split(",") if m.strip()]
    valid = [str(m) for m in MethodEnum]
    unknown = [m for m in methods if m not in valid]
    if unknown or not methods:
        raise argparse.ArgumentTypeError(f"methods must be a comma separated subset of {valid}")
    return methods


class SlipbenchArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as the same JSON payload as runtime errors"""

    def error(self, message: str):
        payload = {"error": "UsageError", "message": message, "details": {"prog": self.prog}}
        self.exit(2, json.dumps(payload) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = SlipbenchArgumentParser(
        prog="slipbench",
        description="Vibration injection incipient slip workbench",
    )
    parser.add_argument("--version", action="version", version=get_poetry_version())
    parser.add_argument("--log-level", default=None, help="Overrides SLIPBENCH_LOG_LEVEL")
    subparsers = parser.add_subparsers(
        dest="command", required=True, parser_class=SlipbenchArgumentParser
    )

    for name, help_text in [
        ("collect", "simulate trials and write the per-method datasets"),
        ("train-eval", "grid search, train and evaluate a slip model per method"),
        ("stabilize", "run the stick ratio stabilization trials"),
        ("report", "write plot-ready series and the text summary of a run"),
        ("demo", "run collect, train-eval, stabilize and report"),
    ]:
        sub = subparsers.add_parser(name, help=help_text)
        source = sub.add_mutually_exclusive_group()
        source.add_argument("--config", type=Path, help="TOML experiment configuration")
        source.add_argument("--profile", default=None, help="bundled profile: demo or full")
        sub.add_argument("--seed", type=int, help="master seed")
        sub.add_argument("--methods", type=parse_methods, help="comma separated methods")
        sub.add_argument("--out", type=Path, help="run directory")
        sub.add_argument("--jobs", type=int, help="worker processes (SLIPBENCH_JOBS)")

    serve = subparsers.add_parser("serve", help="serve the read-only results API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--log-config", default="log_config.yaml")
    return parser


def resolve_config(args: argparse.Namespace):
    source = args.config or args.profile or ("demo" if args.command == "demo" else "full")
    return load_config(
        source, {"seed": args.seed, "methods": args.methods, "output_dir": args.out}
    )


def run(args: argparse.Namespace) -> None:
    if args.command == "serve":
        log_config = args.log_config if Path(args.log_config).is_file() else None
        uvicorn.run("slipbench.app:app", host=args.host, port=args.port, log_config=log_config)
        return

    if args.command == "report" and args.config is None and args.profile is None and args.out:
        cmd_report(args.out)
        return

    config = resolve_config(args)
    if args.command == "report":
        cmd_report(Path(config.output_dir))
        return
    jobs = args.jobs if args.jobs is not None else get_jobs()
    if jobs < 1:
        raise ConfigError(f"--jobs must be at least 1, got {jobs}")
    COMMANDS[args.command](config, jobs)


def error_payload(error: Exception) -> dict:
    details = error.details() if isinstance(error, SlipbenchError) else {}
    if isinstance(error, ValidationError):
        details = {"errors": error.errors(include_url=False)}
    return {"error": type(error).__name__, "message": str(error), "details": details}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    init_sentry()
    try:
        run(args)
    except (SlipbenchError, ValidationError, OSError) as e:
        print(json.dumps(error_payload(e), default=str), file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception("Unexpected error")
        print(json.dumps(error_payload(e), default=str), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
