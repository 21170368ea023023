"""
Command-line interface.
One subcommand per pipeline stage plus `pipeline` for the whole run.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import PoolConfig, load_config, runtime_settings
from .errors import ConfigError, TaxonomyError
from .log import setup_logging
from .pipeline import STAGE_ORDER, PipelineRunner

logger = logging.getLogger(__name__)


def _parse_pool(value: str) -> PoolConfig:
    tag, sep, run_dir = value.partition("=")
    if not sep or not tag or not run_dir:
        raise argparse.ArgumentTypeError(f"expected TAG=RUN_DIR, got {value!r}")
    return PoolConfig(tag=tag, run_dir=Path(run_dir).resolve())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=Path, help="TOML configuration file")
    common.add_argument("--output", "-o", type=Path, help="Output directory (overrides output_dir)")
    common.add_argument("--threads", "-j", type=int, help="Worker threads (0 = all cores)")
    common.add_argument("--seed", type=int, help="Base random seed for clustering")
    common.add_argument("--verbose", "-v", action="store_true", help="JSON-lines logging at DEBUG level")

    parser = argparse.ArgumentParser(
        prog="urban-taxonomy",
        description="Numerical taxonomy of urban form from building footprints and streets",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGE_ORDER:
        p = sub.add_parser(stage, parents=[common], help=f"Run the {stage} stage")
        if stage == "cluster":
            p.add_argument("--k", type=int, help="Force the number of clusters instead of the BIC elbow")
        if stage == "taxonomy":
            p.add_argument("--pool", type=_parse_pool, action="append", default=[], metavar="TAG=RUN_DIR",
                           help="Pool another run's types into a joint taxonomy (repeatable)")
    p = sub.add_parser("pipeline", parents=[common], help="Run every stage in order")
    p.add_argument("--k", type=int, help="Force the number of clusters instead of the BIC elbow")
    p.add_argument("--pool", type=_parse_pool, action="append", default=[], metavar="TAG=RUN_DIR",
                   help="Pool another run's types into a joint taxonomy (repeatable)")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "output_dir": str(args.output.resolve()) if args.output else None,
        "threads": args.threads,
        "clustering.seed": args.seed,
        "clustering.k": getattr(args, "k", None),
    }


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point.

    Returns:
        Exit code: 0 ok, 2 config error, 3 data error, 4 numerical failure, 1 anything else
    """
    args = build_parser().parse_args(argv)
    try:
        env = runtime_settings()
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    setup_logging(verbose=args.verbose, level=env.log_level)

    try:
        cfg = load_config(args.config, _overrides(args))
        cfg.taxonomy.pools.extend(getattr(args, "pool", []))
        runner = PipelineRunner(cfg)
        if args.command == "pipeline":
            runner.run_all()
        else:
            runner.run_stage(args.command)
    except TaxonomyError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure")
        print(f"error: {e}", file=sys.stderr)
        return 1

    for record in runner.get_stage_history():
        for note in record.notes:
            print(f"[{record.stage}] {note}")
    print(f"Artifacts written to {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
