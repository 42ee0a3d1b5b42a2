"""Spectra Filter command-line entry point."""

import argparse
import logging
import os
import sys
from dataclasses import replace

from rich.console import Console
from rich.markup import escape

from src.controllers.pipeline import run_pipeline, write_outputs
from src.models.config import defaults_help, load_config
from src.utils.cache import CacheHandle
from src.utils.constants import EXIT_CACHE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK
from src.utils.errors import SpectraFilterError
from src.utils.log import configure_logging
from src.views.dashboard import show_dashboard, show_run_summary
from src.views.tables import show_cache, show_results

console = Console(stderr=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spectra-filter",
        description="Energy-filter ensembles of spin chains with tensor networks.",
        epilog="configuration keys and defaults:\n" + defaults_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    verbosity.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="execute the mode named in a configuration file")
    run.add_argument("config", help="INI configuration file")
    run.add_argument("--out", help="output directory (overrides [run] output)")
    run.add_argument("--seed", type=int, help="RNG seed (overrides [run] rng_seed)")
    run.add_argument("--workers", type=int, help="worker threads (overrides [run] workers)")
    run.add_argument("--db", help="result store path (default: <out>/results.db)")

    check = commands.add_parser("ed-check", help="run the exact-diagonalisation oracle suite")
    check.add_argument("config", help="INI configuration file")
    check.add_argument("--out", help="output directory")
    check.add_argument("--db", help="result store path")

    cache = commands.add_parser("cache", help="inspect or clear an operator cache")
    cache.add_argument("action", choices=["ls", "rm"])
    cache.add_argument("directory", help="cache directory")
    cache.add_argument("--spec-hash", help="remove only this Hamiltonian's family")

    history = commands.add_parser("history", help="show recorded runs")
    history.add_argument("--db", default=os.path.join("runs", "results.db"), help="result store path")
    history.add_argument("--limit", type=int, default=10)
    return parser


def _run(args, force_mode=None):
    cfg = load_config(args.config).with_overrides(
        output=args.out, rng_seed=getattr(args, "seed", None), workers=getattr(args, "workers", None)
    )
    if force_mode and cfg.mode != force_mode:
        cfg = replace(cfg, run=replace(cfg.run, mode=force_mode))
    record = run_pipeline(cfg)
    paths = write_outputs(record, cfg.run.output, args.db)
    show_results(record)
    show_run_summary(record, paths)
    return EXIT_OK if record.passed else EXIT_NUMERICAL


def _cache(args):
    handle = CacheHandle(args.directory)
    if args.action == "ls":
        show_cache(handle.entries(), args.directory)
    else:
        removed = handle.remove(args.spec_hash)
        console.print(f"[yellow]Removed {removed} cached families[/yellow]")
    return EXIT_OK


def main(argv=None):
    """Main application entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    configure_logging(level)
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "ed-check":
            return _run(args, force_mode="ed-check")
        if args.command == "cache":
            return _cache(args)
        show_dashboard(args.db, args.limit)
        return EXIT_OK
    except SpectraFilterError as error:
        console.print(f"[red]Error: {escape(str(error))}[/red]")
        return error.exit_code
    except OSError as error:
        console.print(f"[red]Error: {escape(str(error))}[/red]")
        return EXIT_CONFIG if isinstance(error, FileNotFoundError) else EXIT_CACHE
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted[/yellow]")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
