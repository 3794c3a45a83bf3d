"""Command-line entry point: ``merge <subcommand> [options]``.

Exit codes: 0 success, 1 stage failure, 2 usage or configuration error
(including missing input files and missing or stale upstream artifacts).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from citemerge import pipeline, synthgen
from citemerge.ingest import ConfigError

EXIT_OK, EXIT_STAGE, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("citemerge")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="merge", description="Merge two citation datasets into one graph.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def pipeline_cmd(name: str, help: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", required=True, type=Path, help="pipeline TOML")
        sp.add_argument("--workers", type=int, default=None, help="worker processes (default from config)")
        sp.add_argument("--out", type=Path, default=None, help="output directory (default from config)")
        return sp

    pipeline_cmd("extract", "extract matching attributes from both inputs")
    pipeline_cmd("slice", "partition extracted records into year slices")
    m = pipeline_cmd("match", "run the record-matching queries")
    m.add_argument("--stage", default=None, help="run only this query id on top of earlier deltas")
    pipeline_cmd("merge", "filter, assign MUIDs, and resolve references")
    pipeline_cmd("graph", "export the citation edge list")
    pipeline_cmd("report", "compute the merge report")
    pipeline_cmd("run", "all stages in order")
    ev = pipeline_cmd("evaluate", "score outputs against synthetic ground truth")
    ev.add_argument("--truth", type=Path, default=None, help="truth.json written by `generate`")

    g = sub.add_parser("generate", help="write a seeded synthetic dataset pair")
    g.add_argument("--config", type=Path, default=None, help="generator TOML ([generate] table or top level)")
    g.add_argument("--out", type=Path, required=True, help="directory for the generated files")
    g.add_argument("--seed", type=int, default=None, help="override the configured seed")
    return p


def _generate(args: argparse.Namespace) -> int:
    cfg = synthgen.load_gen_config(args.config) if args.config else synthgen.GenConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    paths = synthgen.generate(cfg, args.out)
    log.info("stage=generate articles=%d d1=%d d2=%d out=%s",
             cfg.article_count, cfg.n1, cfg.n2, args.out)
    for name, path in paths.items():
        print(f"{name}\t{path}")
    return EXIT_OK


def _configure_logging(verbose: bool) -> None:
    # one handler bound to the current stderr, replaced on every call
    for h in list(log.handlers):
        if getattr(h, "_citemerge", False):
            log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    handler._citemerge = True
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    log.propagate = False


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    _configure_logging(args.verbose)
    cmd = args.command
    try:
        if cmd == "generate":
            return _generate(args)
        cfg = pipeline.load_config(args.config, workers=args.workers, out=args.out)
        if cmd == "run":
            pipeline.run_pipeline(cfg)
        elif cmd == "match":
            pipeline.stage_match(cfg, only=args.stage)
        elif cmd == "evaluate":
            pipeline.stage_evaluate(cfg, args.truth)
        else:
            pipeline.STAGE_FUNCS[cmd](cfg)
    except (ConfigError, FileNotFoundError, pipeline.StaleArtifact) as exc:
        print(f"merge {cmd}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # any other failure inside a stage
        print(f"merge {cmd}: stage failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
