"""Command-line entry point: one subcommand per pipeline stage, plus ``all``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .config import PipelineConfig, load_config
from .errors import ConfigInvalid, MissingUpstream, WebsynthError
from .fixture import write_fixture
from .pipeline import STAGES, Pipeline

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_UPSTREAM = 3

# flag -> (section, field); section None means a top-level field
_OVERRIDES = {
    "corpus": ("corpus", "path"),
    "corpus_format": ("corpus", "format"),
    "k": ("sampler", "k"),
    "seed_policy": ("sampler", "seed_policy"),
    "min_outdegree": ("sampler", "min_outdegree"),
    "num_seeds": ("sampler", "num_seeds"),
    "min_hops": ("qa", "min_hops"),
    "obfuscation_ratio": ("qa", "obfuscation_ratio"),
    "attempts": ("verify", "attempts"),
    "judge_mode": ("verify", "judge_mode"),
    "max_tool_calls": ("trajectory", "max_tool_calls"),
    "context_budget": ("trajectory", "context_budget"),
    "summary_budget": ("trajectory", "summary_budget"),
    "obs_cap": ("trajectory", "obs_cap"),
    "scheme": ("export", "scheme"),
    "output_dir": (None, "output_dir"),
    "rng_seed": (None, "rng_seed"),
    "parallel": (None, "parallel"),
}


def apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    for flag, (section, name) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            cfg = replace(cfg, **{name: value})
        else:
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})
    return cfg


def _stage_parser(sub, name: str, help_text: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", required=True, help="pipeline YAML or JSON file")
    p.add_argument("--force", action="store_true", help="discard this stage's outputs and redo every item")
    p.add_argument("--parallel", type=int, help="worker threads for model calls")
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--output-dir")
    g = p.add_argument_group("overrides")
    g.add_argument("--corpus")
    g.add_argument("--corpus-format", choices=("jsonl", "jsonl.gz"))
    g.add_argument("--k", type=int)
    g.add_argument("--seed-policy", choices=("uniform", "min-outdegree"))
    g.add_argument("--min-outdegree", type=int)
    g.add_argument("--num-seeds", type=int)
    g.add_argument("--min-hops", type=int)
    g.add_argument("--obfuscation-ratio", type=float)
    g.add_argument("--attempts", type=int)
    g.add_argument("--judge-mode", choices=("normalized-exact", "judge"))
    g.add_argument("--max-tool-calls", type=int)
    g.add_argument("--context-budget", type=int)
    g.add_argument("--summary-budget", type=int)
    g.add_argument("--obs-cap", type=int)
    g.add_argument("--scheme", choices=("full-sequence", "per-turn"))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="websynth", description="Synthesize web-research QA and agent trajectories.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "load the page archive into a link graph",
        "synth-qa": "sample seeds and synthesize obfuscated QA candidates",
        "verify": "keep candidates that are hard closed-book but solvable from evidence",
        "synth-traj": "run the teacher agent on verified questions",
        "export": "write the training dataset",
        "stats": "tool-call and token statistics over trajectories",
        "all": "run every stage in order",
    }
    for name, text in helps.items():
        _stage_parser(sub, name, text)
    fx = sub.add_parser("make-fixture", help="write the synthetic corpus, mock script and config")
    fx.add_argument("directory")
    fx.add_argument("--rng-seed", type=int, default=7)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "make-fixture":
        paths = write_fixture(args.directory, args.rng_seed)
        for p in paths.values():
            print(p)
        return 0

    try:
        cfg = apply_overrides(load_config(args.config), args)
        pipe = Pipeline(cfg, force=args.force)
        results = pipe.run(args.command)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingUpstream as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except WebsynthError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for res in results:
        summary = {k: v for k, v in res.report.items() if k not in ("artifacts", "wall_time_s")}
        print(json.dumps(summary, ensure_ascii=False, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
