"""Command-line entry point: ``skilldecomp <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from skilldecomp.errors import SkillDecompError
from skilldecomp.generator import SCENARIOS
from skilldecomp.harness import (
    RunConfig,
    compare_strategies,
    emit_report,
    load_report,
    render_table,
    run_benchmark,
)
from skilldecomp.ontology import curate_benchmark, load_ontology, make_item, ontology_stats
from skilldecomp.prompts import PromptControls, build_few_shot, build_zero_shot, gold_lexical_forms, select_exemplars


def _add_ontology_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("ontology", help="ontology file (.jsonl or .ttl)")
    p.add_argument("--format", dest="fmt", choices=["jsonl", "turtle"], help="override format detection")
    p.add_argument("--lang", default="fr", help="preferred label language for Turtle input")
    p.add_argument("--k-min", type=int, default=5)
    p.add_argument("--k-max", type=int, default=12)


def cmd_stats(args) -> int:
    onto = load_ontology(args.ontology, args.fmt, lang=args.lang)
    stats = ontology_stats(onto, args.k_min, args.k_max)
    if not args.json_only:
        print(stats.render_text())
        print()
    print(json.dumps(stats.to_dict(), indent=2))
    return 0


def cmd_curate(args) -> int:
    onto = load_ontology(args.ontology, args.fmt, lang=args.lang)
    for item in curate_benchmark(onto, args.k_min, args.k_max):
        row = item.to_dict()
        row["parent_label"] = onto.label(item.parent)
        print(json.dumps(row, ensure_ascii=False))
    return 0


def cmd_render_prompt(args) -> int:
    onto = load_ontology(args.ontology, args.fmt, lang=args.lang)
    item = make_item(onto, args.parent, args.k_min, args.k_max)
    k = args.k or item.k_target
    controls = PromptControls(language=args.language, k=k, allow_any_k=True)
    label = onto.label(item.parent)
    if args.strategy == "zs":
        prompt = build_zero_shot(label, controls, parent_id=item.parent)
    else:
        pool = curate_benchmark(onto, args.k_min, args.k_max)
        exemplars = select_exemplars(onto, item, pool, args.k_fs, args.seed)
        prompt = build_few_shot(label, exemplars, controls, gold_labels=gold_lexical_forms(onto, item), parent_id=item.parent)
    print(prompt.text)
    return 0


def cmd_run(args) -> int:
    if args.config:
        config = RunConfig.load(args.config)
    elif args.ontology:
        config = RunConfig(ontology_path=args.ontology)
    else:
        raise SystemExit("run needs --config or --ontology")
    changes = {}
    if args.ontology and args.config:
        changes["ontology_path"] = args.ontology
    if args.strategy:
        changes["strategy"] = args.strategy.upper()
    if args.output_dir:
        changes["output_dir"] = args.output_dir
    if args.include_cached_latency:
        changes["include_cached_latency"] = True
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.parallelism:
        changes["parallelism"] = args.parallelism
    if args.limit is not None:
        changes["limit"] = args.limit
    gen = config.generator
    if args.mock:
        gen = replace(gen, endpoint="mock", mock_scenario=args.mock)
    if args.endpoint:
        gen = replace(gen, endpoint=args.endpoint)
    if args.model:
        gen = replace(gen, model_name=args.model)
    changes["generator"] = gen
    config = replace(config, **changes)
    result = run_benchmark(config)
    print(render_table([result.report]), end="")
    if result.excluded_count:
        print(f"warning: {result.excluded_count} parents excluded after hard failures", file=sys.stderr)
    if result.latency is not None:
        lat = result.latency
        print(f"latency: mean {lat.mean:.2f}s median {lat.median:.2f}s min {lat.min:.2f}s max {lat.max:.2f}s (n={lat.count})")
    print(f"outputs written to {config.output_dir}")
    return 0


def cmd_report(args) -> int:
    reports = [load_report(p) for p in args.reports]
    if args.format in ("markdown", "md"):
        print(render_table(reports), end="")
    else:
        for rep in reports:
            print(emit_report(rep, args.format), end="")
    return 0


def cmd_compare(args) -> int:
    delta = compare_strategies(load_report(args.zs), load_report(args.fs))
    print(delta.render(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skilldecomp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="print ontology statistics as a text table and JSON")
    _add_ontology_args(p)
    p.add_argument("--json", dest="json_only", action="store_true", help="print JSON only")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("curate", help="list benchmark parents (JSON lines)")
    _add_ontology_args(p)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("render-prompt", help="print the prompt for one parent")
    _add_ontology_args(p)
    p.add_argument("--parent", required=True)
    p.add_argument("--strategy", choices=["zs", "fs"], default="zs")
    p.add_argument("--k", type=int)
    p.add_argument("--k-fs", type=int, default=2, choices=[2, 3])
    p.add_argument("--language", default="fr")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render_prompt)

    p = sub.add_parser("run", help="run the benchmark end to end")
    p.add_argument("--config", help="TOML or JSON run config")
    p.add_argument("--ontology")
    p.add_argument("--strategy", choices=["zs", "fs"])
    p.add_argument("--mock", choices=SCENARIOS, help="use the offline mock generator")
    p.add_argument("--endpoint", help="chat-completion URL")
    p.add_argument("--model")
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--limit", type=int, help="only the first N parents")
    p.add_argument("--include-cached-latency", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render saved report.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--format", choices=["markdown", "md", "json", "csv"], default="markdown")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="few-shot minus zero-shot deltas for one model")
    p.add_argument("zs")
    p.add_argument("fs")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (SkillDecompError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
