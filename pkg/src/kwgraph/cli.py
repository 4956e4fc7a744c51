"""Command-line entry point: ``kwgraph <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import yaml

from . import pipeline
from .annotator import PseudoLabeling
from .corpus import load_corpus, load_keywords, save_corpus, save_keywords
from .extraction import ExtractionConfig, extract_keywords, score_words
from .metrics import evaluate
from .synth import SynthSpec, generate_synthetic_corpus

_RUN_FIELDS = dataclasses.fields(pipeline.RunConfig)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML file with RunConfig fields; flags override it")
    for f in _RUN_FIELDS:
        flags = ["--" + f.name.replace("_", "-")]
        if len(f.name) == 1:
            flags.insert(0, "-" + f.name)
        if f.type in ("bool", bool):
            p.add_argument(*flags, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            conv = {"int": int, "float": float}.get(str(f.type).replace("Optional[", "").rstrip("]"), str)
            p.add_argument(*flags, dest=f.name, type=conv, default=None)


def _run_config(args) -> pipeline.RunConfig:
    data = {}
    if args.config:
        text = Path(args.config).read_text()
        data = yaml.safe_load(text) if args.config.endswith((".yaml", ".yml")) else json.loads(text)
        data = data or {}
    for f in _RUN_FIELDS:
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    return pipeline.RunConfig.from_dict(data)


def cmd_run(args) -> int:
    config = _run_config(args)
    states = pipeline.run_until_convergence(config, Path(args.out))
    for s in states:
        print(json.dumps(s.metrics, sort_keys=True))
    return 0


def cmd_iterate(args) -> int:
    state = pipeline.next_iteration(Path(args.run_dir))
    print(json.dumps(state.metrics, sort_keys=True))
    return 0


def cmd_annotate(args) -> int:
    config = _run_config(args)
    corpus = load_corpus(config.corpus, config.num_classes).without_gold()
    keywords = load_keywords(config.keywords, corpus.num_classes)
    labels = pipeline.pseudo_label(corpus, keywords, config)
    labels.save(corpus, args.out)
    print(f"{labels.covered_count}/{corpus.n} documents labelled -> {args.out}")
    return 0


def cmd_extract(args) -> int:
    corpus = load_corpus(args.corpus, args.num_classes)
    preds = pipeline.load_predictions(args.predictions)
    missing = [d.id for d in corpus.documents if d.id not in preds]
    if missing:
        raise SystemExit(f"no prediction for document {missing[0]!r}")
    cfg = ExtractionConfig(args.Z, args.M)
    scores = score_words(corpus, [preds[d.id][0] for d in corpus.documents], cfg)
    keywords = extract_keywords(scores, cfg)
    save_keywords(keywords, args.out)
    print(f"{len(keywords)} keywords -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    preds = pipeline.load_predictions(args.predictions)
    gold = pipeline.load_predictions(args.gold)
    ids = [i for i in gold if i in preds]
    if len(ids) != len(gold):
        raise SystemExit(f"{len(gold) - len(ids)} gold documents have no prediction")
    report = evaluate([preds[i][0] for i in ids], [gold[i][0] for i in ids])
    text = json.dumps(report, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(num_classes=args.num_classes, n=args.n, ambiguity=args.ambiguity,
                     resolved_ratio=args.resolved_ratio, uncovered=args.uncovered, seed=args.seed)
    syn = generate_synthetic_corpus(spec)
    save_corpus(syn.corpus, args.out_corpus)
    save_keywords(syn.keywords, args.out_keywords)
    print(json.dumps({"n": syn.corpus.n, "counting_accuracy": syn.counting_accuracy,
                      "coverage": float(syn.covered.mean())}, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    from .plotting import render_report

    names = args.names.split(",") if args.names else []
    for path in render_report(args.run_dirs, args.out, names, args.epsilon):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kwgraph", description="Keyword-graph weak supervision for text classification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full iterative loop")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("iterate", help="one more iteration in an existing run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("annotate", help="pseudo-labels only")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="pseudo-label file (id, label, confidence)")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("extract", help="keyword extraction from predictions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--num-classes", type=int, required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("-Z", type=int, default=100)
    p.add_argument("-M", type=float, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="metrics from prediction and gold files")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True, help="records with id and label (a labelled corpus file works)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="synthetic pivot-word corpus")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--ambiguity", type=float, default=0.3)
    p.add_argument("--resolved-ratio", type=float, default=1.5)
    p.add_argument("--uncovered", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--out-keywords", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="metrics CSV and figures for one or more run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--names", help="comma-separated display names")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (pipeline.PipelineError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
