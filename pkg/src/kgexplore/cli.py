"""Command-line entry point: ``kgexplore <subcommand> ...``.

Pipeline: ``explore`` samples programs, ``genq`` writes a question for each,
``index`` embeds the corpus, ``answer``/``eval``/``repl`` run the reasoner.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from . import corpus as corpus_mod
from .corpus import IndexedCorpus, RetrievalConfig
from .evaluation import budget_curve, coverage_stats, format_coverage, format_curve, load_dataset, run_eval
from .explorer import ExplorationConfig, explore, format_stats, stats
from .kg import KnowledgeGraph, load_graph, load_graph_dir, load_toykg
from .lm import HashedBagEmbedder, RecordingLM, make_backend
from .question_gen import QGenConfig, build_corpus
from .reasoner import ReasonerConfig, answer

log = logging.getLogger("kgexplore")


def load_kg(args) -> KnowledgeGraph:
    if not args.kg:
        return load_toykg()
    if os.path.isdir(args.kg):
        return load_graph_dir(args.kg)
    if not args.schema:
        raise SystemExit("--schema is required when --kg is a triples file")
    return load_graph(args.kg, args.schema, args.labels)


def load_backend(args):
    lm = make_backend(args.backend, fixture_file=args.fixture_file, url=args.lm_url,
                      model=args.lm_model, cache_dir=args.cache_dir)
    return RecordingLM(lm) if args.record else lm


def finish_backend(args, lm):
    if args.record:
        lm.dump(args.record)
        log.info("recorded LM calls to %s", args.record)


def load_index(args) -> Optional[IndexedCorpus]:
    if getattr(args, "index", None):
        return IndexedCorpus.load(args.index)
    if getattr(args, "corpus", None):
        return corpus_mod.index(corpus_mod.load(args.corpus), HashedBagEmbedder(args.dim))
    log.warning("no --index or --corpus given; reasoning without demonstrations")
    return None


def reasoner_config(args) -> ReasonerConfig:
    return ReasonerConfig(
        retain_k=args.retain_k, best_k=args.best_k,
        prune_k=None if args.no_prune else args.prune_k,
        t_max=args.t_max, alpha=args.alpha,
        repeat_penalty_enabled=not args.no_repeat_penalty,
        retrieval=RetrievalConfig(k=args.demos, coverage_mode=not args.no_coverage),
    )


def _write(path: Optional[str], text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


# -- subcommands ------------------------------------------------------------------------------------


def cmd_explore(args) -> int:
    kg = load_kg(args)
    cfg = ExplorationConfig(budget=args.budget, per_pattern_cap=args.cap, rng_seed=args.seed)
    result = explore(kg, cfg)
    if args.out in (None, "-"):
        result.write_jsonl(sys.stdout)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            result.write_jsonl(fh)
    if result.exhausted:
        log.warning("walk retries exhausted with %d/%d programs", len(result.programs), cfg.budget)
    if args.stats:
        _write(args.stats, format_stats(stats(result)))
    return 0


def _read_programs(path: str) -> List[str]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            out.append(json.loads(line)["program"] if line.startswith("{") else line)
    return out


def cmd_genq(args) -> int:
    kg = load_kg(args)
    lm = load_backend(args)
    cfg = QGenConfig(beam_k=args.beam_k, keep_intermediate=args.keep_intermediate)
    corpus = build_corpus(_read_programs(args.programs), kg, lm, cfg=cfg)
    corpus_mod.save(corpus, args.out)
    log.info("wrote %d entries (%d failures) to %s", len(corpus), corpus.failures, args.out)
    finish_backend(args, lm)
    return 0


def cmd_index(args) -> int:
    idx = corpus_mod.index(corpus_mod.load(args.corpus), HashedBagEmbedder(args.dim))
    idx.save(args.out)
    log.info("indexed %d entries to %s", len(idx), args.out)
    return 0


def _answer_one(kg, question, idx, lm, cfg, trace_path=None) -> str:
    program, ans, trace = answer(kg, question, idx, lm, cfg=cfg)
    if trace_path:
        trace.dump(trace_path)
    shown = ans if isinstance(ans, int) else sorted(str(kg.label(a)) if isinstance(a, str) else a.lexical()
                                                    for a in ans)
    return json.dumps({"question": question, "program": str(program), "answer": shown})


def cmd_answer(args) -> int:
    kg = load_kg(args)
    lm = load_backend(args)
    print(_answer_one(kg, args.question, load_index(args), lm, reasoner_config(args), args.trace))
    finish_backend(args, lm)
    return 0


def cmd_repl(args) -> int:
    kg = load_kg(args)
    lm = load_backend(args)
    idx, cfg = load_index(args), reasoner_config(args)
    for line in sys.stdin:
        q = line.strip()
        if not q:
            continue
        try:
            print(_answer_one(kg, q, idx, lm, cfg), flush=True)
        except Exception as e:
            print(json.dumps({"question": q, "error": str(e)}), flush=True)
    finish_backend(args, lm)
    return 0


def cmd_eval(args) -> int:
    kg = load_kg(args)
    lm = load_backend(args)
    corpus = corpus_mod.load(args.corpus) if args.corpus else None
    idx = load_index(args)
    report = run_eval(args.dataset, kg, idx, lm, reasoner_config(args), workers=args.workers,
                      use_gold_mentions=not args.no_gold_mentions, corpus=corpus)
    _write(args.out, report.dumps(timing=args.timing))
    if args.summary:
        _write(args.summary, report.summary_tsv())
    finish_backend(args, lm)
    return 0


def cmd_stats(args) -> int:
    kg = load_kg(args)
    if args.programs:
        from .explorer import ExplorationResult, ExploredProgram
        from .program import complexity, parse, pattern_of, subexpressions
        res = ExplorationResult()
        for text in _read_programs(args.programs):
            p = parse(text)
            res.programs.append(ExploredProgram(p, pattern_of(p, kg), complexity(p), 0,
                                                frozenset(subexpressions(p, kg))))
        _write(args.out, format_stats(stats(res)))
        return 0
    if not (args.corpus and args.dataset):
        raise SystemExit("stats needs --programs, or --corpus together with --dataset")
    gold = [e.gold_program for e in load_dataset(args.dataset) if e.gold_program]
    table = coverage_stats(corpus_mod.load(args.corpus), gold, kg)
    for bad in table["excluded"]:
        log.warning("excluded gold program %s: %s", bad["program"], bad["error"])
    _write(args.out, format_coverage(table))
    return 0


def cmd_budget_curve(args) -> int:
    kg = load_kg(args)
    lm = load_backend(args)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    points = budget_curve(corpus_mod.load(args.corpus), sizes, load_dataset(args.dataset), kg, lm,
                          reasoner_config(args), seed=args.seed, embedder=HashedBagEmbedder(args.dim))
    _write(args.out, format_curve(points))
    finish_backend(args, lm)
    return 0


# -- parser -------------------------------------------------------------------------------------


def _reasoner_flags(p: argparse.ArgumentParser):
    d = ReasonerConfig()
    p.add_argument("--retain-k", type=int, default=d.retain_k)
    p.add_argument("--best-k", type=int, default=d.best_k)
    p.add_argument("--prune-k", type=int, default=d.prune_k)
    p.add_argument("--no-prune", action="store_true", help="score every enumerated candidate")
    p.add_argument("--t-max", type=int, default=d.t_max)
    p.add_argument("--alpha", type=float, default=d.alpha, help="forward weight in the final rerank")
    p.add_argument("--no-repeat-penalty", action="store_true")
    p.add_argument("--demos", type=int, default=d.retrieval.k, help="retrieved demonstrations")
    p.add_argument("--no-coverage", action="store_true", help="plain top-k retrieval")


def _index_flags(p: argparse.ArgumentParser, need_corpus: bool = False):
    if not need_corpus:
        p.add_argument("--index", help="index file written by the index subcommand")
    p.add_argument("--corpus", required=need_corpus, help="corpus JSONL (indexed on the fly)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kgexplore", description=__doc__.splitlines()[0])
    ap.add_argument("--kg", help="triples TSV or a directory with triples/schema/labels (default: bundled toy graph)")
    ap.add_argument("--schema", help="schema TSV")
    ap.add_argument("--labels", help="labels TSV")
    ap.add_argument("--backend", choices=("heuristic", "fixture", "http"), default="heuristic")
    ap.add_argument("--fixture-file", help="recorded LM calls (fixture backend)")
    ap.add_argument("--lm-url", help="OpenAI-compatible base URL (http backend)")
    ap.add_argument("--lm-model", help="model name (http backend)")
    ap.add_argument("--record", help="dump every LM call to this JSONL file")
    ap.add_argument("--cache-dir", help="on-disk cache for http LM responses")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--dim", type=int, default=256, help="embedding dimension")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", help="sample executable programs")
    p.add_argument("--budget", type=int, default=ExplorationConfig.budget)
    p.add_argument("--cap", type=int, default=ExplorationConfig.per_pattern_cap, help="programs per pattern")
    p.add_argument("--out", help="programs JSONL (default stdout)")
    p.add_argument("--stats", help="write exploration statistics TSV here ('-' for stdout)")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("genq", help="generate questions for explored programs")
    p.add_argument("--programs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam-k", type=int, default=QGenConfig.beam_k)
    p.add_argument("--keep-intermediate", action="store_true")
    p.set_defaults(func=cmd_genq)

    p = sub.add_parser("index", help="embed a corpus for retrieval")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("answer", help="answer one question")
    p.add_argument("question")
    p.add_argument("--trace", help="write the reasoning trace JSON here")
    _index_flags(p)
    _reasoner_flags(p)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("repl", help="answer questions read from stdin, one per line")
    _index_flags(p)
    _reasoner_flags(p)
    p.set_defaults(func=cmd_repl)

    p = sub.add_parser("eval", help="evaluate on a JSONL dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="report JSON (default stdout)")
    p.add_argument("--summary", help="summary TSV")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="include wall-clock fields in the report")
    p.add_argument("--no-gold-mentions", action="store_true", help="link entities from the question text")
    _index_flags(p)
    _reasoner_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="exploration statistics or corpus coverage")
    p.add_argument("--programs", help="programs JSONL from explore")
    p.add_argument("--corpus")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("budget-curve", help="F1 against corpus sub-sample size")
    p.add_argument("--sizes", required=True, help="comma-separated sub-sample sizes")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    _index_flags(p, need_corpus=True)
    _reasoner_flags(p)
    p.set_defaults(func=cmd_budget_curve)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
