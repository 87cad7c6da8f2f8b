"""Answer metrics, dataset loading, coverage statistics and evaluation runs.

Dataset files are JSON lines with GrailQA-style fields::

    {"qid": "...", "question": "...", "answer": [{"answer_argument": "m.0abc"}, ...],
     "s_expression": "(AND ...)", "level": "i.i.d.", "gold_mentions": [{"id": "m.0abc"}]}

``answer`` may be omitted when ``s_expression`` is present (the gold program
is then executed). Entity ids are compared verbatim and literals by their
lexical form (a ``^^type`` suffix on gold values is ignored); COUNT answers
are compared as a one-element set holding the count.
"""
from __future__ import annotations

import json
import logging
import random
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .corpus import CorpusEntry, ExplorationCorpus, IndexedCorpus, index as build_index
from .executor import Answer, Executor
from .kg import KnowledgeGraph, Literal
from .lm import LmBackend
from .program import ProgramSyntaxError, classes_in, parse, pattern_of, relations_of, subexpressions
from .reasoner import ReasonerConfig, answer as reason

log = logging.getLogger(__name__)

SPLITS = ("iid", "compositional", "zeroshot", "other")
_SPLIT_ALIASES = {"i.i.d.": "iid", "iid": "iid", "compositional": "compositional",
                  "zero-shot": "zeroshot", "zeroshot": "zeroshot", "zero_shot": "zeroshot"}


def _as_set(x) -> frozenset:
    if isinstance(x, bool):
        raise TypeError("boolean is not an answer")
    if isinstance(x, int):
        return frozenset((x,))
    return frozenset(x)


def f1(pred, gold) -> float:
    """Answer-set F1; 1.0 when both sides are empty, 0.0 when only one is."""
    p, g = _as_set(pred), _as_set(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    common = len(p & g)
    if common == 0:
        return 0.0
    precision, recall = common / len(p), common / len(g)
    return 2 * precision * recall / (precision + recall)


def hits_at_1(pred, gold) -> int:
    """1 iff some predicted answer is gold (all predictions share rank 1)."""
    return int(bool(_as_set(pred) & _as_set(gold)))


def answer_keys(ans: Answer) -> frozenset:
    """Comparable string keys for an executor answer."""
    if isinstance(ans, int):
        return frozenset((str(ans),))
    return frozenset(x.lexical() if isinstance(x, Literal) else str(x) for x in ans)


def gold_key(value) -> str:
    s = str(value)
    if "^^" in s and not s.startswith('"'):
        s = s.rsplit("^^", 1)[0]
    elif s.startswith('"') and '"^^' in s:
        s = s[1:s.rindex('"^^')]
    return s


# -- dataset -----------------------------------------------------------------------------------


@dataclass
class EvalExample:
    qid: str
    question: str
    gold_answers: Optional[frozenset] = None
    gold_program: Optional[str] = None
    gold_mentions: Optional[List[dict]] = None
    split: str = "other"

    def __post_init__(self):
        if not self.gold_answers and not self.gold_program:
            raise ValueError(f"{self.qid}: needs gold answers or a gold program")
        if self.split not in SPLITS:
            raise ValueError(f"{self.qid}: unknown split {self.split!r}")


def split_tag(level: Optional[str]) -> str:
    return _SPLIT_ALIASES.get((level or "").lower(), "other")


def example_from_json(obj: dict) -> EvalExample:
    answers = None
    if obj.get("answer"):
        answers = frozenset(gold_key(a["answer_argument"] if isinstance(a, dict) else a)
                            for a in obj["answer"])
    return EvalExample(
        qid=str(obj["qid"]),
        question=obj["question"],
        gold_answers=answers,
        gold_program=obj.get("s_expression") or obj.get("program"),
        gold_mentions=obj.get("gold_mentions"),
        split=split_tag(obj.get("level") or obj.get("split")),
    )


def load_dataset(path: str) -> List[EvalExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(example_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: bad example: {e}") from None
    if not out:
        raise ValueError(f"{path}: dataset is empty")
    return out


def gold_keys(ex: EvalExample, kg: KnowledgeGraph, executor: Optional[Executor] = None) -> frozenset:
    if ex.gold_answers:
        return ex.gold_answers
    return answer_keys((executor or Executor(kg)).execute(parse(ex.gold_program)))


# -- coverage --------------------------------------------------------------------------------------

COVERAGE_ROWS = ("Relations", "Classes", "Patterns", "Sub-expressions")


def _items(p, kg) -> Dict[str, Set[str]]:
    return {
        "Relations": set(relations_of(p)),
        "Classes": set(classes_in(p)),
        "Patterns": {pattern_of(p, kg)},
        "Sub-expressions": set(subexpressions(p, kg)),
    }


def coverage_stats(corpus: Iterable[Union[CorpusEntry, str]], gold_programs: Iterable[str],
                   kg: Optional[KnowledgeGraph] = None) -> Dict[str, object]:
    """Percentage of the distinct gold relations/classes/patterns/sub-expressions
    that also occur in the corpus programs (two decimals).

    Unparseable gold programs are skipped and listed under ``"excluded"``.
    """
    have = {k: set() for k in COVERAGE_ROWS}
    for e in corpus:
        text = e.program if isinstance(e, CorpusEntry) else e
        try:
            p = parse(text)
        except ProgramSyntaxError:
            log.warning("skipping unparseable corpus program %r", text)
            continue
        for k, v in _items(p, kg).items():
            have[k] |= v
    need = {k: set() for k in COVERAGE_ROWS}
    excluded = []
    for text in gold_programs:
        try:
            p = parse(text)
        except ProgramSyntaxError as err:
            excluded.append({"program": text, "error": str(err)})
            continue
        for k, v in _items(p, kg).items():
            need[k] |= v
    table: Dict[str, object] = {}
    for k in COVERAGE_ROWS:
        table[k] = round(100.0 * len(need[k] & have[k]) / len(need[k]), 2) if need[k] else 100.0
    table["excluded"] = excluded
    return table


def format_coverage(table: Dict[str, object]) -> str:
    return "".join(f"{k}\t{table[k]:.2f}\n" for k in COVERAGE_ROWS)


# -- evaluation runs ---------------------------------------------------------------------------------


@dataclass
class EvalReport:
    rows: List[dict] = field(default_factory=list)
    overall: Dict[str, float] = field(default_factory=dict)
    by_split: Dict[str, Dict[str, float]] = field(default_factory=dict)
    latency: Dict[str, float] = field(default_factory=dict)
    coverage: Optional[Dict[str, object]] = None

    def to_json(self, timing: bool = False) -> dict:
        rows = self.rows if timing else [{k: v for k, v in r.items() if k != "seconds"} for r in self.rows]
        out = {"overall": self.overall, "by_split": self.by_split, "examples": rows}
        if self.coverage is not None:
            out["coverage"] = self.coverage
        if timing:
            out["latency"] = self.latency
        return out

    def dumps(self, timing: bool = False) -> str:
        return json.dumps(self.to_json(timing), indent=2, sort_keys=True) + "\n"

    def summary_tsv(self) -> str:
        lines = ["split\tn\tf1\thits@1"]
        for name, agg in [("overall", self.overall)] + sorted(self.by_split.items()):
            lines.append(f"{name}\t{agg['n']}\t{agg['f1']:.4f}\t{agg['hits@1']:.4f}")
        return "\n".join(lines) + "\n"


def _aggregate(rows: Sequence[dict]) -> Dict[str, float]:
    n = len(rows)
    return {
        "n": n,
        "f1": sum(r["f1"] for r in rows) / n if n else 0.0,
        "hits@1": sum(r["hits@1"] for r in rows) / n if n else 0.0,
    }


def evaluate_example(ex: EvalExample, kg: KnowledgeGraph, idx: Optional[IndexedCorpus], lm: LmBackend,
                     cfg: ReasonerConfig, executor: Executor, use_gold_mentions: bool = True) -> dict:
    started = time.perf_counter()
    row = {"qid": ex.qid, "question": ex.question, "split": ex.split, "error": None,
           "predicted_program": None, "prediction": [], "f1": 0.0, "hits@1": 0,
           "answer_recall": None, "lm_calls": 0}
    try:
        gold = gold_keys(ex, kg, executor)
        row["gold"] = sorted(gold)
        mentions = ex.gold_mentions if use_gold_mentions else None
        prog, ans, trace = reason(kg, ex.question, idx, lm, cfg=cfg, gold_mentions=mentions,
                                  executor=executor)
        pred = answer_keys(ans)
        row.update(predicted_program=str(prog), prediction=sorted(pred), f1=f1(pred, gold),
                   lm_calls=trace.lm_calls)
        row["hits@1"] = hits_at_1(pred, gold)
        if ex.gold_program:
            try:
                row["answer_recall"] = int(str(parse(ex.gold_program)) in trace.reached())
            except ProgramSyntaxError:
                pass
    except Exception as e:  # per-example failures never abort a run
        log.warning("example %s failed: %s", ex.qid, e)
        row["error"] = f"{type(e).__name__}: {e}"
        row.setdefault("gold", sorted(ex.gold_answers or ()))
    row["seconds"] = time.perf_counter() - started
    return row


def run_eval(examples: Union[str, Sequence[EvalExample]], kg: KnowledgeGraph, idx: Optional[IndexedCorpus],
             lm: LmBackend, cfg: Optional[ReasonerConfig] = None, workers: int = 1,
             executor: Optional[Executor] = None, use_gold_mentions: bool = True,
             corpus: Optional[Sequence[CorpusEntry]] = None) -> EvalReport:
    """Answer every example and aggregate F1 / Hits@1 overall and per split.

    One executor (and so one program-string -> answer cache) is shared by all
    examples. Rows are sorted by qid.
    """
    if isinstance(examples, str):
        examples = load_dataset(examples)
    if not examples:
        raise ValueError("dataset is empty")
    cfg = cfg or ReasonerConfig()
    ex = executor or Executor(kg)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda e: evaluate_example(e, kg, idx, lm, cfg, ex, use_gold_mentions),
                                 examples))
    else:
        rows = [evaluate_example(e, kg, idx, lm, cfg, ex, use_gold_mentions) for e in examples]
    rows.sort(key=lambda r: r["qid"])
    report = EvalReport(rows=rows, overall=_aggregate(rows))
    for split in SPLITS:
        sub = [r for r in rows if r["split"] == split]
        if sub:
            report.by_split[split] = _aggregate(sub)
    secs = [r["seconds"] for r in rows]
    report.latency = {"mean_seconds": statistics.fmean(secs), "max_seconds": max(secs),
                      "total_seconds": sum(secs)}
    recall = [r["answer_recall"] for r in rows if r["answer_recall"] is not None]
    if recall:
        report.overall["answer_recall"] = sum(recall) / len(recall)
    if corpus is not None:
        report.coverage = coverage_stats(corpus, [e.gold_program for e in examples if e.gold_program], kg)
    return report


def budget_curve(corpus: Union[ExplorationCorpus, Sequence[CorpusEntry]], sizes: Sequence[int],
                 examples: Sequence[EvalExample], kg: KnowledgeGraph, lm: LmBackend,
                 cfg: Optional[ReasonerConfig] = None, seed: int = 0, embedder=None) -> List[Tuple[int, float]]:
    """Mean F1 when only a random ``size``-entry subset of the corpus is retrievable."""
    entries = list(corpus)
    for k in sizes:
        if k < 1 or k > len(entries):
            raise ValueError(f"sub-sample size {k} must lie in [1, {len(entries)}]")
    ex = Executor(kg)
    out = []
    for k in sizes:
        rng = random.Random(seed)
        chosen = sorted(rng.sample(range(len(entries)), k))
        idx = build_index([entries[i] for i in chosen], embedder)
        report = run_eval(list(examples), kg, idx, lm, cfg, executor=ex)
        out.append((k, report.overall["f1"]))
    return out


def format_curve(points: Sequence[Tuple[int, float]]) -> str:
    return "size\tf1\n" + "".join(f"{k}\t{v:.4f}\n" for k, v in points)
