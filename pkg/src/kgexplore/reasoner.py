"""Bottom-up enumerate-and-rank program synthesis for a test question.

Starting from the entities, classes and literals mentioned in the question,
candidate programs are grown one operator at a time. At every timestep the
candidates are pruned by embedding similarity between their pattern and the
anonymised question, scored by the LM under a prompt with retrieved
demonstrations, and the top scorers are carried forward. A running best set
across timesteps is re-ranked at the end with the inverse (program ->
question) score.
"""
from __future__ import annotations

import json
import logging
import random
import re
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .corpus import CorpusEntry, IndexedCorpus, RetrievalConfig, retrieve
from .executor import Answer, ExecutionError, Executor
from .kg import NUMERIC_TYPES, KnowledgeGraph, Literal, Node, normalize_name, parse_literal
from .lm import HashedBagEmbedder, LmBackend, cosine, score_batch
from .program import (COMPARATORS, ROOT_ONLY, And, ArgMax, ArgMin, ClassRef, Compare, Count,
                      EntityRef, Join, LiteralRef, Program, anonymize_question, complexity, parse,
                      pattern_of, render, repeated_relations)
from .prompts import DEFAULT_TEMPLATES, PromptTemplates

log = logging.getLogger(__name__)

MAX_COMPLEXITY = 4
ORDERED_TYPES = NUMERIC_TYPES | {"date"}


class ReasoningError(RuntimeError):
    pass


# -- mentions -----------------------------------------------------------------------------


@dataclass(frozen=True)
class Mention:
    start: int
    end: int
    kind: str  # entity | class | literal
    value: Union[str, Literal]
    cls: Optional[str] = None

    def surface(self, question: str) -> str:
        return question[self.start:self.end]

    def seed(self) -> Program:
        if self.kind == "entity":
            return EntityRef(self.value)
        if self.kind == "class":
            return ClassRef(self.value)
        return LiteralRef(self.value.value, self.value.type)

    def to_json(self) -> dict:
        value = str(self.value) if isinstance(self.value, Literal) else self.value
        return {"span": [self.start, self.end], "kind": self.kind, "value": value, "class": self.cls}


_WORD = re.compile(r"\d{4}-\d{2}-\d{2}|\d+\.\d+|[^\W_]+(?:['.&][^\W_]+)*\.?|&")
_INT = re.compile(r"^[-+]?\d+$")
_FLOAT = re.compile(r"^[-+]?\d+\.\d+$")
_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


def _class_names(kg: KnowledgeGraph) -> Dict[str, set]:
    names: Dict[str, set] = {}
    for c in kg.classes:
        desc = normalize_name(kg.schema[c].description)
        for form in {desc, desc + "s", desc + "es", normalize_name(c)}:
            names.setdefault(form, set()).add(c)
        if desc.endswith("y"):
            names.setdefault(desc[:-1] + "ies", set()).add(c)
        if desc == "person":
            names.setdefault("people", set()).add(c)
    return names


def link_mentions(kg: KnowledgeGraph, question: str, gold: Optional[Iterable[dict]] = None) -> List[Mention]:
    """String/alias linker: longest case-insensitive match against entity
    labels and class names; numbers and ISO dates become literal mentions.

    ``gold`` mentions (``{"id": ...}`` or ``{"literal": "2010^^int"}``, with
    optional ``span``) replace linking entirely.
    """
    if gold is not None:
        return _gold_mentions(kg, question, gold)
    words = list(_WORD.finditer(question))
    entity_names = kg.name_table()
    class_names = _class_names(kg)
    longest = max((len(n.split()) for n in entity_names), default=1)
    out: List[Mention] = []
    i = 0
    while i < len(words):
        matched = False
        for j in range(min(len(words), i + max(longest, 2)), i, -1):
            start, end = words[i].start(), words[j - 1].end()
            surface = question[start:end]
            key = normalize_name(surface)
            ids = entity_names.get(key) or entity_names.get(key.rstrip("."))
            if ids:
                for eid in sorted(ids):
                    cs = kg.classes_of(eid)
                    out.append(Mention(start, end, "entity", eid, cs[0] if cs else None))
                matched = True
            elif key in class_names or key.rstrip(".") in class_names:
                for c in sorted(class_names.get(key) or class_names[key.rstrip(".")]):
                    out.append(Mention(start, end, "class", c, c))
                matched = True
            if matched:
                i = j
                break
        if matched:
            continue
        tok = words[i].group().rstrip(".")
        lit = None
        if _DATE.match(tok):
            lit = parse_literal(tok, "date")
        elif _FLOAT.match(tok):
            lit = parse_literal(tok, "float")
        elif _INT.match(tok):
            lit = parse_literal(tok, "int")
        if lit is not None:
            out.append(Mention(words[i].start(), words[i].start() + len(tok), "literal", lit, lit.type))
        i += 1
    return out


def _gold_mentions(kg, question, gold) -> List[Mention]:
    out = []
    for g in gold:
        span = g.get("span")
        if "literal" in g:
            value, _, tag = str(g["literal"]).rpartition("^^")
            lit = parse_literal(value, tag)
            start, end = span or _find(question, lit.lexical())
            out.append(Mention(start, end, "literal", lit, lit.type))
        elif g.get("kind") == "class":
            start, end = span or _find(question, kg.schema[g["id"]].description)
            out.append(Mention(start, end, "class", g["id"], g["id"]))
        else:
            ids = sorted(kg.resolve_entity(g["id"]))
            if not ids:
                raise ReasoningError(f"gold mention {g['id']!r} is not in the graph")
            for eid in ids:
                start, end = span or _find(question, kg.label(eid), *kg.aliases(eid))
                cs = kg.classes_of(eid)
                out.append(Mention(start, end, "entity", eid, cs[0] if cs else None))
    return out


def _find(question: str, *names: str) -> Tuple[int, int]:
    low = question.lower()
    for n in names:
        k = low.find(n.lower())
        if k >= 0:
            return k, k + len(n)
    return 0, 0


def anonymize_query(question: str, mentions: Sequence[Mention]) -> str:
    """Question with entity mentions replaced by their class and literal
    mentions by their type tag."""
    spans, taken = [], []
    for m in sorted(mentions, key=lambda m: (m.start, -(m.end - m.start))):
        if m.kind == "class" or m.end <= m.start or not m.cls:
            continue
        if any(m.start < e and s < m.end for s, e in taken):
            continue
        taken.append((m.start, m.end))
        spans.append(((m.start, m.end), m.cls))
    return anonymize_question(question, spans)


# -- candidates ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    program: Program
    score: float = 0.0
    t: int = 0
    forward: float = 0.0

    @property
    def key(self) -> str:
        return str(self.program)


@dataclass
class ReasonerConfig:
    retain_k: int = 5
    best_k: int = 10
    prune_k: Optional[int] = 10
    t_max: int = 10
    alpha: float = 0.5
    repeat_penalty: float = 0.1
    repeat_penalty_enabled: bool = True
    frontier_cap: int = 10_000
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)

    def __post_init__(self):
        for name in ("retain_k", "best_k", "t_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.prune_k is not None and self.prune_k < 1:
            raise ValueError("prune_k must be >= 1 (or None to disable pruning)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.repeat_penalty < 0:
            raise ValueError("repeat_penalty must be non-negative")


def init_candidates(mentions: Sequence[Mention]) -> List[Program]:
    if not mentions:
        raise ReasoningError("no mentions to start from")
    seen, out = set(), []
    for m in mentions:
        p = m.seed()
        if str(p) not in seen:
            seen.add(str(p))
            out.append(p)
    return out


def _capped(nodes, cap: int) -> List[Node]:
    ordered = sorted(nodes, key=lambda n: (isinstance(n, Literal), str(n)))
    if len(ordered) > cap:
        ordered = random.Random(len(ordered)).sample(ordered, cap)
    return ordered


def _and(a: Program, b: Program) -> Program:
    if isinstance(b, ClassRef) and not isinstance(a, ClassRef):
        a, b = b, a
    elif not isinstance(a, ClassRef) and str(b) < str(a):
        a, b = b, a
    return And(a, b)


def _literal_values(kg: KnowledgeGraph, nodes, relation) -> bool:
    return any(isinstance(o, Literal) and o.type in ORDERED_TYPES
               for n in nodes for o in kg.objects(n, relation))


def extend_candidates(kg: KnowledgeGraph, prev: Sequence[Program], best: Sequence[Program] = (),
                      literals: Sequence[Literal] = (), executor: Optional[Executor] = None,
                      frontier_cap: int = 10_000, max_complexity: int = MAX_COMPLEXITY) -> List[Program]:
    """One expansion step (see module docstring). Empty, invalid and
    over-complex results are dropped; output is deduplicated and sorted by
    canonical string."""
    ex = executor or Executor(kg)
    proposals: Dict[str, Program] = {}

    def add(p):
        key = str(p)
        if key not in proposals:
            proposals[key] = p

    best_sets = []
    for b in best:
        if isinstance(b, ROOT_ONLY):
            continue
        try:
            best_sets.append((b, ex.execute(b)))
        except ExecutionError:
            continue

    for p in prev:
        if isinstance(p, ROOT_ONLY):
            continue
        try:
            denot = ex.execute(p)
        except ExecutionError:
            continue
        if not denot:
            continue
        nodes = _capped(denot, frontier_cap)
        out_rels, in_rels, classes = set(), set(), set()
        for n in nodes:
            out_rels.update(kg.out_edges(n))
            in_rels.update(kg.in_edges(n))
            if not isinstance(n, Literal):
                classes.update(kg.classes_of(n))
        for r in sorted(in_rels):
            add(Join(r, p))
        for r in sorted(out_rels):
            add(Join(r, p, reverse=True))
        leaf = isinstance(p, (EntityRef, LiteralRef))
        if not leaf and not isinstance(p, ClassRef):
            for c in sorted(classes):
                if not (isinstance(p, And) and ClassRef(c) in (p.left, p.right)):
                    add(_and(ClassRef(c), p))
        for b, bset in best_sets:
            if b == p or isinstance(b, LiteralRef) or isinstance(p, LiteralRef):
                continue
            if isinstance(b, ClassRef) and isinstance(p, ClassRef):
                continue
            if denot & bset:
                add(_and(p, b))
        if not leaf:
            add(Count(p))
        for r in sorted(out_rels) if not leaf else ():
            if _literal_values(kg, nodes, r):
                add(ArgMax(p, r))
                add(ArgMin(p, r))
        if isinstance(p, LiteralRef):
            lit = p.node
            for r in sorted(kg.literal_relations()):
                types = kg.literal_types(r)
                if lit.type in ORDERED_TYPES and (lit.type in types or (
                        lit.type in NUMERIC_TYPES and types & NUMERIC_TYPES)):
                    for op in COMPARATORS:
                        add(Compare(op, r, p))

    out = []
    for key in sorted(proposals):
        p = proposals[key]
        if complexity(p) > max_complexity:
            continue
        try:
            a = ex.execute(p)
        except ExecutionError:
            continue
        if isinstance(a, int) and a == 0:
            continue
        if not isinstance(a, int) and not a:
            continue
        out.append(p)
    return out


def prune(candidates: Sequence[Program], anonymized_question: str, embedder, prune_k: Optional[int],
          kg: Optional[KnowledgeGraph] = None) -> List[Program]:
    """Keep the ``prune_k`` candidates whose pattern embeds closest to the
    anonymised question (ties by canonical string). ``None`` keeps all."""
    if prune_k is None or len(candidates) <= prune_k:
        return sorted(candidates, key=str)
    q = embedder.embed(anonymized_question)
    scored = [(-round(cosine(q, embedder.embed(pattern_of(c, kg))), 12), str(c), c) for c in candidates]
    scored.sort(key=lambda x: (x[0], x[1]))
    return [c for _, _, c in scored[:prune_k]]


def reasoning_prompt(question: str, demos: Sequence[CorpusEntry], kg: Optional[KnowledgeGraph],
                     templates: PromptTemplates = DEFAULT_TEMPLATES) -> str:
    pairs = []
    for d in demos:
        try:
            prog = render(parse(d.program), kg)
        except ValueError:
            prog = d.program
        pairs.append((d.question, prog))
    return templates.reasoning(question, pairs)


def score_candidates(lm: LmBackend, question: str, demos: Sequence[CorpusEntry],
                     candidates: Sequence[Program], cfg: ReasonerConfig, kg: Optional[KnowledgeGraph] = None,
                     t: int = 0, templates: PromptTemplates = DEFAULT_TEMPLATES) -> List[Candidate]:
    """Normalised LM score of each candidate under the reasoning prompt, minus
    the repeated-relation penalty when enabled."""
    if not candidates:
        return []
    prompt = reasoning_prompt(question, demos, kg, templates)
    scored = score_batch(lm, prompt, [render(c, kg) for c in candidates])
    out = []
    for c, g in zip(candidates, scored):
        fwd = g.normalized_score
        s = fwd - cfg.repeat_penalty * repeated_relations(c) if cfg.repeat_penalty_enabled else fwd
        out.append(Candidate(c, s, t, fwd))
    return out


def _top(cands: Iterable[Candidate], k: int) -> List[Candidate]:
    return sorted(cands, key=lambda c: (-c.score, c.key))[:k]


def final_rerank(best: Sequence[Candidate], question: str, lm: LmBackend, alpha: float,
                 kg: Optional[KnowledgeGraph] = None,
                 templates: PromptTemplates = DEFAULT_TEMPLATES) -> Tuple[Candidate, List[dict]]:
    """``argmax alpha * score + (1 - alpha) * inverse_score`` over ``best``.

    The inverse score is the normalised log-probability of the question
    given the candidate under the program -> question prompt. Ties go to the
    smaller canonical string. Returns the winner and the scoring table.
    """
    if not best:
        raise ReasoningError("final re-rank needs at least one candidate")
    rows = []
    for c in best:
        inv = lm.score(templates.reasoning_inverse(render(c.program, kg)), question).normalized_score
        rows.append({"program": c.key, "forward": c.score, "inverse": inv,
                     "combined": alpha * c.score + (1 - alpha) * inv})
    order = sorted(range(len(best)), key=lambda i: (-rows[i]["combined"], best[i].key))
    return best[order[0]], [rows[i] for i in order]


@dataclass
class ReasonTrace:
    question: str = ""
    anonymized_question: str = ""
    mentions: List[dict] = field(default_factory=list)
    demos: List[str] = field(default_factory=list)
    steps: List[dict] = field(default_factory=list)
    final: List[dict] = field(default_factory=list)
    lm_calls: int = 0
    rerank_calls: int = 0
    terminated: str = ""
    elapsed: float = 0.0

    def calls_per_step(self) -> List[int]:
        return [s["lm_calls"] for s in self.steps]

    def reached(self) -> set:
        """Every candidate program that survived pruning at some step."""
        return {p for s in self.steps for p in s["scored"]}

    def to_json(self, timing: bool = True) -> dict:
        d = {
            "question": self.question, "anonymized_question": self.anonymized_question,
            "mentions": self.mentions, "demos": self.demos, "steps": self.steps, "final": self.final,
            "lm_calls": self.lm_calls, "rerank_calls": self.rerank_calls, "terminated": self.terminated,
        }
        if timing:
            d["elapsed"] = self.elapsed
        return d

    def dump(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


def answer(kg: KnowledgeGraph, question: str, index: Optional[IndexedCorpus], lm: LmBackend,
           embedder=None, cfg: Optional[ReasonerConfig] = None, gold_mentions=None,
           executor: Optional[Executor] = None,
           templates: PromptTemplates = DEFAULT_TEMPLATES) -> Tuple[Program, Answer, ReasonTrace]:
    """Answer ``question``; returns ``(program, answer, trace)``."""
    cfg = cfg or ReasonerConfig()
    embedder = embedder or (index.embedder if index is not None else HashedBagEmbedder())
    ex = executor or Executor(kg)
    started = time.perf_counter()
    trace = ReasonTrace(question=question)

    mentions = link_mentions(kg, question, gold_mentions)
    if not mentions:
        raise ReasoningError(f"no entity, class or literal found in {question!r}")
    trace.mentions = [m.to_json() for m in mentions]
    anon = anonymize_query(question, mentions)
    trace.anonymized_question = anon
    demos = retrieve(index, anon, cfg.retrieval) if index is not None and len(index) else []
    trace.demos = [d.program for d in demos]
    literals = [m.value for m in mentions if m.kind == "literal"]

    prev = init_candidates(mentions)
    best: List[Candidate] = []
    for t in range(1, cfg.t_max + 1):
        extended = extend_candidates(kg, prev, [b.program for b in best], literals, ex, cfg.frontier_cap)
        if not extended:
            if t == 1:
                raise ReasoningError("every first-step candidate has an empty answer")
            trace.terminated = "no-candidates"
            break
        kept = prune(extended, anon, embedder, cfg.prune_k, kg)
        scored = score_candidates(lm, question, demos, kept, cfg, kg, t, templates)
        trace.lm_calls += len(kept)
        prev = [c.program for c in _top(scored, cfg.retain_k)]
        merged: Dict[str, Candidate] = {c.key: c for c in best}
        for c in scored:
            if c.key not in merged or c.score > merged[c.key].score:
                merged[c.key] = c
        new_best = _top(merged.values(), cfg.best_k)
        changed = {c.key for c in new_best} != {c.key for c in best}
        best = new_best
        trace.steps.append({
            "t": t, "extended": len(extended), "kept": len(kept), "lm_calls": len(kept),
            "scored": {c.key: c.score for c in scored},
            "best": [[c.key, c.score] for c in best],
        })
        if not changed:
            trace.terminated = "best-set-stable"
            break
    else:
        trace.terminated = "t-max"

    winner, table = final_rerank(best, question, lm, cfg.alpha, kg, templates)
    trace.rerank_calls = len(best)
    trace.final = table
    result = ex.execute(winner.program)
    trace.elapsed = time.perf_counter() - started
    return winner.program, result, trace
