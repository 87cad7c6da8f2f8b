"""Question generation for explored programs.

Each program is decomposed into sub-programs (inner-most clause first);
questions are generated for them in order, with every earlier
(sub-program, question) pair shown as a demonstration. The beam for the full
program is re-ranked by how well each candidate question predicts the program
back under the inverse prompt.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .corpus import CorpusEntry, ExplorationCorpus
from .executor import ExecutionError, execute_nonempty
from .kg import KnowledgeGraph
from .lm import GenCandidate, LMError, LmBackend, inverse_rerank
from .program import (EntityRef, LiteralRef, Program, complexity, decompose, entity_class,
                      anonymize_question, parse, pattern_of, prompt_schema_items, render,
                      schema_items_of, walk)
from .prompts import DEFAULT_TEMPLATES, PromptTemplates

log = logging.getLogger(__name__)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class QGenConfig:
    beam_k: int = 5
    max_tokens: int = 64
    keep_intermediate: bool = False

    def __post_init__(self):
        if self.beam_k < 1 or self.max_tokens < 1:
            raise ValueError("beam_k and max_tokens must be positive")


def postprocess(text: str, program: Optional[Program] = None) -> str:
    """First line, trimmed, with a terminal question mark."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        return ""
    q = lines[0]
    if not q.endswith(("?", ".", "!")):
        q += "?"
    return q


def schema_block(p: Program, kg: KnowledgeGraph) -> str:
    return kg.describe(prompt_schema_items(p, kg))


def qgen_prompt(steps: Sequence[Program], questions: Sequence[str], kg: KnowledgeGraph,
                templates: PromptTemplates = DEFAULT_TEMPLATES) -> str:
    """Prompt for ``steps[-1]`` with ``zip(steps, questions)`` as earlier demonstrations."""
    demos = [(render(s, kg), schema_block(s, kg), q) for s, q in zip(steps[:-1], questions)]
    return templates.qgen(render(steps[-1], kg), schema_block(steps[-1], kg), demos)


def _name_spans(text: str, names: Iterable[str]) -> List[Tuple[int, int]]:
    spans = []
    for name in sorted(set(n for n in names if n), key=len, reverse=True):
        pat = re.compile(r"(?<!\w)" + re.escape(name) + r"(?!\w)", re.I)
        for m in pat.finditer(text):
            spans.append((m.start(), m.end()))
    return spans


def anonymize_for_program(question: str, program: Program, kg: Optional[KnowledgeGraph]) -> str:
    """Replace mentions of the program's entities (labels/aliases) with
    their class and of its literals with their type tag."""
    found: List[Tuple[Tuple[int, int], str]] = []
    for node in walk(program):
        if isinstance(node, EntityRef):
            names = {node.id}
            if kg is not None:
                for eid in kg.resolve_entity(node.id):
                    names.add(kg.label(eid))
                    names.update(kg.aliases(eid))
            cls = entity_class(kg, node.id)
            found.extend((s, cls) for s in _name_spans(question, names))
        elif isinstance(node, LiteralRef):
            found.extend((s, node.type) for s in _name_spans(question, {node.node.lexical()}))
    chosen, taken = [], []
    # longest spans first, then left-to-right; drop overlaps
    for (s, e), cls in sorted(found, key=lambda m: (-(m[0][1] - m[0][0]), m[0][0])):
        if any(s < te and ts < e for ts, te in taken):
            continue
        taken.append((s, e))
        chosen.append(((s, e), cls))
    return anonymize_question(question, chosen)


def _best(cands: List[GenCandidate]) -> Optional[str]:
    for c in cands:
        q = postprocess(c.text)
        if q:
            return q
    return None


def generate_question(program: Union[Program, str], kg: KnowledgeGraph, lm: LmBackend,
                      templates: PromptTemplates = DEFAULT_TEMPLATES,
                      cfg: QGenConfig = QGenConfig()) -> List[CorpusEntry]:
    """Generate the question for ``program``.

    Returns the final entry last; with ``cfg.keep_intermediate`` earlier
    entries hold the questions for executable sub-programs.
    """
    if isinstance(program, str):
        program = parse(program)
    steps = decompose(program, kg)
    questions: List[str] = []
    for step in steps[:-1]:
        prompt = qgen_prompt(steps[:len(questions) + 1], questions, kg, templates)
        q = _best(lm.generate(prompt, cfg.beam_k, cfg.max_tokens, stop=("\n",)))
        if not q:
            raise GenerationError(f"empty generation for sub-program {step}")
        questions.append(q)

    prompt = qgen_prompt(steps, questions, kg, templates)
    beam = [c for c in lm.generate(prompt, cfg.beam_k, cfg.max_tokens, stop=("\n",))
            if postprocess(c.text)]
    if not beam:
        raise GenerationError(f"empty generation for {program}")
    target = render(program, kg)
    ranked = inverse_rerank(lm, beam, lambda c: templates.qgen_inverse(postprocess(c.text)), target)
    top, inv = ranked[0]
    question = postprocess(top.text)

    entries = []
    if cfg.keep_intermediate:
        for step, q in zip(steps[:-1], questions):
            try:
                if execute_nonempty(kg, step):
                    entries.append(make_entry(step, q, kg, {"backend": lm.backend_id, "intermediate": True}))
            except ExecutionError:
                pass
    meta = {"backend": lm.backend_id, "forward_score": top.normalized_score, "inverse_score": inv,
            "steps": [str(s) for s in steps[:-1]], "step_questions": questions}
    entries.append(make_entry(program, question, kg, meta))
    return entries


def make_entry(p: Program, question: str, kg: KnowledgeGraph, meta: dict) -> CorpusEntry:
    return CorpusEntry(
        question=question,
        program=str(p),
        pattern=pattern_of(p, kg),
        schema_items=sorted(schema_items_of(p)),
        complexity=complexity(p),
        anonymized_question=anonymize_for_program(question, p, kg),
        meta=meta,
    )


def build_corpus(programs: Iterable[Union[Program, str]], kg: KnowledgeGraph, lm: LmBackend,
                 templates: PromptTemplates = DEFAULT_TEMPLATES,
                 cfg: QGenConfig = QGenConfig()) -> ExplorationCorpus:
    """Generate questions for every program; failures are logged and counted."""
    entries: List[CorpusEntry] = []
    failures = 0
    for p in programs:
        try:
            entries.extend(generate_question(p, kg, lm, templates, cfg))
        except (GenerationError, LMError) as e:
            failures += 1
            log.warning("question generation failed for %s: %s", p, e)
    entries.sort(key=lambda e: (e.program, e.meta.get("intermediate", False)))
    return ExplorationCorpus(entries, failures)
