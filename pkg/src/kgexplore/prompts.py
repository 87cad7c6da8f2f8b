"""Prompt templates for question generation and program scoring.

Four prompt families are rendered here:

* question generation with least-to-most demonstrations and a schema block,
* its inverse (question -> program) used to re-rank generated questions,
* reasoning (question -> program) with retrieved demonstrations,
* its inverse (program -> question) used in the final re-rank.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

QGEN_INSTRUCTION = (
    "Translate the following logical form query into a natural language question in English. "
    "The generated question must have the same meaning as the logical query. "
    "The generated question must cover all and only the information present in the logical query. "
    "The generated question should use the schema which describes the entities, relations, and "
    "functions present in the logical query. Use each previous query and solution as a hint "
    "to solve the next query."
)
QGEN_INVERSE_INSTRUCTION = "Translate the following question into its semantic parse."
REASONING_INSTRUCTION = (
    "Write a logical form expression using only elements mentioned in the provided natural "
    'language question. An "R" before a relation in the logical expression may be used to '
    "indicate a reverse or inverse relation."
)
REASONING_INVERSE_INSTRUCTION = (
    "Write a plausible question in English that can be formed from the provided logical query "
    "as a starting point. The question must contain at least all of the information present in "
    "the logical query."
)


@dataclass(frozen=True)
class PromptTemplates:
    qgen_instruction: str = QGEN_INSTRUCTION
    qgen_inverse_instruction: str = QGEN_INVERSE_INSTRUCTION
    reasoning_instruction: str = REASONING_INSTRUCTION
    reasoning_inverse_instruction: str = REASONING_INVERSE_INSTRUCTION

    # -- question generation ----------------------------------------------------

    def qgen_block(self, program: str, schema: str, question: str = "") -> str:
        return f"### Logical Query:\n{program}\n### Schema:\n{schema}\n### English Question:\n{question}"

    def qgen(self, program: str, schema: str, demos: Sequence[Tuple[str, str, str]] = ()) -> str:
        """``demos`` are ``(program, schema, question)`` triples of earlier steps."""
        parts = [f"### Instructions:\n{self.qgen_instruction}\n\n"]
        for p, s, q in demos:
            parts.append(self.qgen_block(p, s, q) + "\n\n")
        parts.append(self.qgen_block(program, schema))
        return "".join(parts)

    def qgen_inverse(self, question: str) -> str:
        return (f"### Instructions:\n{self.qgen_inverse_instruction}\n\n"
                f"### Question:\n{question}\n### Semantic Parse:\n")

    # -- reasoning -------------------------------------------------------------------

    def reasoning(self, question: str, demos: Iterable[Tuple[str, str]] = ()) -> str:
        """``demos`` are ``(question, program)`` pairs."""
        parts = [f"### Instructions:\n{self.reasoning_instruction}\n\n"]
        for q, p in demos:
            parts.append(f"### Question:\n{q}\n### Logical Form:\n{p}\n\n")
        parts.append(f"### Question:\n{strip_question(question)}\n### Logical Form:\n")
        return "".join(parts)

    def reasoning_inverse(self, program: str) -> str:
        return (f"### Instructions:\n{self.reasoning_inverse_instruction}\n\n"
                f"### Logical Query:\n{program}\n### Plausible Question:\n")


def strip_question(question: str) -> str:
    """The test question as placed in a reasoning prompt (no trailing '?')."""
    return question.strip().rstrip("?").rstrip()


DEFAULT_TEMPLATES = PromptTemplates()
