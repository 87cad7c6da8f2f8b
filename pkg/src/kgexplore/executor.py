"""Denotational evaluation of programs over a :class:`KnowledgeGraph`.

Set-valued programs evaluate to a ``frozenset`` of nodes (entity id strings
and :class:`~kgexplore.kg.Literal` values); ``COUNT`` programs evaluate to an
``int``.
"""
from __future__ import annotations

import operator
from typing import Dict, FrozenSet, List, Optional, Union

from .kg import NUMERIC_TYPES, KnowledgeGraph, Literal, Node
from .program import (And, ArgMax, ArgMin, ClassRef, Compare, Count, EntityRef, Join, LiteralRef,
                      Program, walk)

Answer = Union[FrozenSet[Node], int]

_OPS = {"le": operator.le, "lt": operator.lt, "ge": operator.ge, "gt": operator.gt}


class ExecutionError(RuntimeError):
    pass


def comparable(a: Literal, b: Literal) -> bool:
    if a.type in NUMERIC_TYPES and b.type in NUMERIC_TYPES:
        return True
    return a.type == b.type


def compare(op: str, a: Literal, b: Literal) -> bool:
    if not comparable(a, b):
        raise ExecutionError(f"cannot compare {a.type} with {b.type}")
    return _OPS[op](a.value, b.value)


def validate(kg: KnowledgeGraph, p: Program) -> List[str]:
    """Diagnostics for unknown schema ids and literal/range type mismatches."""
    diags = []
    for node in walk(p):
        if isinstance(node, ClassRef) and not kg.is_class(node.id):
            diags.append(f"unknown class {node.id!r}")
        elif isinstance(node, (Join, ArgMax, ArgMin, Compare)) and not kg.is_relation(node.relation):
            diags.append(f"unknown relation {node.relation!r}")
        elif isinstance(node, EntityRef) and not kg.resolve_entity(node.id):
            diags.append(f"unknown entity {node.id!r}")
        if isinstance(node, Compare) and kg.is_relation(node.relation):
            declared = kg.schema[node.relation].range
            lit = node.literal.node
            if declared and declared in ("int", "float", "date", "string"):
                if not comparable(lit, Literal(None, declared)):
                    diags.append(f"literal type {lit.type} does not match range {declared} of {node.relation}")
    return diags


class Executor:
    """Evaluates programs with a per-instance memo keyed by canonical string.

    One executor per question (or per run, acting as an execution cache); the
    graph itself is never modified.
    """

    def __init__(self, kg: KnowledgeGraph, memo: Optional[Dict[str, Answer]] = None):
        self.kg = kg
        self.memo = {} if memo is None else memo

    def __call__(self, p: Program) -> Answer:
        return self.execute(p)

    def execute(self, p: Program) -> Answer:
        key = str(p)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        out = self._eval(p)
        self.memo[key] = out
        return out

    def _eval(self, p: Program) -> Answer:
        kg = self.kg
        if isinstance(p, EntityRef):
            return kg.resolve_entity(p.id)
        if isinstance(p, LiteralRef):
            return frozenset((p.node,))
        if isinstance(p, ClassRef):
            if not kg.is_class(p.id):
                raise ExecutionError(f"unknown class {p.id!r}")
            return kg.instances_of(p.id)
        if isinstance(p, Join):
            self._check_relation(p.relation)
            inner = self._set(p.child)
            out = set()
            if p.reverse:
                for y in inner:
                    out.update(kg.objects(y, p.relation))
            else:
                for y in inner:
                    out.update(kg.subjects(y, p.relation))
            return frozenset(out)
        if isinstance(p, And):
            left = self._set(p.left)
            if not left:
                return frozenset()
            return left & self._set(p.right)
        if isinstance(p, Count):
            return len(self._set(p.child))
        if isinstance(p, (ArgMax, ArgMin)):
            return self._superlative(p)
        if isinstance(p, Compare):
            return self._compare(p)
        raise ExecutionError(f"cannot evaluate {p!r}")

    def _set(self, p: Program) -> FrozenSet[Node]:
        out = self.execute(p)
        if isinstance(out, int):
            raise ExecutionError("COUNT is only allowed as the outermost operator")
        return out

    def _check_relation(self, relation):
        if not self.kg.is_relation(relation):
            raise ExecutionError(f"unknown relation {relation!r}")

    def _superlative(self, p) -> FrozenSet[Node]:
        self._check_relation(p.relation)
        items = self._set(p.child)
        if not items:
            return frozenset()
        values = {}
        for x in items:
            vals = [v for v in self.kg.objects(x, p.relation) if isinstance(v, Literal)]
            if vals:
                values[x] = vals
        if not values:
            raise ExecutionError(f"no element has a value for {p.relation!r}")
        _check_homogeneous([v for vs in values.values() for v in vs])
        pick = max if isinstance(p, ArgMax) else min
        extreme = {x: pick(v.value for v in vs) for x, vs in values.items()}
        best = pick(extreme.values())
        return frozenset(x for x, v in extreme.items() if v == best)

    def _compare(self, p: Compare) -> FrozenSet[Node]:
        self._check_relation(p.relation)
        target = p.literal.node
        out = set()
        for value, sources in self.kg.relation_objects(p.relation).items():
            if isinstance(value, Literal) and compare(p.op, value, target):
                out.update(sources)
        return frozenset(out)


def _check_homogeneous(values):
    kinds = {"numeric" if v.type in NUMERIC_TYPES else v.type for v in values}
    if len(kinds) > 1:
        raise ExecutionError(f"cannot compare literal types {sorted(kinds)}")


def execute(kg: KnowledgeGraph, p: Program) -> Answer:
    return Executor(kg).execute(p)


def is_empty(answer: Answer) -> bool:
    return answer == 0 if isinstance(answer, int) else not answer


def execute_nonempty(kg: KnowledgeGraph, p: Program, executor: Optional[Executor] = None) -> bool:
    """True iff ``p`` yields a non-empty set or a positive count.

    An outer JOIN stops at the first matching edge instead of building the
    full result set.
    """
    ex = executor or Executor(kg)
    if isinstance(p, Count):
        return execute_nonempty(kg, p.child, ex)
    if isinstance(p, Join):
        ex._check_relation(p.relation)
        lookup = kg.objects if p.reverse else kg.subjects
        return any(lookup(y, p.relation) for y in ex._set(p.child))
    if isinstance(p, (ArgMax, ArgMin)):
        try:
            return bool(ex.execute(p))
        except ExecutionError:
            return False
    return not is_empty(ex.execute(p))
