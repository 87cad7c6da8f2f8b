"""Independent brute-force reference implementations used by the tests.

Nothing here imports the executor: programs are evaluated by set
comprehensions over the raw triple list.
"""
from __future__ import annotations

import random
from typing import Dict, List, Sequence, Tuple

from kgexplore.kg import Literal, graph_from_strings
from kgexplore.program import (COMPARATORS, And, ArgMax, ArgMin, ClassRef, Compare, Count, EntityRef, Join,
                               LiteralRef)

TYPE = "type"


class OracleError(Exception):
    pass


def node_of(token: str):
    if "^^" in token:
        value, tag = token.rsplit("^^", 1)
        if tag == "int":
            return Literal(int(value), "int")
        if tag == "float":
            return Literal(float(value), "float")
        raise ValueError(tag)
    return token


def triples_of(tsv: str) -> List[Tuple[str, str, object]]:
    out = []
    for line in tsv.splitlines():
        if line.strip() and not line.startswith("#"):
            s, r, o = line.split("\t")
            out.append((s, r, node_of(o)))
    return sorted(set(out), key=str)


def oracle(T: Sequence[Tuple[str, str, object]], p, memo: Dict = None):
    """Reference denotation of ``p`` over triples ``T`` (memoised in ``memo``)."""
    if memo is None:
        return _oracle(T, p, {})
    key = str(p)
    if key not in memo:
        try:
            memo[key] = ("ok", _oracle(T, p, memo))
        except OracleError as e:
            memo[key] = ("error", e)
    kind, val = memo[key]
    if kind == "error":
        raise val
    return val


def _oracle(T, p, memo):
    if isinstance(p, EntityRef):
        return {p.id} if any(p.id in (s, o) for s, _, o in T) else set()
    if isinstance(p, LiteralRef):
        return {p.node}
    if isinstance(p, ClassRef):
        return {s for s, r, o in T if r == TYPE and o == p.id}
    if isinstance(p, Join):
        inner = oracle(T, p.child, memo)
        if p.reverse:
            return {o for s, r, o in T if r == p.relation and s in inner}
        return {s for s, r, o in T if r == p.relation and o in inner}
    if isinstance(p, And):
        return oracle(T, p.left, memo) & oracle(T, p.right, memo)
    if isinstance(p, Count):
        return len(oracle(T, p.child, memo))
    if isinstance(p, (ArgMax, ArgMin)):
        xs = oracle(T, p.child, memo)
        if not xs:
            return set()
        vals = {x: [o.value for s, r, o in T if s == x and r == p.relation and isinstance(o, Literal)]
                for x in xs}
        vals = {x: v for x, v in vals.items() if v}
        if not vals:
            raise OracleError("no values")
        pick = max if isinstance(p, ArgMax) else min
        per = {x: pick(v) for x, v in vals.items()}
        target = pick(per.values())
        return {x for x, v in per.items() if v == target}
    if isinstance(p, Compare):
        lit = p.literal.node
        ops = {"lt": lambda a, b: a < b, "le": lambda a, b: a <= b,
               "gt": lambda a, b: a > b, "ge": lambda a, b: a >= b}
        return {s for s, r, o in T if r == p.relation and isinstance(o, Literal) and ops[p.op](o.value, lit.value)}
    raise TypeError(p)


# -- random graphs ------------------------------------------------------------------------------


def random_graph(seed: int, n_triples: int = 50):
    """A typed random graph with exactly ``n_triples`` distinct triples.

    Three classes, four entity relations and one int-valued relation.
    Returns ``(kg, triples_tsv)``.
    """
    rng = random.Random(seed)
    classes = ["c.a", "c.b", "c.c"]
    ents = [f"e{i}" for i in range(10)]
    rels = ["r.one", "r.two", "r.three", "r.four"]
    schema = ["type\trelation\ttype"] + [f"{c}\tclass\t{c}" for c in classes]
    schema += [f"{r}\trelation\t{r}" for r in rels] + ["r.num\trelation\tnumber\t\tint"]
    lines = set()
    for e in ents:
        lines.add(f"{e}\ttype\t{rng.choice(classes)}")
    while len(lines) < n_triples:
        s = rng.choice(ents)
        if rng.random() < 0.2:
            lines.add(f"{s}\tr.num\t{rng.randint(1, 6)}^^int")
        else:
            lines.add(f"{s}\t{rng.choice(rels)}\t{rng.choice(ents)}")
    tsv = "\n".join(sorted(lines)) + "\n"
    return graph_from_strings(tsv, "\n".join(schema) + "\n"), tsv


# -- program enumeration ------------------------------------------------------------------------


def enumerate_programs(kg, T) -> List:
    """All programs of complexity <= 2 in a fixed grammar over the graph.

    Leaves, one- and two-hop joins in both directions, class conjunctions,
    conjunctions of two one-hop joins, COUNT, ARGMAX/ARGMIN over literal
    relations and comparatives against every literal in the graph.
    """
    entities = sorted({s for s, _, _ in T} | {o for _, r, o in T if isinstance(o, str) and r != TYPE})
    classes = sorted({o for _, r, o in T if r == TYPE})
    literals = sorted({o for _, _, o in T if isinstance(o, Literal)}, key=str)
    rels = sorted({r for _, r, _ in T if r != TYPE})
    lit_rels = sorted({r for _, r, o in T if isinstance(o, Literal)})
    leaves = ([EntityRef(e) for e in entities] + [ClassRef(c) for c in classes]
              + [LiteralRef(*l) for l in literals])
    j1 = [Join(r, l, rev) for r in rels for l in leaves for rev in (False, True)]
    j2 = [Join(r, j, rev) for r in rels for j in j1 for rev in (False, True)]
    cmp_ = [Compare(op, r, LiteralRef(*l)) for r in lit_rels for l in literals for op in COMPARATORS]
    sets = leaves + j1 + j2 + cmp_
    sets += [And(ClassRef(c), j) for c in classes for j in j1 + j2 + cmp_]
    sets += [And(a, b) for i, a in enumerate(j1) for b in j1[i + 1:]]
    progs = list(sets)
    progs += [Count(s) for s in sets]
    progs += [f(s, r) for s in leaves + j1 for r in lit_rels for f in (ArgMax, ArgMin)]
    return progs


def outcome(fn):
    try:
        out = fn()
    except Exception:  # errors are part of the compared behaviour
        return ("error",)
    return ("ok", out if isinstance(out, int) else frozenset(out))
