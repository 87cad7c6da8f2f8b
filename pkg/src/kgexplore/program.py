"""S-expression programs: AST, parser, printer and structural utilities.

Grammar (canonical form, single spaces)::

    expr   := "(AND" expr expr ")"
            | "(JOIN" rel expr ")"
            | "(COUNT" expr ")"
            | "(ARGMAX" expr relid ")" | "(ARGMIN" expr relid ")"
            | "(" cmp relid literal ")"          cmp in le, lt, ge, gt
            | entity | literal | class
    rel    := relid | "(R" relid ")"
    entity := '"' label-or-id '"' | Freebase mid (m.0abc, g.1xyz)
    literal:= value "^^" tag                      tag in int, float, date, string

``(le movie.year 2010^^int)`` denotes the subjects whose ``movie.year`` value
is <= 2010. COUNT/ARGMAX/ARGMIN are only allowed as the outermost operator.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

from .kg import LITERAL_TYPES, KnowledgeGraph, Literal, parse_literal, split_literal

COMPARATORS = ("le", "lt", "ge", "gt")
_MID = re.compile(r"^[mg]\.[0-9a-z_]+$")
HOLE = "#var"


class ProgramSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class EntityRef:
    id: str

    def __str__(self):
        if _MID.match(self.id):
            return self.id
        return '"%s"' % self.id.replace("\\", "\\\\").replace('"', '\\"')


@dataclass(frozen=True)
class LiteralRef:
    value: Union[int, float, object, str]
    type: str

    @property
    def node(self) -> Literal:
        return Literal(self.value, self.type)

    def __str__(self):
        return str(self.node)


@dataclass(frozen=True)
class ClassRef:
    id: str

    def __str__(self):
        return self.id


@dataclass(frozen=True)
class Join:
    relation: str
    child: "Program"
    reverse: bool = False

    def __str__(self):
        rel = f"(R {self.relation})" if self.reverse else self.relation
        return f"(JOIN {rel} {self.child})"


@dataclass(frozen=True)
class And:
    left: "Program"
    right: "Program"

    def __str__(self):
        return f"(AND {self.left} {self.right})"


@dataclass(frozen=True)
class Count:
    child: "Program"

    def __str__(self):
        return f"(COUNT {self.child})"


@dataclass(frozen=True)
class ArgMax:
    child: "Program"
    relation: str

    def __str__(self):
        return f"(ARGMAX {self.child} {self.relation})"


@dataclass(frozen=True)
class ArgMin:
    child: "Program"
    relation: str

    def __str__(self):
        return f"(ARGMIN {self.child} {self.relation})"


@dataclass(frozen=True)
class Compare:
    op: str
    relation: str
    literal: LiteralRef

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.op!r}")

    def __str__(self):
        return f"({self.op} {self.relation} {self.literal})"


Program = Union[EntityRef, LiteralRef, ClassRef, Join, And, Count, ArgMax, ArgMin, Compare]
LEAVES = (EntityRef, LiteralRef, ClassRef)
ROOT_ONLY = (Count, ArgMax, ArgMin)


# -- parsing ---------------------------------------------------------------------------

_TOKEN = re.compile(r'\s*(?:(\()|(\))|("(?:[^"\\]|\\.)*"(?:\^\^[^\s()]+)?)|([^\s()"]+))')


def _tokenize(text: str) -> List[str]:
    tokens, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ProgramSyntaxError(f"unexpected character at offset {pos}: {text[pos:pos + 10]!r}")
        tokens.append(next(g for g in m.groups() if g is not None))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return tokens


def _unquote(tok: str) -> str:
    return tok[1:-1].replace('\\"', '"').replace("\\\\", "\\")


def _atom(tok: str) -> Program:
    if tok.startswith('"'):
        if tok.endswith('"'):
            return EntityRef(_unquote(tok))
        value, tag = split_literal(tok)
        return _literal(value, tag)
    parts = split_literal(tok)
    if parts is not None:
        return _literal(*parts)
    if _MID.match(tok):
        return EntityRef(tok)
    if re.fullmatch(r"-?\d+", tok):
        return LiteralRef(int(tok), "int")
    if re.fullmatch(r"-?\d+\.\d*(?:[eE][-+]?\d+)?", tok):
        return LiteralRef(float(tok), "float")
    return ClassRef(tok)


def _literal(value: str, tag: str) -> LiteralRef:
    if tag not in LITERAL_TYPES:
        raise ProgramSyntaxError(f"unknown literal type tag {tag!r}")
    try:
        lit = parse_literal(value, tag)
    except ValueError as exc:
        raise ProgramSyntaxError(f"bad {tag} literal {value!r}: {exc}") from None
    return LiteralRef(lit.value, lit.type)


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        if tok is None:
            raise ProgramSyntaxError("unbalanced parentheses: unexpected end of input")
        self.i += 1
        return tok

    def expect_close(self, head):
        tok = self.take()
        if tok != ")":
            raise ProgramSyntaxError(f"arity violation: too many arguments to {head}")

    def relation_id(self, head):
        tok = self.take()
        if tok in ("(", ")") or tok.startswith('"'):
            raise ProgramSyntaxError(f"{head} expects a relation id, got {tok!r}")
        return tok

    def expr(self, top=False) -> Program:
        tok = self.take()
        if tok == ")":
            raise ProgramSyntaxError("unbalanced parentheses: unexpected ')'")
        if tok != "(":
            return _atom(tok)
        head = self.take()
        if head == "R":
            raise ProgramSyntaxError("reverse relation (R ...) is only allowed as the relation of a JOIN")
        if head == "JOIN":
            if self.peek() == "(":
                self.take()
                if self.take() != "R":
                    raise ProgramSyntaxError("JOIN relation must be an id or (R id)")
                rel = self.relation_id("R")
                self.expect_close("R")
                reverse = True
            else:
                rel, reverse = self.relation_id("JOIN"), False
            child = self.set_expr("JOIN")
            self.expect_close("JOIN")
            return Join(rel, child, reverse)
        if head == "AND":
            left = self.set_expr("AND")
            right = self.set_expr("AND")
            self.expect_close("AND")
            return And(left, right)
        if head in ("COUNT", "ARGMAX", "ARGMIN"):
            if not top:
                raise ProgramSyntaxError(f"{head} may only appear as the outermost operator")
            child = self.set_expr(head)
            if head == "COUNT":
                self.expect_close(head)
                return Count(child)
            rel = self.relation_id(head)
            self.expect_close(head)
            return ArgMax(child, rel) if head == "ARGMAX" else ArgMin(child, rel)
        if head in COMPARATORS:
            rel = self.relation_id(head)
            lit = _atom(self.take())
            if not isinstance(lit, LiteralRef):
                raise ProgramSyntaxError(f"{head} expects a literal, got {lit}")
            self.expect_close(head)
            return Compare(head, rel, lit)
        raise ProgramSyntaxError(f"unknown operator {head!r}")

    def set_expr(self, head):
        if self.peek() == ")":
            raise ProgramSyntaxError(f"arity violation: too few arguments to {head}")
        return self.expr()


def parse(text: str) -> Program:
    """Parse an s-expression program; raises :class:`ProgramSyntaxError`."""
    tokens = _tokenize(text)
    if not tokens:
        raise ProgramSyntaxError("empty program")
    depth = 0
    for tok in tokens:
        depth += tok == "("
        depth -= tok == ")"
        if depth < 0:
            raise ProgramSyntaxError("unbalanced parentheses: unexpected ')'")
    if depth:
        raise ProgramSyntaxError("unbalanced parentheses")
    p = _Parser(tokens)
    prog = p.expr(top=True)
    if p.peek() is not None:
        raise ProgramSyntaxError(f"trailing input after program: {p.peek()!r}")
    return prog


def to_string(p: Program) -> str:
    return str(p)


# -- traversal --------------------------------------------------------------------------


def children(p: Program) -> Tuple[Program, ...]:
    if isinstance(p, (Join, Count, ArgMax, ArgMin)):
        return (p.child,)
    if isinstance(p, And):
        return (p.left, p.right)
    return ()


def walk(p: Program) -> Iterator[Program]:
    """Post-order traversal (children before parents, left to right)."""
    for c in children(p):
        yield from walk(c)
    yield p


def replace_children(p: Program, new: Sequence[Program]) -> Program:
    if isinstance(p, Join):
        return Join(p.relation, new[0], p.reverse)
    if isinstance(p, And):
        return And(new[0], new[1])
    if isinstance(p, Count):
        return Count(new[0])
    if isinstance(p, ArgMax):
        return ArgMax(new[0], p.relation)
    if isinstance(p, ArgMin):
        return ArgMin(new[0], p.relation)
    return p


def transform(p: Program, fn: Callable[[Program], Optional[Program]]) -> Program:
    """Bottom-up rewrite; ``fn`` returns a replacement or None to keep the node."""
    kids = children(p)
    if kids:
        p = replace_children(p, [transform(c, fn) for c in kids])
    out = fn(p)
    return p if out is None else out


def relations_of(p: Program) -> List[str]:
    """Relation ids in post-order, with repeats."""
    out = []
    for node in walk(p):
        if isinstance(node, (Join, ArgMax, ArgMin, Compare)):
            out.append(node.relation)
    return out


def directed_relations(p: Program) -> Set[str]:
    """Relation ids, reverse traversals written ``(R id)``."""
    out = set()
    for node in walk(p):
        if isinstance(node, Join):
            out.add(f"(R {node.relation})" if node.reverse else node.relation)
        elif isinstance(node, (ArgMax, ArgMin, Compare)):
            out.add(node.relation)
    return out


def classes_in(p: Program) -> List[str]:
    return [n.id for n in walk(p) if isinstance(n, ClassRef)]


def entities_in(p: Program) -> List[str]:
    return [n.id for n in walk(p) if isinstance(n, EntityRef)]


def schema_items_of(p: Program) -> Set[str]:
    return set(relations_of(p)) | set(classes_in(p))


def complexity(p: Program) -> int:
    """Number of JOIN nodes."""
    return sum(isinstance(n, Join) for n in walk(p))


def repeated_relations(p: Program) -> int:
    """Relation occurrences beyond the first use of each id (direction ignored)."""
    return sum(c - 1 for c in Counter(relations_of(p)).values())


def depth(p: Program) -> int:
    kids = children(p)
    return 1 + max(map(depth, kids)) if kids else 0


# -- anonymisation ----------------------------------------------------------------------

PLACEHOLDER_ENTITY = "entity"


def entity_class(kg: Optional[KnowledgeGraph], entity: str) -> str:
    """Lexicographically first class of ``entity`` (resolving labels), or ``entity``."""
    if kg is None:
        return PLACEHOLDER_ENTITY
    classes = set()
    for eid in sorted(kg.resolve_entity(entity)):
        cs = kg.classes_of(eid)
        if cs:
            classes.add(cs[0])
    return min(classes) if classes else PLACEHOLDER_ENTITY


def anonymize(p: Program, kg: Optional[KnowledgeGraph] = None) -> Program:
    """Replace entities by their class and literals by their type tag."""
    def fn(node):
        if isinstance(node, EntityRef):
            return ClassRef(entity_class(kg, node.id))
        if isinstance(node, LiteralRef):
            return ClassRef(node.type)
        if isinstance(node, Compare):
            return _AnonCompare(node.op, node.relation, node.literal.type)
        return None
    return transform(p, fn)


@dataclass(frozen=True)
class _AnonCompare:
    op: str
    relation: str
    type: str

    def __str__(self):
        return f"({self.op} {self.relation} {self.type})"


def pattern_of(p: Union[Program, str], kg: Optional[KnowledgeGraph] = None) -> str:
    """Canonical pattern string of ``p`` (see :func:`anonymize`).

    Idempotent: a pattern string maps to itself.
    """
    if isinstance(p, str):
        p = parse_pattern(p)
    return str(anonymize(p, kg))


def parse_pattern(text: str) -> Program:
    """Parse a program or a pattern string (comparators may carry a bare type tag)."""
    fixed = re.sub(r"\((le|lt|ge|gt) (\S+) (int|float|date|string)\)",
                   lambda m: f'({m.group(1)} {m.group(2)} {_dummy(m.group(3))})', text)
    prog = parse(fixed)
    if fixed == text:
        return prog

    def fn(node):
        if isinstance(node, Compare):
            return _AnonCompare(node.op, node.relation, node.literal.type)
        return None
    return transform(prog, fn)


def _dummy(tag):
    return {"int": "0^^int", "float": "0.0^^float", "date": "1970-01-01^^date", "string": '""^^string'}[tag]


def subexpressions(p: Program, kg: Optional[KnowledgeGraph] = None) -> Set[str]:
    """Pattern fragments, one per operator node, with the set operand replaced by ``#var``.

    ``(COUNT X)`` gives ``(COUNT #var)``, ``(JOIN r X)`` gives ``(JOIN r #var)``,
    ``(ARGMIN X r)`` gives ``(ARGMIN r #var)`` (hole last), ``(AND c X)`` with a
    class operand gives ``(AND c #var)``; a conjunction of two compound
    operands gives ``(AND #var #var)``. Comparators keep their type tag.
    """
    out = set()
    anon = anonymize(p, kg)
    for node in walk(anon):
        if isinstance(node, Join):
            rel = f"(R {node.relation})" if node.reverse else node.relation
            out.add(f"(JOIN {rel} {HOLE})")
        elif isinstance(node, And):
            leaves = [c for c in (node.left, node.right) if isinstance(c, LEAVES)]
            if len(leaves) == 2:
                out.add(f"(AND {node.left} {HOLE})")
            elif leaves:
                out.add(f"(AND {leaves[0]} {HOLE})")
            else:
                out.add(f"(AND {HOLE} {HOLE})")
        elif isinstance(node, Count):
            out.add(f"(COUNT {HOLE})")
        elif isinstance(node, (ArgMax, ArgMin)):
            head = "ARGMAX" if isinstance(node, ArgMax) else "ARGMIN"
            out.add(f"({head} {node.relation} {HOLE})")
        elif isinstance(node, _AnonCompare):
            out.add(str(node))
    return out


def anonymize_question(question: str, mentions: Iterable[Tuple[Tuple[int, int], str]]) -> str:
    """Replace each ``(start, end)`` span of ``question`` with its class id.

    Raises ValueError on overlapping or out-of-range spans.
    """
    spans = sorted(mentions, key=lambda m: m[0])
    out, pos = [], 0
    for (start, end), cls in spans:
        if start < 0 or end > len(question) or start >= end:
            raise ValueError(f"span {(start, end)} outside question")
        if start < pos:
            raise ValueError(f"overlapping mention spans at {(start, end)}")
        out.append(question[pos:start])
        out.append(cls)
        pos = end
    out.append(question[pos:])
    return "".join(out)


# -- least-to-most decomposition ---------------------------------------------------------


def _fragment_class(node, kg, enclosing):
    if kg is not None:
        if isinstance(node, Join):
            cls = kg.relation_range(node.relation) if node.reverse else kg.relation_domain(node.relation)
        else:
            cls = kg.relation_domain(node.relation)
    elif not getattr(node, "reverse", False) and node.relation.count(".") >= 2:
        cls = node.relation.rsplit(".", 1)[0]
    else:
        cls = None
    return cls or enclosing


def decompose(p: Program, kg: Optional[KnowledgeGraph] = None) -> List[Program]:
    """Sub-programs of ``p`` from the inner-most clause outwards, ending with ``p``.

    Each parenthetic level becomes one sub-program. Relation clauses are made
    executable by conjoining the class they denote (declared domain, or range
    for reverse relations; without a graph the ``domain.type.property`` naming
    convention is used, then the nearest enclosing class). Conjunctions are
    emitted as they are.
    """
    steps: List[Program] = []

    def visit(node, enclosing, is_root):
        if isinstance(node, And):
            cls = next((c.id for c in (node.left, node.right) if isinstance(c, ClassRef)), None)
            inner = cls or enclosing
        else:
            inner = None
        for c in children(node):
            visit(c, inner, False)
        if isinstance(node, LEAVES):
            return
        if is_root:
            return
        if isinstance(node, (Join, Compare)):
            cls = _fragment_class(node, kg, enclosing)
            steps.append(And(ClassRef(cls), node) if cls else node)
        else:
            steps.append(node)

    visit(p, None, True)
    out, seen = [], {str(p)}
    for s in steps:
        key = str(s)
        if key not in seen:
            seen.add(key)
            out.append(s)
    out.append(p)
    return out


def prompt_schema_items(p: Program, kg: KnowledgeGraph) -> List[str]:
    """Schema ids shown to the question generator for ``p``.

    Classes first (program classes plus the declared domain/range classes of
    its relations, sorted), then relations in post-order of first use.
    """
    classes = set(classes_in(p))
    rels: List[str] = []
    for node in walk(p):
        if isinstance(node, (Join, ArgMax, ArgMin, Compare)):
            r = node.relation
            if r not in rels:
                rels.append(r)
            for c in (kg.relation_domain(r), kg.relation_range(r)):
                if c:
                    classes.add(c)
    return sorted(classes) + rels


def render(p: Program, kg: Optional[KnowledgeGraph] = None) -> str:
    """Surface form for prompts: entity ids are replaced by their labels."""
    if kg is None:
        return str(p)

    def fn(node):
        if isinstance(node, EntityRef) and node.id in kg.entities:
            label = kg.label(node.id)
            return EntityRef(label) if label != node.id else None
        return None
    return str(transform(p, fn))
