"""Random-walk enumeration of executable programs over a knowledge graph.

A walk starts from a sampled answer class ``c0`` and grows relation chains
outward from its instances, one reachable relation at a time, until the
sampled complexity is reached. The far end of each chain is closed with a
class (or a literal type), which is then grounded with a concrete entity
(or literal value) such that the program executes to a non-empty answer.
"""
from __future__ import annotations

import itertools
import json
import logging
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, TextIO, Tuple

from .executor import Executor, ExecutionError, execute_nonempty
from .kg import LITERAL_TYPES, NUMERIC_TYPES, KnowledgeGraph, Literal, Node
from .program import (COMPARATORS, And, ArgMax, ArgMin, ClassRef, Compare, Count, EntityRef, Join,
                      LiteralRef, Program, complexity, directed_relations, classes_in, pattern_of,
                      subexpressions, walk)

log = logging.getLogger(__name__)

FUNCTIONS = ("COUNT", "ARGMAX", "ARGMIN") + COMPARATORS
MAX_COMPLEXITY = 4
FRONTIER_CAP = 10_000


@dataclass
class ExplorationConfig:
    budget: int = 10_000
    per_pattern_cap: int = 5
    hop_weights: Tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    function_probability: float = 0.3
    function_set: Tuple[str, ...] = FUNCTIONS
    branch_probability: float = 0.2
    grounding_attempts: int = 100
    max_walk_retries: Optional[int] = None
    frontier_cap: int = FRONTIER_CAP
    rng_seed: int = 0

    def __post_init__(self):
        self.hop_weights = tuple(float(w) for w in self.hop_weights)
        self.function_set = tuple(self.function_set)
        self.validate()

    def validate(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.per_pattern_cap < 1:
            raise ValueError("per_pattern_cap must be >= 1")
        if not 1 <= len(self.hop_weights) <= MAX_COMPLEXITY:
            raise ValueError(f"hop_weights must cover complexities 1..{MAX_COMPLEXITY}")
        if any(w < 0 for w in self.hop_weights) or abs(sum(self.hop_weights) - 1.0) > 1e-6:
            raise ValueError("hop_weights must be non-negative and sum to 1")
        for p in (self.function_probability, self.branch_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        unknown = set(self.function_set) - set(FUNCTIONS)
        if unknown:
            raise ValueError(f"unknown functions {sorted(unknown)}")
        if self.grounding_attempts < 0:
            raise ValueError("grounding_attempts must be >= 0")
        if self.max_walk_retries is not None and self.max_walk_retries < 1:
            raise ValueError("max_walk_retries must be >= 1")

    @property
    def retries(self) -> int:
        return self.max_walk_retries if self.max_walk_retries is not None else 20 * self.budget


@dataclass(frozen=True)
class ExploredProgram:
    program: Program
    pattern: str
    complexity: int
    answer_size: int
    subexpressions: frozenset = frozenset()

    def to_json(self) -> dict:
        return {"program": str(self.program), "pattern": self.pattern,
                "complexity": self.complexity, "answer_size": self.answer_size}


@dataclass
class ExplorationResult:
    programs: List[ExploredProgram] = field(default_factory=list)
    pattern_counts: Counter = field(default_factory=Counter)
    walks: int = 0
    rejected_walks: int = 0
    failed_groundings: int = 0
    elapsed: float = 0.0
    exhausted: bool = False

    def write_jsonl(self, fh: TextIO):
        for ep in self.programs:
            fh.write(json.dumps(ep.to_json(), sort_keys=True) + "\n")


# -- walking ---------------------------------------------------------------------------------


def _sorted(nodes) -> List[Node]:
    return sorted(nodes, key=lambda n: (isinstance(n, Literal), str(n)))


def _cap(nodes, limit: int, rng: random.Random) -> List[Node]:
    nodes = _sorted(nodes)
    if len(nodes) > limit:
        nodes = rng.sample(nodes, limit)
    return nodes


def _step(kg: KnowledgeGraph, frontier: Sequence[Node], relation: str, reverse: bool) -> Set[Node]:
    """Nodes reached by walking ``relation`` from ``frontier``.

    Forward (the frontier is the subject side) yields objects; the program
    fragment is ``(JOIN relation X)`` with X the new frontier.
    """
    out: Set[Node] = set()
    for n in frontier:
        out.update(kg.subjects(n, relation) if reverse else kg.objects(n, relation))
    return out


def _chain_program(links: Sequence[Tuple[str, bool]], end: Program) -> Program:
    p = end
    for relation, reverse in reversed(links):
        # a forward step (frontier = subjects) reads as JOIN r over the objects
        p = Join(relation, p, reverse=reverse)
    return p


def _options(kg: KnowledgeGraph, frontier: Sequence[Node], last: Optional[Tuple[str, bool]]):
    """Relations reachable from ``frontier`` as (relation, reverse) pairs.

    ``reverse`` here means the frontier sits on the object side. Immediately
    walking back along the edge just taken is excluded.
    """
    opts = set()
    for ref in kg.reachable_schema(frontier):
        if ref.kind != "relation":
            continue
        opts.add((ref.id, ref.reverse))
    if last is not None:
        opts.discard((last[0], not last[1]))
    return sorted(opts)


def _close(kg: KnowledgeGraph, frontier: Sequence[Node], rng: random.Random) -> Optional[ClassRef]:
    """End a chain with a class of its frontier (or a literal type tag)."""
    classes = set()
    for n in frontier:
        if isinstance(n, Literal):
            classes.add(n.type)
        else:
            classes.update(kg.classes_of(n))
    if not classes:
        return None
    return ClassRef(rng.choice(sorted(classes)))


def walk_one(kg: KnowledgeGraph, cfg: ExplorationConfig, rng: random.Random,
             pattern_counts: Optional[Counter] = None, start_class: Optional[str] = None) -> Optional[Program]:
    """One symbolic walk. Returns an ungrounded program, or None on rejection.

    The result has ClassRef placeholders at the far end of each relation
    chain; :func:`ground` substitutes entities (or literals) for them.
    """
    target = rng.choices(range(1, len(cfg.hop_weights) + 1), weights=cfg.hop_weights)[0]
    if start_class is None:
        populated = kg.populated_classes()
        if not populated:
            return None
        start_class = rng.choice(populated)
    roots = kg.instances_of(start_class) if kg.is_class(start_class) else frozenset()
    if not roots:
        return None
    root_nodes = _cap(roots, cfg.frontier_cap, rng)

    chains: List[Program] = []
    links: List[Tuple[str, bool]] = []
    frontier = root_nodes
    hops = 0
    while hops < target:
        opts = _options(kg, frontier, links[-1] if links else None)
        if not opts:
            break
        relation, on_object_side = rng.choice(opts)
        nxt = _step(kg, frontier, relation, on_object_side)
        if not nxt:
            break
        # frontier as subject -> fragment JOIN r (objects); as object -> JOIN (R r) (subjects)
        links.append((relation, on_object_side))
        frontier = _cap(nxt, cfg.frontier_cap, rng)
        hops += 1
        if hops < target and len(links) >= 1 and rng.random() < cfg.branch_probability:
            end = _close(kg, frontier, rng)
            if end is None:
                return None
            chains.append(_chain_program(links, end))
            links, frontier = [], root_nodes
    if hops == 0:
        return None
    if links:
        end = _close(kg, frontier, rng)
        if end is None:
            return None
        chains.append(_chain_program(links, end))

    body: Program = chains[0]
    for c in chains[1:]:
        body = And(body, c)
    p: Program = And(ClassRef(start_class), body)

    if cfg.function_set and rng.random() < cfg.function_probability:
        p = _apply_function(kg, p, rng.choice(cfg.function_set), root_nodes, rng) or p

    if pattern_counts is not None and pattern_counts[pattern_of(p, kg)] >= cfg.per_pattern_cap:
        return None
    return p


def _literal_relations_from(kg: KnowledgeGraph, nodes: Sequence[Node], types) -> List[str]:
    rels = set()
    for n in nodes:
        for r, objs in kg.out_edges(n).items():
            if any(isinstance(o, Literal) and o.type in types for o in objs):
                rels.add(r)
    return sorted(rels)


def _apply_function(kg, p, fname, root_nodes, rng) -> Optional[Program]:
    if fname == "COUNT":
        return Count(p)
    ordered = NUMERIC_TYPES | {"date"}
    rels = _literal_relations_from(kg, root_nodes, ordered)
    if not rels:
        return None
    r = rng.choice(rels)
    if fname == "ARGMAX":
        return ArgMax(p, r)
    if fname == "ARGMIN":
        return ArgMin(p, r)
    values = _sorted({o for n in root_nodes for o in kg.objects(n, r)
                      if isinstance(o, Literal) and o.type in ordered})
    if not values:
        return None
    v = rng.choice(values)
    return And(p, Compare(fname, r, LiteralRef(v.value, v.type)))


# -- grounding -------------------------------------------------------------------------------


def topic_positions(p: Program) -> List[Tuple[ClassRef, Optional[str]]]:
    """Deepest ClassRef of each Join chain, with the relation directly above it."""
    found = []

    def visit(node, parent_rel):
        if isinstance(node, Join):
            if isinstance(node.child, ClassRef):
                found.append((node.child, node.relation))
            else:
                visit(node.child, node.relation)
            return
        for c in _kids(node):
            visit(c, None)

    visit(p, None)
    return found


def _kids(node):
    if isinstance(node, And):
        return (node.left, node.right)
    if isinstance(node, (Count, ArgMax, ArgMin)):
        return (node.child,)
    return ()


def _grounding_pool(kg: KnowledgeGraph, ref: ClassRef, relation: Optional[str]) -> List:
    if ref.id in LITERAL_TYPES:
        if relation is None:
            return []
        return [LiteralRef(v.value, v.type) for v in _sorted(kg.relation_objects(relation))
                if isinstance(v, Literal) and v.type == ref.id]
    return [EntityRef(e) for e in sorted(kg.instances_of(ref.id))] if kg.is_class(ref.id) else []


def _substitute(p: Program, mapping: Dict[int, Program]) -> Program:
    counter = itertools.count()

    def visit(node):
        if isinstance(node, Join):
            if isinstance(node.child, ClassRef):
                i = next(counter)
                return Join(node.relation, mapping.get(i, node.child), node.reverse)
            return Join(node.relation, visit(node.child), node.reverse)
        if isinstance(node, And):
            return And(visit(node.left), visit(node.right))
        if isinstance(node, Count):
            return Count(visit(node.child))
        if isinstance(node, ArgMax):
            return ArgMax(visit(node.child), node.relation)
        if isinstance(node, ArgMin):
            return ArgMin(visit(node.child), node.relation)
        return node

    return visit(p)


def ground(kg: KnowledgeGraph, ungrounded: Program, attempts: int, rng: random.Random,
           executor: Optional[Executor] = None) -> Optional[Program]:
    """Substitute topic placeholders with sampled instances until the program
    executes non-empty. Instances are drawn uniformly without replacement (for
    several topics, distinct joint draws)."""
    if attempts <= 0:
        return None
    positions = topic_positions(ungrounded)
    if not positions:
        return None
    pools = [_grounding_pool(kg, ref, rel) for ref, rel in positions]
    if any(not pool for pool in pools):
        return None
    total = 1
    for pool in pools:
        total *= len(pool)
    ex = executor or Executor(kg)
    if len(pools) == 1:
        draws = [(x,) for x in rng.sample(pools[0], min(attempts, total))]
    else:
        draws = []
        seen = set()
        limit = min(attempts, total)
        while len(draws) < limit:
            pick = tuple(rng.randrange(len(pool)) for pool in pools)
            if pick in seen:
                continue
            seen.add(pick)
            draws.append(tuple(pool[i] for pool, i in zip(pools, pick)))
    for draw in draws:
        cand = _substitute(ungrounded, dict(enumerate(draw)))
        try:
            if execute_nonempty(kg, cand, ex):
                return cand
        except ExecutionError:
            continue
    return None


def _redundant(p: Program) -> bool:
    """True if some conjunction has two identical operands."""
    return any(isinstance(n, And) and n.left == n.right for n in walk(p))


# -- driver ----------------------------------------------------------------------------------


def explore(kg: KnowledgeGraph, cfg: ExplorationConfig) -> ExplorationResult:
    """Run walks until ``cfg.budget`` programs are collected or retries run out."""
    cfg.validate()
    if not kg.populated_classes():
        raise ValueError("graph has no class with instances")
    rng = random.Random(cfg.rng_seed)
    result = ExplorationResult()
    seen: Set[str] = set()
    ex = Executor(kg)
    start = time.perf_counter()
    while len(result.programs) < cfg.budget:
        if result.walks >= cfg.retries:
            result.exhausted = True
            log.info("exploration stopped after %d walks with %d programs", result.walks, len(result.programs))
            break
        result.walks += 1
        ungrounded = walk_one(kg, cfg, rng, result.pattern_counts)
        if ungrounded is None:
            result.rejected_walks += 1
            continue
        grounded = ground(kg, ungrounded, cfg.grounding_attempts, rng, ex)
        if grounded is None:
            result.failed_groundings += 1
            continue
        key = str(grounded)
        pattern = pattern_of(grounded, kg)
        if key in seen or _redundant(grounded) or result.pattern_counts[pattern] >= cfg.per_pattern_cap:
            result.rejected_walks += 1
            continue
        answer = ex.execute(grounded)
        size = answer if isinstance(answer, int) else len(answer)
        seen.add(key)
        result.pattern_counts[pattern] += 1
        result.programs.append(ExploredProgram(grounded, pattern, complexity(grounded), size,
                                               frozenset(subexpressions(grounded, kg))))
    result.elapsed = time.perf_counter() - start
    return result


STATS_ROWS = ("Programs", "1-hop", "2-hop", "3-hop", "4-hop", "Relations", "Classes", "Patterns",
              "Sub-expressions", "Time")


def stats(result: ExplorationResult) -> Dict[str, float]:
    """Summary counts; relation counts treat reverse traversals as distinct."""
    hops = Counter(ep.complexity for ep in result.programs)
    relations, classes, patterns, subexprs = set(), set(), set(), set()
    for ep in result.programs:
        relations.update(directed_relations(ep.program))
        classes.update(classes_in(ep.program))
        patterns.add(ep.pattern)
        subexprs.update(ep.subexpressions)
    return {
        "Programs": len(result.programs),
        "1-hop": hops[1], "2-hop": hops[2], "3-hop": hops[3], "4-hop": hops[4],
        "Relations": len(relations), "Classes": len(classes), "Patterns": len(patterns),
        "Sub-expressions": len(subexprs),
        "Time": round(result.elapsed, 3) if result.programs else 0.0,
    }


def format_stats(table: Dict[str, float]) -> str:
    return "\n".join(f"{k}\t{table[k]}" for k in STATS_ROWS) + "\n"
