"""In-memory triple store with an explicit class/relation schema.

Triples are loaded from TSV streams (see ``load_graph``) and indexed in both
directions. Class membership is encoded with a distinguished type predicate
(``"type"`` by default); those edges are kept out of the forward/reverse
indexes and live in the class index instead.
"""
from __future__ import annotations

import io
import logging
import os
import re
from collections import defaultdict
from dataclasses import dataclass
from datetime import date
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Set, Tuple, Union

log = logging.getLogger(__name__)

LITERAL_TYPES = ("int", "float", "date", "string")
NUMERIC_TYPES = frozenset({"int", "float"})


class GraphFormatError(ValueError):
    """Raised when a TSV source cannot be parsed or violates the schema."""

    def __init__(self, message: str, source: str = "", line: Optional[int] = None):
        self.source = source
        self.line = line
        where = ""
        if source:
            where = f"{source}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class UnknownSchemaItem(KeyError):
    def __str__(self):
        return f"unknown schema item: {self.args[0]!r}"


class Literal(NamedTuple):
    """A literal node. Literals are identified by (value, type)."""

    value: Union[int, float, date, str]
    type: str

    def lexical(self) -> str:
        if self.type == "date":
            return self.value.isoformat()
        return str(self.value)

    def __str__(self):
        if self.type == "string":
            return '"%s"^^string' % self.value.replace("\\", "\\\\").replace('"', '\\"')
        return f"{self.lexical()}^^{self.type}"


Node = Union[str, Literal]


def parse_literal(value: str, type_tag: str) -> Literal:
    """Parse the lexical form ``value`` under ``type_tag``.

    Raises ValueError if the value does not parse.
    """
    if type_tag not in LITERAL_TYPES:
        raise ValueError(f"unknown literal type tag {type_tag!r}")
    if type_tag == "int":
        return Literal(int(value), "int")
    if type_tag == "float":
        return Literal(float(value), "float")
    if type_tag == "date":
        return Literal(date.fromisoformat(value), "date")
    if len(value) >= 2 and value[0] == value[-1] == '"':
        value = value[1:-1].replace('\\"', '"').replace("\\\\", "\\")
    return Literal(value, "string")


def split_literal(token: str) -> Optional[Tuple[str, str]]:
    """Split ``value^^type`` into its parts, or return None."""
    idx = token.rfind("^^")
    if idx <= 0:
        return None
    return token[:idx], token[idx + 2:]


def default_description(item_id: str) -> str:
    return re.sub(r"[._]+", " ", item_id).strip()


@dataclass(frozen=True)
class SchemaItem:
    id: str
    kind: str  # "relation" | "class"
    description: str = ""
    domain: Optional[str] = None
    range: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("relation", "class"):
            raise ValueError(f"schema kind must be 'relation' or 'class', got {self.kind!r}")
        if not self.description:
            object.__setattr__(self, "description", default_description(self.id))


class SchemaRef(NamedTuple):
    """A schema item as seen from a node set; ``reverse`` marks relations
    traversed from object to subject."""

    id: str
    kind: str
    reverse: bool = False

    def __str__(self):
        return f"(R {self.id})" if self.reverse else self.id


Triple = Tuple[str, str, Node]


class KnowledgeGraph:
    """Indexed, read-only knowledge graph.

    Build with :func:`load_graph` (TSV streams) or directly from python
    objects. The instance is not modified after construction.
    """

    def __init__(
        self,
        triples: Iterable[Triple],
        schema: Iterable[SchemaItem],
        labels: Optional[Dict[str, Tuple[str, Iterable[str]]]] = None,
        type_predicate: str = "type",
    ):
        self.type_predicate = type_predicate
        self.schema: Dict[str, SchemaItem] = {}
        for item in schema:
            if item.id in self.schema:
                raise ValueError(f"duplicate schema id {item.id!r}")
            self.schema[item.id] = item

        fwd: Dict[str, Dict[str, Set[Node]]] = defaultdict(lambda: defaultdict(set))
        rev: Dict[Node, Dict[str, Set[str]]] = defaultdict(lambda: defaultdict(set))
        inst: Dict[str, Set[str]] = defaultdict(set)
        seen: Set[Triple] = set()
        ordered: List[Triple] = []
        entities: Set[str] = set()
        for s, r, o in triples:
            if r not in self.schema or self.schema[r].kind != "relation":
                raise ValueError(f"predicate {r!r} is not a relation in the schema")
            if (s, r, o) in seen:
                continue
            seen.add((s, r, o))
            ordered.append((s, r, o))
            entities.add(s)
            if r == type_predicate:
                if o not in self.schema or self.schema[o].kind != "class":
                    raise ValueError(f"class {o!r} is not declared in the schema")
                inst[o].add(s)
                continue
            if not isinstance(o, Literal):
                entities.add(o)
            fwd[s][r].add(o)
            rev[o][r].add(s)

        self.triples: Tuple[Triple, ...] = tuple(ordered)
        self._fwd = {s: {r: frozenset(v) for r, v in d.items()} for s, d in fwd.items()}
        self._rev = {o: {r: frozenset(v) for r, v in d.items()} for o, d in rev.items()}
        self._instances = {c: frozenset(v) for c, v in inst.items()}
        by_rel: Dict[str, Dict[Node, Set[str]]] = defaultdict(lambda: defaultdict(set))
        for o, d in rev.items():
            for r, subs in d.items():
                by_rel[r][o].update(subs)
        self._by_relation = {r: {o: frozenset(v) for o, v in d.items()} for r, d in by_rel.items()}
        classes_of: Dict[str, List[str]] = defaultdict(list)
        for c in sorted(self._instances):
            for e in self._instances[c]:
                classes_of[e].append(c)
        self._classes_of = {e: tuple(v) for e, v in classes_of.items()}
        self.entities: FrozenSet[str] = frozenset(entities)

        self._labels: Dict[str, str] = {}
        self._aliases: Dict[str, Tuple[str, ...]] = {}
        lookup: Dict[str, Set[str]] = defaultdict(set)
        for eid, (label, aliases) in (labels or {}).items():
            self._labels[eid] = label
            self._aliases[eid] = tuple(aliases)
            for name in (label, *aliases):
                if name:
                    lookup[normalize_name(name)].add(eid)
        self._lookup = {k: frozenset(v) for k, v in lookup.items()}
        self._literal_relations = self._find_literal_relations()

    def _find_literal_relations(self) -> Dict[str, FrozenSet[str]]:
        found: Dict[str, Set[str]] = defaultdict(set)
        for s, r, o in self.triples:
            if isinstance(o, Literal):
                found[r].add(o.type)
        for item in self.schema.values():
            if item.kind == "relation" and item.range in LITERAL_TYPES:
                found[item.id].add(item.range)
        return {r: frozenset(v) for r, v in found.items()}

    def __repr__(self):
        return (f"KnowledgeGraph(triples={len(self.triples)}, entities={len(self.entities)}, "
                f"classes={len(self.classes)}, relations={len(self.relations)})")

    # -- schema ------------------------------------------------------------------

    @property
    def relations(self) -> List[str]:
        return sorted(i.id for i in self.schema.values() if i.kind == "relation")

    @property
    def classes(self) -> List[str]:
        return sorted(i.id for i in self.schema.values() if i.kind == "class")

    def is_relation(self, item_id: str) -> bool:
        item = self.schema.get(item_id)
        return item is not None and item.kind == "relation"

    def is_class(self, item_id: str) -> bool:
        item = self.schema.get(item_id)
        return item is not None and item.kind == "class"

    def relation_domain(self, relation: str) -> Optional[str]:
        """Declared domain class of ``relation``; for undeclared domains the
        Freebase convention (``domain.type.property``) is tried."""
        item = self.schema.get(relation)
        if item is None:
            return None
        if item.domain and self.is_class(item.domain):
            return item.domain
        prefix = relation.rsplit(".", 1)[0]
        if relation.count(".") >= 2 and self.is_class(prefix):
            return prefix
        return None

    def relation_range(self, relation: str) -> Optional[str]:
        """Declared range of ``relation`` when it is a class (literal ranges give None)."""
        item = self.schema.get(relation)
        if item is None or not item.range:
            return None
        return item.range if self.is_class(item.range) else None

    def literal_types(self, relation: str) -> FrozenSet[str]:
        return self._literal_relations.get(relation, frozenset())

    def literal_relations(self) -> List[str]:
        return sorted(r for r in self._literal_relations if r != self.type_predicate)

    def describe(self, item_ids: Iterable[str]) -> str:
        """Render ``id=description`` pairs joined by ``"; "``."""
        parts = []
        for item_id in item_ids:
            if item_id not in self.schema:
                raise UnknownSchemaItem(item_id)
            parts.append(f"{item_id}={self.schema[item_id].description}")
        return "; ".join(parts)

    # -- instances and neighbourhoods --------------------------------------------

    def instances_of(self, class_id: str) -> FrozenSet[str]:
        if not self.is_class(class_id):
            raise UnknownSchemaItem(class_id)
        return self._instances.get(class_id, frozenset())

    def classes_of(self, node: Node) -> Tuple[str, ...]:
        """Classes of ``node`` in lexicographic order (empty for literals)."""
        if isinstance(node, Literal):
            return ()
        return self._classes_of.get(node, ())

    def populated_classes(self) -> List[str]:
        return sorted(c for c, v in self._instances.items() if v)

    def out_edges(self, node: Node) -> Dict[str, FrozenSet[Node]]:
        return self._fwd.get(node, {}) if isinstance(node, str) else {}

    def in_edges(self, node: Node) -> Dict[str, FrozenSet[str]]:
        return self._rev.get(node, {})

    def objects(self, subject: Node, relation: str) -> FrozenSet[Node]:
        return self.out_edges(subject).get(relation, frozenset())

    def subjects(self, obj: Node, relation: str) -> FrozenSet[str]:
        return self.in_edges(obj).get(relation, frozenset())

    def relation_objects(self, relation: str) -> Dict[Node, FrozenSet[str]]:
        """Object -> subjects map for one relation."""
        return self._by_relation.get(relation, {})

    def neighbors(self, nodes: Iterable[Node], direction: str = "forward") -> Set[Tuple[str, Node]]:
        """(relation, node) pairs one step away from ``nodes``.

        ``forward`` follows subject→object, ``reverse`` object→subject.
        Type-predicate edges are never returned.
        """
        if direction not in ("forward", "reverse"):
            raise ValueError("direction must be 'forward' or 'reverse'")
        index = self._fwd if direction == "forward" else self._rev
        out: Set[Tuple[str, Node]] = set()
        for n in nodes:
            for r, targets in index.get(n, {}).items():
                out.update((r, t) for t in targets)
        return out

    def reachable_schema(self, frontier: Iterable[Node]) -> Set[SchemaRef]:
        """Relations incident to ``frontier`` (reverse-marked when the frontier
        is on the object side) plus the classes of the frontier nodes."""
        items: Set[SchemaRef] = set()
        for n in frontier:
            for r in self.out_edges(n):
                items.add(SchemaRef(r, "relation"))
            for r in self.in_edges(n):
                items.add(SchemaRef(r, "relation", True))
            for c in self.classes_of(n):
                items.add(SchemaRef(c, "class"))
        return items

    # -- labels ------------------------------------------------------------------

    def label(self, entity: str) -> str:
        return self._labels.get(entity, entity)

    def aliases(self, entity: str) -> Tuple[str, ...]:
        return self._aliases.get(entity, ())

    def lookup(self, name: str) -> FrozenSet[str]:
        """Entity ids whose label or alias matches ``name`` case-insensitively."""
        return self._lookup.get(normalize_name(name), frozenset())

    def name_table(self) -> Dict[str, FrozenSet[str]]:
        return self._lookup

    def resolve_entity(self, ref: str) -> FrozenSet[str]:
        """Entity ids named by ``ref``: an id, else a label/alias."""
        if ref in self.entities:
            return frozenset((ref,))
        return self.lookup(ref)


def normalize_name(name: str) -> str:
    return " ".join(name.lower().split())


# -- TSV loading ---------------------------------------------------------------------


def _rows(stream, source):
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line.split("\t")


def _source_name(stream) -> str:
    return getattr(stream, "name", "") or ""


def read_schema(stream) -> List[SchemaItem]:
    src = _source_name(stream)
    items = []
    for lineno, cols in _rows(stream, src):
        if len(cols) < 2 or len(cols) > 5:
            raise GraphFormatError(f"expected 2-5 columns, got {len(cols)}", src, lineno)
        cols = [c.strip() for c in cols] + [""] * (5 - len(cols))
        item_id, kind, desc, dom, rng = cols
        try:
            items.append(SchemaItem(item_id, kind, desc, dom or None, rng or None))
        except ValueError as exc:
            raise GraphFormatError(str(exc), src, lineno) from None
    return items


def read_labels(stream) -> Dict[str, Tuple[str, Tuple[str, ...]]]:
    src = _source_name(stream)
    labels = {}
    for lineno, cols in _rows(stream, src):
        if len(cols) < 2 or len(cols) > 3:
            raise GraphFormatError(f"expected 2-3 columns, got {len(cols)}", src, lineno)
        aliases = tuple(a.strip() for a in cols[2].split("|") if a.strip()) if len(cols) == 3 else ()
        labels[cols[0].strip()] = (cols[1].strip(), aliases)
    return labels


def read_triples(stream, schema: Dict[str, SchemaItem], type_predicate: str = "type") -> List[Triple]:
    src = _source_name(stream)
    triples = []
    for lineno, cols in _rows(stream, src):
        if len(cols) != 3:
            raise GraphFormatError(f"expected 3 columns, got {len(cols)}", src, lineno)
        s, r, o = (c.strip() for c in cols)
        if r not in schema or schema[r].kind != "relation":
            raise GraphFormatError(f"predicate {r!r} not in schema", src, lineno)
        obj: Node = o
        if r != type_predicate:
            parts = split_literal(o)
            if parts is not None:
                try:
                    obj = parse_literal(*parts)
                except ValueError as exc:
                    raise GraphFormatError(f"bad literal {o!r}: {exc}", src, lineno) from None
        elif o not in schema or schema[o].kind != "class":
            raise GraphFormatError(f"class {o!r} not in schema", src, lineno)
        triples.append((s, r, obj))
    return triples


def _open(source):
    if source is None or hasattr(source, "read"):
        return source, False
    return open(source, encoding="utf-8"), True


def load_graph(triples_source, schema_source, labels_source=None, type_predicate: str = "type") -> KnowledgeGraph:
    """Load a graph from TSV streams (or paths).

    Triples: ``subject<TAB>predicate<TAB>object``, literal objects written
    ``value^^tag`` with tag in int/float/date/string. Schema:
    ``id<TAB>kind<TAB>description[<TAB>domain<TAB>range]``. Labels:
    ``entity<TAB>label<TAB>alias1|alias2``. ``#`` starts a comment line.
    """
    opened = []
    try:
        streams = []
        for src in (triples_source, schema_source, labels_source):
            stream, close = _open(src)
            if close:
                opened.append(stream)
            streams.append(stream)
        t_stream, s_stream, l_stream = streams
        schema_items = read_schema(s_stream)
        schema = {}
        for item in schema_items:
            if item.id in schema:
                raise GraphFormatError(f"duplicate schema id {item.id!r}", _source_name(s_stream))
            schema[item.id] = item
        if type_predicate not in schema:
            schema_items.append(SchemaItem(type_predicate, "relation", "type"))
            schema[type_predicate] = schema_items[-1]
        triples = read_triples(t_stream, schema, type_predicate)
        labels = read_labels(l_stream) if l_stream is not None else None
    finally:
        for s in opened:
            s.close()
    kg = KnowledgeGraph(triples, schema_items, labels, type_predicate)
    log.info("loaded %r", kg)
    return kg


def load_graph_dir(path: str, type_predicate: str = "type") -> KnowledgeGraph:
    """Load ``triples.tsv``, ``schema.tsv`` and (optional) ``labels.tsv`` from a directory."""
    labels = os.path.join(path, "labels.tsv")
    return load_graph(
        os.path.join(path, "triples.tsv"),
        os.path.join(path, "schema.tsv"),
        labels if os.path.exists(labels) else None,
        type_predicate,
    )


def toykg_path() -> str:
    return os.path.join(os.path.dirname(__file__), "data", "toykg")


def load_toykg() -> KnowledgeGraph:
    """The bundled five-entity movie graph used throughout the tests."""
    return load_graph_dir(toykg_path())


def graph_from_strings(triples: str, schema: str, labels: Optional[str] = None, **kw) -> KnowledgeGraph:
    return load_graph(io.StringIO(triples), io.StringIO(schema),
                      io.StringIO(labels) if labels is not None else None, **kw)
