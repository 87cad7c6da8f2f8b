"""Exploration corpus: persistence, embedding index and demonstration retrieval."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .lm import HashedBagEmbedder, cosine

log = logging.getLogger(__name__)

CORPUS_FORMAT = "kgexplore-corpus"
CORPUS_VERSION = 1


class CorpusFormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class CorpusEntry:
    question: str
    program: str
    pattern: str
    schema_items: List[str]
    complexity: int
    anonymized_question: str
    meta: Dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusEntry":
        missing = {"question", "program", "pattern"} - set(obj)
        if missing:
            raise ValueError(f"corpus entry lacks {sorted(missing)}")
        return cls(
            question=obj["question"],
            program=obj["program"],
            pattern=obj["pattern"],
            schema_items=list(obj.get("schema_items", [])),
            complexity=int(obj.get("complexity", 0)),
            anonymized_question=obj.get("anonymized_question", obj["question"]),
            meta=dict(obj.get("meta", {})),
        )


@dataclass
class ExplorationCorpus:
    entries: List[CorpusEntry] = field(default_factory=list)
    failures: int = 0

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[CorpusEntry]:
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def _header() -> str:
    return json.dumps({"format": CORPUS_FORMAT, "version": CORPUS_VERSION})


def save(corpus: ExplorationCorpus, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        write(corpus, fh)


def write(corpus: ExplorationCorpus, fh):
    fh.write(_header() + "\n")
    for e in corpus:
        fh.write(json.dumps(e.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def load(path: str) -> ExplorationCorpus:
    with open(path, encoding="utf-8") as fh:
        return read(fh)


def read(lines: Iterable[str]) -> ExplorationCorpus:
    entries = []
    header_seen = False
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"malformed JSON ({e.msg})", lineno) from None
        if not header_seen:
            if obj.get("format") != CORPUS_FORMAT:
                raise CorpusFormatError("missing corpus header", lineno)
            if obj.get("version") != CORPUS_VERSION:
                raise CorpusFormatError(f"unsupported corpus version {obj.get('version')!r}", lineno)
            header_seen = True
            continue
        try:
            entries.append(CorpusEntry.from_json(obj))
        except (ValueError, TypeError) as e:
            raise CorpusFormatError(str(e), lineno) from None
    if not header_seen:
        raise CorpusFormatError("empty corpus file (no header)")
    return ExplorationCorpus(entries)


# -- retrieval --------------------------------------------------------------------------------


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 10
    coverage_mode: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


class IndexedCorpus:
    """Corpus entries plus one unit-norm row per entry (embedded anonymised question)."""

    def __init__(self, entries: Sequence[CorpusEntry], vectors: np.ndarray, embedder):
        if len(entries) != vectors.shape[0]:
            raise ValueError("row count must equal entry count")
        self.entries = list(entries)
        self.vectors = vectors
        self.embedder = embedder

    def __len__(self):
        return len(self.entries)

    @property
    def embedder_id(self) -> str:
        return self.embedder.embedder_id

    def ranked(self, query: str) -> List[int]:
        """Entry ordinals by descending cosine to ``query``, ties by ordinal."""
        if not self.entries:
            return []
        q = self.embedder.embed(query)
        sims = self.vectors @ q
        return sorted(range(len(self.entries)), key=lambda i: (-round(float(sims[i]), 12), i))

    def save(self, path: str):
        entries = json.dumps([e.to_json() for e in self.entries], ensure_ascii=False)
        with open(path, "wb") as fh:
            np.savez(fh, vectors=self.vectors, entries=np.array(entries),
                     dim=np.array(self.embedder.dim))

    @classmethod
    def load(cls, path: str) -> "IndexedCorpus":
        with np.load(path, allow_pickle=False) as data:
            entries = [CorpusEntry.from_json(o) for o in json.loads(str(data["entries"]))]
            emb = HashedBagEmbedder(int(data["dim"]))
            return cls(entries, np.array(data["vectors"]), emb)


def index(corpus: Iterable[CorpusEntry], embedder=None) -> IndexedCorpus:
    embedder = embedder or HashedBagEmbedder()
    entries = list(corpus)
    vectors = embedder.embed_many([e.anonymized_question for e in entries])
    if not entries:
        vectors = np.zeros((0, embedder.dim))
    return IndexedCorpus(entries, vectors, embedder)


def retrieve(idx: IndexedCorpus, anonymized_query: str,
             cfg: RetrievalConfig = RetrievalConfig()) -> List[CorpusEntry]:
    """Top-k demonstrations for a query.

    Coverage mode walks the ranking and accepts an entry only if it adds an
    unseen schema item or an unseen pattern; remaining slots are back-filled
    in rank order.
    """
    order = idx.ranked(anonymized_query)
    if not cfg.coverage_mode:
        return [idx.entries[i] for i in order[:cfg.k]]
    accepted: List[int] = []
    items, patterns = set(), set()
    for i in order:
        if len(accepted) >= cfg.k:
            break
        e = idx.entries[i]
        if not set(e.schema_items) <= items or e.pattern not in patterns:
            accepted.append(i)
            items.update(e.schema_items)
            patterns.add(e.pattern)
    if len(accepted) < cfg.k:
        taken = set(accepted)
        for i in order:
            if len(accepted) >= cfg.k:
                break
            if i not in taken:
                accepted.append(i)
    return [idx.entries[i] for i in accepted]


def similarity(idx: IndexedCorpus, query: str, entry: int) -> float:
    return cosine(idx.embedder.embed(query), idx.vectors[entry])
