"""scikit-learn style wrapper around the explore / generate / answer pipeline."""
from __future__ import annotations

import os
from typing import Iterable, List, Optional, Sequence, Union

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import corpus as corpus_mod
from .corpus import CorpusEntry, ExplorationCorpus, RetrievalConfig
from .evaluation import answer_keys, f1, gold_key
from .executor import Executor
from .explorer import ExplorationConfig, explore
from .kg import KnowledgeGraph, load_toykg
from .lm import HashedBagEmbedder, LmBackend, make_backend
from .program import parse
from .question_gen import build_corpus, make_entry
from .reasoner import ReasonerConfig, answer


def check_questions(questions) -> List[str]:
    """A list of non-empty question strings (a bare string is one question)."""
    if isinstance(questions, str):
        questions = [questions]
    out = list(questions)
    for q in out:
        if not isinstance(q, str) or not q.strip():
            raise ValueError(f"questions must be non-empty strings, got {q!r}")
    return out


def check_corpus(X, kg: KnowledgeGraph) -> List[CorpusEntry]:
    """Corpus entries from a corpus, a corpus file, entries, or (question, program) pairs."""
    if isinstance(X, (str, os.PathLike)):
        return list(corpus_mod.load(os.fspath(X)))
    if isinstance(X, ExplorationCorpus):
        return list(X)
    out = []
    for item in X:
        if isinstance(item, CorpusEntry):
            out.append(item)
        elif isinstance(item, (tuple, list)) and len(item) == 2:
            q, p = item
            out.append(make_entry(parse(p), q, kg, {"source": "user"}))
        else:
            raise ValueError(f"cannot read a corpus entry from {item!r}")
    return out


def check_gold(y) -> List[frozenset]:
    out = []
    for g in y:
        if isinstance(g, int) and not isinstance(g, bool):
            out.append(frozenset((str(g),)))
        elif isinstance(g, str):
            out.append(frozenset((gold_key(g),)))
        else:
            out.append(frozenset(gold_key(x) for x in g))
    return out


class ExplorationQA(BaseEstimator):
    """Question answering over a knowledge graph from an exploration corpus.

    ``fit(X)`` indexes X (see :func:`check_corpus`); ``fit(None)`` first
    explores the graph and generates questions with the configured backend.
    ``predict`` returns sorted answer keys (entity ids, literal lexical forms
    or the count as a string) per question.
    """

    def __init__(self, kg: Optional[KnowledgeGraph] = None, backend: Union[str, LmBackend] = "heuristic",
                 retain_k: int = 5, best_k: int = 10, prune_k: Optional[int] = 10, t_max: int = 10,
                 alpha: float = 0.5, demos: int = 10, dim: int = 256, exploration_budget: int = 200,
                 seed: int = 0):
        self.kg = kg
        self.backend = backend
        self.retain_k = retain_k
        self.best_k = best_k
        self.prune_k = prune_k
        self.t_max = t_max
        self.alpha = alpha
        self.demos = demos
        self.dim = dim
        self.exploration_budget = exploration_budget
        self.seed = seed

    def _config(self) -> ReasonerConfig:
        return ReasonerConfig(retain_k=self.retain_k, best_k=self.best_k, prune_k=self.prune_k,
                              t_max=self.t_max, alpha=self.alpha, retrieval=RetrievalConfig(k=self.demos))

    def fit(self, X=None, y=None):
        kg = self.kg if self.kg is not None else load_toykg()
        lm = make_backend(self.backend) if isinstance(self.backend, str) else self.backend
        cfg = self._config()
        if X is None:
            result = explore(kg, ExplorationConfig(budget=self.exploration_budget, rng_seed=self.seed))
            entries = list(build_corpus([ep.program for ep in result.programs], kg, lm))
        else:
            entries = check_corpus(X, kg)
        self.kg_ = kg
        self.lm_ = lm
        self.config_ = cfg
        self.index_ = corpus_mod.index(entries, HashedBagEmbedder(self.dim))
        self.executor_ = Executor(kg)
        self.n_entries_ = len(entries)
        return self

    def _answer(self, questions: Iterable[str]):
        check_is_fitted(self, "index_")
        for q in check_questions(questions):
            prog, ans, _ = answer(self.kg_, q, self.index_, self.lm_, cfg=self.config_,
                                  executor=self.executor_)
            yield prog, ans

    def predict(self, questions) -> List[List[str]]:
        return [sorted(answer_keys(a)) for _, a in self._answer(questions)]

    def predict_programs(self, questions) -> List[str]:
        return [str(p) for p, _ in self._answer(questions)]

    def score(self, questions, y: Sequence) -> float:
        """Mean answer-set F1 against gold answers (iterables of keys, or a count)."""
        questions = check_questions(questions)
        gold = check_gold(y)
        if len(gold) != len(questions):
            raise ValueError(f"{len(questions)} questions but {len(gold)} gold answers")
        if not questions:
            raise ValueError("nothing to score")
        preds = self.predict(questions)
        return sum(f1(frozenset(p), g) for p, g in zip(preds, gold)) / len(gold)
