"""Knowledge-graph question answering grounded in an exploration corpus.

A graph is explored for executable programs, each program gets a generated
question, and new questions are answered by bottom-up enumeration of
candidate programs ranked by a language model with retrieved examples.
"""
from .corpus import CorpusEntry, ExplorationCorpus, IndexedCorpus, RetrievalConfig, index, retrieve
from .evaluation import EvalExample, EvalReport, coverage_stats, f1, hits_at_1, load_dataset, run_eval
from .executor import ExecutionError, Executor, execute
from .explorer import ExplorationConfig, explore
from .kg import KnowledgeGraph, Literal, load_graph, load_graph_dir, load_toykg
from .lm import FixtureLM, HashedBagEmbedder, HeuristicLM, HttpLM, LmBackend, RecordingLM
from .program import ProgramSyntaxError, decompose, parse, pattern_of
from .question_gen import QGenConfig, build_corpus, generate_question
from .reasoner import ReasonerConfig, ReasonTrace, answer

__all__ = [
    "CorpusEntry", "ExplorationCorpus", "IndexedCorpus", "RetrievalConfig", "index", "retrieve",
    "EvalExample", "EvalReport", "coverage_stats", "f1", "hits_at_1", "load_dataset", "run_eval",
    "ExecutionError", "Executor", "execute", "ExplorationConfig", "explore",
    "KnowledgeGraph", "Literal", "load_graph", "load_graph_dir", "load_toykg",
    "FixtureLM", "HashedBagEmbedder", "HeuristicLM", "HttpLM", "LmBackend", "RecordingLM",
    "ProgramSyntaxError", "decompose", "parse", "pattern_of",
    "QGenConfig", "build_corpus", "generate_question", "ReasonerConfig", "ReasonTrace", "answer",
]
