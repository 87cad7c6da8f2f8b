"""Language-model scoring/generation backends and a text embedder.

Every backend implements :class:`LmBackend`: ``score`` returns the summed
completion log-probability given a prompt, ``generate`` returns a beam of
candidates sorted by length-normalised score. Three backends are provided:

* :class:`HeuristicLM` - deterministic lexical-overlap scorer, used as an
  offline oracle in tests and demos.
* :class:`FixtureLM` - replays recorded scores from a JSON-lines file.
* :class:`HttpLM` - a remote OpenAI-style ``/completions`` endpoint.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

EPSILON = 1e-6
QGEN_DOMAIN_PREFIX = "### English Question:\n"
REASONING_DOMAIN_PREFIX = "### Logical Form:\n"

_WORD = re.compile(r"[0-9A-Za-z]+")


class LMError(RuntimeError):
    """Transport failure, missing fixture record, or invalid request."""


class _Retryable(Exception):
    pass


@dataclass(frozen=True)
class GenCandidate:
    text: str
    sum_logprob: float
    token_count: int

    def __post_init__(self):
        if self.token_count < 1:
            raise ValueError("token_count must be >= 1")

    @property
    def normalized_score(self) -> float:
        return self.sum_logprob / self.token_count

    def to_dict(self) -> dict:
        return {"text": self.text, "sum_logprob": self.sum_logprob, "token_count": self.token_count}


def tokens(text: str) -> List[str]:
    """Lowercased alphanumeric runs."""
    return [t.lower() for t in _WORD.findall(text)]


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class LmBackend(ABC):
    """Scoring + generation contract. Implementations must be thread-safe."""

    backend_id = "abstract"

    @abstractmethod
    def score(self, prompt: str, completion: str) -> GenCandidate:
        ...

    def score_batch(self, prompt: str, completions: Sequence[str]) -> List[GenCandidate]:
        return [self.score(prompt, c) for c in completions]

    @abstractmethod
    def generate(self, prompt: str, beam_k: int = 5, max_tokens: int = 64,
                 stop: Sequence[str] = ()) -> List[GenCandidate]:
        ...


def _check_prompt(prompt: str):
    if not prompt:
        raise LMError("prompt must be non-empty")


# -- heuristic backend ------------------------------------------------------------------


def overlap_f1(a: Sequence[str], b: Sequence[str]) -> float:
    """Multiset F1 between two token sequences (0 if either is empty)."""
    if not a or not b:
        return 0.0
    common = sum((Counter(a) & Counter(b)).values())
    if common == 0:
        return 0.0
    p, r = common / len(a), common / len(b)
    return 2 * p * r / (p + r)


def _log_floor(x: float) -> float:
    # maps [0, 1] onto [ln eps, 0] so an exact match scores exactly 0
    return math.log(x * (1 - EPSILON) + EPSILON)


_SECTION = re.compile(r"^### ([^\n]*):[ \t]*$", re.M)


def split_sections(block: str) -> List[Tuple[str, str]]:
    """``[(header, content), ...]`` for a ``### Header:`` block."""
    heads = list(_SECTION.finditer(block))
    if not heads:
        return [("", block.strip("\n"))]
    out = []
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(block)
        out.append((m.group(1), block[m.end():end].strip("\n")))
    return out


def parse_prompt(prompt: str) -> Tuple[List[Tuple[str, str]], List[Tuple[str, str]]]:
    """Split a rendered prompt into demonstrations and the final query block.

    Returns ``(demos, final)`` where ``demos`` is a list of
    ``(input, output)`` pairs and ``final`` is the section list of the last
    block. The instruction block is dropped.
    """
    blocks = [b for b in prompt.split("\n\n") if b.strip()]
    if blocks and blocks[0].lstrip().startswith("### Instructions:"):
        blocks = blocks[1:]
    if not blocks:
        return [], [("", "")]
    demos = []
    for b in blocks[:-1]:
        secs = split_sections(b)
        if len(secs) >= 2:
            demos.append((secs[0][1], secs[-1][1]))
    return demos, split_sections(blocks[-1])


_QUOTED = re.compile(r'"(?:[^"\\]|\\.)*"(\^\^\w+)?')
_LIT = re.compile(r"(?<![\w.])[-+]?\d[\w:.-]*\^\^(\w+)")
_PROG_TOKEN = re.compile(r'"(?:[^"\\]|\\.)*"(?:\^\^\w+)?|[()]|[^\s()]+')

# operator heads and a few function words mapped onto shared tokens
_OPERATOR_WORDS = {
    "COUNT": "count", "ARGMAX": "argmax", "ARGMIN": "argmin",
    "le": "le", "lt": "lt", "ge": "ge", "gt": "gt",
}
_SYNTAX = {"AND", "JOIN", "R"}
_LEXICON = {
    "how": "count", "many": "count", "number": "count",
    "most": "argmax", "latest": "argmax", "newest": "argmax", "recent": "argmax", "largest": "argmax",
    "highest": "argmax", "biggest": "argmax", "last": "argmax",
    "earliest": "argmin", "oldest": "argmin", "first": "argmin", "smallest": "argmin",
    "lowest": "argmin", "fewest": "argmin",
    "after": "gt", "later": "gt", "above": "gt", "over": "gt",
    "before": "lt", "earlier": "lt", "below": "lt", "under": "lt",
    "since": "ge", "until": "le",
    "who": "person", "whom": "person",
}


def _fold(tok: str) -> str:
    tok = _LEXICON.get(tok, tok)
    if len(tok) > 3 and tok.endswith("s") and not tok.endswith("ss"):
        tok = tok[:-1]
    return tok


def is_program_text(text: str) -> bool:
    return text.lstrip().startswith("(")


def _program_words(text: str, keep_values: bool = True) -> List[str]:
    words = []
    for t in _PROG_TOKEN.findall(text):
        if t in "()" or t in _SYNTAX:
            continue
        if t in _OPERATOR_WORDS:
            words.append(_OPERATOR_WORDS[t])
        elif t.startswith('"') or "^^" in t:
            value, _, tag = t.rpartition("^^") if "^^" in t else (t, "", "")
            if keep_values:
                words.append(value.strip('"'))
            elif tag:
                words.append(tag)
        else:
            words.append(t.rsplit(".", 1)[-1])
    return tokens(" ".join(words))


def read(text: str) -> List[str]:
    """Tokens as the heuristic scorer sees them.

    Program strings are read as words: operator heads become function
    words, schema ids contribute their last dotted segment, AND/JOIN/R are
    dropped. All tokens go through a small lexicon (``how many`` -> count,
    ``latest`` -> argmax, ...) and plural folding.
    """
    raw = _program_words(text) if is_program_text(text) else tokens(text)
    return [_fold(t) for t in raw]


def skeleton(text: str) -> List[str]:
    """Read tokens of a program string with entity names and literal values removed."""
    if is_program_text(text):
        return [_fold(t) for t in _program_words(text, keep_values=False)]
    return read(_LIT.sub(lambda m: " " + m.group(1) + " ", _QUOTED.sub(" ", text)))


class HeuristicLM(LmBackend):
    """Deterministic scorer based on token overlap.

    Without demonstrations the normalised score of a completion is
    ``ln(F1 * (1 - eps) + eps)`` where F1 is the multiset token F1 between the
    completion and the prompt's final query line, both tokenised with
    :func:`read`. When the prompt contains
    demonstrations, the demo whose input best overlaps the query (similarity
    ``s``) votes for completions whose structure (program tokens minus entity
    names and literal values) matches its output: the overlap term becomes
    ``(F1 + s * F1_struct) / (1 + s)``.

    ``latency`` adds a simulated per-sequence delay (seconds), which makes
    LM-call budgets observable in wall-clock benchmarks.
    """

    backend_id = "heuristic"

    def __init__(self, use_demos: bool = True, latency: float = 0.0):
        self.use_demos = use_demos
        self.latency = latency

    def _overlap(self, prompt: str, completion: str) -> float:
        demos, final = parse_prompt(prompt)
        query = read(final[0][1])
        comp = read(completion)
        base = overlap_f1(comp, query)
        if not (self.use_demos and demos):
            return base
        best_s, best_out = 0.0, None
        for d_in, d_out in demos:
            s = overlap_f1(read(d_in), query)
            if s > best_s:
                best_s, best_out = s, d_out
        if best_out is None:
            return base
        struct = overlap_f1(skeleton(completion), skeleton(best_out))
        return (base + best_s * struct) / (1 + best_s)

    def score(self, prompt: str, completion: str) -> GenCandidate:
        _check_prompt(prompt)
        if self.latency:
            time.sleep(self.latency)
        n = max(1, len(tokens(completion)))
        norm = _log_floor(self._overlap(prompt, completion))
        return GenCandidate(completion, norm * n, n)

    def generate(self, prompt: str, beam_k: int = 5, max_tokens: int = 64,
                 stop: Sequence[str] = ()) -> List[GenCandidate]:
        _check_prompt(prompt)
        _, final = parse_prompt(prompt)
        sections = dict(final)
        query = final[0][1]
        schema = _parse_schema_line(sections.get("Schema", ""))
        texts = []
        for text in verbalize(query, schema):
            text = " ".join(text.split()[:max_tokens])
            for s in stop:
                if s and s in text:
                    text = text[:text.index(s)]
            if text and text not in texts:
                texts.append(text)
        cands = [self.score(prompt, t) for t in texts]
        cands.sort(key=lambda c: -c.normalized_score)
        return cands[:beam_k]


def _parse_schema_line(line: str) -> Dict[str, str]:
    out = {}
    for part in line.split(";"):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


_CMP_WORDS = {"le": "at most", "lt": "less than", "ge": "at least", "gt": "more than"}


def verbalize(query: str, schema: Dict[str, str]) -> List[str]:
    """Template questions for a program string (heuristic generation)."""
    toks = [t for t in _PROG_TOKEN.findall(query) if t not in "()"]
    head = toks[0] if toks else ""

    def word(t, use_schema):
        if t.startswith('"'):
            return t.split('"^^')[0].strip('"')
        if "^^" in t:
            return t.split("^^")[0]
        if t in _CMP_WORDS:
            return _CMP_WORDS[t]
        if t in _SYNTAX or t in _OPERATOR_WORDS:
            return ""
        if use_schema and t in schema:
            return schema[t]
        return re.sub(r"[._]+", " ", t.rsplit(".", 1)[-1] if not use_schema else t)

    if head == "COUNT":
        lead = "how many"
    elif head == "ARGMAX":
        lead = "which has the largest"
    elif head == "ARGMIN":
        lead = "which has the smallest"
    else:
        lead = "what"
    sents = []
    for use_schema in (True, False):
        body = " ".join(w for w in (word(t, use_schema) for t in toks) if w)
        sents.append(f"{lead} {body}?")
    names = [word(t, True) for t in toks if t.startswith('"') or "^^" in t]
    if names:
        sents.append(f"{lead} is related to {' and '.join(names)}?")
    return sents


# -- fixture replay -----------------------------------------------------------------------


class FixtureLM(LmBackend):
    """Replays records ``{prompt_sha256, completion, sum_logprob, token_count}``.

    ``generate`` returns every recorded completion for the prompt. A missing
    record raises :class:`LMError` unless a ``fallback`` backend is given.
    """

    backend_id = "fixture"

    def __init__(self, records: Iterable[dict], fallback: Optional[LmBackend] = None):
        self._table: Dict[Tuple[str, str], GenCandidate] = {}
        self._by_prompt: Dict[str, List[GenCandidate]] = {}
        for rec in records:
            cand = GenCandidate(rec["completion"], float(rec["sum_logprob"]), int(rec["token_count"]))
            key = (rec["prompt_sha256"], rec["completion"])
            if key not in self._table:
                self._by_prompt.setdefault(rec["prompt_sha256"], []).append(cand)
            self._table[key] = cand
        self.fallback = fallback

    @classmethod
    def from_file(cls, path: str, fallback: Optional[LmBackend] = None) -> "FixtureLM":
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise LMError(f"{path}:{lineno}: bad fixture record: {e}") from None
        return cls(records, fallback)

    def __len__(self):
        return len(self._table)

    def score(self, prompt: str, completion: str) -> GenCandidate:
        _check_prompt(prompt)
        hit = self._table.get((prompt_sha256(prompt), completion))
        if hit is not None:
            return hit
        if self.fallback is not None:
            return self.fallback.score(prompt, completion)
        raise LMError(f"no fixture record for completion {completion!r}")

    def generate(self, prompt: str, beam_k: int = 5, max_tokens: int = 64,
                 stop: Sequence[str] = ()) -> List[GenCandidate]:
        _check_prompt(prompt)
        cands = self._by_prompt.get(prompt_sha256(prompt))
        if cands is None:
            if self.fallback is not None:
                return self.fallback.generate(prompt, beam_k, max_tokens, stop)
            raise LMError("no fixture records for prompt")
        return sorted(cands, key=lambda c: -c.normalized_score)[:beam_k]


class RecordingLM(LmBackend):
    """Wraps a backend and records every scored/generated candidate so the
    session can be replayed with :class:`FixtureLM`."""

    def __init__(self, inner: LmBackend):
        self.inner = inner
        self.backend_id = f"recording:{inner.backend_id}"
        self.records: List[dict] = []
        self._lock = threading.Lock()

    def _record(self, prompt, cands):
        h = prompt_sha256(prompt)
        with self._lock:
            for c in cands:
                self.records.append({"prompt_sha256": h, "completion": c.text,
                                     "sum_logprob": c.sum_logprob, "token_count": c.token_count})

    def score(self, prompt, completion):
        c = self.inner.score(prompt, completion)
        self._record(prompt, [c])
        return c

    def score_batch(self, prompt, completions):
        cs = self.inner.score_batch(prompt, completions)
        self._record(prompt, cs)
        return cs

    def generate(self, prompt, beam_k=5, max_tokens=64, stop=()):
        cs = self.inner.generate(prompt, beam_k, max_tokens, stop)
        self._record(prompt, cs)
        return cs

    def dump(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# -- remote backend -------------------------------------------------------------------------


class HttpLM(LmBackend):
    """OpenAI-style completions client.

    Scoring sends ``prompt + completion`` with ``echo=true, max_tokens=0`` and
    sums the log-probabilities of tokens at or after the completion offset.
    Responses are cached on disk (if ``cache_dir`` is set) under a key made of
    the backend id, prompt hash and request parameters.
    """

    def __init__(self, url: str, model: str, api_key_env: str = "LM_API_KEY",
                 cache_dir: Optional[str] = None, max_in_flight: int = 4, timeout: float = 60.0,
                 retries: int = 3, backoff: float = 1.0, client=None):
        import httpx  # deferred so offline use never touches the HTTP stack

        self.url = url.rstrip("/")
        self.model = model
        self.backend_id = f"http:{model}"
        self.cache_dir = cache_dir
        self.retries = retries
        self.backoff = backoff
        self._sem = threading.BoundedSemaphore(max_in_flight)
        headers = {}
        token = os.environ.get(api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = client or httpx.Client(timeout=timeout, headers=headers)
        self._httpx = httpx
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)

    def _cache_path(self, prompts, params) -> Optional[str]:
        if not self.cache_dir:
            return None
        key = json.dumps({"backend": self.backend_id,
                          "prompts": [prompt_sha256(p) for p in prompts], "params": params},
                         sort_keys=True)
        return os.path.join(self.cache_dir, hashlib.sha256(key.encode()).hexdigest() + ".json")

    def _post(self, prompts: List[str], params: dict) -> dict:
        path = self._cache_path(prompts, params)
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        body = dict(params, model=self.model, prompt=prompts if len(prompts) > 1 else prompts[0])
        last = None
        for attempt in range(self.retries):
            try:
                with self._sem:
                    resp = self._client.post(f"{self.url}/completions", json=body)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise _Retryable(f"server returned {resp.status_code}")
                if resp.status_code >= 400:
                    raise LMError(f"request rejected ({resp.status_code}): {resp.text[:200]}")
                data = resp.json()
                break
            except (self._httpx.TransportError, _Retryable) as e:
                last = e
                log.warning("completion request failed (attempt %d/%d): %s", attempt + 1, self.retries, e)
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        else:
            raise LMError(f"completion request failed after {self.retries} attempts: {last}")
        if path:
            tmp = path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(data, fh)
            os.replace(tmp, path)
        return data

    @staticmethod
    def _completion_logprob(choice: dict, offset: int) -> Tuple[float, int]:
        lp = choice.get("logprobs") or {}
        total, n = 0.0, 0
        for tok_lp, off in zip(lp.get("token_logprobs", []), lp.get("text_offset", [])):
            if off >= offset and tok_lp is not None:
                total += tok_lp
                n += 1
        if n == 0:
            raise LMError("completion produced no scored tokens")
        return total, n

    def score(self, prompt: str, completion: str) -> GenCandidate:
        return self.score_batch(prompt, [completion])[0]

    def score_batch(self, prompt: str, completions: Sequence[str]) -> List[GenCandidate]:
        _check_prompt(prompt)
        if not completions:
            return []
        texts = [prompt + c for c in completions]
        data = self._post(texts, {"max_tokens": 0, "echo": True, "logprobs": 1, "temperature": 0})
        choices = sorted(data.get("choices", []), key=lambda c: c.get("index", 0))
        if len(choices) != len(completions):
            raise LMError(f"expected {len(completions)} choices, got {len(choices)}")
        out = []
        for c, choice in zip(completions, choices):
            total, n = self._completion_logprob(choice, len(prompt))
            out.append(GenCandidate(c, total, n))
        return out

    def generate(self, prompt: str, beam_k: int = 5, max_tokens: int = 64,
                 stop: Sequence[str] = ()) -> List[GenCandidate]:
        _check_prompt(prompt)
        params = {"max_tokens": max_tokens, "n": beam_k, "best_of": beam_k, "logprobs": 1,
                  "temperature": 0}
        if stop:
            params["stop"] = list(stop)
        data = self._post([prompt], params)
        out = []
        for choice in data.get("choices", []):
            text = choice.get("text", "")
            try:
                total, n = self._completion_logprob(choice, 0)
            except LMError:
                continue
            out.append(GenCandidate(text, total, n))
        out.sort(key=lambda c: -c.normalized_score)
        return out[:beam_k]


# -- functional API -------------------------------------------------------------------------


def score(backend: LmBackend, prompt: str, completion: str) -> GenCandidate:
    return backend.score(prompt, completion)


def score_batch(backend: LmBackend, prompt: str, completions: Sequence[str]) -> List[GenCandidate]:
    """Order-preserving batch scoring; element i equals ``score(prompt, completions[i])``."""
    if not completions:
        return []
    return list(backend.score_batch(prompt, list(completions)))


def inverse_scores(backend: LmBackend, candidates: Sequence[GenCandidate],
                   inverse_prompt: Callable[[GenCandidate], str], target: str) -> List[float]:
    return [backend.score(inverse_prompt(c), target).normalized_score for c in candidates]


def inverse_rerank(backend: LmBackend, candidates: Sequence[GenCandidate],
                   inverse_prompt: Callable[[GenCandidate], str],
                   target: str) -> List[Tuple[GenCandidate, float]]:
    """Re-sort ``candidates`` by the normalised log-probability of ``target``
    under each candidate's inverse prompt. Stable: ties keep input order.

    Returns ``[(candidate, inverse_score), ...]``.
    """
    if not candidates:
        raise ValueError("inverse_rerank needs at least one candidate")
    inv = inverse_scores(backend, candidates, inverse_prompt, target)
    order = sorted(range(len(candidates)), key=lambda i: -inv[i])
    return [(candidates[i], inv[i]) for i in order]


def pmi_dc_score(backend: LmBackend, prompt: str, completion: str, domain_prefix: str) -> float:
    """``log P(y | x) - log P(y | x_domain)`` on summed log-probabilities."""
    if not domain_prefix:
        raise ValueError("domain_prefix must be non-empty")
    return backend.score(prompt, completion).sum_logprob - backend.score(domain_prefix, completion).sum_logprob


# -- embedding --------------------------------------------------------------------------------


class HashedBagEmbedder:
    """Bag of lowercased alphanumeric tokens hashed into ``dim`` buckets, L2-normalised.

    Text without tokens embeds to a fixed reserved bucket so every vector is
    unit-norm.
    """

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.embedder_id = f"hashed-bag-{dim}"

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        toks = tokens(text) or [""]
        for t in toks:
            v[self.bucket(t)] += 1.0
        return v / np.linalg.norm(v)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.embed(t) for t in texts])


def embed(embedder: HashedBagEmbedder, text: str) -> np.ndarray:
    return embedder.embed(text)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def make_backend(name: str, fixture_file: Optional[str] = None, url: Optional[str] = None,
                 model: Optional[str] = None, cache_dir: Optional[str] = None) -> LmBackend:
    """Backend factory used by the CLI."""
    if name == "heuristic":
        return HeuristicLM()
    if name == "fixture":
        if not fixture_file:
            raise ValueError("--fixture-file is required for the fixture backend")
        return FixtureLM.from_file(fixture_file)
    if name == "http":
        if not url or not model:
            raise ValueError("--lm-url and --lm-model are required for the http backend")
        return HttpLM(url, model, cache_dir=cache_dir)
    raise ValueError(f"unknown backend {name!r}")
