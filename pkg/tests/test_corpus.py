import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgexplore.corpus import (CorpusEntry, CorpusFormatError, ExplorationCorpus, IndexedCorpus, RetrievalConfig,
                              index, load, retrieve, save)
from kgexplore.lm import HashedBagEmbedder


def entry(q, pattern, items, program=None):
    return CorpusEntry(question=q, program=program or f"(JOIN {items[0]} \"x\")", pattern=pattern,
                       schema_items=list(items), complexity=1, anonymized_question=q)


THREE = [
    entry("which movies did common.person direct", "P1", ["movie.directed_by", "movie.movie"]),
    entry("which movies did common.person produce", "P2", ["movie.produced_by", "movie.movie"]),
    entry("how many movies came out in int", "P3", ["movie.year", "movie.movie"]),
]


def test_index_shape_and_determinism():
    idx = index(THREE)
    assert idx.vectors.shape == (3, 256)
    assert np.allclose(np.linalg.norm(idx.vectors, axis=1), 1.0)
    assert np.array_equal(index(THREE).vectors, idx.vectors)


def test_empty_index():
    idx = index([])
    assert len(idx) == 0
    assert retrieve(idx, "anything") == []


def test_identity_ranks_first():
    idx = index(THREE)
    out = retrieve(idx, THREE[2].anonymized_question, RetrievalConfig(k=1))
    assert out == [THREE[2]]


def test_coverage_rule_by_hand():
    # two duplicates (same pattern and items) ranked above a distinct entry
    a = entry("movies directed by person alpha", "P1", ["movie.directed_by"])
    b = entry("movies directed by person alpha beta", "P1", ["movie.directed_by"])
    c = entry("year gamma", "P2", ["movie.year"])
    idx = index([a, b, c])
    q = "movies directed by person alpha"
    assert [e.question for e in retrieve(idx, q, RetrievalConfig(k=3, coverage_mode=False))] == \
        [a.question, b.question, c.question]
    # coverage mode skips the duplicate, takes the distinct entry, then backfills the duplicate
    assert [e.question for e in retrieve(idx, q, RetrievalConfig(k=3))] == [a.question, c.question, b.question]
    assert [e.question for e in retrieve(idx, q, RetrievalConfig(k=2))] == [a.question, c.question]


def test_k_larger_than_corpus():
    out = retrieve(index(THREE), "movies", RetrievalConfig(k=10))
    assert sorted(e.question for e in out) == sorted(e.question for e in THREE)


def test_round_trip(tmp_path):
    path = tmp_path / "c.jsonl"
    save(ExplorationCorpus(THREE), str(path))
    assert list(load(str(path))) == THREE
    ipath = tmp_path / "i.npz"
    idx = index(THREE)
    idx.save(str(ipath))
    back = IndexedCorpus.load(str(ipath))
    assert back.entries == THREE and np.array_equal(back.vectors, idx.vectors)


def test_bad_files(tmp_path):
    path = tmp_path / "c.jsonl"
    save(ExplorationCorpus(THREE), str(path))
    text = path.read_text()
    (tmp_path / "v.jsonl").write_text(text.replace('"version": 1', '"version": 9'))
    with pytest.raises(CorpusFormatError, match="version"):
        load(str(tmp_path / "v.jsonl"))
    (tmp_path / "t.jsonl").write_text(text[:-20])
    with pytest.raises(CorpusFormatError) as err:
        load(str(tmp_path / "t.jsonl"))
    assert err.value.line == 4
    (tmp_path / "h.jsonl").write_text(text.split("\n", 1)[1])
    with pytest.raises(CorpusFormatError, match="header"):
        load(str(tmp_path / "h.jsonl"))


vocab = st.sampled_from("movie person directed produced year count how many which who when film".split())
entries_st = st.lists(
    st.tuples(st.lists(vocab, min_size=1, max_size=6).map(" ".join), st.sampled_from(["P1", "P2", "P3", "P4"]),
              st.sampled_from(["r.a", "r.b", "r.c"])),
    min_size=1, max_size=12)


@settings(max_examples=80, deadline=None)
@given(entries_st, st.lists(vocab, min_size=1, max_size=5).map(" ".join), st.integers(1, 6))
def test_retrieve_properties(rows, query, k):
    # a pattern string names its schema items, so equal patterns imply equal items
    es = [entry(q, f"({p} {r})", [r]) for q, p, r in rows]
    idx = index(es)
    out = retrieve(idx, query, RetrievalConfig(k=k))
    ids = [id(e) for e in out]
    assert len(out) == min(k, len(es))
    assert len(set(ids)) == len(ids)
    assert all(any(e is x for x in es) for e in out)
    if k <= len({e.pattern for e in es}):
        assert len({e.pattern for e in out}) == len(out)


@settings(max_examples=40, deadline=None)
@given(entries_st, st.randoms(use_true_random=False))
def test_retrieve_order_invariant(rows, rnd):
    es = [entry(f"{q} {i}", p, [r]) for i, (q, p, r) in enumerate(rows)]
    query = "movie directed person"
    emb = HashedBagEmbedder()
    sims = [float(emb.embed(e.anonymized_question) @ emb.embed(query)) for e in es]
    if len({round(s, 12) for s in sims}) < len(sims):
        return  # only distinct scores fix the order
    shuffled = list(es)
    rnd.shuffle(shuffled)
    cfg = RetrievalConfig(k=4)
    assert [e.question for e in retrieve(index(es), query, cfg)] == \
        [e.question for e in retrieve(index(shuffled), query, cfg)]
