import json
import math
import threading

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgexplore.lm import (EPSILON, QGEN_DOMAIN_PREFIX, REASONING_DOMAIN_PREFIX, FixtureLM, GenCandidate,
                          HashedBagEmbedder, HeuristicLM, HttpLM, LMError, RecordingLM, cosine, embed,
                          inverse_rerank, make_backend, overlap_f1, parse_prompt, pmi_dc_score, prompt_sha256,
                          score, score_batch)
from kgexplore.prompts import DEFAULT_TEMPLATES as T


def qprompt(query):
    return T.reasoning_inverse(query)


def test_heuristic_identity_and_disjoint():
    lm = HeuristicLM()
    p = T.qgen_inverse("which movies did nolan direct")
    same = score(lm, p, "which movies did nolan direct")
    assert same.normalized_score == 0.0
    disjoint = score(lm, p, "zebra quantum")
    assert disjoint.normalized_score == pytest.approx(math.log(EPSILON))
    assert disjoint.normalized_score == pytest.approx(-13.8155, abs=1e-4)


def test_heuristic_formula_by_hand():
    # query "a b c d", completion "a b x": P=2/3, R=2/4, F1=4/7
    lm = HeuristicLM()
    c = lm.score(T.qgen_inverse("alpha beta gamma delta"), "alpha beta xray")
    f = 4 / 7
    assert c.normalized_score == pytest.approx(math.log(f * (1 - EPSILON) + EPSILON))
    assert c.token_count == 3


def test_overlap_f1_is_multiset():
    assert overlap_f1(["a", "a", "b"], ["a", "b"]) == pytest.approx(0.8)
    assert overlap_f1([], ["a"]) == 0.0


def test_parse_prompt_sections():
    demos, final = parse_prompt(T.reasoning("who directed tenet?", [("q one", "(JOIN r x)")]))
    assert demos == [("q one", "(JOIN r x)")]
    assert final == [("Question", "who directed tenet"), ("Logical Form", "")]


def test_fixture_replay_and_miss(tmp_path):
    rec = RecordingLM(HeuristicLM())
    prompt = T.qgen_inverse("who directed tenet")
    c = rec.score(prompt, "(JOIN movie.directed_by m2)")
    rec.generate(T.qgen("(AND movie.movie (JOIN movie.year 2010^^int))", "movie.year=year", []))
    path = tmp_path / "fx.jsonl"
    rec.dump(str(path))
    fx = FixtureLM.from_file(str(path))
    assert fx.score(prompt, "(JOIN movie.directed_by m2)") == c
    with pytest.raises(LMError):
        fx.score(prompt, "something else")
    with pytest.raises(LMError):
        fx.generate("unseen prompt")
    backed = FixtureLM.from_file(str(path), fallback=HeuristicLM())
    assert backed.score(prompt, "x").token_count == 1


def test_fixture_verbatim():
    rec = {"prompt_sha256": prompt_sha256("P"), "completion": "c", "sum_logprob": -1.25, "token_count": 5}
    fx = FixtureLM([rec])
    assert fx.score("P", "c") == GenCandidate("c", -1.25, 5)


def test_score_batch_contract():
    lm = HeuristicLM()
    prompt = T.qgen_inverse("movies directed by nolan")
    comps = ["movies", "directed by nolan", "zzz", "movies directed"]
    single = [lm.score(prompt, c) for c in comps]
    assert score_batch(lm, prompt, comps[:1]) == single[:1]
    perm = [2, 0, 3, 1]
    assert score_batch(lm, prompt, [comps[i] for i in perm]) == [single[i] for i in perm]
    assert score_batch(lm, prompt, []) == []


def test_empty_prompt_rejected():
    with pytest.raises(LMError):
        HeuristicLM().score("", "x")


# -- inverse re-ranking ---------------------------------------------------------------------------

PROGRAM = ("(AND religion.founding_figure (JOIN religion.founding_figure.religion_founded "
           '(JOIN religion.religion.founding_figures "st. peter")))')


def test_inverse_rerank_flip():
    lm = HeuristicLM()
    beam = [GenCandidate("who was paul the apostle", -1.0, 5),
            GenCandidate("founding figure of the religion founded by st. peter", -2.0, 9)]
    ranked = inverse_rerank(lm, beam, lambda c: T.qgen_inverse(c.text), PROGRAM)
    assert [c.text for c, _ in ranked] == [beam[1].text, beam[0].text]


def test_inverse_rerank_singleton_and_ties():
    lm = HeuristicLM()
    one = [GenCandidate("x", -1.0, 1)]
    assert [c for c, _ in inverse_rerank(lm, one, lambda c: T.qgen_inverse(c.text), PROGRAM)] == one
    tied = [GenCandidate(t, -float(i), 1) for i, t in enumerate(["aaa", "bbb", "ccc"])]
    ranked = inverse_rerank(lm, tied, lambda c: T.qgen_inverse(c.text), PROGRAM)
    assert [c for c, _ in ranked] == tied
    with pytest.raises(ValueError):
        inverse_rerank(lm, [], lambda c: "", PROGRAM)


words = st.sampled_from("founding figure religion founded st peter paul apostle who what christianity the of".split())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(words, min_size=1, max_size=8).map(" ".join), min_size=1, max_size=8))
def test_inverse_rerank_preserves_set(texts):
    lm = HeuristicLM()
    beam = [GenCandidate(t, -1.0, 1) for t in texts]
    ranked = inverse_rerank(lm, beam, lambda c: T.qgen_inverse(c.text), PROGRAM)
    assert sorted(c.text for c, _ in ranked) == sorted(texts)


def test_pmi_dc():
    lm = HeuristicLM()
    assert pmi_dc_score(lm, QGEN_DOMAIN_PREFIX, "what is it", QGEN_DOMAIN_PREFIX) == 0.0
    assert pmi_dc_score(lm, REASONING_DOMAIN_PREFIX, "(JOIN r x)", REASONING_DOMAIN_PREFIX) == 0.0
    p = T.qgen_inverse("movies directed by nolan")
    a = pmi_dc_score(lm, p, "movies by nolan", QGEN_DOMAIN_PREFIX)
    assert a == pmi_dc_score(lm, p, "movies by nolan", QGEN_DOMAIN_PREFIX)
    with pytest.raises(ValueError):
        pmi_dc_score(lm, p, "x", "")


def test_heuristic_thread_determinism():
    lm = HeuristicLM()
    prompt = T.reasoning("which movies did nolan direct", [("movies by x", '(JOIN movie.directed_by "x")')])
    comps = [f'(JOIN movie.directed_by "p{i}")' for i in range(50)]
    base = [lm.score(prompt, c) for c in comps]
    results = [None] * 8

    def run(i):
        results[i] = [lm.score(prompt, c) for c in comps]
    threads = [threading.Thread(target=run, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == base for r in results)


# -- embedding ------------------------------------------------------------------------------------


def test_embedding_properties():
    e = HashedBagEmbedder()
    v = embed(e, "which movies did nolan direct")
    assert cosine(v, v) == pytest.approx(1.0)
    assert np.linalg.norm(e.embed("")) == pytest.approx(1.0)
    # two one-token texts in different buckets are orthogonal
    a, b = "alpha", next(t for t in ("beta", "gamma", "delta") if e.bucket(t) != e.bucket("alpha"))
    assert cosine(e.embed(a), e.embed(b)) == 0.0
    u, w = e.embed("a b c"), e.embed("b c d e")
    assert cosine(u, w) == cosine(w, u)
    assert cosine(np.zeros(3), np.ones(3)) == 0.0
    with pytest.raises(ValueError):
        cosine(np.ones(2), np.ones(3))


def test_make_backend():
    assert isinstance(make_backend("heuristic"), HeuristicLM)
    with pytest.raises(ValueError):
        make_backend("fixture")
    with pytest.raises(ValueError):
        make_backend("http")
    with pytest.raises(ValueError):
        make_backend("nope")


# -- http backend against a mock server -----------------------------------------------------------


def _echo_handler(calls):
    def handler(request):
        body = json.loads(request.content)
        calls.append(body)
        prompts = body["prompt"] if isinstance(body["prompt"], list) else [body["prompt"]]
        if body.get("echo"):
            choices = []
            for i, text in enumerate(prompts):
                toks = text.split(" ")
                offs, pos = [], 0
                for t in toks:
                    offs.append(pos)
                    pos += len(t) + 1
                choices.append({"index": i, "text": text,
                                "logprobs": {"token_logprobs": [None] + [-0.5] * (len(toks) - 1),
                                             "text_offset": offs}})
            return httpx.Response(200, json={"choices": choices})
        return httpx.Response(200, json={"choices": [
            {"index": 0, "text": "what is x", "logprobs": {"token_logprobs": [-1.0, -1.0], "text_offset": [0, 5]}},
            {"index": 1, "text": "what", "logprobs": {"token_logprobs": [-0.1], "text_offset": [0]}}]})
    return handler


def test_http_scoring_and_cache(tmp_path):
    calls = []
    client = httpx.Client(transport=httpx.MockTransport(_echo_handler(calls)))
    lm = HttpLM("http://lm.test/v1", "m", cache_dir=str(tmp_path), client=client, backoff=0)
    out = lm.score_batch("hello there ", ["big world", "x"])
    # completion offset 12: tokens "big" (12) and "world" (16) for the first, "x" for the second
    assert out[0] == GenCandidate("big world", -1.0, 2)
    assert out[1] == GenCandidate("x", -0.5, 1)
    assert calls[0]["echo"] is True and calls[0]["max_tokens"] == 0
    again = lm.score_batch("hello there ", ["big world", "x"])
    assert again == out and len(calls) == 1
    gen = lm.generate("q: ", beam_k=2)
    assert [g.text for g in gen] == ["what", "what is x"]


def test_http_retries_then_fails():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(503)
    lm = HttpLM("http://lm.test", "m", client=httpx.Client(transport=httpx.MockTransport(handler)),
                retries=3, backoff=0)
    with pytest.raises(LMError, match="after 3 attempts"):
        lm.score("p", "c")
    assert len(attempts) == 3


def test_http_client_error_not_retried():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(400, text="bad")
    lm = HttpLM("http://lm.test", "m", client=httpx.Client(transport=httpx.MockTransport(handler)), backoff=0)
    with pytest.raises(LMError, match="rejected"):
        lm.score("p", "c")
    assert len(attempts) == 1
