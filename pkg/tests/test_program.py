import datetime

import pytest
from hypothesis import given, settings, strategies as st

from conftest import METEO_PROGRAM
from kgexplore.program import (And, ArgMax, ArgMin, ClassRef, Compare, Count, EntityRef, Join, LiteralRef,
                               ProgramSyntaxError, anonymize_question, complexity, decompose, parse,
                               pattern_of, repeated_relations, schema_items_of, subexpressions, to_string)

# -- strategies ---------------------------------------------------------------------------------

ident = st.from_regex(r"[a-z]{1,6}\.[a-z_]{1,8}(\.[a-z_]{1,8})?", fullmatch=True)
entity_ids = st.one_of(
    st.text(st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=12),
    st.from_regex(r"m\.0[a-z0-9_]{2,6}", fullmatch=True),
)
literals = st.one_of(
    st.integers(-10**6, 10**6).map(lambda v: LiteralRef(v, "int")),
    st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False).map(lambda v: LiteralRef(v, "float")),
    st.dates(datetime.date(1000, 1, 1), datetime.date(2999, 12, 31)).map(lambda v: LiteralRef(v, "date")),
    st.text(st.characters(blacklist_categories=("Cs", "Cc")), max_size=10).map(lambda v: LiteralRef(v, "string")),
)
leaves = st.one_of(entity_ids.map(EntityRef), ident.map(ClassRef), literals)
set_programs = st.recursive(
    leaves,
    lambda inner: st.one_of(
        st.builds(Join, ident, inner, st.booleans()),
        st.builds(And, inner, inner),
        st.builds(Compare, st.sampled_from(["le", "lt", "ge", "gt"]), ident,
                  literals.filter(lambda l: l.type != "string")),
    ),
    max_leaves=8,
)
programs = st.one_of(
    set_programs,
    set_programs.map(Count),
    st.builds(ArgMax, set_programs, ident),
    st.builds(ArgMin, set_programs, ident),
)


@settings(max_examples=400, deadline=None)
@given(programs)
def test_round_trip(p):
    assert parse(to_string(p)) == p


@settings(max_examples=200, deadline=None)
@given(programs)
def test_pattern_idempotent(p):
    pat = pattern_of(p)
    assert pattern_of(pat) == pat


@settings(max_examples=200, deadline=None)
@given(programs)
def test_decompose_covers_schema(p):
    steps = decompose(p)
    assert steps[-1] == p
    assert all(complexity(s) <= complexity(p) for s in steps)
    covered = set().union(*(schema_items_of(s) for s in steps))
    assert schema_items_of(p) <= covered


# -- examples ---------------------------------------------------------------------------------


def test_parse_examples():
    p = parse('(AND movie.movie (JOIN movie.written_by "Bernard Girard"))')
    assert p == And(ClassRef("movie.movie"), Join("movie.written_by", EntityRef("Bernard Girard")))
    c = parse('(COUNT (AND movie.movie (JOIN movie.written_by "Gary K. Wolf")))')
    assert isinstance(c, Count)


@pytest.mark.parametrize("text", [
    "(JOIN movie.directed_by",
    "(JOIN movie.directed_by m1))",
    "(AND movie.movie)",
    "(AND a b c)",
    "(AND movie.movie (COUNT movie.movie))",
    "(FOO a b)",
    "(R movie.directed_by)",
    "(le movie.year movie.movie)",
    "",
])
def test_parse_errors(text):
    with pytest.raises(ProgramSyntaxError):
        parse(text)


def test_unbalanced_message():
    with pytest.raises(ProgramSyntaxError, match="unbalanced"):
        parse("(JOIN movie.directed_by")


def test_print_examples():
    assert to_string(Join("movie.directed_by", EntityRef("p1"))) == '(JOIN movie.directed_by "p1")'
    a, b = parse("movie.movie"), parse('(JOIN movie.directed_by "p1")')
    assert to_string(And(a, b)) == '(AND movie.movie (JOIN movie.directed_by "p1"))'
    text = "(JOIN (R book.literary_series.fictional_universe) m.078ffw)"
    assert to_string(parse(text)) == text


def test_decompose_meteorology(meteo):
    got = [str(s) for s in decompose(parse(METEO_PROGRAM), meteo)]
    tcs = '(JOIN meteorology.tropical_cyclone_category.tropical_cyclones "linda")'
    cat = f"(JOIN meteorology.tropical_cyclone.category {tcs})"
    area = '(JOIN meteorology.tropical_cyclone.affected_areas "turks")'
    assert got == [
        f"(AND meteorology.tropical_cyclone_category {tcs})",
        f"(AND meteorology.tropical_cyclone {cat})",
        f"(AND meteorology.tropical_cyclone {area})",
        f"(AND {cat} {area})",
        METEO_PROGRAM,
    ]


def test_decompose_small_cases(toykg):
    j = parse('(JOIN movie.directed_by "p1")')
    assert decompose(j, toykg) == [j]
    x = parse('(AND movie.movie (JOIN movie.directed_by "p1"))')
    assert decompose(Count(x), toykg) == decompose(x, toykg) + [Count(x)]


def test_pattern_examples(toykg):
    assert pattern_of(parse('(AND movie.movie (JOIN movie.directed_by "p1"))'), toykg) == \
        "(AND movie.movie (JOIN movie.directed_by common.person))"
    assert pattern_of(parse("(AND movie.movie (JOIN movie.year 2010^^int))"), toykg) == \
        "(AND movie.movie (JOIN movie.year int))"
    plain = "(AND movie.movie (JOIN movie.directed_by common.person))"
    assert pattern_of(parse(plain), toykg) == plain
    assert pattern_of(parse("(AND movie.movie (lt movie.year 2017^^int))"), toykg) == \
        "(AND movie.movie (lt movie.year int))"


def test_subexpressions(toykg):
    s = subexpressions(parse('(COUNT (AND movie.movie (JOIN movie.directed_by "p1")))'), toykg)
    assert "(COUNT #var)" in s
    assert "(JOIN movie.directed_by #var)" in s
    assert "(ARGMIN movie.year #var)" in subexpressions(parse("(ARGMIN movie.movie movie.year)"), toykg)
    assert subexpressions(parse('"p1"'), toykg) == set()


def test_complexity_and_items(meteo):
    p = parse('(AND movie.movie (JOIN movie.written_by "Bernard Girard"))')
    assert complexity(p) == 1
    assert schema_items_of(p) == {"movie.movie", "movie.written_by"}
    m = parse(METEO_PROGRAM)
    # three JOINs: the category chain has two, the affected-areas branch one
    assert complexity(m) == 3
    assert schema_items_of(m) == {
        "meteorology.tropical_cyclone", "meteorology.tropical_cyclone.category",
        "meteorology.tropical_cyclone_category.tropical_cyclones", "meteorology.tropical_cyclone.affected_areas"}
    assert complexity(parse("movie.movie")) == 0


def test_repeated_relations():
    p = parse('(AND movie.movie (AND (JOIN movie.directed_by "p1") (JOIN movie.directed_by "p1")))')
    assert repeated_relations(p) == 1


def test_anonymize_question():
    q = "How many trophies has Manchester United won?"
    s = q.index("Manchester United")
    assert anonymize_question(q, [((s, s + len("Manchester United")), "sports.team")]) == \
        "How many trophies has sports.team won?"
    assert anonymize_question(q, []) == q
    q2 = "did Nolan direct Tenet?"
    out = anonymize_question(q2, [((4, 9), "common.person"), ((17, 22), "movie.movie")])
    assert out == "did common.person direct movie.movie?"
    with pytest.raises(ValueError):
        anonymize_question(q2, [((4, 9), "a"), ((6, 12), "b")])
