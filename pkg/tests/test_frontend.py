from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailrsm.frontend import (
    Disc,
    IfCond,
    IfNondet,
    Norm,
    ParseError,
    Sample,
    Skip,
    Unif,
    ValidationError,
    While,
    parse,
    pretty,
    unwrap,
    validate,
    walk,
)

from conftest import CORPUS, corpus_source


def stmts_of(ast):
    return [unwrap(s)[1] for _, s in walk(ast.body)]


def test_walk2d_plain_shape():
    ast = parse(corpus_source("walk2d_plain"))
    kinds = [type(s) for s in stmts_of(ast)]
    assert kinds.count(While) == 1
    assert kinds.count(IfNondet) == 1
    samples = [s for s in stmts_of(ast) if isinstance(s, Sample)]
    assert len(samples) == 1 and samples[0].dist == Unif(Fraction(-2), Fraction(1))
    ann = validate(ast)
    assert ann.linear
    assert set(ann.variables) == {"x", "y", "z"}


def test_skip():
    ast = parse("skip")
    assert ast.body == (Skip(),)
    assert ast.global_invariant is None


def test_polynomial_guard_flagged():
    ast = parse(corpus_source("poly_tail"))
    loop = next(s for s in stmts_of(ast) if isinstance(s, While))
    assert loop.cond.degree() == 3
    ann = validate(ast)
    assert not ann.linear
    assert ann.classification == "polynomial"


def test_undeclared_variable():
    with pytest.raises(ValidationError):
        validate(parse("x := 0; while w > 0 do x := x + 1 od"))


def test_declared_in_global_invariant():
    validate(parse("$ w >= 0\nwhile w > 0 do w := w - 1 od"))


@pytest.mark.parametrize("src", [
    "if prob(3/2) then skip else skip fi",
    "x := Disc(0: 1/2, 1: 1/3)",
    "x := Unif(1, 1)",
    "x := Norm(0, 0)",
    "x := ",
    "while x > 0 do skip",
    "x := 1 +* 2",
])
def test_rejects(src):
    with pytest.raises((ParseError, ValidationError, ValueError)):
        validate(parse(src))


def test_parse_error_position():
    with pytest.raises(ParseError) as exc:
        parse("x := 0;\nwhile x > do skip od")
    assert exc.value.line == 2


def test_disc_exact():
    ast = parse("x := Disc(0: 1/3, 1: 1/3, 2: 1/3)")
    d = ast.body[0].dist
    assert isinstance(d, Disc)
    assert sum(p for _, p in d.outcomes) == 1
    assert all(isinstance(p, Fraction) for _, p in d.outcomes)
    assert d.moment(1) == 1


def test_distribution_moments():
    assert Unif(Fraction(0), Fraction(1)).moment(2) == Fraction(1, 3)
    assert Unif(Fraction(-2), Fraction(1)).mean() == Fraction(-1, 2)
    n = Norm(Fraction(0), Fraction(1))
    assert n.moment(2) == 1 and n.moment(3) == 0 and n.moment(4) == 3


def test_probability_literals_exact():
    ast = parse("if prob(0.25) then skip else skip fi")
    assert ast.body[0].prob == Fraction(1, 4)


def test_refute_and_ndet():
    ast = parse("x := ndet(x >= 0 and x <= 1); refute(x < 0)")
    assert validate(ast).linear


def test_nested_annotation_conflict():
    with pytest.raises(ValidationError):
        validate(parse("x := 0; { x >= 0 } while x < 3 { x >= 0 } do x := x + 1 od"))


@pytest.mark.parametrize("name", CORPUS)
def test_round_trip(name):
    ast = parse(corpus_source(name))
    assert parse(pretty(ast)) == ast


# ---------------------------------------------------------------- DNF property

ATOMS = ["x <= 1", "y > x", "x + y >= 2", "y = 0", "x * y < 1", "2 * x - y <= 3"]


def eval_atom(a: str, x: Fraction, y: Fraction) -> bool:
    return {
        "x <= 1": x <= 1, "y > x": y > x, "x + y >= 2": x + y >= 2, "y = 0": y == 0,
        "x * y < 1": x * y < 1, "2 * x - y <= 3": 2 * x - y <= 3,
    }[a]


trees = st.recursive(
    st.sampled_from(ATOMS).map(lambda a: ("atom", a)),
    lambda sub: st.one_of(
        st.tuples(st.just("not"), sub),
        st.tuples(st.sampled_from(["and", "or"]), sub, sub),
    ),
    max_leaves=6,
)


def render(t) -> str:
    if t[0] == "atom":
        return t[1]
    if t[0] == "not":
        return f"not ({render(t[1])})"
    return f"({render(t[1])}) {t[0]} ({render(t[2])})"


def evaluate(t, x, y) -> bool:
    if t[0] == "atom":
        return eval_atom(t[1], x, y)
    if t[0] == "not":
        return not evaluate(t[1], x, y)
    if t[0] == "and":
        return evaluate(t[1], x, y) and evaluate(t[2], x, y)
    return evaluate(t[1], x, y) or evaluate(t[2], x, y)


@settings(max_examples=60, deadline=None)
@given(trees, st.integers(0, 10**6))
def test_dnf_preserves_satisfaction(tree, seed):
    ast = parse(f"$ y = y\nx := 0; if {render(tree)} then skip else skip fi")
    cond = next(s for s in stmts_of(ast) if isinstance(s, IfCond)).cond
    rng = random.Random(seed)
    grid = [Fraction(k, 2) for k in range(-4, 7)]
    for _ in range(200):
        x = rng.choice(grid) if rng.random() < 0.5 else Fraction(rng.randint(-400, 400), rng.randint(1, 60))
        y = rng.choice(grid) if rng.random() < 0.5 else Fraction(rng.randint(-400, 400), rng.randint(1, 60))
        assert cond.holds_exact({"x": x, "y": y}) == evaluate(tree, x, y)


@pytest.mark.parametrize("name", CORPUS)
def test_corpus_predicates_dnf(name):
    """Negation is complementary on 1000 random dyadic valuations."""
    ann = validate(parse(corpus_source(name)))
    rng = random.Random(1)
    preds = {str(p): p for p in ann.invariants.values()}
    for p in preds.values():
        neg = p.negate(limit=1 << 16)
        for _ in range(1000):
            # dyadic values are exact in floating point, so float evaluation is exact here
            env = {v: rng.randint(-64, 64) / rng.choice([1, 2, 4, 8]) for v in ann.variables}
            assert p.holds(env) != neg.holds(env)
