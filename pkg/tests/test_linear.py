from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailrsm import lp as lpmod
from tailrsm.constraints import Implication, elapse, generate_constraints, pre_expectation_cases
from tailrsm.linear import (
    LAST,
    LEX,
    NonlinearProgram,
    build_lp,
    build_template,
    eliminate_equalities,
    farkas_reduce,
    synthesize,
)
from tailrsm.pcfg import compile_source
from tailrsm.polynomial import Poly
from tailrsm.witness import check_witness

from conftest import corpus_program

x, y = Poly.var("x"), Poly.var("y")


def test_walk2d_plain_parameter_count():
    assert build_template(corpus_program("walk2d_plain"), 2).param_count == 8 * 2 * 4


def test_k1_is_classic_template():
    tmpl = build_template(corpus_program("walk_int"), 1)
    assert {k for _, k in tmpl.eta} == {1}


def test_parameter_count_coupon4():
    prog = corpus_program("coupon4")
    n = len(prog.pcfg.locations) * 5 * (len(prog.pcfg.variables) + 1)
    assert build_template(prog, 5).param_count == n


def test_polynomial_program_needs_poly_template():
    with pytest.raises(NonlinearProgram):
        build_template(corpus_program("poly_tail"), 1)


def test_elapse_k2():
    e1, e2 = Poly.var("e1"), Poly.var("e2")
    eta = {(0, 1): e1, (0, 2): e2}
    assert elapse(eta, 0, 2, Fraction(1)) == e2 + e1 * 2 + 1
    assert elapse(eta, 0, 1, Fraction(1)) == e1 + 1
    assert elapse(eta, 0, 2, Fraction(0)) == e2


def test_assignment_substitution():
    prog = corpus_program("walk2d_plain")
    eta = {(l, 1): x for l in range(8)}
    (ctx, rhs), = pre_expectation_cases(prog, eta, 5, 1)
    assert rhs == x + Poly.var("z") + 1


def test_sampling_expectation():
    prog = corpus_program("walk2d_plain")
    eta = {(l, 1): Poly.var("z") for l in range(8)}
    (_, rhs), = pre_expectation_cases(prog, eta, 3, 1)
    assert rhs == Poly.const(Fraction(1, 2))  # 1 + E[Unif(-2, 1)]


def test_nondeterministic_location_two_cases():
    prog = corpus_program("walk2d_plain")
    tmpl = build_template(prog, 2)
    imps = generate_constraints(prog, tmpl.eta, 2)
    for k in (1, 2):
        cases = {imp.tag[3] for imp in imps if imp.tag[:3] == (4, "decrease", k)}
        assert cases == {0, 1}


def test_skip_constraints_and_bound():
    prog = compile_source("skip")
    tmpl = build_template(prog, 1)
    imps = generate_constraints(prog, tmpl.eta, 1)
    kinds = sorted(imp.tag[:2] for imp in imps)
    assert kinds == [(0, "decrease"), (0, "nonneg"), (1, "nonneg")]
    res = synthesize(prog, 1)
    assert res.bounds[0] == pytest.approx(1.0)


def test_farkas_simple():
    p = Poly.var("@p")
    imp = Implication((x,), x + p, ("t",))
    fr = farkas_reduce(imp)
    lp = lpmod.LinearProgram()
    lp.add_var("@p", free=True)
    ys = [lp.add_var("y0")]
    for pc, mc, rhs in fr.equalities:
        lp.add_row({**{lp.var(k): float(v) for k, v in pc.items()}, **{ys[i]: float(v) for i, v in mc.items()}},
                   "=", float(rhs))
    pc, mc, rhs = fr.inequality
    lp.add_row({**{lp.var(k): float(v) for k, v in pc.items()}, **{ys[i]: float(v) for i, v in mc.items()}},
               ">=", float(rhs))
    lp.set_objective({lp.var("@p"): 1.0})
    sol = lpmod.solve(lp)
    assert sol.optimal and sol.objective == pytest.approx(0.0)
    assert sol.x[ys[0]] == pytest.approx(1.0)


def test_farkas_empty_context():
    b = Poly.var("@b")
    fr = farkas_reduce(Implication((), b, ("t",)))
    assert fr.equalities == [] and fr.inequality == ({"@b": 1}, {}, 0)


def test_equality_elimination():
    imp = Implication((x - 2, 2 - x, y), x * Poly.var("@a") + y + Poly.var("@b"), ("t",))
    out = eliminate_equalities(imp)
    assert out.context == (y,)
    assert out.consequent == Poly.var("@a") * 2 + y + Poly.var("@b")
    assert eliminate_equalities(Implication((x - 2, 2 - x, x - 3), x, ("t",))) is None


def _solve_reduction(imp: Implication, objective: dict[str, float]):
    fr = farkas_reduce(imp)
    lp = lpmod.LinearProgram()
    params = sorted(v for v in imp.consequent.variables() if v.startswith("@"))
    for p in params:
        lp.add_var(p, free=True)
    ys = [lp.add_var(f"y{i}") for i in range(fr.multipliers)]

    def coeffs(pc, mc):
        out = {lp.var(k): float(v) for k, v in pc.items()}
        for i, v in mc.items():
            out[ys[i]] = out.get(ys[i], 0.0) + float(v)
        return out

    for pc, mc, rhs in fr.equalities:
        lp.add_row(coeffs(pc, mc), "=", float(rhs))
    lp.add_row(coeffs(*fr.inequality[:2]), ">=", float(fr.inequality[2]))
    for p in params:  # keep the LP bounded
        lp.add_row({lp.var(p): 1.0}, "<=", 50.0)
        lp.add_row({lp.var(p): 1.0}, ">=", -50.0)
    lp.set_objective({lp.var(p): c for p, c in objective.items()})
    sol = lpmod.solve(lp)
    return sol, {p: sol.x[lp.var(p)] for p in params} if sol.optimal else None


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_farkas_solutions_are_sound(seed):
    """Any parameter values accepted by the reduction make the implication hold on the polyhedron."""
    rng = random.Random(seed)
    box = [x + 3, 3 - x, y + 3, 3 - y]
    extra = [x * rng.randint(-3, 3) + y * rng.randint(-3, 3) + rng.randint(-2, 4) for _ in range(rng.randint(0, 3))]
    ctx = tuple(box + extra)
    a, b, c = Poly.var("@a"), Poly.var("@b"), Poly.var("@c")
    consequent = a * x + b * y + c
    sol, vals = _solve_reduction(Implication(ctx, consequent, ("t",)),
                                 {"@c": 1.0, "@a": rng.uniform(-1, 1), "@b": rng.uniform(-1, 1)})
    if vals is None:
        return
    pts = 0
    for _ in range(1000):
        env = {"x": rng.uniform(-3, 3), "y": rng.uniform(-3, 3)}
        if all(r.evaluate(env) >= 0 for r in ctx):
            pts += 1
            val = vals["@a"] * env["x"] + vals["@b"] * env["y"] + vals["@c"]
            assert val >= -1e-7


CORPUS_BOUNDS = [
    ("coupon2", 3, [13, 201, 3829]),
    ("skip", 2, [1, 1]),
    ("walk_int", 1, [20]),
]


@pytest.mark.parametrize("name,K,expected", CORPUS_BOUNDS)
def test_corpus_bounds(name, K, expected):
    res = synthesize(corpus_program(name), K)
    assert res.status == lpmod.OPTIMAL
    assert res.bounds == pytest.approx(expected, rel=1e-9)


def test_infeasible_reports_failed_constraints():
    res = synthesize(corpus_program("walk_int"), 2)
    assert res.status == lpmod.INFEASIBLE
    assert res.bounds[0] == pytest.approx(20) and res.bounds[1] is None
    assert res.feasible_upto == 1
    assert res.failed


def test_monotone_in_K():
    prog = corpus_program("coupon2")
    u3 = synthesize(prog, 3).bounds
    u2 = synthesize(prog, 2).bounds
    assert u2 == pytest.approx(u3[:2], rel=1e-9)


def test_modes():
    prog = corpus_program("coupon2")
    last = synthesize(prog, 3, mode=LAST)
    lex = synthesize(prog, 3, mode=LEX)
    assert last.bounds[2] == pytest.approx(3829, rel=1e-9)
    assert lex.bounds[2] == pytest.approx(3829, rel=1e-9)
    assert lex.bounds[0] == pytest.approx(13, rel=1e-6)
    assert all(b >= a - 1e-6 for a, b in zip([13, 201, 3829], last.bounds))


def test_constraint_count_stable():
    prog = corpus_program("walk_adv")
    tmpl = build_template(prog, 3)
    a = build_lp(prog, tmpl, 3)
    b = build_lp(corpus_program("walk_adv"), build_template(corpus_program("walk_adv"), 3), 3)
    assert a.lp.shape == b.lp.shape
    assert lpmod.write_lp(a.lp) == lpmod.write_lp(b.lp)


@pytest.mark.parametrize("name,K", [("coupon2", 3), ("walk_adv", 3), ("walk2d", 1), ("walk_real", 1)])
def test_witness_passes_sampled_check(name, K):
    prog = corpus_program(name)
    res = synthesize(prog, K)
    for kk, wit in res.witnesses.items():
        rep = check_witness(prog, wit.eta, kk, samples=2000)
        assert rep.ok, rep.violations[:3]


def test_witness_json_shape():
    prog = corpus_program("coupon2")
    doc = synthesize(prog, 1).witnesses[1].to_json(prog)
    assert set(doc) == {loc.name for loc in prog.pcfg.locations}
    assert set(doc["l0"]["1"]) == {"coefficients", "intercept"}
