from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailrsm.oracle import (
    DET,
    PROB,
    TERM,
    FiniteStateGraph,
    OracleError,
    apply_policy,
    bernoulli_policy,
    enumerate_states,
    exact_moments_markov,
    gap_example,
    scheduler_sweep,
    value_iterate_FK,
)
from tailrsm.pcfg import compile_source

from conftest import corpus_program
from graphs import random_graph


def two_state():
    return FiniteStateGraph(["s", "t"], [DET, TERM], [[(1, 1.0)], []], [1.0, 0.0])


def geometric():
    return FiniteStateGraph(["s", "t"], [PROB, TERM], [[(0, 0.5), (1, 0.5)], []], [1.0, 0.0])


def test_gap_example_structure():
    g = gap_example()
    assert g.n == 13 and g.kinds[12] == TERM
    assert g.choice_states() == [1]


def test_gap_value_iteration():
    vi = value_iterate_FK(gap_example(), 2)
    assert vi.converged
    assert vi.at(0) == pytest.approx((6, 37.5), abs=1e-9)
    assert vi.at(12) == (0.0, 0.0)


def test_gap_sweep_true_values():
    # exact per-scheduler moments of this graph: detour branch gives (5.5, 36.5),
    # the four-step path gives (6, 36)
    sw = scheduler_sweep(gap_example(), 2)
    moments = sorted(m for _, m in sw.table)
    assert moments[0] == pytest.approx((5.5, 36.5))
    assert moments[1] == pytest.approx((6.0, 36.0))
    assert sw.maxima == pytest.approx((6.0, 36.5))


@pytest.mark.parametrize("p", [0, 0.25, 0.5, 1])
def test_gap_bernoulli_family(p):
    g = gap_example()
    m = exact_moments_markov(apply_policy(g, bernoulli_policy(g, p)), 2).at(0)
    # p is the probability of taking the probabilistic branch at l1
    assert m == pytest.approx((6 - p / 2, 36 + p / 2), abs=1e-12)


def test_two_state_chain():
    g = two_state()
    assert exact_moments_markov(g, 2).at(0) == pytest.approx((1, 1))
    assert value_iterate_FK(g, 2).at(0) == pytest.approx((1, 1))


def test_geometric():
    g = geometric()
    assert exact_moments_markov(g, 3).at(0) == pytest.approx((2, 6, 26))
    assert value_iterate_FK(g, 3).at(0) == pytest.approx((2, 6, 26), abs=1e-8)


def test_non_terminating():
    g = FiniteStateGraph(["a", "b", "t"], [PROB, DET, TERM], [[(1, 0.5), (2, 0.5)], [(1, 1.0)], []],
                         [1.0, 1.0, 0.0])
    with pytest.raises(OracleError):
        exact_moments_markov(g, 1)
    m = exact_moments_markov(g, 1, allow_infinite=True)
    assert m.at(1) == (np.inf,) and m.at(0) == (np.inf,)
    vi = value_iterate_FK(g, 1, max_iters=500)
    assert not vi.converged and vi.at(1)[0] == pytest.approx(500)


def test_overflow_guard():
    g = FiniteStateGraph(["a", "t"], [PROB, TERM], [[(0, 0.5), (1, 0.5)], []], [1e200, 0.0])
    with pytest.raises(OracleError, match="unbounded"):
        value_iterate_FK(g, 2)


def test_invalid_graphs():
    with pytest.raises(ValueError):
        FiniteStateGraph(["a", "t"], [PROB, TERM], [[(1, 0.9)], []], [1.0, 0.0])
    with pytest.raises(ValueError):
        FiniteStateGraph(["a"], [TERM], [[]], [1.0])


def test_walk2d_plain_not_finite():
    with pytest.raises(OracleError, match="continuous"):
        enumerate_states(corpus_program("walk2d_plain"))


def test_coupon2_enumeration():
    g = enumerate_states(corpus_program("coupon2"))
    assert g.is_markov() and g.n == 11
    vi = value_iterate_FK(g, 3, tol=1e-12)
    ex = exact_moments_markov(g, 3)
    assert vi.at(g.init) == pytest.approx(ex.at(g.init), abs=1e-9)
    assert ex.at(g.init) == pytest.approx((13, 201, 3829), rel=1e-12)


def test_enumeration_bounds():
    prog = compile_source("x := 0; while x >= 0 do x := x + 1 od")
    with pytest.raises(OracleError, match="more than"):
        enumerate_states(prog, count_bound=50)


def test_sweep_limit():
    with pytest.raises(OracleError, match="combinatorial"):
        scheduler_sweep(gap_example(), 1, limit=1)


def test_no_choice_sweep_equals_exact():
    g = random_graph(random.Random(2), 8, nondet=False)
    sw = scheduler_sweep(g, 2)
    assert sw.maxima == pytest.approx(exact_moments_markov(g, 2).at(0))


def test_monotone_convergence():
    g = gap_example()
    prev = np.zeros((g.n, 2))
    for it in range(1, 12):
        cur = value_iterate_FK(g, 2, max_iters=it).values
        assert np.all(cur >= prev - 1e-12)
        prev = cur


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(3, 10))
def test_random_graphs(seed, n):
    g = random_graph(random.Random(seed), n)
    vi = value_iterate_FK(g, 2)
    assert vi.converged
    sw = scheduler_sweep(g, 2)
    for k in range(2):
        assert sw.maxima[k] <= vi.at(0)[k] * (1 + 1e-9) + 1e-9
    if g.is_markov():
        ex = exact_moments_markov(g, 2)
        assert np.allclose(vi.values, ex.values, rtol=1e-6, atol=1e-6)
        # Jensen
        assert np.all(ex.values[:, 0] ** 2 <= ex.values[:, 1] * (1 + 1e-12))
