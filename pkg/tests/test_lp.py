from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailrsm import lp as lpmod
from tailrsm.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, read_lp, solve, write_lp

from lp_oracle import brute, random_lp

def test_trivial_max():
    lp = LinearProgram()
    x = lp.add_var("x")
    lp.add_row({x: 1.0}, "<=", 3.0)
    lp.set_objective({x: -1.0})
    sol = solve(lp)
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.objective == pytest.approx(-3.0)


def test_trivial_infeasible():
    lp = LinearProgram()
    x = lp.add_var("x")
    lp.add_row({x: 1.0}, "<=", -1.0, "neg")
    sol = solve(lp)
    assert sol.status == INFEASIBLE
    assert "neg" in sol.infeasible_rows


def test_unbounded():
    lp = LinearProgram()
    x = lp.add_var("x", free=True)
    lp.add_row({x: 1.0}, "<=", 1.0)
    lp.set_objective({x: 1.0})
    assert solve(lp).status == UNBOUNDED


def test_free_split():
    lp = LinearProgram()
    x = lp.add_var("x", free=True)
    lp.add_row({x: 1.0}, ">=", -4.0)
    lp.set_objective({x: 1.0})
    sol = solve(lp)
    assert sol.x[0] == pytest.approx(-4.0)


def test_random_against_vertex_enumeration():
    rng = np.random.default_rng(7)
    checked = feasible = 0
    for _ in range(200):
        lp = random_lp(rng)
        ref = brute(lp)
        sol = solve(lp)
        assert sol.iterations <= 10**4
        if ref is None:
            assert sol.status == INFEASIBLE
        else:
            assert sol.status == OPTIMAL
            assert sol.objective == pytest.approx(ref, abs=1e-7)
            assert lp.residuals(sol.x).max(initial=0.0) <= 1e-7
            feasible += 1
        checked += 1
    assert checked == 200 and feasible >= 50


def test_reduced_costs_nonnegative():
    rng = np.random.default_rng(11)
    for _ in range(50):
        sol = solve(random_lp(rng))
        if sol.optimal:
            assert sol.reduced_costs.min() >= -1e-7


def test_deterministic():
    rng = np.random.default_rng(3)
    lp = random_lp(rng)
    a, b = solve(lp), solve(read_lp(write_lp(lp)))
    assert a.status == b.status and a.iterations == b.iterations
    if a.optimal:
        assert np.array_equal(a.x, b.x)


def test_text_round_trip():
    rng = np.random.default_rng(5)
    lp = random_lp(rng)
    text = write_lp(lp)
    assert write_lp(read_lp(text)) == text


def test_standalone_driver(tmp_path, capsys):
    lp = LinearProgram()
    x = lp.add_var("x")
    lp.add_row({x: 1.0}, "<=", 3.0, "cap")
    lp.set_objective({x: -1.0})
    f = tmp_path / "p.lp"
    f.write_text(write_lp(lp))
    assert lpmod.main([str(f)]) == 0
    assert '"objective": -3.0' in capsys.readouterr().out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_matches_oracle(seed):
    lp = random_lp(np.random.default_rng(seed))
    ref = brute(lp)
    sol = solve(lp)
    if ref is None:
        assert sol.status == INFEASIBLE
    else:
        assert sol.objective == pytest.approx(ref, abs=1e-7)
