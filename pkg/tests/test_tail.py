from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailrsm.tail import argmin_k, bound_at, deadline_for, emit_curve, tail_curve, terms_at, tightness_witness

U12 = [68, 3124, 171932, 12049876, 1048131068]

moments = st.lists(st.floats(1e-3, 1e12), min_size=1, max_size=6)


def test_fifth_moment_wins():
    assert bound_at(U12, 100) == pytest.approx(0.1048131068, rel=1e-12)
    assert argmin_k(U12, 100) == 5
    assert bound_at(U12[:1], 100) == pytest.approx(0.68)


def test_small_deadline_gives_one():
    assert bound_at([13, 201, 3829], 5) == 1.0
    assert argmin_k([13, 201, 3829], 5) == 0


def test_termwise_minimum():
    assert terms_at([13, 201, 3829], 1000) == pytest.approx([1, 0.013, 2.01e-4, 3.829e-6])
    assert bound_at([13, 201, 3829], 1000) == pytest.approx(3.829e-6, rel=1e-12)


def test_long_walk_bound():
    assert bound_at([5000000025], 1e11) == pytest.approx(0.05000000025, rel=1e-12)


def test_two_point_examples():
    w = tightness_witness(Fraction(5), 1, Fraction(10))
    assert w.p == Fraction(1, 2) and w.moment(1) == 5 and w.tail(10) == Fraction(1, 2)
    w = tightness_witness(Fraction(3829), 2, Fraction(1000))
    assert w.p == Fraction(3829, 10**6)
    w = tightness_witness(Fraction(7), 0, Fraction(3))
    assert w.p == 1 and w.tail(3) == 1 and w.moment(0) == 1


def test_two_point_clipped():
    w = tightness_witness(Fraction(500), 2, Fraction(10))
    assert w.p == 1


def test_deadline_examples():
    assert deadline_for(U12, 0.105) == pytest.approx(100, rel=1e-3)
    assert deadline_for([1], 0.5) == pytest.approx(2)


def test_envelope_examples():
    c = tail_curve([13, 201, 3829], 1, 1000)
    i = np.argmin(np.abs(c.grid - 400))
    assert c.envelope[i] < 0.07
    single = tail_curve([50], 1, 1000, points=64)
    assert np.allclose(single.envelope, np.minimum(1, 50 / single.grid))


def test_csv_output():
    text = emit_curve([13, 201], 1, 100, points=4)
    lines = text.strip().split("\n")
    assert lines[0] == "d,curve_1,curve_2,envelope"
    assert len(lines) == 5
    assert lines[-1].startswith("100,")


def test_invalid_inputs():
    with pytest.raises(ValueError):
        bound_at([1], 0)
    with pytest.raises(ValueError):
        bound_at([-1], 3)
    with pytest.raises(ValueError):
        deadline_for([1], 1.5)
    with pytest.raises(ValueError):
        tail_curve([1], 10, 1)


@settings(max_examples=200, deadline=None)
@given(moments, st.floats(1e-2, 1e9), st.floats(1e-2, 1e9))
def test_antimonotone(u, d1, d2):
    lo, hi = sorted((d1, d2))
    assert bound_at(u, hi) <= bound_at(u, lo) * (1 + 1e-12)
    assert 0 <= bound_at(u, lo) <= 1


@settings(max_examples=200, deadline=None)
@given(moments, st.floats(1e-4, 0.999))
def test_deadline_is_smallest(u, p):
    d = deadline_for(u, p)
    assert bound_at(u, d) <= p
    assert bound_at(u, d * 0.99) > p


@settings(max_examples=100, deadline=None)
@given(moments)
def test_envelope_crossover(u):
    """At the right end of a long enough grid the K-th term is the minimum."""
    K = len(u)
    full = [1.0] + list(u)
    # the K-th term is minimal once d >= (u_K / u_j)^(1/(K-j)) for every j < K
    d_star = max((full[K] / full[j]) ** (1 / (K - j)) for j in range(K)) * 10
    c = tail_curve(u, 1e-3, d_star, points=32)
    assert argmin_k(u, float(c.grid[-1])) == K


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.fractions(Fraction(1, 100), Fraction(10**4)), st.fractions(0, 1))
def test_tightness_exact(k, d, frac):
    u = frac * d ** k  # guarantees u <= d^k
    w = tightness_witness(u, k, d)
    assert w.moment(k) == u
    assert w.tail(d) == u / d ** k
    assert w.tail(d) == Fraction(min(1, u / d ** k))
