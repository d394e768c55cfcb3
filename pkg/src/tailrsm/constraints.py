"""Symbolic pre-expectation and the implication constraints of a K-th moment
ranking supermartingale.

A template maps ``(location, k)`` to a polynomial over program variables whose
coefficients are parameter symbols (names starting with ``@``).  Everything
here is independent of the template's degree; the linear and polynomial
back ends differ only in how they discharge the implications.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb

from .logic import DEFAULT_DISJUNCT_LIMIT, Predicate
from .pcfg import AD, AN, AP, D, N, P, Program
from .polynomial import Poly

PARAM_PREFIX = "@"
FRESH_PREFIX = "~"

Template = dict[tuple[int, int], Poly]


def is_param(name: str) -> bool:
    return name.startswith(PARAM_PREFIX)


def fresh(var: str) -> str:
    return FRESH_PREFIX + var


@dataclass(frozen=True)
class Implication:
    """``all(c >= 0 for c in context) ==> consequent >= 0``."""

    context: tuple[Poly, ...]
    consequent: Poly
    tag: tuple  # (location, "decrease"|"nonneg", k, case index, disjunct indices)

    def program_symbols(self) -> list[str]:
        names: set[str] = set()
        for c in self.context:
            names |= c.variables()
        names |= {v for v in self.consequent.variables() if not is_param(v)}
        return sorted(names)

    def describe(self) -> str:
        l, kind, k = self.tag[:3]
        return f"l{l} {kind} k={k}"


def elapse(eta: Template, target: int, k: int, reward: Fraction) -> Poly:
    """``el_a^{K,k}`` applied to the template at ``target``."""
    out = Poly.const(reward ** k)
    for j in range(1, k + 1):
        w = comb(k, j) * reward ** (k - j)
        if w:
            out = out + eta[(target, j)] * w
    return out


def pre_expectation_cases(prog: Program, eta: Template, l: int, k: int) -> list[tuple[Predicate, Poly]]:
    """Cases of ``X(el o eta)_k`` at ``l``: (extra context, expression).

    Nondeterministic locations yield one case per successor, deterministic
    ones one case per guard, and ``ndet`` assignments introduce a fresh
    universally quantified symbol constrained by the extra context.
    """
    pc = prog.pcfg
    a = pc.reward[l]
    kind = pc.kind(l)
    edges = pc.edges[l]
    if kind == D:
        return [(e.guard, elapse(eta, e.target, k, a)) for e in edges]
    if kind == P:
        total = Poly()
        for e in edges:
            if e.prob:
                total = total + elapse(eta, e.target, k, a) * e.prob
        return [(Predicate.true(), total)]
    if kind == N:
        return [(Predicate.true(), elapse(eta, e.target, k, a)) for e in edges]
    var, up = pc.update[l]
    body = elapse(eta, edges[0].target, k, a)
    sub = pc.sub(l)
    if sub == AD:
        return [(Predicate.true(), body.substitute(var, up))]
    v = fresh(var)
    body = body.substitute(var, Poly.var(v))
    if sub == AP:
        return [(Predicate.true(), body.expect(v, up.moment))]
    assert sub == AN
    ctx = _rename(up, var, v)
    return [(ctx, body)]


def _rename(pred: Predicate, var: str, new: str) -> Predicate:
    from .logic import Atom

    return Predicate(tuple(
        tuple(Atom(a.poly.substitute(var, Poly.var(new)), a.op) for a in conj) for conj in pred.disjuncts
    ))


def _rows(conjuncts) -> tuple[Poly, ...] | None:
    """Relaxed context rows, or None when a constant row is already violated."""
    rows: dict[Poly, None] = {}
    for conj in conjuncts:
        for atom in conj:
            if atom.poly.is_constant() and not atom.holds({}):
                return None
            for r in atom.relaxed():
                if r.is_constant():
                    continue
                rows.setdefault(r, None)
    return tuple(rows)


def generate_constraints(prog: Program, eta: Template, K: int,
                         limit: int = DEFAULT_DISJUNCT_LIMIT) -> list[Implication]:
    """Implications for both supermartingale conditions, in a stable order."""
    out: list[Implication] = []
    pc = prog.pcfg
    for loc in pc.locations:
        l = loc.id
        inv = prog.invariant.at(l)
        not_c = prog.terminal.at(l).negate(limit)
        region = inv.and_(not_c, limit)
        for k in range(1, K + 1):
            for i, conj in enumerate(inv.disjuncts):
                rows = _rows([conj])
                if rows is not None:
                    out.append(Implication(rows, eta[(l, k)], (l, "nonneg", k, 0, (i,))))
            if region.is_false():
                continue
            for c, (extra, rhs) in enumerate(pre_expectation_cases(prog, eta, l, k)):
                diff = eta[(l, k)] - rhs
                for (i, d1), (j, d2) in itertools.product(enumerate(region.disjuncts), enumerate(extra.disjuncts)):
                    rows = _rows([d1, d2])
                    if rows is not None:
                        out.append(Implication(rows, diff, (l, "decrease", k, c, (i, j))))
    return out


def init_value(prog: Program, eta: Template, k: int) -> Poly:
    """``eta_k(l_init, x_init)`` as a polynomial in the parameters."""
    pc = prog.pcfg
    return eta[(pc.l_init, k)].partial(pc.x_init)
