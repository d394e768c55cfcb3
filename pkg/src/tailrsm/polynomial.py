"""Exact multivariate polynomials with rational coefficients.

Monomials are tuples of ``(name, exponent)`` pairs sorted by name, so the
empty tuple is the constant monomial.  The same type carries template
parameters: a template is simply a polynomial that is linear in the
parameter symbols, and every operation used during constraint generation
(substitution, expectation, scaling) preserves that shape.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping, Union

Monomial = tuple[tuple[str, int], ...]
Number = Union[int, Fraction]

ONE: Monomial = ()


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    exps = dict(a)
    for v, e in b:
        exps[v] = exps.get(v, 0) + e
    return tuple(sorted(exps.items()))


def mono_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


def mono_str(m: Monomial) -> str:
    if not m:
        return "1"
    return "*".join(v if e == 1 else f"{v}^{e}" for v, e in m)


def _fmt_coeff(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    return f"{c.numerator}/{c.denominator}"


class Poly:
    """Immutable sparse polynomial."""

    __slots__ = ("_terms", "_hash", "_float")

    def __init__(self, terms: Mapping[Monomial, Number] | None = None):
        clean: dict[Monomial, Fraction] = {}
        if terms:
            for m, c in terms.items():
                c = Fraction(c)
                if c:
                    clean[m] = c
        self._terms = clean
        self._hash: int | None = None
        self._float = None

    # construction -------------------------------------------------------
    @classmethod
    def const(cls, c: Number) -> "Poly":
        return cls({ONE: c})

    @classmethod
    def var(cls, name: str) -> "Poly":
        return cls({((name, 1),): 1})

    @classmethod
    def _raw(cls, terms: dict[Monomial, Fraction]) -> "Poly":
        p = cls.__new__(cls)
        p._terms = terms
        p._hash = None
        p._float = None
        return p

    # queries ------------------------------------------------------------
    @property
    def terms(self) -> Mapping[Monomial, Fraction]:
        return self._terms

    def items(self) -> Iterator[tuple[Monomial, Fraction]]:
        return iter(self._terms.items())

    def coeff(self, m: Monomial) -> Fraction:
        return self._terms.get(m, Fraction(0))

    def constant(self) -> Fraction:
        return self._terms.get(ONE, Fraction(0))

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(not m for m in self._terms)

    def degree(self, among: Iterable[str] | None = None) -> int:
        if not self._terms:
            return 0
        if among is None:
            return max(mono_degree(m) for m in self._terms)
        keep = set(among)
        return max(sum(e for v, e in m if v in keep) for m in self._terms)

    def variables(self) -> frozenset[str]:
        return frozenset(v for m in self._terms for v, _ in m)

    def is_linear(self) -> bool:
        return self.degree() <= 1

    # arithmetic ---------------------------------------------------------
    def __add__(self, other: "Poly | Number") -> "Poly":
        if not isinstance(other, Poly):
            other = Poly.const(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            s = out.get(m, 0) + c
            if s:
                out[m] = s
            else:
                out.pop(m, None)
        return Poly._raw(out)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly._raw({m: -c for m, c in self._terms.items()})

    def __sub__(self, other: "Poly | Number") -> "Poly":
        if not isinstance(other, Poly):
            other = Poly.const(other)
        return self + (-other)

    def __rsub__(self, other: Number) -> "Poly":
        return Poly.const(other) - self

    def __mul__(self, other: "Poly | Number") -> "Poly":
        if not isinstance(other, Poly):
            k = Fraction(other)
            if not k:
                return Poly()
            return Poly._raw({m: c * k for m, c in self._terms.items()})
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = mono_mul(m1, m2)
                s = out.get(m, 0) + c1 * c2
                if s:
                    out[m] = s
                else:
                    out.pop(m, None)
        return Poly._raw(out)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Poly":
        result = Poly.const(1)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    # transformation -----------------------------------------------------
    def substitute(self, name: str, value: "Poly") -> "Poly":
        """Replace every occurrence of variable ``name`` by ``value``."""
        if name not in self.variables():
            return self
        powers: dict[int, Poly] = {}
        out = Poly()
        for m, c in self._terms.items():
            e = dict(m).get(name, 0)
            rest = tuple((v, k) for v, k in m if v != name)
            term = Poly._raw({rest: c})
            if e:
                if e not in powers:
                    powers[e] = value ** e
                term = term * powers[e]
            out = out + term
        return out

    def expect(self, name: str, moment: Callable[[int], Fraction]) -> "Poly":
        """Integrate out ``name`` given its raw moments ``moment(n) = E[X^n]``."""
        out: dict[Monomial, Fraction] = {}
        for m, c in self._terms.items():
            e = dict(m).get(name, 0)
            rest = tuple((v, k) for v, k in m if v != name)
            w = c * moment(e) if e else c
            s = out.get(rest, 0) + w
            if s:
                out[rest] = s
            else:
                out.pop(rest, None)
        return Poly._raw(out)

    def split(self, params: frozenset[str] | set[str]) -> dict[Monomial, "Poly"]:
        """Group by monomials over non-parameter symbols.

        Returns ``{program_monomial: coefficient}`` where each coefficient is a
        polynomial over the parameter symbols only.
        """
        out: dict[Monomial, dict[Monomial, Fraction]] = {}
        for m, c in self._terms.items():
            pm = tuple((v, e) for v, e in m if v in params)
            xm = tuple((v, e) for v, e in m if v not in params)
            bucket = out.setdefault(xm, {})
            bucket[pm] = bucket.get(pm, 0) + c
        return {xm: Poly(b) for xm, b in out.items()}

    def evaluate(self, env: Mapping[str, float]) -> float:
        if self._float is None:
            self._float = [(float(c), m) for m, c in self._terms.items()]
        total = 0.0
        for t, m in self._float:
            for v, e in m:
                t *= env[v] if e == 1 else env[v] ** e
            total += t
        return total

    def evaluate_exact(self, env: Mapping[str, Number]) -> Fraction:
        total = Fraction(0)
        for m, c in self._terms.items():
            t = c
            for v, e in m:
                t *= Fraction(env[v]) ** e
            total += t
        return total

    def partial(self, env: Mapping[str, Number]) -> "Poly":
        out = self
        for v, x in env.items():
            out = out.substitute(v, Poly.const(x))
        return out

    # comparison / display -----------------------------------------------
    def __eq__(self, other: object) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Poly.const(other)
        if not isinstance(other, Poly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def sorted_terms(self) -> list[tuple[Monomial, Fraction]]:
        return sorted(self._terms.items(), key=lambda t: (-mono_degree(t[0]), t[0]))

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts: list[str] = []
        for m, c in self.sorted_terms():
            neg = c < 0
            a = -c if neg else c
            if not m:
                body = _fmt_coeff(a)
            elif a == 1:
                body = mono_str(m)
            else:
                body = f"{_fmt_coeff(a)}*{mono_str(m)}"
            if not parts:
                parts.append(f"-{body}" if neg else body)
            else:
                parts.append(f"- {body}" if neg else f"+ {body}")
        return " ".join(parts)

    def __repr__(self) -> str:
        return f"Poly({self})"


def monomials_upto(variables: list[str], degree: int) -> list[Monomial]:
    """All monomials of total degree <= ``degree`` in graded-lex order."""
    out: list[Monomial] = []

    def rec(i: int, left: int, acc: list[tuple[str, int]], target: int) -> None:
        if i == len(variables):
            if left == 0:
                out.append(tuple(sorted(acc)))
            return
        for e in range(left, -1, -1):
            if e:
                acc.append((variables[i], e))
            rec(i + 1, left - e, acc, target)
            if e:
                acc.pop()

    for d in range(degree + 1):
        rec(0, d, [], d)
    return out
