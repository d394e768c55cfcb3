"""Predicates over program variables, kept in disjunctive normal form."""
from __future__ import annotations

import itertools
from fractions import Fraction
from dataclasses import dataclass
from typing import Iterable, Mapping

from .polynomial import Poly

GE, GT, EQ = ">=", ">", "="

DEFAULT_DISJUNCT_LIMIT = 256


class PredicateExplosion(ValueError):
    pass


@dataclass(frozen=True)
class Atom:
    """``poly op 0`` with op one of ``>=``, ``>``, ``=``."""

    poly: Poly
    op: str

    def holds(self, env: Mapping[str, float], tol: float = 0.0) -> bool:
        v = self.poly.evaluate(env)
        if self.op == GE:
            return v >= -tol
        if self.op == GT:
            return v > -tol if tol else v > 0
        return abs(v) <= tol

    def holds_exact(self, env: Mapping[str, Fraction]) -> bool:
        v = self.poly.evaluate_exact(env)
        return v >= 0 if self.op == GE else (v > 0 if self.op == GT else v == 0)

    def negate(self) -> list["Atom"]:
        if self.op == GE:
            return [Atom(-self.poly, GT)]
        if self.op == GT:
            return [Atom(-self.poly, GE)]
        return [Atom(self.poly, GT), Atom(-self.poly, GT)]

    def relaxed(self) -> list[Poly]:
        """Non-strict ``q >= 0`` rows implied by relaxing this atom."""
        if self.op == EQ:
            return [self.poly, -self.poly]
        return [self.poly]

    def __str__(self) -> str:
        if self.op == EQ:
            return f"{self.poly} = 0"
        return f"{self.poly} {self.op} 0"


Conjunct = tuple[Atom, ...]


@dataclass(frozen=True)
class Predicate:
    """Disjunction of conjunctions.  ``((),)`` is true, ``()`` is false."""

    disjuncts: tuple[Conjunct, ...]

    @staticmethod
    def true() -> "Predicate":
        return Predicate(((),))

    @staticmethod
    def false() -> "Predicate":
        return Predicate(())

    @staticmethod
    def atom(a: Atom) -> "Predicate":
        return Predicate(((a,),))

    @staticmethod
    def compare(lhs: Poly, op: str, rhs: Poly) -> "Predicate":
        d = lhs - rhs
        if op == ">=":
            return Predicate.atom(Atom(d, GE))
        if op == ">":
            return Predicate.atom(Atom(d, GT))
        if op == "<=":
            return Predicate.atom(Atom(-d, GE))
        if op == "<":
            return Predicate.atom(Atom(-d, GT))
        if op in ("=", "=="):
            return Predicate.atom(Atom(d, EQ))
        raise ValueError(f"unknown comparison {op!r}")

    def is_true(self) -> bool:
        return any(len(c) == 0 for c in self.disjuncts)

    def is_false(self) -> bool:
        return not self.disjuncts

    def and_(self, other: "Predicate", limit: int = DEFAULT_DISJUNCT_LIMIT) -> "Predicate":
        if len(self.disjuncts) * len(other.disjuncts) > limit:
            raise PredicateExplosion(
                f"conjunction would produce {len(self.disjuncts) * len(other.disjuncts)} disjuncts"
            )
        return Predicate(
            tuple(_dedup(a + b) for a, b in itertools.product(self.disjuncts, other.disjuncts))
        ).simplified()

    def or_(self, other: "Predicate") -> "Predicate":
        return Predicate(self.disjuncts + other.disjuncts).simplified()

    def negate(self, limit: int = DEFAULT_DISJUNCT_LIMIT) -> "Predicate":
        result = Predicate.true()
        for conj in self.disjuncts:
            clause = Predicate(tuple((n,) for a in conj for n in a.negate()))
            result = result.and_(clause, limit)
        return result

    def simplified(self) -> "Predicate":
        out: list[Conjunct] = []
        seen: set[Conjunct] = set()
        for c in self.disjuncts:
            c = _drop_trivial(c)
            if c is None or c in seen:
                continue
            if len(c) == 0:
                return Predicate.true()
            seen.add(c)
            out.append(c)
        return Predicate(tuple(out))

    def holds(self, env: Mapping[str, float], tol: float = 0.0) -> bool:
        return any(all(a.holds(env, tol) for a in c) for c in self.disjuncts)

    def holds_exact(self, env: Mapping[str, Fraction]) -> bool:
        return any(all(a.holds_exact(env) for a in c) for c in self.disjuncts)

    def variables(self) -> frozenset[str]:
        return frozenset(v for c in self.disjuncts for a in c for v in a.poly.variables())

    def degree(self) -> int:
        return max((a.poly.degree() for c in self.disjuncts for a in c), default=0)

    def is_linear(self) -> bool:
        return self.degree() <= 1

    def __str__(self) -> str:
        if self.is_false():
            return "false"
        if self.is_true():
            return "true"
        parts = []
        for c in self.disjuncts:
            s = " and ".join(str(a) for a in c)
            parts.append(f"({s})" if len(self.disjuncts) > 1 and len(c) > 1 else s)
        return " or ".join(parts)


def _dedup(atoms: Iterable[Atom]) -> Conjunct:
    seen: dict[Atom, None] = {}
    for a in atoms:
        seen.setdefault(a, None)
    return tuple(seen)


def _drop_trivial(c: Conjunct) -> Conjunct | None:
    """Remove constant-true atoms; ``None`` if some atom is constant-false."""
    kept = []
    for a in c:
        if a.poly.is_constant():
            v = a.poly.constant()
            ok = v >= 0 if a.op == GE else (v > 0 if a.op == GT else v == 0)
            if not ok:
                return None
            continue
        kept.append(a)
    return tuple(kept)
