"""Probabilistic control-flow graphs and the AST -> pCFG compiler.

Compilation allocates one location per statement in textual pre-order plus
a final exit location, so for Fig-1-style programs the numbering matches the
usual drawing (``l0`` is the first statement, the exit is last).
"""
from __future__ import annotations

import json
import random
from functools import lru_cache
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .frontend import (
    AnnotatedAst,
    Assign,
    Dist,
    IfCond,
    IfNondet,
    IfProb,
    NdetAssign,
    Refute,
    Sample,
    Skip,
    While,
    unwrap,
    walk,
)
from .logic import Predicate
from .polynomial import Poly

D, P, N, A = "D", "P", "N", "A"
AD, AP, AN = "AD", "AP", "AN"


class InvariantError(ValueError):
    """The annotated invariant is not closed under successors (or misses init)."""


@dataclass(frozen=True)
class Location:
    id: int
    kind: str
    sub: str | None = None
    label: str = ""

    def __post_init__(self):
        if (self.kind == A) != (self.sub is not None):
            raise ValueError("assignment sub-kind present iff kind is A")

    @property
    def name(self) -> str:
        return f"l{self.id}"


@dataclass(frozen=True)
class Edge:
    target: int
    guard: Predicate | None = None  # D-locations
    prob: Fraction | None = None  # P-locations


Update = Union[Poly, Dist, Predicate]


@dataclass
class Pcfg:
    locations: list[Location]
    variables: tuple[str, ...]
    l_init: int
    x_init: dict[str, Fraction]
    edges: dict[int, list[Edge]]
    update: dict[int, tuple[str, Update]]
    reward: dict[int, Fraction]
    exit: int

    def kind(self, l: int) -> str:
        return self.locations[l].kind

    def sub(self, l: int) -> str | None:
        return self.locations[l].sub

    def successors(self, l: int) -> list[int]:
        return [e.target for e in self.edges[l]]

    def is_variable_free(self) -> bool:
        return not self.variables

    def has_nondeterminism(self) -> bool:
        return any(loc.kind == N or loc.sub == AN for loc in self.locations)

    def to_json(self, invariant: "InvariantMap | None" = None) -> str:
        doc = {
            "schema": 1,
            "variables": list(self.variables),
            "init": {"location": f"l{self.l_init}", "valuation": {v: str(x) for v, x in self.x_init.items()}},
            "exit": f"l{self.exit}",
            "locations": [],
        }
        for loc in self.locations:
            entry: dict = {"id": loc.name, "kind": loc.kind}
            if loc.sub:
                entry["assign"] = loc.sub
                var, up = self.update[loc.id]
                entry["update"] = {"var": var, "value": str(up)}
            entry["label"] = loc.label
            entry["reward"] = str(self.reward[loc.id])
            edges = []
            for e in self.edges[loc.id]:
                ed: dict = {"to": f"l{e.target}"}
                if e.guard is not None:
                    ed["guard"] = str(e.guard)
                if e.prob is not None:
                    ed["prob"] = str(e.prob)
                edges.append(ed)
            entry["edges"] = edges
            if invariant is not None:
                entry["invariant"] = str(invariant.at(loc.id))
            doc["locations"].append(entry)
        return json.dumps(doc, indent=2)


@dataclass
class InvariantMap:
    preds: dict[int, Predicate]

    def at(self, l: int) -> Predicate:
        return self.preds[l]

    def holds(self, l: int, env, tol: float = 0.0) -> bool:
        return self.preds[l].holds(env, tol)


@dataclass
class TerminalSet:
    preds: dict[int, Predicate]

    def at(self, l: int) -> Predicate:
        return self.preds.get(l, Predicate.false())

    def holds(self, l: int, env) -> bool:
        return self.at(l).holds(env)


@dataclass
class Program:
    """A compiled program: pCFG with its invariant and terminal set."""

    pcfg: Pcfg
    invariant: InvariantMap
    terminal: TerminalSet
    annotated: AnnotatedAst | None = field(default=None, repr=False)

    @property
    def linear(self) -> bool:
        return self.annotated.linear if self.annotated is not None else True


def compile_program(ann: AnnotatedAst) -> Program:
    ast = ann.ast
    ids: dict[tuple, int] = {}
    stmts: dict[tuple, object] = {}
    for path, s in walk(ast.body):
        ids[path] = len(ids)
        stmts[path] = s
    exit_id = len(ids)

    locations: list[Location] = []
    edges: dict[int, list[Edge]] = {}
    update: dict[int, tuple[str, Update]] = {}

    def entry(block: tuple, prefix: tuple, follow: int) -> int:
        return ids[prefix + (0,)] if block else follow

    def build(block: tuple, prefix: tuple, follow: int) -> None:
        for i, s in enumerate(block):
            s = unwrap(s)[1]
            path = prefix + (i,)
            lid = ids[path]
            nxt = ids[prefix + (i + 1,)] if i + 1 < len(block) else follow
            if isinstance(s, Skip):
                locations.append(Location(lid, D, label="skip"))
                edges[lid] = [Edge(nxt, guard=Predicate.true())]
            elif isinstance(s, Assign):
                locations.append(Location(lid, A, AD, f"{s.var} := {s.expr}"))
                update[lid] = (s.var, s.expr)
                edges[lid] = [Edge(nxt)]
            elif isinstance(s, Sample):
                locations.append(Location(lid, A, AP, f"{s.var} := {s.dist}"))
                update[lid] = (s.var, s.dist)
                edges[lid] = [Edge(nxt)]
            elif isinstance(s, NdetAssign):
                locations.append(Location(lid, A, AN, f"{s.var} := ndet({s.pred})"))
                update[lid] = (s.var, s.pred)
                edges[lid] = [Edge(nxt)]
            elif isinstance(s, Refute):
                locations.append(Location(lid, D, label=f"refute({s.cond})"))
                edges[lid] = [Edge(exit_id, guard=s.cond), Edge(nxt, guard=s.cond.negate())]
            elif isinstance(s, (IfProb, IfNondet, IfCond)):
                t = entry(s.then, path + ("then",), nxt)
                e = entry(s.else_, path + ("else",), nxt)
                if isinstance(s, IfProb):
                    locations.append(Location(lid, P, label=f"if prob({s.prob})"))
                    edges[lid] = [Edge(t, prob=s.prob), Edge(e, prob=1 - s.prob)]
                elif isinstance(s, IfNondet):
                    locations.append(Location(lid, N, label="if *"))
                    edges[lid] = [Edge(t), Edge(e)]
                else:
                    locations.append(Location(lid, D, label=f"if {s.cond}"))
                    edges[lid] = [Edge(t, guard=s.cond), Edge(e, guard=s.cond.negate())]
                build(s.then, path + ("then",), nxt)
                build(s.else_, path + ("else",), nxt)
            elif isinstance(s, While):
                b = entry(s.body, path + ("body",), lid)
                if isinstance(s.cond, Predicate):
                    locations.append(Location(lid, D, label=f"while {s.cond}"))
                    edges[lid] = [Edge(b, guard=s.cond), Edge(nxt, guard=s.cond.negate())]
                elif s.cond == "*":
                    locations.append(Location(lid, N, label="while *"))
                    edges[lid] = [Edge(b), Edge(nxt)]
                else:
                    locations.append(Location(lid, P, label=f"while prob({s.cond})"))
                    edges[lid] = [Edge(b, prob=s.cond), Edge(nxt, prob=1 - s.cond)]
                build(s.body, path + ("body",), lid)
            else:  # pragma: no cover
                raise TypeError(s)

    build(ast.body, (), exit_id)
    locations.append(Location(exit_id, D, label="exit"))
    edges[exit_id] = [Edge(exit_id, guard=Predicate.true())]
    locations.sort(key=lambda loc: loc.id)

    reward = {loc.id: Fraction(1) for loc in locations}
    reward[exit_id] = Fraction(0)
    variables = ann.variables
    pcfg = Pcfg(
        locations=locations,
        variables=variables,
        l_init=0,
        x_init={v: Fraction(0) for v in variables},
        edges=edges,
        update=update,
        reward=reward,
        exit=exit_id,
    )
    inv = {ids[p]: ann.invariant_at(p) for p in ids}
    inv[exit_id] = Predicate.true()
    invariant = InvariantMap(inv)
    terminal = TerminalSet({exit_id: Predicate.true()})
    if not invariant.holds(pcfg.l_init, {v: float(x) for v, x in pcfg.x_init.items()}):
        raise InvariantError(
            f"initial configuration (l{pcfg.l_init}, {dict((v, str(x)) for v, x in pcfg.x_init.items())}) "
            f"violates the invariant {invariant.at(pcfg.l_init)}"
        )
    return Program(pcfg, invariant, terminal, ann)


def compile_source(source: str) -> Program:
    from .frontend import parse, validate

    return compile_program(validate(parse(source)))


# ---------------------------------------------------------------- sampling helpers


def _conj_box(conj, variables: tuple[str, ...], default: float) -> dict[str, tuple[float, float]]:
    """Interval hull of a conjunction inside ``[-default, default]^V``.

    Bounds are tightened by propagating every linear atom over the current
    box a few times, so chains like ``0 <= y <= x <= 1`` bound both variables.
    """
    box = {v: [-default, default] for v in variables}
    rows = []
    for a in conj:
        if not a.poly.is_linear() or not a.poly.variables() <= box.keys():
            continue
        coeffs = {v: float(a.poly.coeff(((v, 1),))) for v in a.poly.variables()}
        c0 = float(a.poly.constant())
        rows.append((coeffs, c0))
        if a.op == "=":
            rows.append(({v: -c for v, c in coeffs.items()}, -c0))
    for _ in range(4):
        changed = False
        for coeffs, c0 in rows:
            # sum(c_v * v) + c0 >= 0
            for u, cu in coeffs.items():
                if not cu:
                    continue
                rest = c0 + sum(max(c * box[v][0], c * box[v][1]) for v, c in coeffs.items() if v != u)
                bound = -rest / cu
                if cu > 0 and bound > box[u][0] + 1e-12:
                    box[u][0] = bound
                    changed = True
                elif cu < 0 and bound < box[u][1] - 1e-12:
                    box[u][1] = bound
                    changed = True
        if not changed:
            break
    return {v: (lo, hi) for v, (lo, hi) in box.items()}


@lru_cache(maxsize=4096)
def _boxes(pred: Predicate, variables: tuple[str, ...], default: float):
    return tuple(_conj_box(c, variables, default) for c in pred.disjuncts)


def variable_box(pred: Predicate, variables: tuple[str, ...], default: float) -> dict[str, tuple[float, float]]:
    """Per-variable interval hull read off single-variable linear atoms."""
    boxes = [b for b in _boxes(pred, variables, default) if all(lo <= hi for lo, hi in b.values())]
    if not boxes:
        return {v: (-default, default) for v in variables}
    return {v: (min(b[v][0] for b in boxes), max(b[v][1] for b in boxes)) for v in variables}


def default_radius(prog: Program) -> float:
    r = 10.0
    pc = prog.pcfg
    for _, (var, up) in pc.update.items():
        if isinstance(up, Poly):
            r = max(r, 2 * abs(float(up.constant())))
    return r


def sample_in(pred: Predicate, variables: tuple[str, ...], rng: random.Random, radius: float,
              tries: int = 200) -> dict[str, float] | None:
    """Random valuation satisfying ``pred`` (box-guided rejection sampling)."""
    boxes = [b for b in _boxes(pred, variables, radius) if all(lo <= hi for lo, hi in b.values())]
    if not boxes:
        return None
    for _ in range(tries):
        box = boxes[rng.randrange(len(boxes))]
        env = {}
        for v in variables:
            lo, hi = box[v]
            r = rng.random()
            if r < 0.1:
                x = lo
            elif r < 0.2:
                x = hi
            elif r < 0.3:
                x = min(max(float(round(lo + (hi - lo) * rng.random())), lo), hi)
            else:
                x = lo + (hi - lo) * rng.random()
            env[v] = x
        if pred.holds(env):
            return env
    return None


# ---------------------------------------------------------------- well-formedness


def successors_of(prog: Program, l: int, env: dict[str, float], rng: random.Random, draws: int = 4
                  ) -> list[tuple[int, dict[str, float]]]:
    """Successor configurations under every resolution (sampled for AP/AN)."""
    pc = prog.pcfg
    kind = pc.kind(l)
    out: list[tuple[int, dict[str, float]]] = []
    if kind == D:
        for e in pc.edges[l]:
            if e.guard.holds(env):
                out.append((e.target, env))
    elif kind in (P, N):
        for e in pc.edges[l]:
            if kind == N or e.prob > 0:
                out.append((e.target, env))
    else:
        var, up = pc.update[l]
        tgt = pc.edges[l][0].target
        if isinstance(up, Poly):
            values = [up.evaluate(env)]
        elif isinstance(up, Predicate):
            box = variable_box(up, (var,), 1e3)[var]
            values = [val for val in (box[0], box[1]) if up.holds({var: val})]
            for _ in range(draws):
                s = sample_in(up, (var,), rng, 1e3)
                if s is not None:
                    values.append(s[var])
        else:
            pts = up.support_points()
            if pts is not None:
                values = [float(p) for p in pts]
            else:
                lo, hi = up.bounds()
                values = [v for v in (lo, hi) if abs(v) != float("inf")]
                values += [up.sample(rng) for _ in range(draws)]
        for val in values:
            nenv = dict(env)
            nenv[var] = val
            out.append((tgt, nenv))
    return out


def check_wellformed(prog: Program, samples: int = 1000, seed: int = 0) -> list[str]:
    """Diagnostic report; empty when every structural and sampled check passes."""
    pc = prog.pcfg
    rng = random.Random(seed)
    report: list[str] = []
    ids = {loc.id for loc in pc.locations}
    for loc in pc.locations:
        es = pc.edges.get(loc.id, [])
        if not es:
            report.append(f"{loc.name}: no outgoing transition")
            continue
        if any(e.target not in ids for e in es):
            report.append(f"{loc.name}: edge to unknown location")
        if loc.kind == P:
            total = sum((e.prob for e in es), Fraction(0))
            if any(e.prob is None or e.prob < 0 for e in es):
                report.append(f"{loc.name}: negative or missing probability")
            elif total != 1:
                report.append(f"{loc.name}: prob mass {total} != 1")
        if loc.kind == A and len(es) != 1:
            report.append(f"{loc.name}: assignment location must have exactly one successor")
        if loc.kind == D and any(e.guard is None for e in es):
            report.append(f"{loc.name}: missing guard")

    radius = default_radius(prog)
    env0 = {v: float(x) for v, x in pc.x_init.items()}
    if not prog.invariant.holds(pc.l_init, env0):
        report.append(f"initial configuration violates invariant at l{pc.l_init}")

    for loc in pc.locations:
        if loc.kind != D or any(e.guard is None for e in pc.edges.get(loc.id, [])):
            continue
        inv = prog.invariant.at(loc.id)
        for _ in range(samples):
            env = sample_in(inv, pc.variables, rng, radius) if pc.variables else {}
            if env is None:
                break
            n = sum(1 for e in pc.edges[loc.id] if e.guard.holds(env))
            if n != 1:
                report.append(f"{loc.name}: {n} guards hold at {env} (guards must partition)")
                break

    for loc in pc.locations:
        inv = prog.invariant.at(loc.id)
        term = prog.terminal.at(loc.id)
        for _ in range(samples):
            env = sample_in(inv, pc.variables, rng, radius) if pc.variables else {}
            if env is None:
                break
            if term.holds(env):
                continue
            bad = None
            for tgt, nenv in successors_of(prog, loc.id, env, rng):
                if not prog.invariant.holds(tgt, nenv, tol=1e-9):
                    bad = (tgt, nenv)
                    break
            if bad is not None:
                report.append(
                    f"{loc.name}: invariant not closed: ({loc.name}, {_fmt_env(env)}) -> "
                    f"(l{bad[0]}, {_fmt_env(bad[1])}) leaves {prog.invariant.at(bad[0])}"
                )
                break
            if not pc.variables:
                break
    for l, pred in prog.terminal.preds.items():
        if pred.is_true() and not prog.invariant.at(l).is_true():
            report.append(f"l{l}: terminal set not contained in invariant")
    return report


def _fmt_env(env: dict[str, float]) -> str:
    return "{" + ", ".join(f"{k}={v:g}" for k, v in env.items()) + "}"


def require_invariant(prog: Program, samples: int = 1000, seed: int = 0) -> None:
    problems = [r for r in check_wellformed(prog, samples, seed)]
    if problems:
        raise InvariantError("; ".join(problems))
