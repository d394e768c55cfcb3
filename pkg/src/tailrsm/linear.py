"""Linear-template synthesis: Farkas reduction of the implications to an LP."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import lp as lpmod
from .constraints import (
    PARAM_PREFIX,
    Implication,
    Template,
    generate_constraints,
    init_value,
    is_param,
)
from .pcfg import Program, require_invariant
from .polynomial import ONE, Poly

PER_MOMENT, LAST, LEX = "per-moment", "last", "lex"


class NonlinearProgram(ValueError):
    pass


@dataclass
class LinearTemplate:
    eta: Template
    params: list[str]
    K: int

    @property
    def param_count(self) -> int:
        return len(self.params)


def param_name(kind: str, l: int, k: int, var: str | None = None) -> str:
    return f"{PARAM_PREFIX}{kind}.l{l}.k{k}" + (f".{var}" if var else "")


def build_template(prog: Program, K: int) -> LinearTemplate:
    if not prog.linear:
        raise NonlinearProgram("program has nonlinear guards, updates or invariants; use the polynomial template")
    if K < 1:
        raise ValueError("K must be at least 1")
    pc = prog.pcfg
    eta: Template = {}
    params: list[str] = []
    for loc in pc.locations:
        for k in range(1, K + 1):
            expr = Poly()
            for v in pc.variables:
                p = param_name("a", loc.id, k, v)
                params.append(p)
                expr = expr + Poly.var(p) * Poly.var(v)
            b = param_name("b", loc.id, k)
            params.append(b)
            eta[(loc.id, k)] = expr + Poly.var(b)
    return LinearTemplate(eta, params, K)


@dataclass
class FarkasRows:
    """Rows over (parameters, multipliers) produced by one implication."""

    multipliers: int
    equalities: list[tuple[dict[str, Fraction], dict[int, Fraction], Fraction]]
    inequality: tuple[dict[str, Fraction], dict[int, Fraction], Fraction]


def _param_affine(p: Poly) -> tuple[dict[str, Fraction], Fraction]:
    coeffs: dict[str, Fraction] = {}
    for m, c in p.items():
        if not m:
            continue
        if len(m) != 1 or m[0][1] != 1:
            raise NonlinearProgram(f"coefficient {p} is not affine in the parameters")
        coeffs[m[0][0]] = c
    return coeffs, p.constant()


def farkas_reduce(imp: Implication) -> FarkasRows:
    """``sum(y_i * ctx_i) + y' == consequent`` coefficientwise with y, y' >= 0.

    Each row is ``(param coefficients, multiplier coefficients, rhs)`` meaning
    ``params . U + mult . y  (= or >=)  rhs``.
    """
    params = frozenset(v for v in imp.consequent.variables() if is_param(v))
    by_mono = imp.consequent.split(params)
    ctx = [c.terms for c in imp.context]
    monos: set = set(by_mono) - {ONE}
    for c in ctx:
        monos |= set(m for m in c if m)
    for m in monos:
        if len(m) != 1 or m[0][1] != 1:
            raise NonlinearProgram(f"nonlinear monomial {m} in implication {imp.describe()}")
    eqs = []
    for m in sorted(monos):
        pc, const = _param_affine(by_mono.get(m, Poly()))
        mult = {i: -c.get(m, Fraction(0)) for i, c in enumerate(ctx) if c.get(m)}
        eqs.append((pc, mult, -const))
    pc, const = _param_affine(by_mono.get(ONE, Poly()))
    mult = {i: -c.get(ONE, Fraction(0)) for i, c in enumerate(ctx) if c.get(ONE)}
    return FarkasRows(len(ctx), eqs, (pc, mult, -const))


def eliminate_equalities(imp: Implication) -> Implication | None:
    """Solve the context's equalities (row pairs ``r``, ``-r``) for program
    symbols and substitute them away.

    The implication over the remaining symbols is equivalent, needs fewer
    Farkas multipliers, and point contexts become plain inequalities on the
    parameters.  Returns None when the context is found to be empty.
    """
    rows = list(imp.context)
    present = set(rows)
    eqs = list(dict.fromkeys(r for r in rows if -r in present and (r, -r) == _ordered(r, -r)))
    if not eqs:
        return imp
    eq_set = set(eqs) | {-r for r in eqs}
    rest = [r for r in rows if r not in eq_set]
    consequent = imp.consequent
    pending = eqs
    while pending:
        e = pending.pop(0)
        if e.is_constant():
            if e.constant() != 0:
                return None
            continue
        var = sorted(e.variables())[0]
        c = e.coeff(((var, 1),))
        sol = (e - Poly.var(var) * c) * (Fraction(-1) / c)
        pending = [q.substitute(var, sol) for q in pending]
        rest = [q.substitute(var, sol) for q in rest]
        consequent = consequent.substitute(var, sol)
    out: dict[Poly, None] = {}
    for r in rest:
        if r.is_constant():
            if r.constant() < 0:
                return None
            continue
        out.setdefault(r, None)
    return Implication(tuple(out), consequent, imp.tag)


def _ordered(a: Poly, b: Poly) -> tuple[Poly, Poly]:
    return (a, b) if str(a) <= str(b) else (b, a)


@dataclass
class LpBuild:
    lp: lpmod.LinearProgram
    implications: list[Implication]
    row_tags: list[tuple]
    colmul: dict[str, float] = field(default_factory=dict)

    def param_values(self, x: np.ndarray) -> dict[str, float]:
        return {p: float(x[self.lp.var(p)]) * m for p, m in self.colmul.items()}


def _context_empty(ctx: tuple[Poly, ...], cache: dict) -> bool:
    """LP probe: is the relaxed context polyhedron empty?"""
    if not ctx:
        return False
    if ctx in cache:
        return cache[ctx]
    names = sorted(set().union(*(c.variables() for c in ctx)))
    probe = lpmod.LinearProgram()
    for n in names:
        probe.add_var(n, free=True)
    for c in ctx:
        probe.add_row({probe.var(v): float(c.coeff(((v, 1),))) for v in names}, ">=", -float(c.constant()))
    res = lpmod.solve(probe)
    cache[ctx] = res.status == lpmod.INFEASIBLE
    return cache[ctx]


def moment_of(param: str) -> int:
    return int(param.split(".k")[1].split(".")[0])


def build_lp(prog: Program, tmpl: LinearTemplate, K: int, prune_empty: bool = True,
             scale: float = 1.0) -> LpBuild:
    """Farkas-reduced LP.  Column ``p`` of moment j stands for ``p / scale**j``
    and rows of moment k are divided by ``scale**k`` so that unknowns stay
    near unit magnitude when ``scale`` approximates the expected runtime."""
    imps = generate_constraints(prog, tmpl.eta, K)
    lp = lpmod.LinearProgram()
    used_params = [p for p in tmpl.params if moment_of(p) <= K]
    colmul = {p: scale ** moment_of(p) for p in used_params}
    for p in used_params:
        lp.add_var(p, free=True)
    cache: dict = {}
    kept: list[Implication] = []
    tags: list[tuple] = []
    for n, imp in enumerate(imps):
        imp = eliminate_equalities(imp)
        if imp is None:
            continue
        if prune_empty and _context_empty(imp.context, cache):
            continue
        kept.append(imp)
        fr = farkas_reduce(imp)
        ys = [lp.add_var(f"y{n}.{i}") for i in range(fr.multipliers)]

        rowdiv = scale ** imp.tag[2]

        def row(spec, sense, suffix):
            pcoef, mcoef, rhs = spec
            coeffs = {lp.var(p): float(c) * colmul[p] / rowdiv for p, c in pcoef.items()}
            rhs = float(rhs) / rowdiv
            for i, c in mcoef.items():
                coeffs[ys[i]] = coeffs.get(ys[i], 0.0) + float(c)
            name = f"c{n}.{suffix}"
            if not coeffs:
                if (sense == "=" and rhs != 0) or (sense == ">=" and rhs > 0):
                    lp.add_row({}, sense, float(rhs), name)
                    tags.append(imp.tag)
                return
            lp.add_row(coeffs, sense, float(rhs), name)
            tags.append(imp.tag)

        for j, eq in enumerate(fr.equalities):
            row(eq, "=", f"m{j}")
        row(fr.inequality, ">=", "const")
    return LpBuild(lp, kept, tags, colmul)


def _objective(build: LpBuild, poly: Poly) -> dict[int, float]:
    coeffs, _ = _param_affine(poly)
    return {build.lp.var(p): float(c) * build.colmul[p] for p, c in coeffs.items()}


@dataclass
class Witness:
    """Solved template: numeric coefficients per (location, k)."""

    eta: dict[tuple[int, int], Poly]
    variables: tuple[str, ...]
    K: int

    def value(self, l: int, k: int, env) -> float:
        return self.eta[(l, k)].evaluate(env)

    def to_json(self, prog: Program) -> dict:
        out: dict = {}
        for loc in prog.pcfg.locations:
            entry = {}
            for k in range(1, self.K + 1):
                p = self.eta[(loc.id, k)]
                entry[str(k)] = {
                    "coefficients": {v: _num(p.coeff(((v, 1),))) for v in self.variables},
                    "intercept": _num(p.constant()),
                }
            out[loc.name] = entry
        return out


def _num(x: Fraction) -> float:
    return float(x)


@dataclass
class SynthesisResult:
    status: str  # "Optimal" or "Infeasible"
    bounds: list[float | None]
    witnesses: dict[int, Witness] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)

    @property
    def feasible_upto(self) -> int:
        return sum(1 for b in self.bounds if b is not None)


def instantiate(tmpl: LinearTemplate, values: dict[str, float], K: int) -> Witness:
    eta = {}
    for (l, k), p in tmpl.eta.items():
        if k > K:
            continue
        q = Poly()
        for m, c in p.items():
            pm = [v for v, _ in m if is_param(v)]
            rest = tuple((v, e) for v, e in m if not is_param(v))
            val = Fraction(values[pm[0]]) if pm else Fraction(1)
            q = q + Poly({rest: c * val})
        eta[(l, k)] = q
    vars_ = tuple(sorted({v for p in eta.values() for v in p.variables()}))
    return Witness(eta, vars_, K)


def solve_template(prog: Program, tmpl: LinearTemplate, K: int, lex: bool = False,
                   prune_empty: bool = True, scale: float = 1.0
                   ) -> tuple[lpmod.LpSolution, LpBuild, Witness | None]:
    build = build_lp(prog, tmpl, K, prune_empty, scale)
    lp = build.lp
    lp.set_objective(_objective(build, init_value(prog, tmpl.eta, K)))
    sol = lpmod.solve(lp)
    if not sol.optimal:
        return sol, build, None
    if lex:
        for k in range(K, 1, -1):
            obj = _objective(build, init_value(prog, tmpl.eta, k))
            val = float(sum(c * sol.x[j] for j, c in obj.items()))
            lp.add_row(obj, "<=", val + 1e-9 * max(1.0, abs(val)), f"lex.k{k}")
            lp.set_objective(_objective(build, init_value(prog, tmpl.eta, k - 1)))
            nxt = lpmod.solve(lp)
            if not nxt.optimal:
                break
            sol = nxt
    return sol, build, instantiate(tmpl, build.param_values(sol.x), K)


def synthesize(prog: Program, K: int, mode: str = PER_MOMENT, check_invariant: bool = True,
               prune_empty: bool = True) -> SynthesisResult:
    """Moment bounds ``u_1..u_K`` from linear templates.

    ``per-moment`` solves one LP per k minimizing ``eta_k(init)`` (so every
    reported ``u_k`` is the best linear bound for that moment); ``last``
    minimizes only ``eta_K(init)`` and reads all components off one witness;
    ``lex`` does the same and then re-minimizes lower components in turn.
    """
    if mode not in (PER_MOMENT, LAST, LEX):
        raise ValueError(f"unknown mode {mode!r}")
    if check_invariant:
        require_invariant(prog)
    tmpl = build_template(prog, K)
    stats: dict = {"parameters": tmpl.param_count, "lps": []}
    t0 = time.perf_counter()
    bounds: list[float | None] = [None] * K
    witnesses: dict[int, Witness] = {}
    failed: list[str] = []
    ks = list(range(1, K + 1)) if mode == PER_MOMENT else [K]
    for kk in ks:
        sol, build, wit = solve_template(prog, tmpl, kk, lex=(mode == LEX), prune_empty=prune_empty)
        stats["lps"].append({
            "K": kk, "rows": build.lp.shape[0], "columns": build.lp.shape[1],
            "implications": len(build.implications), "status": sol.status, "pivots": sol.iterations,
        })
        if wit is None:
            if sol.status == lpmod.UNBOUNDED:
                raise RuntimeError("LP unbounded: internal inconsistency in constraint generation")
            tags = {build.row_tags[build.lp.row_names.index(r)] for r in sol.infeasible_rows
                    if r in build.lp.row_names}
            failed = sorted({f"l{t[0]} {t[1]} k={t[2]}" for t in tags})
            break
        witnesses[kk] = wit
        env = {v: float(x) for v, x in prog.pcfg.x_init.items()}
        if mode == PER_MOMENT:
            bounds[kk - 1] = max(0.0, wit.value(prog.pcfg.l_init, kk, env))
        else:
            for k in range(1, K + 1):
                bounds[k - 1] = max(0.0, wit.value(prog.pcfg.l_init, k, env))
    stats["seconds"] = time.perf_counter() - t0
    status = lpmod.OPTIMAL if bounds[-1] is not None else lpmod.INFEASIBLE
    return SynthesisResult(status, bounds, witnesses, stats, failed)


def witness_array(w: Witness, prog: Program) -> np.ndarray:
    pc = prog.pcfg
    arr = np.zeros((len(pc.locations), w.K, len(pc.variables) + 1))
    for (l, k), p in w.eta.items():
        for j, v in enumerate(pc.variables):
            arr[l, k - 1, j] = float(p.coeff(((v, 1),)))
        arr[l, k - 1, -1] = float(p.constant())
    return arr
