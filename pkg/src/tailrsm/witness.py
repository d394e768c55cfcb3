"""Sampled check of the supermartingale conditions for a solved witness.

A witness maps ``(location, k)`` to a numeric polynomial.  At sampled
configurations inside the invariant we check nonnegativity and, outside the
terminal set, that each component dominates the pre-expectation of the
time-elapsed vector.  Both linear and polynomial witnesses use this check.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .constraints import fresh, pre_expectation_cases
from .logic import Atom, Predicate
from .pcfg import AN, Program, default_radius, sample_in, variable_box
from .polynomial import Poly

Template = dict[tuple[int, int], Poly]


@dataclass
class WitnessReport:
    checked: int
    violations: list[str] = field(default_factory=list)
    worst: float = 0.0  # largest relative violation seen

    @property
    def ok(self) -> bool:
        return not self.violations


def _slack_tol(tol: float, *vals: float) -> float:
    return tol * max(1.0, *(abs(v) for v in vals))


def _ndet_values(ctx: Predicate, v: str, env: dict[str, float], rng: random.Random, draws: int) -> list[float]:
    lo, hi = _ctx_box(ctx, v, env)
    vals = []
    for x in (lo, hi, (lo + hi) / 2):
        e = dict(env)
        e[v] = x
        if ctx.holds(e):
            vals.append(x)
    for _ in range(draws):
        e = dict(env)
        e[v] = lo + (hi - lo) * rng.random()
        if ctx.holds(e):
            vals.append(e[v])
    return vals


def _ctx_box(ctx: Predicate, v: str, env: dict[str, float]) -> tuple[float, float]:
    sub = Predicate(tuple(tuple(Atom(a.poly.partial(env), a.op) for a in c) for c in ctx.disjuncts))
    return variable_box(sub, (v,), 1e3)[v]


def check_witness(prog: Program, eta: Template, K: int, samples: int = 10_000, seed: int = 0,
                  tol: float = 1e-6, ndet_draws: int = 8) -> WitnessReport:
    """Check both conditions at ``samples`` configurations spread over all locations.

    Tolerances are relative to the magnitude of the compared values (at least
    absolute ``tol``).
    """
    pc = prog.pcfg
    rng = random.Random(seed)
    radius = default_radius(prog)
    locs = [loc.id for loc in pc.locations]
    per_loc = max(1, samples // len(locs))
    cases = {(l, k): pre_expectation_cases(prog, eta, l, k) for l in locs for k in range(1, K + 1)}
    report = WitnessReport(0)
    env0 = {v: float(x) for v, x in pc.x_init.items()}
    for l in locs:
        inv = prog.invariant.at(l)
        for i in range(per_loc):
            if i == 0 and l == pc.l_init:
                env = dict(env0)
            else:
                env = sample_in(inv, pc.variables, rng, radius) if pc.variables else {}
            if env is None:
                break
            report.checked += 1
            terminal = prog.terminal.holds(l, env)
            for k in range(1, K + 1):
                val = eta[(l, k)].evaluate(env)
                if val < -_slack_tol(tol, val):
                    report.violations.append(f"l{l} k={k}: eta = {val:g} < 0 at {env}")
                    report.worst = max(report.worst, -val / max(1.0, abs(val)))
                if terminal:
                    continue
                for extra, rhs in cases[(l, k)]:
                    if pc.sub(l) == AN:
                        v = fresh(pc.update[l][0])
                        points = []
                        for x in _ndet_values(extra, v, env, rng, ndet_draws):
                            e = dict(env)
                            e[v] = x
                            points.append(e)
                    elif extra.holds(env):
                        points = [env]
                    else:
                        points = []
                    for e in points:
                        pre = rhs.evaluate(e)
                        if val < pre - _slack_tol(tol, val, pre):
                            report.violations.append(
                                f"l{l} k={k}: eta = {val:.10g} < pre-expectation {pre:.10g} at {env}")
                            report.worst = max(report.worst, (pre - val) / max(1.0, abs(val), abs(pre)))
            if not pc.variables:
                break
    return report
