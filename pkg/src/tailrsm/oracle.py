"""Ground-truth moments on finite state spaces.

Three engines: Kleene iteration of the higher-moment operator, an exact
linear solve for Markov chains, and a brute-force sweep over memoryless
deterministic schedulers.  All of them work on an explicit
``FiniteStateGraph``, either built by hand or enumerated from a program.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .pcfg import AD, AN, AP, D, N, P, Program
from .logic import EQ

DET, PROB, NDET, TERM = "D", "P", "N", "T"
OVERFLOW = 1e300


class OracleError(ValueError):
    pass


@dataclass
class FiniteStateGraph:
    """Explicit configurations with successor lists.

    ``succ[s]`` is a list of ``(target, prob)``; for N-states the prob entry is
    ignored.  Terminal states have no successors (they are absorbing).
    """

    labels: list[str]
    kinds: list[str]
    succ: list[list[tuple[int, float]]]
    reward: list[float]
    init: int = 0

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.kinds) == len(self.succ) == len(self.reward) == n):
            raise ValueError("labels, kinds, succ and reward must have equal length")
        for s in range(n):
            k = self.kinds[s]
            if k == TERM:
                if self.reward[s] != 0:
                    raise ValueError(f"terminal state {self.labels[s]} must have reward 0")
                continue
            if not self.succ[s]:
                raise ValueError(f"state {self.labels[s]} has no successor")
            if any(not 0 <= t < n for t, _ in self.succ[s]):
                raise ValueError(f"state {self.labels[s]} has an edge to an unknown state")
            if k == DET and len(self.succ[s]) != 1:
                raise ValueError(f"deterministic state {self.labels[s]} needs exactly one successor")
            if k == PROB and abs(sum(p for _, p in self.succ[s]) - 1.0) > 1e-12:
                raise ValueError(f"probabilities at {self.labels[s]} do not sum to 1")

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def choice_states(self) -> list[int]:
        return [s for s in range(self.n) if self.kinds[s] == NDET and len(self.succ[s]) > 1]

    def is_markov(self) -> bool:
        return not self.choice_states()


@dataclass
class StateMoments:
    values: np.ndarray  # shape (n, K); +inf where unbounded
    iterations: int = 0
    converged: bool = True

    def at(self, s: int) -> tuple[float, ...]:
        return tuple(float(v) for v in self.values[s])

    @property
    def K(self) -> int:
        return self.values.shape[1]


@dataclass
class SweepResult:
    maxima: tuple[float, ...]
    argmax: list[dict[int, int]]
    table: list[tuple[dict[int, int], tuple[float, ...]]] = field(repr=False)


# ---------------------------------------------------------------- construction


def gap_example() -> FiniteStateGraph:
    """Thirteen-state graph where the moment operator overshoots every scheduler.

    ``l1`` chooses between a probabilistic branch (``l2``: stop now or take a
    five-step detour) and a fixed four-step path.
    """
    succ: list[list[tuple[int, float]]] = [[] for _ in range(13)]
    kinds = [NDET] * 13
    succ[0] = [(1, 1.0)]
    succ[1] = [(2, 1.0), (8, 1.0)]
    kinds[2] = PROB
    succ[2] = [(3, 0.5), (12, 0.5)]
    for a, b in [(3, 4), (4, 5), (5, 6), (6, 7), (7, 12), (8, 9), (9, 10), (10, 11), (11, 12)]:
        succ[a] = [(b, 1.0)]
    kinds[12] = TERM
    reward = [1.0] * 12 + [0.0]
    return FiniteStateGraph([f"l{i}" for i in range(13)], kinds, succ, reward, 0)


def apply_policy(graph: FiniteStateGraph, policy: Mapping[int, int | Sequence[float]]) -> FiniteStateGraph:
    """Resolve N-states by a memoryless policy.

    A policy entry is either a successor index or a probability vector over
    the successor list (a randomized memoryless scheduler).
    """
    kinds = list(graph.kinds)
    succ = [list(x) for x in graph.succ]
    for s, choice in policy.items():
        if graph.kinds[s] != NDET:
            raise ValueError(f"{graph.labels[s]} is not a nondeterministic state")
        targets = [t for t, _ in graph.succ[s]]
        if isinstance(choice, (int, np.integer)):
            kinds[s] = DET
            succ[s] = [(targets[int(choice)], 1.0)]
        else:
            if len(choice) != len(targets):
                raise ValueError("policy vector length differs from successor count")
            kinds[s] = PROB
            succ[s] = [(t, float(p)) for t, p in zip(targets, choice) if p > 0]
    for s in range(len(kinds)):
        if kinds[s] == NDET and len(succ[s]) == 1:
            kinds[s] = DET
    return FiniteStateGraph(list(graph.labels), kinds, succ, list(graph.reward), graph.init)


def bernoulli_policy(graph: FiniteStateGraph, p: float) -> dict[int, list[float]]:
    """Take the first successor w.p. ``p`` at every binary N-state."""
    out: dict[int, list[float]] = {}
    for s in graph.choice_states():
        m = len(graph.succ[s])
        out[s] = [p] + [(1 - p) / (m - 1)] * (m - 1)
    return out


def _nondet_values(pred, var: str, env: Mapping[str, Fraction], where: str) -> list[Fraction]:
    others = {v: x for v, x in env.items() if v != var}
    vals: list[Fraction] = []
    for conj in pred.disjuncts:
        pinned = None
        for a in conj:
            q = a.poly.partial(others)
            if a.op == EQ and q.degree() == 1 and q.variables() == {var}:
                pinned = -q.constant() / q.coeff(((var, 1),))
                break
        if pinned is None:
            raise OracleError(f"state space not finite/boundable: continuous ndet choice at {where}")
        trial = dict(env)
        trial[var] = pinned
        if all(a.holds_exact(trial) for a in conj) and pinned not in vals:
            vals.append(pinned)
    if not vals:
        raise OracleError(f"empty ndet choice set at {where}")
    return vals


def enumerate_states(prog: Program, step_bound: int = 10**6, count_bound: int = 10**5) -> FiniteStateGraph:
    """Breadth-first reachable configurations with exact rational valuations."""
    if step_bound < 1 or count_bound < 1:
        raise ValueError("bounds must be >= 1")
    pc = prog.pcfg
    vs = pc.variables

    def key(l: int, env: Mapping[str, Fraction]) -> tuple:
        return (l,) + tuple(env[v] for v in vs)

    def label(k: tuple) -> str:
        if not vs:
            return f"l{k[0]}"
        return f"l{k[0]}(" + ", ".join(f"{v}={x}" for v, x in zip(vs, k[1:])) + ")"

    start = key(pc.l_init, pc.x_init)
    index = {start: 0}
    keys = [start]
    kinds: list[str] = [""]
    succ: list[list[tuple[int, float]]] = [[]]
    reward: list[float] = [0.0]
    frontier = deque([(start, 0)])

    def visit(k: tuple, depth: int) -> int:
        if k not in index:
            if len(keys) >= count_bound:
                raise OracleError(f"state space not finite/boundable: more than {count_bound} states")
            if depth > step_bound:
                raise OracleError(f"state space not finite/boundable: exceeds {step_bound} BFS steps at l{k[0]}")
            index[k] = len(keys)
            keys.append(k)
            kinds.append("")
            succ.append([])
            reward.append(0.0)
            frontier.append((k, depth))
        return index[k]

    while frontier:
        k, depth = frontier.popleft()
        s = index[k]
        l = k[0]
        env = dict(zip(vs, k[1:]))
        if prog.terminal.at(l).holds_exact(env):
            kinds[s] = TERM
            continue
        reward[s] = float(pc.reward[l])
        kind = pc.kind(l)
        where = f"l{l}"
        out: dict[int, float] = {}
        if kind == D:
            hits = [e for e in pc.edges[l] if e.guard.holds_exact(env)]
            if len(hits) != 1:
                raise OracleError(f"{len(hits)} guards hold at {label(k)}")
            out[visit(key(hits[0].target, env), depth + 1)] = 1.0
            kinds[s] = DET
        elif kind in (P, N):
            for e in pc.edges[l]:
                if kind == P and e.prob == 0:
                    continue
                t = visit(key(e.target, env), depth + 1)
                out[t] = out.get(t, 0.0) + (float(e.prob) if kind == P else 1.0)
            kinds[s] = PROB if kind == P else NDET
        else:
            var, up = pc.update[l]
            tgt = pc.edges[l][0].target
            sub = pc.sub(l)
            if sub == AD:
                choices = [(up.evaluate_exact(env), Fraction(1))]
            elif sub == AP:
                pts = up.support_points()
                if pts is None:
                    raise OracleError(f"state space not finite/boundable: continuous distribution {up} at {where}")
                choices = [(v, p) for v, p in up.outcomes if p > 0]
            else:
                choices = [(v, Fraction(1)) for v in _nondet_values(up, var, env, where)]
            for val, p in choices:
                nenv = dict(env)
                nenv[var] = val
                t = visit(key(tgt, nenv), depth + 1)
                out[t] = out.get(t, 0.0) + float(p)
            kinds[s] = {AD: DET, AP: PROB, AN: NDET}[sub]
        succ[s] = list(out.items())
        if kinds[s] == NDET and len(succ[s]) == 1:
            kinds[s] = DET
        if kinds[s] == DET:
            succ[s] = [(succ[s][0][0], 1.0)]
    return FiniteStateGraph([label(k) for k in keys], kinds, succ, reward, 0)


# ---------------------------------------------------------------- moment operator


def _edge_arrays(graph: FiniteStateGraph):
    src, dst, prob = [], [], []
    for s in range(graph.n):
        if graph.kinds[s] == TERM:
            continue
        for t, p in graph.succ[s]:
            src.append(s)
            dst.append(t)
            prob.append(p)
    return np.array(src, dtype=int), np.array(dst, dtype=int), np.array(prob, dtype=float)


def _binom_table(K: int) -> np.ndarray:
    return np.array([[math.comb(k, j) for j in range(K + 1)] for k in range(K + 1)], dtype=float)


def _elapse(a: np.ndarray, eta: np.ndarray, K: int, binom: np.ndarray) -> np.ndarray:
    """Row-wise (a + T)^k expansion: a^k + sum_j C(k,j) a^(k-j) eta_j."""
    apow = np.ones((len(a), K + 1))
    for i in range(1, K + 1):
        apow[:, i] = apow[:, i - 1] * a
    out = np.empty((len(a), K))
    for k in range(1, K + 1):
        col = apow[:, k].copy()
        for j in range(1, k + 1):
            col += binom[k, j] * apow[:, k - j] * eta[:, j - 1]
        out[:, k - 1] = col
    return out


def value_iterate_FK(graph: FiniteStateGraph, K: int, max_iters: int = 10**6, tol: float = 1e-9) -> StateMoments:
    """Kleene iteration from the zero vector.

    Stops once a sweep changes no entry by more than ``tol``, or when the
    iterate is a fixed point up to float rounding (large moments).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    src, dst, prob = _edge_arrays(graph)
    reward = np.array(graph.reward, dtype=float)
    kinds = np.array(graph.kinds)
    nd = np.isin(src, np.nonzero(kinds == NDET)[0])
    pr = ~nd
    a = reward[src]
    binom = _binom_table(K)
    eta = np.zeros((graph.n, K))
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is reported below
        for it in range(1, max_iters + 1):
            el = _elapse(a, eta[dst], K, binom)
            new = np.zeros_like(eta)
            np.add.at(new, src[pr], el[pr] * prob[pr, None])
            if nd.any():
                mx = np.full_like(eta, -np.inf)
                np.maximum.at(mx, src[nd], el[nd])
                rows = np.unique(src[nd])
                new[rows] = mx[rows]
            if not np.all(np.isfinite(new)) or new.max(initial=0.0) > OVERFLOW:
                raise OracleError("moments unbounded up to horizon")
            diff = np.abs(new - eta)
            eta = new
            if diff.max(initial=0.0) < tol or np.all(diff <= 4 * np.finfo(float).eps * np.abs(new)):
                return StateMoments(eta, it, True)
        return StateMoments(eta, max_iters, False)


def _reaches(graph: FiniteStateGraph, targets: set[int]) -> set[int]:
    pred: list[list[int]] = [[] for _ in range(graph.n)]
    for s in range(graph.n):
        for t, p in graph.succ[s]:
            if p > 0 or graph.kinds[s] == NDET:
                pred[t].append(s)
    seen = set(targets)
    stack = list(targets)
    while stack:
        t = stack.pop()
        for s in pred[t]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


def exact_moments_markov(graph: FiniteStateGraph, K: int, allow_infinite: bool = False) -> StateMoments:
    """Solve the moment equations of a Markov chain, lowest moment first.

    States that do not terminate almost surely get ``inf`` when
    ``allow_infinite`` is set and raise otherwise.
    """
    if not graph.is_markov():
        raise OracleError("graph has nondeterministic states; resolve them with a policy first")
    term = {s for s in range(graph.n) if graph.kinds[s] == TERM}
    can_finish = _reaches(graph, term)
    stuck = set(range(graph.n)) - can_finish
    infinite = _reaches(graph, stuck) if stuck else set()
    if infinite and not allow_infinite:
        bad = sorted(infinite)[0]
        raise OracleError(f"singular system: {graph.labels[bad]} does not terminate almost surely")
    live = [s for s in range(graph.n) if s not in term and s not in infinite]
    pos = {s: i for i, s in enumerate(live)}
    m = len(live)
    Pm = np.zeros((m, graph.n))
    for s in live:
        for t, p in graph.succ[s]:
            Pm[pos[s], t] += p
    a = np.array([graph.reward[s] for s in live])
    A = np.eye(m) - Pm[:, live]
    eta = np.zeros((graph.n, K))
    for s in infinite:
        eta[s] = np.inf
    binom = _binom_table(K)
    for k in range(1, K + 1):
        b = a ** k
        for j in range(1, k):
            b = b + binom[k, j] * a ** (k - j) * (Pm @ eta[:, j - 1])
        if m:
            try:
                x = np.linalg.solve(A, b)  # LU with partial pivoting
            except np.linalg.LinAlgError as exc:
                raise OracleError(f"singular system: {exc}") from exc
            eta[live, k - 1] = x
    return StateMoments(eta, 0, True)


def scheduler_sweep(graph: FiniteStateGraph, K: int, limit: int = 10**5, at: int | None = None) -> SweepResult:
    """Componentwise maxima of the moments over memoryless deterministic schedulers."""
    at = graph.init if at is None else at
    choice = graph.choice_states()
    sizes = [len(graph.succ[s]) for s in choice]
    total = math.prod(sizes)
    if total > limit:
        raise OracleError(f"combinatorial limit exceeded: {total} schedulers > {limit}")
    best = [-math.inf] * K
    argmax: list[dict[int, int]] = [{} for _ in range(K)]
    table = []
    for combo in itertools.product(*[range(z) for z in sizes]):
        policy = dict(zip(choice, combo))
        mom = exact_moments_markov(apply_policy(graph, policy), K, allow_infinite=True).at(at)
        table.append((policy, mom))
        for k in range(K):
            if mom[k] > best[k]:
                best[k] = mom[k]
                argmax[k] = policy
    return SweepResult(tuple(best), argmax, table)
