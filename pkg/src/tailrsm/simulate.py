"""Monte Carlo execution of pCFGs.

Trials run as a batch: all live trials advance one step per sweep, grouped by
location.  Every random draw of trial ``i`` comes from a counter-based stream
keyed by ``(seed, i, draw index)``, so a trial's outcome does not depend on
batch composition, chunking or worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from .frontend import Disc, Norm, Unif
from .logic import Atom, GE, GT, Predicate
from .pcfg import AD, AP, D, N, P, Program, variable_box

NDET_RADIUS = 1e6
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_GOLD2 = np.uint64(0xD1B54A32D192ED03)


class SimulationError(RuntimeError):
    pass


class SchedulerError(SimulationError):
    """A scheduler returned a successor or value outside the legal set."""


# ---------------------------------------------------------------- randomness


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, trials: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """U[0,1) draws for ``(seed, trial, counter)`` triples (splitmix64 hashing)."""
    key = _mix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + _GOLD)
    t = np.asarray(trials, dtype=np.uint64)
    c = np.asarray(counters, dtype=np.uint64)
    z = _mix(_mix(key + t * _GOLD) + c * _GOLD2)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


class Stream:
    """The random stream of one trial; ``random()`` advances its counter."""

    def __init__(self, seed: int, trial: int = 0, counter: int = 0):
        self.seed = seed
        self.trial = trial
        self.counter = counter

    def random(self) -> float:
        u = uniforms(self.seed, np.array([self.trial]), np.array([self.counter]))[0]
        self.counter += 1
        return float(u)


class _Draws:
    """Batch view on per-trial streams."""

    def __init__(self, seed: int, ids: np.ndarray, counters: np.ndarray):
        self.seed = seed
        self.ids = ids
        self.counters = counters

    def take(self, rows: np.ndarray) -> np.ndarray:
        u = uniforms(self.seed, self.ids[rows], self.counters[rows])
        self.counters[rows] += 1
        return u


# ---------------------------------------------------------------- schedulers


class Scheduler(Protocol):
    """Resolves N-locations and AN-locations for a batch of trials.

    Strategies see the current configuration, the number of steps taken so
    far and one uniform draw per trial.
    """

    def choose(self, l: int, n_succ: int, env: Mapping[str, np.ndarray], steps: np.ndarray,
               u: np.ndarray) -> np.ndarray: ...

    def choose_value(self, l: int, lo: np.ndarray, hi: np.ndarray, steps: np.ndarray,
                     u: np.ndarray) -> np.ndarray: ...


@dataclass
class FixedScheduler:
    """Fixed successor index per location (``default`` elsewhere); ndet values at one interval end."""

    table: dict[int, int] = field(default_factory=dict)
    default: int = 0
    value: str = "low"

    def choose(self, l, n_succ, env, steps, u):
        return np.full(len(u), self.table.get(l, self.default), dtype=int)

    def choose_value(self, l, lo, hi, steps, u):
        return lo.copy() if self.value == "low" else hi.copy()


@dataclass
class UniformScheduler:
    def choose(self, l, n_succ, env, steps, u):
        return np.minimum((u * n_succ).astype(int), n_succ - 1)

    def choose_value(self, l, lo, hi, steps, u):
        return lo + (hi - lo) * u


@dataclass
class BernoulliScheduler:
    """First successor with probability ``p``, otherwise uniform among the rest."""

    p: float = 0.5

    def choose(self, l, n_succ, env, steps, u):
        if n_succ == 1:
            return np.zeros(len(u), dtype=int)
        rest = (u - self.p) / (1 - self.p) if self.p < 1 else np.zeros_like(u)
        other = 1 + np.minimum((rest * (n_succ - 1)).astype(int), n_succ - 2)
        return np.where(u < self.p, 0, other)

    def choose_value(self, l, lo, hi, steps, u):
        return np.where(u < self.p, lo, hi)


def make_scheduler(spec: str) -> Scheduler:
    """Parse ``fixed``, ``fixed:l1=1,l4=0``, ``uniform`` or ``bernoulli:0.3``."""
    name, _, arg = spec.partition(":")
    if name == "fixed":
        table = {}
        for item in filter(None, arg.split(",")):
            loc, _, idx = item.partition("=")
            table[int(loc.lstrip("l"))] = int(idx)
        return FixedScheduler(table)
    if name == "uniform":
        return UniformScheduler()
    if name == "bernoulli":
        return BernoulliScheduler(float(arg) if arg else 0.5)
    raise ValueError(f"unknown scheduler {spec!r}")


# ---------------------------------------------------------------- one batched step


@dataclass
class Configuration:
    location: int
    valuation: dict[str, float]


@dataclass
class RunSample:
    steps: int | None  # None means Timeout
    accumulated_reward: float
    trace: list[Configuration] = field(default_factory=list)

    @property
    def timeout(self) -> bool:
        return self.steps is None


def _eval(poly, env: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(poly.evaluate(env), dtype=float), (n,))


def pred_mask(pred: Predicate, env: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    out = np.zeros(n, dtype=bool)
    for conj in pred.disjuncts:
        m = np.ones(n, dtype=bool)
        for a in conj:
            v = _eval(a.poly, env, n)
            m &= (v >= 0) if a.op == GE else ((v > 0) if a.op == GT else (v == 0))
        out |= m
    return out


def _sample_dist(dist, draws: _Draws, rows: np.ndarray) -> np.ndarray:
    if isinstance(dist, Unif):
        return float(dist.low) + float(dist.high - dist.low) * draws.take(rows)
    if isinstance(dist, Norm):
        u1 = 1.0 - draws.take(rows)
        u2 = draws.take(rows)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        return float(dist.mean_) + float(dist.stddev) * z
    if isinstance(dist, Disc):
        u = draws.take(rows)
        vals = np.array([float(v) for v, _ in dist.outcomes])
        cum = np.cumsum([float(p) for _, p in dist.outcomes])
        idx = np.minimum(np.searchsorted(cum, u, side="right"), len(vals) - 1)
        return vals[idx]
    raise TypeError(dist)


def _ndet_interval(pred: Predicate, var: str, env: Mapping[str, float]) -> tuple[float, float]:
    """Legal value interval: the hull of the first satisfiable disjunct, open ends nudged inward."""
    others = {v: x for v, x in env.items() if v != var}
    for conj in pred.disjuncts:
        sub = Predicate((tuple(Atom(a.poly.partial(others), a.op) for a in conj),))
        lo, hi = variable_box(sub, (var,), NDET_RADIUS)[var]
        if lo > hi:
            continue
        eps = 1e-9 * max(1.0, abs(lo), abs(hi))
        if not sub.holds({var: lo}):
            lo = min(lo + eps, (lo + hi) / 2)
        if not sub.holds({var: hi}):
            hi = max(hi - eps, (lo + hi) / 2)
        if sub.holds({var: lo}) and sub.holds({var: hi}):
            return lo, hi
    raise SimulationError(f"no legal value for {var} in {pred}")


def advance(prog: Program, loc: np.ndarray, env: dict[str, np.ndarray], steps: np.ndarray,
            scheduler: Scheduler, draws: _Draws) -> None:
    """One transition for every trial in the batch (in place)."""
    pc = prog.pcfg
    new_loc = loc.copy()
    for l in np.unique(loc):
        l = int(l)
        rows = np.nonzero(loc == l)[0]
        sub_env = {v: x[rows] for v, x in env.items()}
        m = len(rows)
        kind = pc.kind(l)
        edges = pc.edges[l]
        if kind == D:
            target = np.full(m, -1)
            for e in reversed(edges):
                target = np.where(pred_mask(e.guard, sub_env, m), e.target, target)
            if (target < 0).any():
                raise SimulationError(f"no guard holds at l{l}")
            new_loc[rows] = target
        elif kind == P:
            u = draws.take(rows)
            cum = np.cumsum([float(e.prob) for e in edges])
            idx = np.minimum(np.searchsorted(cum, u, side="right"), len(edges) - 1)
            new_loc[rows] = np.array([e.target for e in edges])[idx]
        elif kind == N:
            u = draws.take(rows)
            idx = np.asarray(scheduler.choose(l, len(edges), sub_env, steps[rows], u), dtype=int)
            if idx.shape != (m,) or (idx < 0).any() or (idx >= len(edges)).any():
                raise SchedulerError(f"illegal successor choice at l{l}")
            new_loc[rows] = np.array([e.target for e in edges])[idx]
        else:
            var, up = pc.update[l]
            sub = pc.sub(l)
            if sub == AD:
                val = _eval(up, sub_env, m).copy()
            elif sub == AP:
                val = _sample_dist(up, draws, rows)
            else:
                u = draws.take(rows)
                bounds = [_ndet_interval(up, var, {v: float(x[i]) for v, x in sub_env.items()}) for i in range(m)]
                lo = np.array([b[0] for b in bounds])
                hi = np.array([b[1] for b in bounds])
                val = np.asarray(scheduler.choose_value(l, lo, hi, steps[rows], u), dtype=float)
                chk = dict(sub_env)
                chk[var] = val
                if val.shape != (m,) or not pred_mask(up, chk, m).all():
                    raise SchedulerError(f"illegal nondeterministic value at l{l}")
            env[var][rows] = val
            new_loc[rows] = edges[0].target
    loc[:] = new_loc


def step(prog: Program, history: list[Configuration], scheduler: Scheduler, rng: Stream) -> Configuration:
    """Successor of the last configuration of ``history``."""
    cur = history[-1]
    if not prog.invariant.holds(cur.location, cur.valuation, tol=1e-9):
        raise SimulationError(f"configuration at l{cur.location} violates the invariant")
    loc = np.array([cur.location])
    env = {v: np.array([float(cur.valuation[v])]) for v in prog.pcfg.variables}
    draws = _Draws(rng.seed, np.array([rng.trial]), np.array([rng.counter], dtype=np.int64))
    advance(prog, loc, env, np.array([len(history) - 1]), scheduler, draws)
    rng.counter = int(draws.counters[0])
    return Configuration(int(loc[0]), {v: float(x[0]) for v, x in env.items()})


# ---------------------------------------------------------------- batches


@dataclass
class Batch:
    steps: np.ndarray  # int64, -1 for timeouts
    reward: np.ndarray

    @property
    def timeouts(self) -> np.ndarray:
        return self.steps < 0


def _terminal_mask(prog: Program, loc: np.ndarray, env: dict[str, np.ndarray]) -> np.ndarray:
    out = np.zeros(len(loc), dtype=bool)
    for l, pred in prog.terminal.preds.items():
        rows = np.nonzero(loc == l)[0]
        if len(rows):
            out[rows] = pred_mask(pred, {v: x[rows] for v, x in env.items()}, len(rows))
    return out


def run_batch(prog: Program, scheduler: Scheduler, trials: int, seed: int, cutoff: int,
              rewards: Mapping[int, float] | None = None, first_trial: int = 0) -> Batch:
    """Run trials ``first_trial .. first_trial + trials - 1`` to termination or cutoff."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    pc = prog.pcfg
    rw = np.zeros(len(pc.locations))
    for l, r in (rewards.items() if rewards is not None else ((l, float(x)) for l, x in pc.reward.items())):
        rw[l] = r
    ids = np.arange(first_trial, first_trial + trials, dtype=np.int64)
    loc = np.full(trials, pc.l_init, dtype=np.int64)
    env = {v: np.full(trials, float(x)) for v, x in pc.x_init.items()}
    counters = np.zeros(trials, dtype=np.int64)
    out_steps = np.full(trials, -1, dtype=np.int64)
    out_reward = np.zeros(trials)
    acc = np.zeros(trials)
    live = np.arange(trials)
    for t in range(cutoff + 1):
        done = _terminal_mask(prog, loc, env)
        if done.any():
            out_steps[live[done]] = t
            out_reward[live[done]] = acc[done]
            keep = ~done
            live, loc, acc, counters = live[keep], loc[keep], acc[keep], counters[keep]
            env = {v: x[keep] for v, x in env.items()}
        if not len(live) or t == cutoff:
            break
        acc += rw[loc]
        draws = _Draws(seed, ids[live], counters)
        advance(prog, loc, env, np.full(len(live), t), scheduler, draws)
        counters = draws.counters
    out_reward[live] = acc
    return Batch(out_steps, out_reward)


def run_trials(prog: Program, scheduler: Scheduler, trials: int, seed: int, cutoff: int,
               rewards: Mapping[int, float] | None = None, threads: int = 1, chunk: int = 1 << 16) -> Batch:
    """``run_batch`` over fixed-size chunks, optionally on a thread pool.

    Chunks are merged in trial order, so the result is the same for any
    thread count.
    """
    starts = list(range(0, trials, chunk))

    def one(start: int) -> Batch:
        return run_batch(prog, scheduler, min(chunk, trials - start), seed, cutoff, rewards, first_trial=start)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, starts))
    else:
        parts = [one(s) for s in starts]
    return Batch(np.concatenate([b.steps for b in parts]), np.concatenate([b.reward for b in parts]))


def sample_runtime(prog: Program, scheduler: Scheduler, rng: Stream, cutoff: int, trace_len: int = 0) -> RunSample:
    """One run; ``steps`` is the index of the first terminal configuration."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    pc = prog.pcfg
    cur = Configuration(pc.l_init, {v: float(x) for v, x in pc.x_init.items()})
    history = [cur]
    trace = [cur] if trace_len else []
    reward = 0.0
    for t in range(cutoff + 1):
        if prog.terminal.holds(cur.location, cur.valuation):
            return RunSample(t, reward, trace)
        if t == cutoff:
            break
        reward += float(pc.reward[cur.location])
        cur = step(prog, history[-1:], scheduler, rng)
        history = [cur]
        if len(trace) < trace_len:
            trace.append(cur)
    return RunSample(None, reward, trace)


# ---------------------------------------------------------------- estimators


@dataclass
class MomentEstimate:
    means: list[float]
    stderrs: list[float]
    timeouts: int
    trials: int


def estimate_moments(prog: Program, scheduler: Scheduler, trials: int, K: int, cutoff: int, seed: int,
                     rewards: Mapping[int, float] | None = None, threads: int = 1) -> MomentEstimate:
    """Sample moments of the runtime (or accumulated reward) over timeout-free runs."""
    if trials < 1 or K < 1:
        raise ValueError("trials and K must be >= 1")
    b = run_trials(prog, scheduler, trials, seed, cutoff, rewards, threads)
    ok = b.reward[~b.timeouts]
    if not len(ok):
        raise SimulationError("all runs timed out")
    means, errs = [], []
    for k in range(1, K + 1):
        xs = ok ** k
        means.append(float(np.sum(xs) / len(xs)))  # numpy sums pairwise
        errs.append(float(np.std(xs, ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else 0.0)
    return MomentEstimate(means, errs, int(b.timeouts.sum()), trials)


def estimate_tail(prog: Program, scheduler: Scheduler, trials: int, d: float, seed: int,
                  cutoff: int = 10**6, rewards: Mapping[int, float] | None = None,
                  threads: int = 1) -> tuple[float, float]:
    """Fraction of runs with runtime >= d and its binomial standard error.

    Timeouts count as ``>= d``; the cutoff is raised to at least ``d`` so
    that step counts are never truncated below the threshold.
    """
    if d <= 0:
        return 1.0, 0.0
    cut = max(int(math.ceil(d)), cutoff)
    b = run_trials(prog, scheduler, trials, seed, cut, rewards, threads)
    hits = b.timeouts | (b.reward >= d)
    p = float(hits.mean())
    return p, math.sqrt(p * (1 - p) / trials)
