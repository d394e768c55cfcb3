"""From moment bounds to tail bounds.

Given upper bounds ``u_1..u_K`` on the raw moments of a nonnegative random
variable, ``P(X >= d) <= min_k u_k / d^k`` (Markov's inequality applied to
``X^k``), with ``u_0 = 1`` so the bound never exceeds one.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

Number = Union[int, float, Fraction]


def _check(u: Sequence[float]) -> list[float]:
    out = [float(x) for x in u]
    if any(math.isnan(x) or x < 0 for x in out):
        raise ValueError("moment bounds must be nonnegative numbers")
    return out


def terms_at(u: Sequence[float], d: float) -> list[float]:
    """``u_k / d^k`` for k = 0..K (the k=0 term is 1)."""
    if not d > 0:
        raise ValueError("d must be positive")
    u = _check(u)
    out = [1.0]
    for k, uk in enumerate(u, start=1):
        # log form avoids overflow of d**k for large d and k
        out.append(math.exp(math.log(uk) - k * math.log(d)) if uk > 0 else 0.0)
    return out


def bound_at(u: Sequence[float], d: float) -> float:
    return min(terms_at(u, d))


def argmin_k(u: Sequence[float], d: float) -> int:
    t = terms_at(u, d)
    return int(np.argmin(t))


@dataclass(frozen=True)
class TwoPoint:
    """``p`` mass at ``d`` and ``1 - p`` mass at 0.

    Fields keep the input number type, so ``Fraction`` inputs give exact
    moments and tails.
    """

    d: Number
    p: Number

    def moment(self, j: int) -> Number:
        return 1 if j == 0 else self.p * self.d ** j

    def tail(self, x: Number) -> Number:
        """``P(X >= x)``."""
        if x <= 0:
            return 1
        return self.p if x <= self.d else 0


def tightness_witness(u_k: Number, k: int, d: Number) -> TwoPoint:
    """Distribution attaining ``P(X >= d) = u_k / d^k`` with ``E[X^k] = u_k``.

    ``p`` is clipped to 1 when ``u_k > d^k``.
    """
    if not d > 0:
        raise ValueError("d must be positive")
    if k == 0:
        return TwoPoint(d, 1)
    return TwoPoint(d, min(1, u_k / d ** k))


def deadline_for(u: Sequence[float], target: float) -> float:
    """Smallest ``d`` with ``bound_at(u, d) <= target``.

    The bound is a minimum of the decreasing curves ``u_k / d^k``, so the
    answer is the smallest per-curve crossing ``(u_k / target)^(1/k)``.
    """
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    u = _check(u)
    if not u:
        raise ValueError("need at least one moment bound")
    d = min((uk / target) ** (1.0 / k) if uk > 0 else 0.0 for k, uk in enumerate(u, start=1))
    if d == 0.0:
        return math.ulp(0.0)
    while bound_at(u, d) > target:  # absorb rounding in the closed form
        d = math.nextafter(d, math.inf)
    return d


@dataclass
class TailCurve:
    u: list[float]
    grid: np.ndarray
    curves: np.ndarray  # shape (len(grid), K): u_k / d^k
    envelope: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        K = self.curves.shape[1]
        buf.write(",".join(["d"] + [f"curve_{k}" for k in range(1, K + 1)] + ["envelope"]) + "\n")
        for i, d in enumerate(self.grid):
            row = [d, *self.curves[i], self.envelope[i]]
            buf.write(",".join(f"{x:.12g}" for x in row) + "\n")
        return buf.getvalue()


def tail_curve(u: Sequence[float], d_min: float, d_max: float, points: int = 256) -> TailCurve:
    if not 0 < d_min < d_max:
        raise ValueError("need 0 < d_min < d_max")
    u = _check(u)
    grid = np.geomspace(d_min, d_max, points)
    curves = np.array([terms_at(u, d)[1:] for d in grid]).reshape(points, len(u))
    envelope = np.minimum(1.0, curves.min(axis=1, initial=1.0))
    return TailCurve(u, grid, curves, envelope)


def emit_curve(u: Sequence[float], d_min: float, d_max: float, points: int = 256) -> str:
    return tail_curve(u, d_min, d_max, points).to_csv()
