"""Brute-force LP oracle: enumerate every basic point of a bounded LP."""
from __future__ import annotations

import itertools

import numpy as np

from tailrsm.lp import LinearProgram

BOX = 10.0


def vertex_optimum(a: np.ndarray, senses: list[str], b: np.ndarray, c: np.ndarray, free: list[bool],
                   tol: float = 1e-9) -> float | None:
    """Minimum of ``c.x`` over the vertices, or None when no vertex is feasible.

    Every row becomes one or two ``g.x <= h`` halfspaces, nonnegative columns
    add ``-x_j <= 0``.  The caller guarantees a bounded, pointed region.
    """
    n = a.shape[1]
    g, h = [], []
    for row, s, rhs in zip(a, senses, b):
        if s in ("<=", "="):
            g.append(row)
            h.append(rhs)
        if s in (">=", "="):
            g.append(-row)
            h.append(-rhs)
    for j in range(n):
        if not free[j]:
            e = np.zeros(n)
            e[j] = -1.0
            g.append(e)
            h.append(0.0)
    g, h = np.array(g), np.array(h)
    subsets = np.array(list(itertools.combinations(range(len(g)), n)))
    mats = g[subsets]
    rhs = h[subsets]
    ok = np.abs(np.linalg.det(mats)) > 1e-9
    if not ok.any():
        return None
    xs = np.linalg.solve(mats[ok], rhs[ok][..., None])[..., 0]
    feasible = (xs @ g.T <= h + tol * np.maximum(1.0, np.abs(h))).all(axis=1)
    if not feasible.any():
        return None
    return float((xs[feasible] @ c).min())


def random_lp(rng: np.random.Generator) -> LinearProgram:
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 9))
    lp = LinearProgram()
    for j in range(n):
        lp.add_var(f"x{j}", free=bool(rng.random() < 0.3))
    for i in range(m):
        coeffs = {j: float(rng.integers(-5, 6)) for j in range(n) if rng.random() < 0.7}
        sense = rng.choice(["<=", ">=", "="], p=[0.5, 0.3, 0.2])
        lp.add_row(coeffs, str(sense), float(rng.integers(-8, 9)))
    # box rows keep the region bounded and pointed for the brute-force oracle
    for j in range(n):
        lp.add_row({j: 1.0}, "<=", BOX)
        if lp.free[j]:
            lp.add_row({j: 1.0}, ">=", -BOX)
    lp.set_objective({j: float(rng.integers(-5, 6)) for j in range(n)})
    return lp


def brute(lp: LinearProgram) -> float | None:
    a, senses, b, c = lp.dense()
    return vertex_optimum(a, senses, b, c, lp.free)
