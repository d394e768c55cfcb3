"""Dense two-phase simplex.

Problems are stated as ``minimize c.x`` subject to rows ``a.x (<=|=|>=) b``
and per-variable sign (nonnegative or free).  Free variables are split into
a difference of two nonnegative columns, rows are equilibrated, and the
tableau is pivoted with Dantzig's rule until progress stalls, after which
Bland's rule takes over so degenerate cycling cannot occur.

The text format written by :func:`write_lp` and read by :func:`read_lp`::

    # comment
    minimize  <coef> <var> <coef> <var> ...
    var <name> free|nonneg
    row <name> <coef> <var> ... (<=|=|>=) <rhs>

Running ``python3 -m tailrsm.lp file.lp`` solves such a file and prints the
result as JSON.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field

import numpy as np

OPTIMAL, INFEASIBLE, UNBOUNDED = "Optimal", "Infeasible", "Unbounded"
LE, EQ, GE = "<=", "=", ">="

DEFAULT_TOL = 1e-9
PIVOT_FLOOR = 1e-12
PERTURB_SEED = 20190715


class LpNumericError(ArithmeticError):
    pass


@dataclass
class LinearProgram:
    """Sparse-row builder; densified only when solved."""

    var_names: list[str] = field(default_factory=list)
    free: list[bool] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    rows: list[tuple[dict[int, float], str, float]] = field(default_factory=list)
    row_names: list[str] = field(default_factory=list)
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def add_var(self, name: str, free: bool = False) -> int:
        if name in self._index:
            return self._index[name]
        self._index[name] = len(self.var_names)
        self.var_names.append(name)
        self.free.append(free)
        return self._index[name]

    def var(self, name: str) -> int:
        return self._index[name]

    def add_row(self, coeffs: dict[int, float], sense: str, rhs: float, name: str = "") -> None:
        if sense not in (LE, EQ, GE):
            raise ValueError(f"bad sense {sense!r}")
        clean = {j: float(c) for j, c in coeffs.items() if c != 0}
        self.rows.append((clean, sense, float(rhs)))
        self.row_names.append(name or f"r{len(self.rows) - 1}")

    def set_objective(self, coeffs: dict[int, float]) -> None:
        self.objective = {j: float(c) for j, c in coeffs.items() if c != 0}

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.var_names)

    def dense(self) -> tuple[np.ndarray, list[str], np.ndarray, np.ndarray]:
        m, n = self.shape
        a = np.zeros((m, n))
        for i, (coeffs, _, _) in enumerate(self.rows):
            for j, c in coeffs.items():
                a[i, j] = c
        b = np.array([r[2] for r in self.rows], dtype=float)
        c = np.zeros(n)
        for j, v in self.objective.items():
            c[j] = v
        return a, [r[1] for r in self.rows], b, c

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Per-row violation amount (0 when satisfied)."""
        out = np.zeros(len(self.rows))
        for i, (coeffs, sense, rhs) in enumerate(self.rows):
            lhs = sum(c * x[j] for j, c in coeffs.items())
            if sense == LE:
                out[i] = max(0.0, lhs - rhs)
            elif sense == GE:
                out[i] = max(0.0, rhs - lhs)
            else:
                out[i] = abs(lhs - rhs)
        return out


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0
    phase1_iterations: int = 0
    reduced_costs: np.ndarray | None = None
    infeasible_rows: list[str] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    """Dense tableau kept in sync with the original rows by periodic reinversion."""

    def __init__(self, full: np.ndarray, rhs: np.ndarray, basis: list[int], tol: float, max_pivots: int,
                 stall: int, pricing: str, refactor: int):
        self.full = full  # m x ntot constraint matrix including slack/artificial columns
        self.rhs = rhs
        self.basis = basis
        self.tol = tol
        self.max_pivots = max_pivots
        self.stall = stall
        self.pricing = pricing
        self.refactor = refactor
        self.pivots = 0
        self.partner = np.full(full.shape[1], -1)
        self.cost = np.zeros(full.shape[1])
        m, n = full.shape
        self.t = np.zeros((m + 1, n + 1))
        self.t[:m, :n] = full
        self.t[:m, -1] = rhs
        self.fresh = True

    @property
    def has_partners(self) -> bool:
        return bool(np.any(self.partner >= 0))

    def set_cost(self, cost: np.ndarray) -> None:
        self.cost = cost
        self._price()

    def _price(self) -> None:
        t = self.t
        m = len(self.basis)
        t[-1, :-1] = self.cost
        t[-1, -1] = 0.0
        cb = self.cost[self.basis]
        t[-1] -= cb @ t[:m]

    def reinvert(self) -> None:
        m = len(self.basis)
        bm = self.full[:, self.basis]
        try:
            sol = np.linalg.solve(bm, np.hstack([self.full, self.rhs[:, None]]))
        except np.linalg.LinAlgError as exc:
            raise LpNumericError("basis matrix became singular") from exc
        self.t[:m] = sol
        self.t[:m, self.basis] = np.eye(m)
        self._price()
        self.fresh = True

    def drop_rows(self, rows: list[int]) -> None:
        keep = [i for i in range(len(self.basis)) if i not in set(rows)]
        self.full = self.full[keep]
        self.rhs = self.rhs[keep]
        self.basis = [self.basis[i] for i in keep]
        self.t = self.t[keep + [self.t.shape[0] - 1]]

    def pivot(self, r: int, c: int) -> None:
        t = self.t
        piv = t[r, c]
        if abs(piv) < PIVOT_FLOOR:
            raise LpNumericError(f"pivot {piv:.3e} below floor in row {r}")
        t[r] /= piv
        col = t[:, c].copy()
        col[r] = 0.0
        rows = np.nonzero(col)[0]
        if rows.size:
            t[rows] -= np.outer(col[rows], t[r])
        t[:, c] = 0.0
        t[r, c] = 1.0
        self.basis[r] = c
        self.pivots += 1
        self.fresh = False
        if self.pivots % self.refactor == 0:
            self.reinvert()

    def _candidates(self, rc: np.ndarray, allowed: np.ndarray) -> np.ndarray:
        # reduced-cost noise grows with the size of the dual solution
        dtol = self.tol * max(1.0, abs(self.t[-1, -1]))
        mask = (rc < -dtol) & allowed
        if self.has_partners:
            in_basis = np.zeros(len(mask), dtype=bool)
            in_basis[self.basis] = True
            paired = self.partner >= 0
            mask[paired] &= ~in_basis[self.partner[paired]]
        return np.nonzero(mask)[0]

    def _ratio_test(self, col: np.ndarray, rhs: np.ndarray, bland: bool, floor: float) -> int | None:
        """Harris two-pass test: among near-minimal ratios take the largest pivot."""
        pos = np.nonzero(col > floor)[0]
        if not pos.size:
            return None
        vals = np.maximum(rhs[pos], 0.0)
        cp = col[pos]
        theta = ((vals + self.tol) / cp).min()
        ok = pos[vals / cp <= theta]
        if bland:
            best = (vals / cp).min()
            ties = pos[vals / cp <= best + self.tol]
            return int(min(ties, key=lambda i: self.basis[i]))
        return int(ok[np.argmax(col[ok])])

    def dual_repair(self, allowed: np.ndarray, feas_tol: float) -> bool:
        """Dual simplex pivots until the basic values are nonnegative.

        Used after removing the right-hand-side perturbation: the basis stays
        dual feasible, so a few dual pivots restore primal feasibility.
        Returns False if some row proves the problem infeasible.
        """
        while True:
            t = self.t
            m = t.shape[0] - 1
            xb = t[:m, -1]
            r = int(np.argmin(xb))
            if xb[r] >= -feas_tol:
                return True
            if self.pivots >= self.max_pivots:
                raise LpNumericError(f"pivot limit {self.max_pivots} reached")
            row = t[r, :-1]
            cand = np.nonzero(allowed & (row < -1e-9))[0]
            if not cand.size:
                return False
            rc = np.maximum(t[-1, cand], 0.0)
            ratio = rc / -row[cand]
            best = ratio.min()
            near = cand[ratio <= best + self.tol]
            j = int(near[np.argmin(row[near])])
            self.pivot(r, j)

    def run(self, allowed: np.ndarray) -> str:
        """Minimize the objective row; ``allowed`` masks entering columns.

        Columns whose only positive entries are below the pivot floor even on
        a fresh tableau are skipped until the next pivot: pivoting on them
        would make the basis numerically singular.
        """
        bland = False
        degenerate = 0
        last_obj = self.t[-1, -1]
        skipped = np.zeros(self.t.shape[1] - 1, dtype=bool)
        while True:
            t = self.t
            m = t.shape[0] - 1
            if self.pivots >= self.max_pivots:
                raise LpNumericError(f"pivot limit {self.max_pivots} reached")
            rc = t[-1, :-1]
            cand = self._candidates(rc, allowed & ~skipped)
            if cand.size == 0:
                if not self.fresh:
                    # confirm against a fresh factorization before declaring optimality
                    self.reinvert()
                    continue
                if skipped.any() and np.all(t[:m, :-1][:, skipped] <= PIVOT_FLOOR):
                    return UNBOUNDED
                return OPTIMAL
            if bland:
                c = int(cand[0])
            elif self.pricing == "steepest":
                sub = t[:m, cand]
                norms = np.sqrt(1.0 + np.einsum("ij,ij->j", sub, sub))
                c = int(cand[np.argmin(rc[cand] / norms)])
            else:
                c = int(cand[np.argmin(rc[cand])])
            r = self._ratio_test(t[:m, c], t[:m, -1], bland, 1e-7)
            if r is None:
                if not self.fresh:
                    self.reinvert()
                else:
                    skipped[c] = True
                continue
            self.pivot(r, c)
            skipped[:] = False
            obj = self.t[-1, -1]
            if abs(obj - last_obj) <= self.tol * max(1.0, abs(obj)):
                degenerate += 1
                if degenerate >= self.stall:
                    bland = True
            else:
                degenerate = 0
                bland = False
                last_obj = obj


def solve(lp: LinearProgram, tol: float = DEFAULT_TOL, max_pivots: int = 200_000, stall: int = 50,
          pricing: str = "dantzig", refactor: int = 50, scaling: str = "geometric",
          perturb: float = 1e-6) -> LpSolution:
    a0, senses, b0, c0 = lp.dense()
    m, n = a0.shape
    # split free variables: x_j = x_j+ - x_j-
    free_idx = [j for j in range(n) if lp.free[j]]
    a = np.hstack([a0, -a0[:, free_idx]]) if free_idx else a0.copy()
    c = np.concatenate([c0, -c0[free_idx]]) if free_idx else c0.copy()
    nx = a.shape[1]
    b = b0.copy()
    sense = list(senses)

    # drop empty rows after checking them
    keep = []
    for i in range(m):
        if not np.any(a[i]):
            ok = (sense[i] == LE and b[i] >= -tol) or (sense[i] == GE and b[i] <= tol) or (
                sense[i] == EQ and abs(b[i]) <= tol)
            if not ok:
                return LpSolution(INFEASIBLE, infeasible_rows=[lp.row_names[i]])
            continue
        keep.append(i)
    a, b = a[keep], b[keep]
    sense = [sense[i] for i in keep]
    names = [lp.row_names[i] for i in keep]
    m = len(keep)

    # geometric row/column equilibration, then unit row maxima; rhs made nonnegative
    colscale = np.ones(nx)
    if m:
        for _ in range(4 if scaling == "geometric" else 0):
            mag = np.abs(a)
            big = mag.max(axis=1)
            small = np.where(mag > 0, mag, np.inf).min(axis=1)
            r = 1.0 / np.sqrt(big * small)
            a = a * r[:, None]
            b = b * r
            mag = np.abs(a)
            big = mag.max(axis=0)
            small = np.where(mag > 0, mag, np.inf).min(axis=0)
            cs = np.where(big > 0, 1.0 / np.sqrt(np.maximum(big, 1e-300) * np.where(np.isfinite(small), small, 1.0)), 1.0)
            a = a * cs[None, :]
            colscale *= cs
        scale = np.abs(a).max(axis=1) if scaling != "none" else np.ones(m)
        a = a / scale[:, None]
        b = b / scale
    c = c * colscale
    cmax = np.abs(c).max(initial=0.0)
    if cmax > 0:
        c = c / cmax
    for i in range(m):
        if b[i] < 0:
            a[i] = -a[i]
            b[i] = -b[i]
            sense[i] = {LE: GE, GE: LE, EQ: EQ}[sense[i]]

    n_slack = sum(1 for s in sense if s != EQ)
    n_art = sum(1 for s in sense if s != LE)
    ntot = nx + n_slack + n_art
    full = np.zeros((m, ntot))
    full[:, :nx] = a
    basis: list[int] = [-1] * m
    si, ai = nx, nx + n_slack
    art_cols = []
    for i, s in enumerate(sense):
        if s == LE:
            full[i, si] = 1.0
            basis[i] = si
            si += 1
        else:
            if s == GE:
                full[i, si] = -1.0
                si += 1
            full[i, ai] = 1.0
            basis[i] = ai
            art_cols.append(ai)
            ai += 1

    tab = _Tableau(full, b, basis, tol, max_pivots, stall, pricing, refactor)
    for k, j in enumerate(free_idx):
        tab.partner[j] = n + k
        tab.partner[n + k] = j
    is_art = np.zeros(ntot, dtype=bool)
    is_art[art_cols] = True

    if art_cols:
        tab.set_cost(is_art.astype(float))
        tab.run(np.ones(ntot, dtype=bool))
        infeas = -tab.t[-1, -1]
        if infeas > tol * 10 * (1.0 + float(np.abs(b).max(initial=0.0))):
            t = tab.t
            bad = [names[i] for i in range(len(tab.basis)) if is_art[tab.basis[i]] and t[i, -1] > tol]
            return LpSolution(INFEASIBLE, iterations=tab.pivots, phase1_iterations=tab.pivots,
                              infeasible_rows=bad)
        # drive remaining artificials out of the basis; rows where that fails are redundant
        drop = []
        for i in range(len(tab.basis)):
            if is_art[tab.basis[i]]:
                row = np.abs(tab.t[i, :ntot]) * (~is_art)
                j = int(np.argmax(row))
                if row[j] > 1e-7:
                    tab.pivot(i, j)
                else:
                    drop.append(i)
        if drop:
            tab.drop_rows(drop)
        tab.reinvert()
    phase1 = tab.pivots

    cost = np.zeros(ntot)
    cost[:nx] = c
    tab.set_cost(cost)
    allowed = ~is_art
    # Perturb the basic values (b' = b + B delta keeps the current basis feasible
    # and the equality rows consistent) so phase 2 rarely meets degenerate
    # vertices; then restore b and repair primal feasibility with dual pivots.
    exact_rhs = tab.rhs.copy()
    mrows = len(tab.basis)
    if perturb and mrows:
        rng = np.random.default_rng(PERTURB_SEED)
        xb = np.maximum(tab.t[:mrows, -1], 0.0)
        delta = perturb * (1.0 + xb) * rng.uniform(0.5, 1.0, mrows)
        tab.rhs = exact_rhs + tab.full[:, tab.basis] @ delta
        tab.t[:mrows, -1] += delta
    status = tab.run(allowed)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=tab.pivots, phase1_iterations=phase1)
    if perturb and mrows:
        tab.rhs = exact_rhs
        tab.reinvert()
        feas_tol = tol * (1.0 + float(np.abs(exact_rhs).max(initial=0.0)))
        if not tab.dual_repair(allowed, feas_tol):
            return LpSolution(INFEASIBLE, iterations=tab.pivots, phase1_iterations=phase1)
        status = tab.run(allowed)
        if status == UNBOUNDED:
            return LpSolution(UNBOUNDED, iterations=tab.pivots, phase1_iterations=phase1)

    xs = np.zeros(ntot)
    xs[tab.basis] = np.maximum(tab.t[:-1, -1], 0.0)
    xs[:nx] *= colscale
    x = xs[:n].copy()
    if free_idx:
        x[free_idx] -= xs[n:nx]
    obj = float(c0 @ x)
    rc = tab.t[-1, :nx] / colscale * (cmax if cmax > 0 else 1.0)
    return LpSolution(OPTIMAL, x=x, objective=obj, iterations=tab.pivots, phase1_iterations=phase1,
                      reduced_costs=rc)


# ---------------------------------------------------------------- text format


def write_lp(lp: LinearProgram) -> str:
    out = ["# linear program: minimize objective subject to rows"]
    obj = " ".join(f"{lp.objective[j]!r} {lp.var_names[j]}" for j in sorted(lp.objective))
    out.append(f"minimize {obj}".rstrip())
    for name, fr in zip(lp.var_names, lp.free):
        out.append(f"var {name} {'free' if fr else 'nonneg'}")
    for name, (coeffs, sense, rhs) in zip(lp.row_names, lp.rows):
        terms = " ".join(f"{coeffs[j]!r} {lp.var_names[j]}" for j in sorted(coeffs))
        out.append(f"row {name} {terms} {sense} {rhs!r}")
    return "\n".join(out) + "\n"


def read_lp(text: str) -> LinearProgram:
    lp = LinearProgram()
    objective: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        if head == "minimize":
            objective = parts[1:]
        elif head == "var":
            if len(parts) != 3 or parts[2] not in ("free", "nonneg"):
                raise ValueError(f"line {lineno}: bad var declaration")
            lp.add_var(parts[1], parts[2] == "free")
        elif head == "row":
            name, body = parts[1], parts[2:]
            sense, rhs = body[-2], float(body[-1])
            coeffs = _pairs(lp, body[:-2], lineno)
            lp.add_row(coeffs, sense, rhs, name)
        else:
            raise ValueError(f"line {lineno}: unknown directive {head!r}")
    lp.set_objective(_pairs(lp, objective, 0))
    return lp


def _pairs(lp: LinearProgram, toks: list[str], lineno: int) -> dict[int, float]:
    if len(toks) % 2:
        raise ValueError(f"line {lineno}: coefficient/variable pairs expected")
    out: dict[int, float] = {}
    for k in range(0, len(toks), 2):
        out[lp.add_var(toks[k + 1])] = out.get(lp.add_var(toks[k + 1]), 0.0) + float(toks[k])
    return out


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python3 -m tailrsm.lp FILE.lp", file=sys.stderr)
        return 2
    with open(argv[0]) as fh:
        lp = read_lp(fh.read())
    sol = solve(lp)
    doc = {"status": sol.status, "objective": sol.objective, "iterations": sol.iterations}
    if sol.optimal:
        doc["x"] = {name: float(v) for name, v in zip(lp.var_names, sol.x)}
    print(json.dumps(doc, indent=2))
    return 0 if sol.optimal else 1


if __name__ == "__main__":
    sys.exit(main())
