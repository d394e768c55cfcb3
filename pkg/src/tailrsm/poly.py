"""Polynomial templates, sum-of-squares reduction and SDPA export.

Each implication ``phi_1 >= 0, ..., phi_m >= 0  ==>  psi >= 0`` is replaced by
the identity ``psi = sum_w h_w * prod_i phi_i^{w_i}`` over subsets ``w`` whose
product fits the degree budget, with every ``h_w = z^T Q_w z`` a Gram form
(``Q_w`` PSD).  Matching coefficients gives affine equations in the template
parameters and the Gram entries, which are exported as an SDP in the dual
SDPA form ``max F_0.Y  s.t.  F_i.Y = c_i, Y PSD``.  ``Y`` is block diagonal:
one block per ``Q_w`` plus a diagonal block holding each free parameter as a
difference of two nonnegative entries.  No SDP solver ships here; solutions
come back through ``check_certificate``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constraints import PARAM_PREFIX, Implication, Template, generate_constraints, init_value, is_param
from .pcfg import Program
from .polynomial import ONE, Monomial, Poly, mono_degree, mono_mul, mono_str
from .witness import WitnessReport, check_witness

VERIFIED, REJECTED = "Verified", "Rejected"


@dataclass
class PolyTemplate:
    eta: Template
    params: list[str]
    K: int
    degree: int


def monomial_basis(variables: Sequence[str], degree: int, min_degree: int = 0) -> list[Monomial]:
    """All monomials of degree ``min_degree..degree`` in graded lexicographic order."""
    vs = sorted(variables)
    out: list[Monomial] = []
    for d in range(min_degree, degree + 1):
        for combo in itertools.combinations_with_replacement(vs, d):
            exps: dict[str, int] = {}
            for v in combo:
                exps[v] = exps.get(v, 0) + 1
            out.append(tuple(sorted(exps.items())))
    return out


def build_poly_template(prog: Program, K: int, degree: int) -> PolyTemplate:
    """``eta_k(l) = sum_m a_{l,m,k} m + b_{l,k}`` over all monomials of degree 1..degree."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if K < 1:
        raise ValueError("K must be >= 1")
    pc = prog.pcfg
    basis = monomial_basis(pc.variables, degree, 1)
    eta: Template = {}
    params: list[str] = []
    for loc in pc.locations:
        for k in range(1, K + 1):
            expr = Poly()
            for m in basis:
                p = f"{PARAM_PREFIX}a.l{loc.id}.k{k}.{mono_str(m)}"
                params.append(p)
                expr = expr + Poly.var(p) * Poly({m: 1})
            b = f"{PARAM_PREFIX}b.l{loc.id}.k{k}"
            params.append(b)
            eta[(loc.id, k)] = expr + Poly.var(b)
    return PolyTemplate(eta, params, K, degree)


def generate_poly_constraints(prog: Program, tmpl: PolyTemplate, K: int | None = None) -> list[Implication]:
    """Implications with polynomial contexts; sampled variables are integrated exactly via their moments."""
    return generate_constraints(prog, tmpl.eta, tmpl.K if K is None else K)


def instantiate(tmpl: PolyTemplate, values: dict[str, float]) -> Template:
    out: Template = {}
    for key, p in tmpl.eta.items():
        q: dict[Monomial, float] = {}
        for m, c in p.items():
            pm = [v for v, _ in m if is_param(v)]
            rest = tuple((v, e) for v, e in m if not is_param(v))
            q[rest] = q.get(rest, 0) + c * (values[pm[0]] if pm else 1)
        out[key] = Poly(q)
    return out


# ---------------------------------------------------------------- SOS reduction


@dataclass
class SosBlock:
    label: str
    basis: list[Monomial]

    @property
    def size(self) -> int:
        return len(self.basis)


@dataclass
class SosRow:
    """``sum F.Q + sum pcoef[p] * p = c`` for one monomial of one identity."""

    label: str
    c: float
    q: dict[tuple[int, int, int], float]  # (block, i, j) with i <= j, 0-based -> F entry
    p: dict[int, float]  # parameter index -> coefficient


@dataclass
class SosProgram:
    params: list[str]
    blocks: list[SosBlock] = field(default_factory=list)
    rows: list[SosRow] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)  # minimized over params
    objective_const: float = 0.0
    meta: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def param_index(self, name: str) -> int:
        return self.params.index(name)


def _degree_in(p: Poly, symbols: set[str]) -> int:
    return max((sum(e for v, e in m if v in symbols) for m, _ in p.items()), default=0)


def default_budget(imp: Implication) -> int:
    """Smallest even degree not below the consequent's degree."""
    syms = set(imp.program_symbols())
    d = _degree_in(imp.consequent, syms)
    return d + (d % 2)


def sos_reduce(imp: Implication, params: Sequence[str] = (), budget: int | None = None,
               label: str = "") -> SosProgram:
    """Schmuedgen-style SOS identity for one implication.

    Every product of context polynomials with degree <= ``budget`` gets a
    Gram multiplier of the largest even degree that keeps the term within
    the budget.  With an empty context only the plain SOS term remains.
    """
    syms = set(imp.program_symbols())
    budget = default_budget(imp) if budget is None else budget
    pindex = {p: i for i, p in enumerate(params)}
    sos = SosProgram(list(params))
    psi_terms = imp.consequent.split(set(pindex) | {v for v in imp.consequent.variables() if is_param(v)})
    degs = [_degree_in(c, syms) for c in imp.context]
    ctx_vars = sorted(syms)
    products: list[tuple[tuple[int, ...], Poly]] = []
    for w in itertools.product((0, 1), repeat=len(imp.context)):
        dw = sum(d for d, bit in zip(degs, w) if bit)
        if dw > budget:
            continue
        g = Poly.const(1)
        for c, bit in zip(imp.context, w):
            if bit:
                g = g * c
        products.append((w, g))
    # monomial -> accumulated F entries
    rows: dict[Monomial, dict[tuple[int, int, int], float]] = {}
    for w, g in products:
        half = (budget - _degree_in(g, syms)) // 2
        basis = monomial_basis(ctx_vars, half)
        b = len(sos.blocks)
        tag = "".join(str(bit) for bit in w) or "-"
        sos.blocks.append(SosBlock(f"{label}w={tag}", basis))
        for i, j in itertools.combinations_with_replacement(range(len(basis)), 2):
            prod = Poly({mono_mul(basis[i], basis[j]): 1}) * g
            for m, c in prod.items():
                entry = rows.setdefault(m, {})
                entry[(b, i, j)] = entry.get((b, i, j), 0.0) + float(c)
    monos = set(rows) | set(psi_terms)
    for m in sorted(monos, key=lambda m: (mono_degree(m), m)):
        coef = psi_terms.get(m, Poly())
        pc: dict[int, float] = {}
        const = 0.0
        for pm, c in coef.items():
            if not pm:
                const = float(c)
            else:
                name = pm[0][0]
                if name not in pindex:
                    raise ValueError(f"parameter {name} missing from the parameter list")
                pc[pindex[name]] = -float(c)
        q = {k: v for k, v in rows.get(m, {}).items() if v != 0.0}
        if not q and not pc and const == 0.0:
            continue
        if not q and not pc:
            sos.warnings.append(f"{label}monomial {mono_str(m)}: degree budget {budget} leaves no free term")
        sos.rows.append(SosRow(f"{label}{mono_str(m)}", const, q, pc))
    return sos


def _merge(into: SosProgram, part: SosProgram) -> None:
    off = len(into.blocks)
    into.blocks.extend(part.blocks)
    for r in part.rows:
        into.rows.append(SosRow(r.label, r.c, {(b + off, i, j): v for (b, i, j), v in r.q.items()}, dict(r.p)))
    into.warnings.extend(part.warnings)


def build_sos_program(prog: Program, K: int, degree: int, budget: int | None = None) -> tuple[SosProgram, PolyTemplate]:
    """SOS program for all supermartingale implications; objective ``eta_K(init)``."""
    tmpl = build_poly_template(prog, K, degree)
    imps = generate_poly_constraints(prog, tmpl)
    sos = SosProgram(list(tmpl.params))
    for n, imp in enumerate(imps):
        _merge(sos, sos_reduce(imp, tmpl.params, budget, label=f"i{n}[{imp.describe()}]:"))
    obj = init_value(prog, tmpl.eta, K)
    pindex = {p: i for i, p in enumerate(tmpl.params)}
    for m, c in obj.items():
        if m:
            sos.objective[pindex[m[0][0]]] = float(c)
        else:
            sos.objective_const = float(c)
    sos.meta = {"K": K, "degree": degree, "budget": budget}
    return sos, tmpl


# ---------------------------------------------------------------- SDPA files


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_sdpa(sos: SosProgram) -> tuple[str, str]:
    """SDPA sparse text and the JSON mapping needed to read results back."""
    npar = len(sos.params)
    sizes = [b.size for b in sos.blocks]
    has_diag = npar > 0
    struct = sizes + ([-2 * npar] if has_diag else [])
    diag = len(sizes) + 1
    lines = [
        '"tailrsm SOS export: max F0.Y s.t. Fi.Y = ci, Y psd"',
        f"{len(sos.rows)} = mDIM",
        f"{len(struct)} = nBLOCK",
        " ".join(str(s) for s in struct) + " = bLOCKsTRUCT",
        "{" + ", ".join(_fmt(r.c) for r in sos.rows) + "}",
    ]
    # F0: minimize objective over params == maximize -objective . (p+ - p-)
    for j in sorted(sos.objective):
        v = sos.objective[j]
        if v:
            lines.append(f"0 {diag} {2 * j + 1} {2 * j + 1} {_fmt(-v)}")
            lines.append(f"0 {diag} {2 * j + 2} {2 * j + 2} {_fmt(v)}")
    for i, r in enumerate(sos.rows, start=1):
        for (b, a, c), v in sorted(r.q.items()):
            lines.append(f"{i} {b + 1} {a + 1} {c + 1} {_fmt(v)}")
        for j in sorted(r.p):
            v = r.p[j]
            lines.append(f"{i} {diag} {2 * j + 1} {2 * j + 1} {_fmt(v)}")
            lines.append(f"{i} {diag} {2 * j + 2} {2 * j + 2} {_fmt(-v)}")
    mapping = {
        "schema": 1,
        "params": sos.params,
        "blocks": [{"label": b.label, "basis": [mono_str(m) for m in b.basis]} for b in sos.blocks],
        "rows": [r.label for r in sos.rows],
        "objective_const": sos.objective_const,
        "meta": sos.meta,
        "warnings": sos.warnings,
    }
    return "\n".join(lines) + "\n", json.dumps(mapping, indent=2, sort_keys=True) + "\n"


def _parse_mono(s: str) -> Monomial:
    if s == "1":
        return ONE
    parts = []
    for f in s.split("*"):
        v, _, e = f.partition("^")
        parts.append((v, int(e) if e else 1))
    return tuple(sorted(parts))


def parse_sdpa(text: str) -> tuple[int, list[int], list[float], list[tuple[int, int, int, int, float]]]:
    """``(mDIM, block structure, c, entries)`` from SDPA sparse text."""
    body = []
    for line in text.splitlines():
        s = line.strip()
        if not s or s[0] in '"*':
            continue
        body.append(s)
    if len(body) < 4:
        raise ValueError("truncated SDPA file")

    def nums(s: str) -> list[str]:
        s = s.split("=")[0]
        return s.replace("{", " ").replace("}", " ").replace(",", " ").replace("(", " ").replace(")", " ").split()

    mdim = int(nums(body[0])[0])
    nblock = int(nums(body[1])[0])
    struct = [int(x) for x in nums(body[2])[:nblock]]
    c = [float(x) for x in nums(body[3])]
    if len(c) != mdim:
        raise ValueError(f"c vector has {len(c)} entries, expected {mdim}")
    entries = []
    for s in body[4:]:
        t = nums(s)
        entries.append((int(t[0]), int(t[1]), int(t[2]), int(t[3]), float(t[4])))
    return mdim, struct, c, entries


def import_sdpa(text: str, mapping_text: str) -> SosProgram:
    mapping = json.loads(mapping_text)
    mdim, struct, c, entries = parse_sdpa(text)
    params = list(mapping["params"])
    blocks = [SosBlock(b["label"], [_parse_mono(m) for m in b["basis"]]) for b in mapping["blocks"]]
    if [b.size for b in blocks] + ([-2 * len(params)] if params else []) != struct:
        raise ValueError("block structure does not match the mapping")
    diag = len(blocks) + 1
    rows = [SosRow(lbl, c[i], {}, {}) for i, lbl in enumerate(mapping["rows"])]
    if len(rows) != mdim:
        raise ValueError("row count does not match the mapping")
    objective: dict[int, float] = {}
    for mat, blk, i, j, v in entries:
        if blk == diag:
            if i != j:
                raise ValueError("off-diagonal entry in the parameter block")
            if i % 2 == 0:
                continue  # the p- half mirrors p+
            pj = (i - 1) // 2
            if mat == 0:
                objective[pj] = -v
            else:
                rows[mat - 1].p[pj] = v
        else:
            if mat == 0:
                raise ValueError("objective entry in a Gram block")
            rows[mat - 1].q[(blk - 1, i - 1, j - 1)] = v
    return SosProgram(params, blocks, rows, objective, float(mapping["objective_const"]),
                      dict(mapping.get("meta", {})), list(mapping.get("warnings", [])))


# ---------------------------------------------------------------- certificates


@dataclass
class SdpCertificate:
    params: dict[str, float]
    blocks: list[np.ndarray]

    def to_json(self) -> str:
        return json.dumps({"schema": 1, "params": self.params,
                           "blocks": [b.tolist() for b in self.blocks]}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SdpCertificate":
        doc = json.loads(text)
        return cls({k: float(v) for k, v in doc["params"].items()},
                   [np.array(b, dtype=float).reshape(len(b), len(b)) if b else np.zeros((0, 0))
                    for b in doc["blocks"]])


def read_solution(text: str, sos: SosProgram) -> SdpCertificate:
    """Certificate from a sparse listing of ``Y`` (lines ``blk i j value``, 1-based, upper triangle)."""
    blocks = [np.zeros((b.size, b.size)) for b in sos.blocks]
    pdiag = np.zeros(2 * len(sos.params))
    diag = len(blocks) + 1
    for line in text.splitlines():
        t = line.split()
        if len(t) != 4 or line.lstrip().startswith(("#", '"', "*")):
            continue
        blk, i, j, v = int(t[0]), int(t[1]), int(t[2]), float(t[3])
        if blk == diag:
            pdiag[i - 1] = v
        else:
            blocks[blk - 1][i - 1, j - 1] = v
            blocks[blk - 1][j - 1, i - 1] = v
    params = {p: float(pdiag[2 * k] - pdiag[2 * k + 1]) for k, p in enumerate(sos.params)}
    return SdpCertificate(params, blocks)


@dataclass
class CertificateResult:
    status: str
    bounds: list[float] = field(default_factory=list)
    reason: str = ""
    witness_report: WitnessReport | None = None

    @property
    def verified(self) -> bool:
        return self.status == VERIFIED


def _psd(q: np.ndarray, tol: float) -> bool:
    if q.size == 0:
        return True
    try:
        np.linalg.cholesky(q + tol * np.eye(len(q)))
        return True
    except np.linalg.LinAlgError:
        return False


def check_certificate(sos: SosProgram, cert: SdpCertificate, tol: float = 1e-6, prog: Program | None = None,
                      samples: int = 10_000, seed: int = 0) -> CertificateResult:
    """Verify PSD-ness, the coefficient identities and (with ``prog``) the sampled supermartingale check."""
    if len(cert.blocks) != len(sos.blocks):
        return CertificateResult(REJECTED, reason=f"expected {len(sos.blocks)} blocks, got {len(cert.blocks)}")
    for b, (blk, q) in enumerate(zip(sos.blocks, cert.blocks)):
        if q.shape != (blk.size, blk.size):
            return CertificateResult(REJECTED, reason=f"block {b + 1} ({blk.label}) has shape {q.shape}")
        if not np.allclose(q, q.T, atol=tol):
            return CertificateResult(REJECTED, reason=f"PSD: block {b + 1} ({blk.label}) is not symmetric")
        if not _psd(q, tol):
            lam = float(np.linalg.eigvalsh((q + q.T) / 2).min())
            return CertificateResult(REJECTED, reason=f"PSD: block {b + 1} ({blk.label}) has eigenvalue {lam:.3g}")
    missing = [p for p in sos.params if p not in cert.params]
    if missing:
        return CertificateResult(REJECTED, reason=f"missing parameter {missing[0]}")
    pvals = np.array([cert.params[p] for p in sos.params])
    for r in sos.rows:
        lhs = sum(v * cert.blocks[b][i, j] * (1 if i == j else 2) for (b, i, j), v in r.q.items())
        lhs += sum(v * pvals[j] for j, v in r.p.items())
        if abs(lhs - r.c) > tol * max(1.0, abs(r.c)):
            return CertificateResult(REJECTED, reason=f"identity: row {r.label} off by {lhs - r.c:.3g}")
    bounds: list[float] = []
    report = None
    K = sos.meta.get("K")
    if prog is not None and K:
        tmpl = build_poly_template(prog, K, sos.meta["degree"])
        eta = instantiate(tmpl, cert.params)
        report = check_witness(prog, eta, K, samples=samples, seed=seed, tol=tol)
        if not report.ok:
            return CertificateResult(REJECTED, reason=f"sampled check: {report.violations[0]}", witness_report=report)
        env = {v: float(x) for v, x in prog.pcfg.x_init.items()}
        bounds = [max(0.0, eta[(prog.pcfg.l_init, k)].evaluate(env)) for k in range(1, K + 1)]
    elif sos.objective:
        bounds = [sos.objective_const + float(sum(c * pvals[j] for j, c in sos.objective.items()))]
    return CertificateResult(VERIFIED, bounds, witness_report=report)


def gram_size_summary(sos: SosProgram) -> dict[str, int]:
    sizes: dict[str, int] = {}
    for b in sos.blocks:
        sizes[str(b.size)] = sizes.get(str(b.size), 0) + 1
    return {"blocks": len(sos.blocks), "rows": len(sos.rows), "params": len(sos.params),
            "largest_block": max((b.size for b in sos.blocks), default=0), **{f"size_{k}": v for k, v in sorted(sizes.items())}}


def binom_count(nvars: int, degree: int) -> int:
    return math.comb(nvars + degree, degree)
