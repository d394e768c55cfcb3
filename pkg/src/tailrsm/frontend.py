"""Surface syntax for annotated randomized programs.

    program  := [ "$" pred ] stmts
    stmts    := stmt { ";" stmt }
    stmt     := var ":=" aexpr | var ":=" dist | var ":=" "ndet" "(" pred ")"
              | "if" cond "then" stmts [ "else" stmts ] "fi"
              | "while" cond [ "{" pred "}" ] "do" stmts "od"
              | "refute" "(" pred ")" | "skip"
    cond     := "prob" "(" number ")" | "*" | pred
    dist     := "Unif" "(" number "," number ")" | "Norm" "(" number "," number ")"
              | "Disc" "(" number ":" number { "," number ":" number } ")"
    pred     := boolean combination (and/&&, or/||, not/!) of aexpr relop aexpr

``#`` starts a line comment.  Numbers are parsed as exact rationals
(``0.7`` is 7/10, ``1/3`` is allowed wherever a number is).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Union

from .logic import Predicate
from .polynomial import Poly


class ParseError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.msg = msg
        self.line = line
        self.col = col


class ValidationError(ValueError):
    pass


# ---------------------------------------------------------------- distributions


@dataclass(frozen=True)
class Unif:
    low: Fraction
    high: Fraction

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"Unif({self.low}, {self.high}) needs low < high")

    def moment(self, n: int) -> Fraction:
        a, b = self.low, self.high
        return (b ** (n + 1) - a ** (n + 1)) / ((n + 1) * (b - a))

    def mean(self) -> Fraction:
        return self.moment(1)

    def sample(self, rng) -> float:
        return float(self.low) + float(self.high - self.low) * rng.random()

    def support_points(self) -> list[Fraction] | None:
        return None

    def bounds(self) -> tuple[float, float]:
        return float(self.low), float(self.high)

    def __str__(self) -> str:
        return f"Unif({_num(self.low)}, {_num(self.high)})"


@dataclass(frozen=True)
class Norm:
    mean_: Fraction
    stddev: Fraction

    def __post_init__(self):
        if not self.stddev > 0:
            raise ValueError("Norm standard deviation must be positive")

    def moment(self, n: int) -> Fraction:
        # E[(m + sZ)^n] with E[Z^j] = (j-1)!! for even j, 0 for odd j
        total = Fraction(0)
        for j in range(0, n + 1, 2):
            dfact = 1
            for i in range(j - 1, 0, -2):
                dfact *= i
            total += math.comb(n, j) * self.mean_ ** (n - j) * self.stddev ** j * dfact
        return total

    def mean(self) -> Fraction:
        return self.mean_

    def sample(self, rng) -> float:
        # Box-Muller
        u1 = 1.0 - rng.random()
        u2 = rng.random()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return float(self.mean_) + float(self.stddev) * z

    def support_points(self) -> list[Fraction] | None:
        return None

    def bounds(self) -> tuple[float, float]:
        return -math.inf, math.inf

    def __str__(self) -> str:
        return f"Norm({_num(self.mean_)}, {_num(self.stddev)})"


@dataclass(frozen=True)
class Disc:
    outcomes: tuple[tuple[Fraction, Fraction], ...]

    def __post_init__(self):
        if not self.outcomes:
            raise ValueError("Disc needs at least one outcome")
        if any(p < 0 for _, p in self.outcomes):
            raise ValueError("Disc probabilities must be nonnegative")
        if sum(p for _, p in self.outcomes) != 1:
            raise ValueError("Disc probabilities must sum to 1")

    def moment(self, n: int) -> Fraction:
        return sum((p * v ** n for v, p in self.outcomes), Fraction(0))

    def mean(self) -> Fraction:
        return self.moment(1)

    def sample(self, rng) -> float:
        u = rng.random()
        acc = 0.0
        for v, p in self.outcomes:
            acc += float(p)
            if u < acc:
                return float(v)
        return float(self.outcomes[-1][0])

    def support_points(self) -> list[Fraction] | None:
        return [v for v, p in self.outcomes if p > 0]

    def bounds(self) -> tuple[float, float]:
        vs = [float(v) for v, _ in self.outcomes]
        return min(vs), max(vs)

    def __str__(self) -> str:
        inner = ", ".join(f"{_num(v)}: {_num(p)}" for v, p in self.outcomes)
        return f"Disc({inner})"


Dist = Union[Unif, Norm, Disc]


def _num(x: Fraction) -> str:
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


# ---------------------------------------------------------------- statements


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Poly


@dataclass(frozen=True)
class Sample:
    var: str
    dist: Dist


@dataclass(frozen=True)
class NdetAssign:
    """``var := ndet(pred)``: pred constrains the new value of ``var``."""

    var: str
    pred: Predicate


@dataclass(frozen=True)
class IfProb:
    prob: Fraction
    then: tuple
    else_: tuple


@dataclass(frozen=True)
class IfNondet:
    then: tuple
    else_: tuple


@dataclass(frozen=True)
class IfCond:
    cond: Predicate
    then: tuple
    else_: tuple


@dataclass(frozen=True)
class While:
    cond: Union[Predicate, Fraction, str]  # predicate, prob(p) or "*"
    invariant: Predicate | None
    body: tuple


@dataclass(frozen=True)
class Refute:
    cond: Predicate


@dataclass(frozen=True)
class At:
    """``{ pred } stmt``: pred replaces the invariant at stmt's location."""

    invariant: Predicate
    stmt: "Stmt"


Stmt = Union[Skip, Assign, Sample, NdetAssign, IfProb, IfNondet, IfCond, While, Refute, At]


def unwrap(s: Stmt) -> tuple[Predicate | None, Stmt]:
    """Strip a location annotation, returning it alongside the statement."""
    if isinstance(s, At):
        return s.invariant, s.stmt
    return None, s


@dataclass(frozen=True)
class Ast:
    global_invariant: Predicate | None
    body: tuple


# ---------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+)
  | (?P<id>[A-Za-z_][A-Za-z_0-9']*)
  | (?P<op>:=|<=|>=|==|&&|\|\||[-+*/^()<>=!{};,:$])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "if", "then", "else", "fi", "while", "do", "od", "refute", "skip", "prob",
    "ndet", "Unif", "Norm", "Disc", "and", "or", "not", "true", "false",
}


@dataclass(frozen=True)
class Token:
    kind: str  # num, id, kw, op, eof
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    out: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if not m:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "id":
            out.append(Token("kw" if text in KEYWORDS else "id", text, line, col))
        elif kind in ("num", "op"):
            out.append(Token(kind, text, line, col))
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


# ---------------------------------------------------------------- parser

_RELOPS = ("<=", ">=", "<", ">", "=", "==")


class _Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.i = 0

    # helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        t = tok or self.tok
        return ParseError(msg, t.line, t.col)

    def at(self, *texts: str) -> bool:
        return self.tok.kind in ("op", "kw") and self.tok.text in texts

    def accept(self, *texts: str) -> Token | None:
        if self.at(*texts):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text: str) -> Token:
        t = self.accept(text)
        if t is None:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return t

    # program
    def program(self) -> Ast:
        inv = None
        if self.accept("$"):
            inv = self.pred()
        body = self.stmts()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")
        return Ast(inv, body)

    def stmts(self) -> tuple:
        out = [self.stmt()]
        while self.accept(";"):
            if self.at("od", "fi", "else") or self.tok.kind == "eof":
                break
            out.append(self.stmt())
        return tuple(out)

    def stmt(self) -> Stmt:
        t = self.tok
        if self.accept("{"):
            inv = self.pred()
            self.expect("}")
            inner = self.stmt()
            if isinstance(inner, At):
                raise self.error("statement already carries an annotation", t)
            return At(inv, inner)
        if self.accept("skip"):
            return Skip()
        if self.accept("refute"):
            self.expect("(")
            p = self.pred()
            self.expect(")")
            return Refute(p)
        if self.accept("if"):
            cond = self.cond()
            self.expect("then")
            then = self.stmts()
            else_: tuple = ()
            if self.accept("else"):
                else_ = self.stmts()
            self.expect("fi")
            if isinstance(cond, Fraction):
                return IfProb(cond, then, else_)
            if cond == "*":
                return IfNondet(then, else_)
            return IfCond(cond, then, else_)
        if self.accept("while"):
            cond = self.cond()
            inv = None
            if self.accept("{"):
                inv = self.pred()
                self.expect("}")
            self.expect("do")
            body = self.stmts()
            self.expect("od")
            return While(cond, inv, body)
        if t.kind == "id":
            self.i += 1
            self.expect(":=")
            return self.assignment(t.text)
        raise self.error(f"expected a statement, found {t.text or 'end of input'!r}")

    def assignment(self, var: str) -> Stmt:
        t = self.tok
        if self.accept("ndet"):
            self.expect("(")
            p = self.pred()
            self.expect(")")
            extra = p.variables() - {var}
            if extra:
                raise ParseError(
                    f"ndet predicate for {var} mentions other variables {sorted(extra)}", t.line, t.col
                )
            return NdetAssign(var, p)
        if self.at("Unif", "Norm", "Disc"):
            return Sample(var, self.dist())
        return Assign(var, self.aexpr())

    def dist(self) -> Dist:
        t = self.tok
        name = self.tok.text
        self.i += 1
        self.expect("(")
        try:
            if name == "Disc":
                outcomes = []
                while True:
                    v = self.number()
                    self.expect(":")
                    p = self.number()
                    outcomes.append((v, p))
                    if not self.accept(","):
                        break
                self.expect(")")
                return Disc(tuple(outcomes))
            a = self.number()
            self.expect(",")
            b = self.number()
            self.expect(")")
            return Unif(a, b) if name == "Unif" else Norm(a, b)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), t.line, t.col) from None

    def number(self) -> Fraction:
        neg = bool(self.accept("-"))
        if self.tok.kind != "num":
            raise self.error("expected a number")
        val = Fraction(self.tok.text)
        self.i += 1
        if self.accept("/"):
            if self.tok.kind != "num":
                raise self.error("expected a denominator")
            den = Fraction(self.tok.text)
            if den == 0:
                raise self.error("division by zero")
            val /= den
            self.i += 1
        return -val if neg else val

    def cond(self) -> Union[Predicate, Fraction, str]:
        t = self.tok
        if self.accept("prob"):
            self.expect("(")
            p = self.number()
            self.expect(")")
            if not 0 <= p <= 1:
                raise ParseError(f"probability {p} outside [0, 1]", t.line, t.col)
            return p
        if self.at("*"):
            self.i += 1
            return "*"
        return self.pred()

    # predicates
    def pred(self) -> Predicate:
        p = self.conj()
        while self.accept("or", "||"):
            p = p.or_(self.conj())
        return p

    def conj(self) -> Predicate:
        p = self.neg()
        while self.accept("and", "&&"):
            p = p.and_(self.neg())
        return p

    def neg(self) -> Predicate:
        if self.accept("not", "!"):
            return self.neg().negate()
        return self.patom()

    def patom(self) -> Predicate:
        if self.accept("true"):
            return Predicate.true()
        if self.accept("false"):
            return Predicate.false()
        start = self.i
        if self.at("("):
            try:
                return self.comparison()
            except ParseError:
                self.i = start
            self.expect("(")
            p = self.pred()
            self.expect(")")
            return p
        return self.comparison()

    def comparison(self) -> Predicate:
        lhs = self.aexpr()
        t = self.tok
        if not self.at(*_RELOPS):
            raise self.error("expected a comparison operator")
        self.i += 1
        rhs = self.aexpr()
        return Predicate.compare(lhs, t.text, rhs)

    # arithmetic
    def aexpr(self) -> Poly:
        p = self.term()
        while self.at("+", "-"):
            op = self.tok.text
            self.i += 1
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self) -> Poly:
        p = self.unary()
        while self.at("*", "/"):
            op = self.tok.text
            t = self.tok
            self.i += 1
            q = self.unary()
            if op == "*":
                p = p * q
            else:
                if not q.is_constant() or q.constant() == 0:
                    raise ParseError("division only by nonzero constants", t.line, t.col)
                p = p * (1 / q.constant())
        return p

    def unary(self) -> Poly:
        if self.accept("-"):
            return -self.unary()
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self) -> Poly:
        base = self.primary()
        if self.accept("^"):
            if self.tok.kind != "num" or not self.tok.text.isdigit():
                raise self.error("exponent must be a nonnegative integer literal")
            n = int(self.tok.text)
            self.i += 1
            return base ** n
        return base

    def primary(self) -> Poly:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Poly.const(Fraction(t.text))
        if t.kind == "id":
            self.i += 1
            return Poly.var(t.text)
        if self.accept("("):
            p = self.aexpr()
            self.expect(")")
            return p
        raise self.error(f"expected an expression, found {t.text or 'end of input'!r}")


def parse(source: str) -> Ast:
    return _Parser(source).program()


# ---------------------------------------------------------------- printer


def pretty(ast: Ast) -> str:
    lines: list[str] = []
    if ast.global_invariant is not None:
        lines.append(f"$ {ast.global_invariant}")
    _print_block(ast.body, 0, lines)
    return "\n".join(lines) + "\n"


def _cond_str(cond) -> str:
    if isinstance(cond, Fraction):
        return f"prob({_num(cond)})"
    if cond == "*":
        return "*"
    return str(cond)


def _print_block(stmts: tuple, indent: int, lines: list[str]) -> None:
    for i, s in enumerate(stmts):
        sep = ";" if i < len(stmts) - 1 else ""
        _print_stmt(s, indent, lines)
        lines[-1] += sep


def _print_stmt(s: Stmt, indent: int, lines: list[str]) -> None:
    pad = "  " * indent
    if isinstance(s, At):
        lines.append(f"{pad}{{ {s.invariant} }}")
        _print_stmt(s.stmt, indent, lines)
    elif isinstance(s, Skip):
        lines.append(pad + "skip")
    elif isinstance(s, Assign):
        lines.append(f"{pad}{s.var} := {s.expr}")
    elif isinstance(s, Sample):
        lines.append(f"{pad}{s.var} := {s.dist}")
    elif isinstance(s, NdetAssign):
        lines.append(f"{pad}{s.var} := ndet({s.pred})")
    elif isinstance(s, Refute):
        lines.append(f"{pad}refute({s.cond})")
    elif isinstance(s, (IfProb, IfNondet, IfCond)):
        cond = s.prob if isinstance(s, IfProb) else ("*" if isinstance(s, IfNondet) else s.cond)
        lines.append(f"{pad}if {_cond_str(cond)} then")
        _print_block(s.then, indent + 1, lines)
        if s.else_:
            lines.append(pad + "else")
            _print_block(s.else_, indent + 1, lines)
        lines.append(pad + "fi")
    elif isinstance(s, While):
        inv = f" {{ {s.invariant} }}" if s.invariant is not None else ""
        lines.append(f"{pad}while {_cond_str(s.cond)}{inv} do")
        _print_block(s.body, indent + 1, lines)
        lines.append(pad + "od")
    else:  # pragma: no cover
        raise TypeError(s)


# ---------------------------------------------------------------- validation

Path = tuple


@dataclass(frozen=True)
class AnnotatedAst:
    ast: Ast
    variables: tuple[str, ...]
    linear: bool
    invariants: dict = field(hash=False, compare=False)  # Path -> Predicate

    def invariant_at(self, path: Path) -> Predicate:
        return self.invariants[path]

    @property
    def classification(self) -> str:
        return "linear" if self.linear else "polynomial"


def walk(stmts: tuple, prefix: Path = ()) -> Iterator[tuple[Path, Stmt]]:
    for i, s in enumerate(stmts):
        path = prefix + (i,)
        s = unwrap(s)[1]
        yield path, s
        if isinstance(s, (IfProb, IfNondet, IfCond)):
            yield from walk(s.then, path + ("then",))
            yield from walk(s.else_, path + ("else",))
        elif isinstance(s, While):
            yield from walk(s.body, path + ("body",))


def _stmt_polys(s: Stmt) -> list[Poly]:
    if isinstance(s, Assign):
        return [s.expr]
    return []


def _stmt_preds(s: Stmt) -> list[Predicate]:
    if isinstance(s, IfCond):
        return [s.cond]
    if isinstance(s, While):
        out = [s.cond] if isinstance(s.cond, Predicate) else []
        if s.invariant is not None:
            out.append(s.invariant)
        return out
    if isinstance(s, (Refute,)):
        return [s.cond]
    if isinstance(s, NdetAssign):
        return [s.pred]
    return []


def validate(ast: Ast) -> AnnotatedAst:
    order: dict[str, None] = {}
    declared: set[str] = set()
    if ast.global_invariant is not None:
        for v in sorted(ast.global_invariant.variables()):
            order.setdefault(v, None)
        declared |= ast.global_invariant.variables()

    for _, s in walk(ast.body):
        if isinstance(s, (Assign, Sample, NdetAssign)):
            order.setdefault(s.var, None)
        for p in _stmt_polys(s):
            for v in sorted(p.variables()):
                order.setdefault(v, None)
        for p in _stmt_preds(s):
            for v in sorted(p.variables()):
                order.setdefault(v, None)

    _check_defined(ast.body, set(declared))

    linear = True
    for _, s in walk(ast.body):
        if any(p.degree() > 1 for p in _stmt_polys(s)):
            linear = False
        if any(not p.is_linear() for p in _stmt_preds(s)):
            linear = False
        if isinstance(s, While) and s.invariant is not None and s.invariant.is_false():
            raise ValidationError("loop annotation is unsatisfiable (false)")
    if ast.global_invariant is not None:
        if not ast.global_invariant.is_linear():
            linear = False
        if ast.global_invariant.is_false():
            raise ValidationError("global invariant is unsatisfiable (false)")

    glob = ast.global_invariant if ast.global_invariant is not None else Predicate.true()
    invariants: dict = {path: glob for path, _ in walk(ast.body)}
    for path, s in walk(ast.body):
        if isinstance(s, While) and s.invariant is not None:
            invariants[path] = s.invariant
    for path, pred in _location_annotations(ast.body, ()):
        if pred.is_false():
            raise ValidationError("location annotation is unsatisfiable (false)")
        if not pred.is_linear():
            linear = False
        for v in sorted(pred.variables()):
            order.setdefault(v, None)
        stmt = _stmt_at(ast.body, path)
        if isinstance(stmt, While) and stmt.invariant is not None:
            raise ValidationError("loop head carries two conflicting annotations")
        invariants[path] = pred
    invariants[("exit",)] = glob
    return AnnotatedAst(ast, tuple(order), linear, invariants)


def _location_annotations(stmts: tuple, prefix: Path) -> Iterator[tuple[Path, Predicate]]:
    for i, raw in enumerate(stmts):
        path = prefix + (i,)
        inv, s = unwrap(raw)
        if inv is not None:
            yield path, inv
        if isinstance(s, (IfProb, IfNondet, IfCond)):
            yield from _location_annotations(s.then, path + ("then",))
            yield from _location_annotations(s.else_, path + ("else",))
        elif isinstance(s, While):
            yield from _location_annotations(s.body, path + ("body",))


def _stmt_at(stmts: tuple, path: Path) -> Stmt:
    s = unwrap(stmts[path[0]])[1]
    if len(path) == 1:
        return s
    block = {"then": "then", "else": "else_", "body": "body"}[path[1]]
    return _stmt_at(getattr(s, block), path[2:])


def _check_defined(stmts: tuple, defined: set[str]) -> set[str]:
    """May-analysis: a use is fine if the variable is defined on some path."""

    def need(vars_: frozenset[str], what: str) -> None:
        missing = sorted(vars_ - defined)
        if missing:
            raise ValidationError(f"{what} uses undefined variable(s) {', '.join(missing)}")

    for s in stmts:
        s = unwrap(s)[1]
        if isinstance(s, Assign):
            need(s.expr.variables(), f"assignment to {s.var}")
            defined = defined | {s.var}
        elif isinstance(s, (Sample, NdetAssign)):
            defined = defined | {s.var}
        elif isinstance(s, Refute):
            need(s.cond.variables(), "refute")
        elif isinstance(s, (IfProb, IfNondet, IfCond)):
            if isinstance(s, IfCond):
                need(s.cond.variables(), "if condition")
            defined = _check_defined(s.then, set(defined)) | _check_defined(s.else_, set(defined))
        elif isinstance(s, While):
            head = set(defined)
            while True:
                after = _check_defined_quiet(s.body, set(head))
                if after <= head:
                    break
                head |= after
            if isinstance(s.cond, Predicate):
                saved, defined = defined, head
                need(s.cond.variables(), "loop condition")
                defined = saved
            _check_defined(s.body, set(head))
            defined = head
    return defined


def _check_defined_quiet(stmts: tuple, defined: set[str]) -> set[str]:
    for _, s in walk(stmts):
        if isinstance(s, (Assign, Sample, NdetAssign)):
            defined.add(s.var)
    return defined
