"""Command-line front end.

Exit codes: 0 success, 1 analysis infeasible or certificate rejected,
2 usage or input error, 3 internal error.  Results are JSON (``"schema": 1``)
on stdout or in ``--out``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from . import lp as lpmod
from .frontend import ParseError, ValidationError, parse, pretty, validate
from .linear import LAST, LEX, PER_MOMENT, NonlinearProgram, build_lp, build_template, synthesize, _objective
from .constraints import init_value
from .logic import PredicateExplosion
from .oracle import (
    OracleError,
    apply_policy,
    bernoulli_policy,
    enumerate_states,
    exact_moments_markov,
    gap_example,
    scheduler_sweep,
    value_iterate_FK,
)
from .pcfg import InvariantError, check_wellformed, compile_program
from .poly import SdpCertificate, build_sos_program, check_certificate, emit_sdpa, gram_size_summary, import_sdpa, read_solution
from .simulate import SimulationError, estimate_moments, estimate_tail, make_scheduler, run_trials
from .tail import argmin_k, bound_at, deadline_for, tail_curve

SCHEMA = 1
THREADS_ENV = "TAILRSM_THREADS"

GRAMMAR = """program grammar (whitespace-insensitive, '#' starts a comment):
  program := [ "$" pred ] stmts
  stmts   := stmt { ";" stmt }
  stmt    := var ":=" aexpr | var ":=" dist | var ":=" "ndet" "(" pred ")"
           | "skip" | "refute" "(" pred ")"
           | "if" cond "then" stmts "else" stmts "fi"
           | "while" cond [ "{" pred "}" ] "do" stmts "od"
           | "{" pred "}" stmt                    (invariant at this statement)
  cond    := pred | "prob" "(" p ")" | "*" | "true"
  dist    := "Unif" "(" a "," b ")" | "Norm" "(" m "," s ")" | "Disc" "(" v ":" p { "," v ":" p } ")"
  pred    := pred "or" pred | pred "and" pred | "not" pred | aexpr ("<"|"<="|">"|">="|"=") aexpr
"""


class UsageError(ValueError):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _load(path: str):
    src = Path(path).read_text(encoding="utf-8")
    return compile_program(validate(parse(src)))


def _emit(doc: dict, args) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if getattr(args, "out", None):
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _loc(text: str) -> int:
    return int(text.lstrip("l"))


# ---------------------------------------------------------------- subcommands


def cmd_parse(args) -> int:
    ast = parse(Path(args.file).read_text(encoding="utf-8"))
    ann = validate(ast)
    _emit({"schema": SCHEMA, "status": "ok", "variables": list(ann.variables),
           "classification": ann.classification, "program": pretty(ast)}, args)
    return 0


def cmd_compile(args) -> int:
    prog = _load(args.file)
    report = check_wellformed(prog, samples=args.samples, seed=args.seed)
    pc = prog.pcfg
    _emit({"schema": SCHEMA, "status": "ok" if not report else "ill-formed",
           "locations": len(pc.locations), "variables": list(pc.variables),
           "kinds": {loc.name: loc.sub or loc.kind for loc in pc.locations}, "report": report}, args)
    return 0 if not report else 2


def cmd_dump(args) -> int:
    prog = _load(args.file)
    if args.format == "json":
        text = prog.pcfg.to_json(prog.invariant) + "\n"
    else:
        lines = []
        for loc in prog.pcfg.locations:
            edges = ", ".join(
                f"l{e.target}" + (f" [{e.guard}]" if e.guard is not None and not e.guard.is_true() else "")
                + (f" ({e.prob})" if e.prob is not None else "") for e in prog.pcfg.edges[loc.id])
            lines.append(f"{loc.name:>4} {loc.sub or loc.kind:<2} {loc.label:<30} -> {edges}   I: {prog.invariant.at(loc.id)}")
        text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    if args.template != "linear":
        raise UsageError("analyze solves linear templates only; use sdp-export for polynomial templates")
    if args.degree not in (None, 1):
        raise UsageError("--degree applies to polynomial templates (sdp-export)")
    prog = _load(args.file)
    t0 = time.perf_counter()
    if args.emit_lp:
        tmpl = build_template(prog, args.max_moment)
        build = build_lp(prog, tmpl, args.max_moment)
        build.lp.set_objective(_objective(build, init_value(prog, tmpl.eta, args.max_moment)))
        Path(args.emit_lp).write_text(lpmod.write_lp(build.lp))
    res = synthesize(prog, args.max_moment, mode=args.mode, check_invariant=not args.no_invariant_check)
    stats = dict(res.stats)
    seconds = time.perf_counter() - t0
    stats.pop("seconds", None)
    doc = {
        "schema": SCHEMA,
        "status": res.status,
        "bounds": res.bounds,
        "feasible_upto": res.feasible_upto,
        "mode": args.mode,
        "lp_stats": stats,
    }
    if res.witnesses:
        best = max(res.witnesses)
        doc["witness"] = res.witnesses[best].to_json(prog)
        doc["witness_K"] = best
    if res.failed:
        doc["failed_constraints"] = res.failed
    if args.timing:
        doc["seconds"] = seconds
    _emit(doc, args)
    return 0 if res.status == lpmod.OPTIMAL else 1


def cmd_simulate(args) -> int:
    prog = _load(args.file)
    sched = make_scheduler(args.scheduler)
    rewards = None
    if args.count_at is not None:
        l = _loc(args.count_at)
        if not 0 <= l < len(prog.pcfg.locations):
            raise UsageError(f"unknown location {args.count_at}")
        rewards = {l: 1.0}
    threads = args.threads or _threads()
    doc: dict = {"schema": SCHEMA, "trials": args.trials, "seed": args.seed, "scheduler": args.scheduler,
                 "cutoff": args.cutoff}
    if args.count_at is not None:
        doc["count_at"] = args.count_at
    try:
        est = estimate_moments(prog, sched, args.trials, args.max_moment, args.cutoff, args.seed, rewards, threads)
        doc["moments"] = [{"k": k + 1, "mean": m, "stderr": e} for k, (m, e) in enumerate(zip(est.means, est.stderrs))]
        doc["timeouts"] = est.timeouts
    except SimulationError as exc:
        doc["moments"] = []
        doc["timeouts"] = args.trials
        doc["warning"] = str(exc)
    if args.deadline is not None:
        p, se = estimate_tail(prog, sched, args.trials, args.deadline, args.seed, args.cutoff, rewards, threads)
        doc["tail"] = {"d": args.deadline, "p_hat": p, "stderr": se}
    if args.csv:
        b = run_trials(prog, sched, args.trials, args.seed, args.cutoff, rewards, threads)
        with open(args.csv, "w") as fh:
            fh.write("trial,steps\n")
            for i, s in enumerate(b.steps):
                fh.write(f"{i},{s if s >= 0 else 'timeout'}\n")
    _emit(doc, args)
    return 0


def cmd_oracle(args) -> int:
    if args.example == "gap":
        graph = gap_example()
    elif args.file:
        graph = enumerate_states(_load(args.file), args.step_bound, args.count_bound)
    else:
        raise UsageError("give a program file or --example gap")
    K = args.max_moment
    doc: dict = {"schema": SCHEMA, "states": graph.n, "init": graph.labels[graph.init]}
    vi = value_iterate_FK(graph, K, args.max_iters, args.tol)
    doc["value_iteration"] = {"iterations": vi.iterations, "converged": vi.converged,
                              "moments": {graph.labels[s]: list(vi.at(s)) for s in range(graph.n)}}
    if graph.is_markov():
        ex = exact_moments_markov(graph, K, allow_infinite=True)
        doc["exact"] = {graph.labels[s]: list(ex.at(s)) for s in range(graph.n)}
    else:
        sw = scheduler_sweep(graph, K, args.limit)
        doc["sweep"] = {
            "maxima": list(sw.maxima),
            "argmax": [{graph.labels[s]: graph.labels[graph.succ[s][c][0]] for s, c in pol.items()} for pol in sw.argmax],
            "table": [{"choices": {graph.labels[s]: graph.labels[graph.succ[s][c][0]] for s, c in pol.items()},
                       "moments": list(m)} for pol, m in sw.table[:args.table_rows]],
            "schedulers": len(sw.table),
        }
        if args.policy_p:
            doc["bernoulli"] = []
            for p in args.policy_p:
                m = exact_moments_markov(apply_policy(graph, bernoulli_policy(graph, p)), K, allow_infinite=True)
                doc["bernoulli"].append({"p": p, "moments": list(m.at(graph.init))})
    _emit(doc, args)
    return 0


def _read_moments(args) -> list[float]:
    if args.moments:
        return [float(x) for x in args.moments.split(",") if x.strip()]
    if args.bounds:
        doc = json.loads(Path(args.bounds).read_text())
        u = [b for b in doc.get("bounds", []) if b is not None]
        if not u:
            raise UsageError("analysis output has no finite bounds")
        return u
    raise UsageError("give --moments or --bounds")


def cmd_tail(args) -> int:
    u = _read_moments(args)
    doc: dict = {"schema": SCHEMA, "moments": u}
    if args.deadline:
        doc["bounds"] = [{"d": d, "bound": float(f"{bound_at(u, d):.12g}"), "k": argmin_k(u, d)} for d in args.deadline]
    if args.target is not None:
        doc["deadline"] = {"target": args.target, "d": deadline_for(u, args.target)}
    if args.curve:
        lo, hi = (float(x) for x in args.curve.split(","))
        curve = tail_curve(u, lo, hi, args.points)
        if args.csv:
            Path(args.csv).write_text(curve.to_csv())
        else:
            doc["curve"] = [{"d": float(d), "envelope": float(e)} for d, e in zip(curve.grid, curve.envelope)]
    _emit(doc, args)
    return 0


def cmd_sdp_export(args) -> int:
    prog = _load(args.file)
    sos, _ = build_sos_program(prog, args.max_moment, args.degree, args.budget)
    dat, mapping = emit_sdpa(sos)
    prefix = Path(args.prefix)
    Path(f"{prefix}.dat-s").write_text(dat)
    Path(f"{prefix}.map.json").write_text(mapping)
    _emit({"schema": SCHEMA, "sdpa": f"{prefix}.dat-s", "mapping": f"{prefix}.map.json",
           "structure": gram_size_summary(sos), "warnings": sos.warnings}, args)
    return 0


def cmd_sdp_check(args) -> int:
    sos = import_sdpa(Path(args.sdpa).read_text(), Path(args.mapping).read_text())
    if args.cert:
        cert = SdpCertificate.from_json(Path(args.cert).read_text())
    elif args.solution:
        cert = read_solution(Path(args.solution).read_text(), sos)
    else:
        raise UsageError("give --cert or --solution")
    prog = _load(args.program) if args.program else None
    res = check_certificate(sos, cert, args.tol, prog, args.samples, args.seed)
    _emit({"schema": SCHEMA, "status": res.status, "bounds": res.bounds, "reason": res.reason}, args)
    return 0 if res.verified else 1


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tailrsm", description="Runtime moment and tail bounds for randomized programs.",
                                 epilog=GRAMMAR, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, epilog=GRAMMAR, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--out", help="write JSON here instead of stdout")
        return p

    p = add("parse", "parse and validate a program")
    p.add_argument("file")
    p.set_defaults(func=cmd_parse)

    p = add("compile", "compile to a pCFG and run the well-formedness checks")
    p.add_argument("file")
    p.add_argument("--samples", type=_positive, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compile)

    p = add("dump", "print the pCFG")
    p.add_argument("file")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.set_defaults(func=cmd_dump)

    p = add("analyze", "synthesize moment bounds with linear templates")
    p.add_argument("file")
    p.add_argument("--max-moment", type=_positive, default=1)
    p.add_argument("--template", choices=["linear", "poly"], default="linear")
    p.add_argument("--degree", type=_positive)
    p.add_argument("--mode", choices=[PER_MOMENT, LAST, LEX], default=PER_MOMENT)
    p.add_argument("--emit-lp", help="write the K-th moment LP in plain-text form")
    p.add_argument("--no-invariant-check", action="store_true")
    p.add_argument("--timing", action="store_true", help="include wall-clock seconds (breaks byte-stability)")
    p.set_defaults(func=cmd_analyze)

    p = add("simulate", "Monte Carlo runtime moments and tail estimates")
    p.add_argument("file")
    p.add_argument("--trials", type=_positive, default=10_000)
    p.add_argument("--max-moment", type=_positive, default=1)
    p.add_argument("--cutoff", type=_positive, default=10**6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheduler", default="fixed", help="fixed[:l3=1,...] | uniform | bernoulli[:p]")
    p.add_argument("--deadline", type=float)
    p.add_argument("--count-at", help="measure visits to this location instead of steps")
    p.add_argument("--csv", help="write trial,steps rows here")
    p.add_argument("--threads", type=_positive, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.set_defaults(func=cmd_simulate)

    p = add("oracle", "exact moments on finite state spaces")
    p.add_argument("file", nargs="?")
    p.add_argument("--example", choices=["gap"])
    p.add_argument("--max-moment", type=_positive, default=2)
    p.add_argument("--step-bound", type=_positive, default=10**6)
    p.add_argument("--count-bound", type=_positive, default=10**5)
    p.add_argument("--max-iters", type=_positive, default=10**6)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--limit", type=_positive, default=10**5, help="maximum number of schedulers to sweep")
    p.add_argument("--policy-p", type=float, action="append", help="also evaluate the Bernoulli policy p")
    p.add_argument("--table-rows", type=int, default=64)
    p.set_defaults(func=cmd_oracle)

    p = add("tail", "tail-probability bounds from moment bounds")
    p.add_argument("--moments", help="comma-separated u1,u2,...")
    p.add_argument("--from", "--bounds", dest="bounds", help="analyze JSON output to read bounds from")
    p.add_argument("--deadline", type=float, action="append")
    p.add_argument("--target", type=float)
    p.add_argument("--curve", help="d_min,d_max")
    p.add_argument("--points", type=_positive, default=256)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_tail)

    p = add("sdp-export", "export the polynomial-template SOS program in SDPA sparse format")
    p.add_argument("file")
    p.add_argument("--max-moment", type=_positive, default=1)
    p.add_argument("--degree", type=_positive, default=2)
    p.add_argument("--budget", type=_positive, help="degree budget of the SOS identities")
    p.add_argument("--prefix", required=True, help="writes PREFIX.dat-s and PREFIX.map.json")
    p.set_defaults(func=cmd_sdp_export)

    p = add("sdp-check", "verify an external SDP solution")
    p.add_argument("--sdpa", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--cert", help="certificate JSON")
    p.add_argument("--solution", help="sparse Y listing: blk i j value")
    p.add_argument("--program", help="program file, enables the sampled check")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--samples", type=_positive, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sdp_check)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "tail" and args.target is not None and not 0 < args.target < 1:
            raise UsageError("--target must lie in (0, 1)")
        return args.func(args)
    except (UsageError, ParseError, ValidationError, InvariantError, NonlinearProgram, PredicateExplosion,
            OracleError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
