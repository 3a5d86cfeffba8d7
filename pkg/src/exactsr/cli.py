"""Command-line front end: solve, sweep, oracle and gen."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .bounds import DEFAULT_CONST_BOX, ZeroTarget
from .constfit import CERTIFY_BUDGET
from .data_io import MissingColumn, ParseError, load_csv, synth_kepler, synth_pendulum, write_csv
from .expr import DEFAULT_OPERATORS, OperatorSet, UnknownOperator
from .grammar import TooLarge
from .solver import (SIX_HOURS, InvalidConfig, NoFeasibleModel, SolverConfig, enumerate_exhaustive,
                     epsilon_from_percent, solve, sweep)

SCHEMA_VERSION = 1
EPSILON_HELP = (
    "maximum relative error in percent; comma-separated list for sweep.  A value p "
    "bounds sum_i (v_i/y_i - 1)^2 by n*(p/100)^2, i.e. the RMS relative error by p%%"
)

PRESETS = {
    "kepler": {"n": 8, "noise": 0.01, "seed": 42, "ops": DEFAULT_OPERATORS},
    "pendulum": {"n": 10, "noise": 0.005, "seed": 7, "ops": ("add", "sub", "mul", "sqrt", "cbrt")},
}
EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DISAGREE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunReport:
    command: str
    config: dict
    dataset: dict
    results: list = field(default_factory=list)
    rerun: list = field(default_factory=list)
    seed: int = 0
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)


def emit_report(report: RunReport, fmt: str = "text") -> bytes:
    if not report.results:
        raise ValueError("report has no results")
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n").encode()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    return _text(report).encode()


def _cell(row: dict, key: str) -> str:
    if row.get("status") != "feasible":
        return "(none)"
    return row[key]


def _text(report: RunReport) -> str:
    name = report.dataset.get("provenance") or "dataset"
    rows = report.results
    if report.command == "oracle":
        lines = [f"oracle check on {name}"]
        for r in rows:
            lines.append(f"  eps {r['epsilon_percent']:g}%: solve {r['solve'].get('complexity')} "
                         f"vs exhaustive {r['exhaustive'].get('complexity')} -> "
                         f"{'agree' if r['agree'] else 'DISAGREE'}")
        return "\n".join(lines) + "\n"
    headers = ["Dataset"] + [f"{r['epsilon_percent']:g}%" for r in rows]
    grid = [name] + [_cell(r, "structure") for r in rows]
    widths = [max(len(a), len(b)) for a, b in zip(headers, grid)]
    fmt_row = lambda cells: "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
    rule = "+-" + "-+-".join("-" * w for w in widths) + "-+"
    lines = [rule, fmt_row(headers), rule, fmt_row(grid), rule, ""]
    for r in rows:
        head = f"{r['epsilon_percent']:g}%:"
        if r.get("status") != "feasible":
            lines.append(f"{head} no feasible model (best residual {r.get('best_residual')})")
            continue
        st = r["stats"]
        timing = f", {st['wall_time']:.2f}s" if "wall_time" in st else ""
        lines.append(f"{head} {r['expression']}  complexity={r['complexity']:g} "
                     f"residual={r['residual']:.4g} [{r['certificate']}] "
                     f"nodes={st['nodes_explored']}{timing}")
    return "\n".join(lines) + "\n"


# --- argument handling ----------------------------------------------------------------

def _add_data_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", metavar="PATH", help="CSV file with a header row")
    src.add_argument("--gen", choices=sorted(PRESETS), help="synthetic dataset preset")
    p.add_argument("--target", metavar="NAME", help="target column (required with --data)")
    p.add_argument("--n-samples", type=int, help="rows to generate (preset default)")
    p.add_argument("--noise", type=float, help="generator noise (preset default)")
    p.add_argument("--seed", type=int, help="data and solver seed (preset default, else 0)")


def _add_solver_flags(p: argparse.ArgumentParser, default_eps: str) -> None:
    p.add_argument("--epsilon", default=default_eps, help=EPSILON_HELP)
    p.add_argument("--depth", type=int, default=3, help="template depth; the root has depth 0")
    p.add_argument("--ops", help="comma-separated operators (default +,*,sqrt,cbrt; "
                                 "the pendulum preset adds -)")
    p.add_argument("--op-cap", type=int, default=3, help="maximum occurrences per operator")
    p.add_argument("--max-constants", type=int, default=2)
    p.add_argument("--const-box", type=float, default=DEFAULT_CONST_BOX,
                   help="constants are confined to [-C, C]")
    p.add_argument("--objective", choices=("node-count", "weighted"), default="node-count")
    p.add_argument("--time-limit", type=float, default=SIX_HOURS, metavar="SECONDS")
    p.add_argument("--node-limit", type=int)
    p.add_argument("--certify-budget", type=int, default=CERTIFY_BUDGET,
                   help="box splits allowed when proving a structure infeasible")
    p.add_argument("--no-prune", action="store_true", help="disable bound-based pruning")
    p.add_argument("--threads", type=int, default=1, help="worker count (the search is serial)")
    p.add_argument("--json", metavar="PATH", help="write the JSON report here ('-' for stdout)")
    p.add_argument("--timings", action="store_true",
                   help="include wall-clock times in the JSON report (breaks byte-identical reruns)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exactsr", description="Minimum-complexity symbolic regression by "
                     "branch-and-bound, with an optimality certificate.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, eps, helptext in (("solve", "2", "solve for one error bound"),
                                ("sweep", "2,5,10,20,30,50", "solve for a list of error bounds"),
                                ("oracle", "2", "compare solve against exhaustive enumeration")):
        p = sub.add_parser(name, help=helptext)
        _add_data_flags(p)
        _add_solver_flags(p, eps)
        if name == "oracle":
            p.add_argument("--guard", type=int, default=200_000,
                           help="refuse exhaustive runs above this many structures")
    g = sub.add_parser("gen", help="write a synthetic dataset to CSV")
    g.add_argument("--gen", choices=sorted(PRESETS), required=True)
    g.add_argument("--n-samples", type=int)
    g.add_argument("--noise", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", metavar="PATH", help="CSV destination (default stdout)")
    return parser


def _percent_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--epsilon: not a list of numbers: {text!r}") from None
    if not vals:
        raise UsageError("--epsilon: empty list")
    if any(v <= 0 for v in vals):
        raise UsageError("--epsilon: values must be positive")
    return vals


def _dataset(args):
    if args.gen:
        pre = PRESETS[args.gen]
        n = args.n_samples if args.n_samples is not None else pre["n"]
        noise = args.noise if args.noise is not None else pre["noise"]
        seed = args.seed if args.seed is not None else pre["seed"]
        maker = synth_kepler if args.gen == "kepler" else synth_pendulum
        try:
            return maker(n, noise, seed), seed
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if not args.target:
        raise UsageError("--target is required with --data")
    path = Path(args.data)
    if not path.is_file():
        raise UsageError(f"cannot read data file {str(path)!r}: no such file")
    return load_csv(path, args.target), (args.seed if args.seed is not None else 0)


def _operators(args) -> OperatorSet:
    if args.ops:
        names = [s.strip() for s in args.ops.split(",") if s.strip()]
    else:
        names = list(PRESETS[args.gen]["ops"] if args.gen else DEFAULT_OPERATORS)
    if args.op_cap < 1:
        raise UsageError("--op-cap must be at least 1")
    return OperatorSet.from_names(names, cap=args.op_cap)


def _config_echo(args, ops: OperatorSet, seed: int, ds) -> dict:
    d = {
        "command": args.command,
        "data": args.data,
        "gen": args.gen,
        "target": args.target or ds.target_name,
        "n_samples": ds.n,
        "noise": args.noise if args.noise is not None else (PRESETS[args.gen]["noise"] if args.gen else None),
        "seed": seed,
        "epsilon": args.epsilon,
        "depth": args.depth,
        "ops": ",".join(op.id for op in ops.all),
        "op_cap": args.op_cap,
        "max_constants": args.max_constants,
        "const_box": args.const_box,
        "objective": args.objective,
        "time_limit": args.time_limit,
        "node_limit": args.node_limit,
        "certify_budget": args.certify_budget,
        "prune": not args.no_prune,
        "threads": args.threads,
    }
    if args.command == "oracle":
        d["guard"] = args.guard
    return d


def _rerun_argv(cfg: dict) -> list[str]:
    argv = [cfg["command"]]
    if cfg["data"]:
        argv += ["--data", cfg["data"], "--target", cfg["target"]]
    else:
        argv += ["--gen", cfg["gen"], "--n-samples", str(cfg["n_samples"]), "--noise", repr(cfg["noise"])]
    argv += ["--seed", str(cfg["seed"]), "--epsilon", cfg["epsilon"], "--depth", str(cfg["depth"]),
             "--ops", cfg["ops"], "--op-cap", str(cfg["op_cap"]),
             "--max-constants", str(cfg["max_constants"]), "--const-box", repr(cfg["const_box"]),
             "--objective", cfg["objective"], "--time-limit", repr(cfg["time_limit"]),
             "--certify-budget", str(cfg["certify_budget"]), "--threads", str(cfg["threads"])]
    if cfg["node_limit"] is not None:
        argv += ["--node-limit", str(cfg["node_limit"])]
    if not cfg["prune"]:
        argv.append("--no-prune")
    if "guard" in cfg:
        argv += ["--guard", str(cfg["guard"])]
    return argv


def _row(pct: float, eps: float, outcome, names, timings: bool) -> dict:
    row = {"epsilon_percent": pct, "epsilon_internal": eps}
    if isinstance(outcome, NoFeasibleModel):
        row.update(status="no-feasible-model", reason=str(outcome),
                   best_residual=outcome.best_residual if outcome.best_residual != float("inf") else None,
                   stats=outcome.stats.to_dict(timings))
    else:
        row.update(status="feasible", **outcome.to_dict(names, timings))
    return row


def _run_solver(args) -> tuple[RunReport, int]:
    ds, seed = _dataset(args)
    ops = _operators(args)
    pcts = _percent_list(args.epsilon)
    if args.command == "solve" and len(pcts) != 1:
        raise UsageError("solve takes a single --epsilon value; use sweep for a list")
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    base = SolverConfig(epsilon=1.0, depth=args.depth, operators=ops, objective=args.objective,
                        const_box=args.const_box, max_constants=args.max_constants,
                        time_limit=args.time_limit, node_limit=args.node_limit, seed=seed,
                        prune=not args.no_prune, certify_budget=args.certify_budget)
    base.check()
    echo = _config_echo(args, ops, seed, ds)
    report = RunReport(args.command, echo, ds.summary(), rerun=_rerun_argv(echo), seed=seed)
    names = ds.variable_names
    internal = [epsilon_from_percent(p, ds.n) for p in pcts]
    code = EXIT_OK
    if args.command == "oracle":
        for pct, eps in zip(pcts, internal):
            cfg = replace(base, epsilon=eps)
            outcomes = []
            for fn in (solve, lambda d, c: enumerate_exhaustive(d, c, guard=args.guard)):
                try:
                    outcomes.append(fn(ds, cfg))
                except NoFeasibleModel as exc:
                    outcomes.append(exc)
            a, b = (_row(pct, eps, o, names, args.timings) for o in outcomes)
            agree = a["status"] == b["status"] and a.get("complexity") == b.get("complexity")
            report.results.append({"epsilon_percent": pct, "epsilon_internal": eps,
                                   "solve": a, "exhaustive": b, "agree": agree})
            if not agree:
                code = EXIT_DISAGREE
            elif a["status"] != "feasible" and code == EXIT_OK:
                code = EXIT_INFEASIBLE
        return report, code
    order = sorted(range(len(pcts)), key=lambda i: pcts[i])
    rows = sweep(ds, base, [internal[i] for i in order], keep_going=True)
    for i, (eps, outcome) in zip(order, rows):
        report.results.append(_row(pcts[i], eps, outcome, names, args.timings))
        if isinstance(outcome, NoFeasibleModel):
            code = EXIT_INFEASIBLE
    return report, code


def _run_gen(args) -> int:
    pre = PRESETS[args.gen]
    n = args.n_samples if args.n_samples is not None else pre["n"]
    noise = args.noise if args.noise is not None else pre["noise"]
    seed = args.seed if args.seed is not None else pre["seed"]
    maker = synth_kepler if args.gen == "kepler" else synth_pendulum
    try:
        ds = maker(n, noise, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        write_csv(ds, args.out)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow([*ds.variable_names, ds.target_name])
        for x, t in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(t))])
    return EXIT_OK


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen":
            return _run_gen(args)
        report, code = _run_solver(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, MissingColumn, ZeroTarget, InvalidConfig, TooLarge, UnknownOperator,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(emit_report(report, "text").decode())
    if args.json:
        data = emit_report(report, "json")
        if args.json == "-":
            sys.stdout.write(data.decode())
        else:
            try:
                Path(args.json).write_bytes(data)
            except OSError as exc:
                print(f"error: cannot write {args.json!r}: {exc}", file=sys.stderr)
                return EXIT_USAGE
    return code


def main() -> None:
    sys.exit(run())
