"""Command line: ``drmarket generate | solve | compare``.

Exit codes are part of the interface: 0 converged, 2 iteration cap reached,
3 infeasible subproblem or failed run, 64 usage or configuration error.

Trace CSVs use ``repr`` floats, ``.`` decimals and ``\\n`` line endings.
``wall_ms`` is left blank unless ``--timing`` is given, so that two runs with
the same inputs write byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time

import numpy as np

from . import dual, orchestrator
from .scenario import ScenarioError, ScenarioFile, generate_default, sanity_warnings, validate

EXIT_OK = 0
EXIT_MAX_ITERS = 2
EXIT_INFEASIBLE = 3
EXIT_USAGE = 64

TRACE_HEADER = ("k", "D_mu", "D_ap", "eta", "step_type", "balance_residual", "dist_to_reference_mu",
                "msgs_cumulative", "wall_ms")

EXIT_FOR = {orchestrator.CONVERGED: EXIT_OK, orchestrator.MAX_ITERATIONS: EXIT_MAX_ITERS,
            orchestrator.INFEASIBLE: EXIT_INFEASIBLE}

logger = logging.getLogger("drmarket")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _rho(text: str):
    if text == "auto":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--epsilon", type=float, default=1e-3, help="stop when eta < epsilon (default 1e-3)")
    p.add_argument("--rho", type=_rho, default=None,
                   help="proximal weight for the bundle method, or 'auto' (default)")
    p.add_argument("--initial-step", type=float, default=3.0,
                   help="target length of the first bundle step when rho is auto")
    p.add_argument("--beta", type=float, default=0.5, help="ascent-test fraction in (0, 1)")
    p.add_argument("--mu-box", type=float, nargs=2, metavar=("LO", "HI"), default=(-50.0, 50.0),
                   help="multiplier box for cpm and subgradient (default -50 50)")
    p.add_argument("--no-mu-box", action="store_true", help="drop the multiplier box")
    p.add_argument("--alpha0", type=float, default=1.0, help="subgradient step alpha0/k")
    p.add_argument("--raw-subgradient", action="store_true",
                   help="step along g itself instead of g / max|g|")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--qp-tol", type=float, default=None,
                   help="QP tolerance (default epsilon / 1e5)")
    p.add_argument("--round-trip", action="store_true", help="serialize every message through JSON")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    p.add_argument("--progress", action="store_true", help="log each iteration to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drmarket", description="Distributed demand-response market clearing.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write the default 6-bus scenario")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--users", type=_nonneg_int, default=1000, help="users per aggregator")
    g.add_argument("--horizon", type=int, default=24)
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="run one dual method and write its trace")
    s.add_argument("--method", choices=dual.METHODS, default=dual.BUNDLE)
    _add_solver_flags(s)
    s.add_argument("--out", default="-", help="trace CSV path ('-' for stdout)")
    s.add_argument("--reference", help="result JSON whose mu_star fills dist_to_reference_mu")
    s.add_argument("--save-result", help="write mu_star and the summary as JSON")

    c = sub.add_parser("compare", help="run several methods on one scenario")
    c.add_argument("--methods", required=True, help="comma separated, at least two")
    _add_solver_flags(c)
    c.add_argument("--out", default="-", help="side-by-side CSV path ('-' for stdout)")
    c.add_argument("--summary", help="also write the summary table as CSV")
    return parser


def _config(args, method: str) -> dual.SolverConfig:
    qp_tol = args.qp_tol if args.qp_tol is not None else args.epsilon * 1e-5
    box = None if args.no_mu_box else tuple(args.mu_box)
    cfg = dual.SolverConfig(method=method, epsilon=args.epsilon, rho=args.rho, initial_step=args.initial_step,
                            beta=args.beta, mu_box=box, alpha0=args.alpha0,
                            normalize_step=not args.raw_subgradient, max_iters=args.max_iters,
                            qp_tol=qp_tol)
    errs = cfg.violations()
    if errs:
        raise UsageError("invalid solver configuration: " + "; ".join(errs))
    return cfg


def _load_scenario(path: str):
    try:
        scen = ScenarioFile.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read scenario {path}: {exc.strerror or exc}") from exc
    except ScenarioError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    errs = validate(scen)
    if errs:
        raise UsageError(f"{path}: invalid scenario: " + "; ".join(errs))
    for w in sanity_warnings(scen):
        logger.warning("%s", w)
    return scen


def _load_reference(path: str, shape) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        mu = np.asarray(d["mu_star"], dtype=float)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read reference result {path}: {exc}") from exc
    if mu.shape != tuple(shape):
        raise UsageError(f"reference mu_star has shape {mu.shape}, scenario needs {tuple(shape)}")
    return mu


def _open_out(path: str):
    if path == "-":
        return sys.stdout, False
    try:
        return open(path, "w", encoding="utf-8", newline=""), True
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _progress_sink(method):
    def sink(row):
        logger.info("%s k=%d D=%.10g eta=%s step=%s", method, row.k, row.dual_value,
                    "" if row.eta is None else f"{row.eta:.3g}", row.step_type)
    return sink


def _run(scen, cfg, args, sink=None):
    inst = scen.materialize()
    t0 = time.perf_counter()
    res = orchestrator.run(inst, cfg, round_trip=args.round_trip, sink=sink)
    return res, 1e3 * (time.perf_counter() - t0)


def _summary(res) -> str:
    return (f"method={res.method} iterations={res.iterations} final_D={res.final_dual!r} "
            f"termination={res.termination}")


def cmd_generate(args) -> int:
    scen = generate_default(seed=args.seed, users_per_aggregator=args.users, horizon=args.horizon)
    errs = validate(scen)
    if errs:
        for e in errs:
            print(f"drmarket generate: {e}", file=sys.stderr)
        return EXIT_USAGE
    for w in sanity_warnings(scen):
        print(f"drmarket generate: warning: {w}", file=sys.stderr)
    try:
        scen.save(args.out)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    total = sum(a.n_users for a in scen.aggregators)
    print(f"wrote {args.out}: {len(scen.aggregators)} aggregators, {total} users, seed {args.seed}")
    return EXIT_OK


def trace_rows(res, reference=None, timing: bool = False):
    """Yield CSV rows (as lists of strings) for one clearing run."""
    msgs = 0
    for row in res.trace:
        msgs += row.msgs_down + row.msgs_up
        dist = None if reference is None else float(np.linalg.norm(row.mu - reference))
        wall = float(sum(row.timings_ms.values())) if timing else None
        yield [_fmt(v) for v in (row.k, row.dual_value, row.d_ap, row.eta, row.step_type,
                                 row.balance_residual, dist, msgs, wall)]


def cmd_solve(args) -> int:
    cfg = _config(args, args.method)
    scen = _load_scenario(args.scenario)
    shape = (len(scen.aggregators), scen.horizon)
    reference = _load_reference(args.reference, shape) if args.reference else None
    res, _ = _run(scen, cfg, args, sink=_progress_sink(args.method) if args.progress else None)

    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        w.writerows(trace_rows(res, reference, args.timing))
    finally:
        if close:
            fh.close()
    if args.save_result:
        out = {"method": res.method, "termination": res.termination, "iterations": res.iterations,
               "final_dual": res.final_dual if math.isfinite(res.final_dual) else None,
               "aggregator_ids": [a.id for a in scen.aggregators],
               "mu_star": res.mu_star.tolist()}
        with open(args.save_result, "w", encoding="utf-8", newline="\n") as rf:
            rf.write(json.dumps(out, indent=2) + "\n")
    stream = sys.stderr if args.out == "-" else sys.stdout
    print(_summary(res), file=stream)
    if res.message:
        print(f"drmarket solve: {res.message}", file=sys.stderr)
    return EXIT_FOR[res.termination]


def cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if len(methods) < 2:
        raise UsageError("compare needs at least two methods")
    if len(set(methods)) != len(methods):
        raise UsageError("compare methods must be distinct")
    for m in methods:
        if m not in dual.METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(dual.METHODS)}")
    configs = {m: _config(args, m) for m in methods}
    scen = _load_scenario(args.scenario)

    results, walls = {}, {}
    failed = None
    for m in methods:  # sequential on purpose
        res, wall = _run(scen, configs[m], args, sink=_progress_sink(m) if args.progress else None)
        results[m], walls[m] = res, wall
        if res.termination == orchestrator.INFEASIBLE:
            failed = m
            break

    converged = [m for m in results if results[m].termination == orchestrator.CONVERGED]
    ref_method = max(converged, key=lambda m: results[m].final_dual) if converged else None
    mu_star = results[ref_method].mu_star if ref_method else None

    cols = ["k"]
    for m in results:
        cols += [f"{m}_D_mu", f"{m}_eta", f"{m}_step_type", f"{m}_dist_to_mu_star"]
    n_rows = max((len(r.trace) for r in results.values()), default=0)
    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        if ref_method is not None:
            fh.write(f"# dist_to_mu_star is measured against the final mu of the {ref_method} run\n")
        if failed:
            fh.write(f"# PARTIAL: the {failed} run failed; later methods were not run\n")
        w.writerow(cols)
        for i in range(n_rows):
            line = [str(i + 1)]
            for m, r in results.items():
                if i < len(r.trace):
                    row = r.trace[i]
                    dist = None if mu_star is None else float(np.linalg.norm(row.mu - mu_star))
                    line += [_fmt(row.dual_value), _fmt(row.eta), row.step_type, _fmt(dist)]
                else:
                    line += ["", "", "", ""]
            w.writerow(line)
    finally:
        if close:
            fh.close()

    base = methods[0]
    table = io.StringIO()
    sw = csv.writer(table, lineterminator="\n")
    sw.writerow(["method", "iterations", "termination", "final_D", f"iters_ratio_vs_{base}", "wall_ms"])
    for m, r in results.items():
        ratio = r.iterations / results[base].iterations if results[base].iterations else None
        sw.writerow([m, r.iterations, r.termination, _fmt(r.final_dual), _fmt(ratio),
                     _fmt(walls[m]) if args.timing else ""])
    stream = sys.stderr if args.out == "-" else sys.stdout
    print(table.getvalue(), end="", file=stream)
    if args.summary:
        with open(args.summary, "w", encoding="utf-8", newline="") as sf:
            sf.write(table.getvalue())
    if failed:
        print(f"drmarket compare: {failed} run failed: {results[failed].message}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or getattr(args, "progress", False)
                        else logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr)
    handler = {"generate": cmd_generate, "solve": cmd_solve, "compare": cmd_compare}[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"drmarket {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
