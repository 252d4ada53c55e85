"""Command-line front end.

Every subcommand writes one report, JSON (default) or CSV, to stdout or to
``--output``.  Exit codes: 0 success, 1 solver did not meet its tolerance
(the report is still written), 2 usage error, 3 internal invariant failure.

Reports contain no wall-clock data unless ``--timing`` is given, so repeated
runs of the same invocation produce byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .capacity_solver import (
    CondenserProblem,
    capacity_profile,
    hyperbolicity_probe,
    solve_condenser,
)
from .commutative_models import (
    block_covering,
    build_cell_set,
    build_grid_model,
    certificate_check,
    covering_value,
    load_cells,
    scaling_study,
)
from .graph_core import GradientCombiner, cayley_ball, load_graph, parse_group
from .matrix_modulus import (
    DEFAULT_MAX_DIM,
    PreconditionError,
    ProjectionPair,
    solve_modulus,
    transfer_compare,
    truncated_shift_tuple,
)
from .subgradient import STEP_RULES, SolverOptions
from .symmetric_gauge import evaluate_norm, parse_phi

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_USAGE = 2
EXIT_INVARIANT = 3


class UsageError(Exception):
    pass


class InvariantFailure(Exception):
    pass


# --------------------------------------------------------------------------
# argument types


def _phi_arg(text: str):
    try:
        return parse_phi(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _combiner_arg(text: str):
    try:
        return GradientCombiner.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _group_arg(text: str):
    try:
        return parse_group(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> list[int]:
    """``"1..6"`` (inclusive range) or ``"1,2,4"``."""
    t = text.strip()
    try:
        if ".." in t:
            lo, hi = t.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty range {text!r}")
            return list(range(lo, hi + 1))
        return [int(v) for v in t.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list like '1..6' or '1,2,4', got {text!r}") from None


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("expected a nonnegative integer")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("expected a positive finite number")
    return v


# --------------------------------------------------------------------------
# parser


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
    p.add_argument("--output", help="write the report here instead of stdout")
    p.add_argument("--seed", type=int, default=0, help="seed recorded in the report (default 0)")
    p.add_argument("--timing", action="store_true", help="include wall-clock timing in JSON reports")


def _add_solver(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=_nonneg_int, default=SolverOptions.max_iters)
    p.add_argument("--tol", type=_positive_float, default=SolverOptions.tol)
    p.add_argument("--step-rule", choices=STEP_RULES, default=SolverOptions.step_rule)


def _add_graph(p: argparse.ArgumentParser, sink: bool = True) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--group", type=_group_arg, help="group spec, e.g. z:1, z:2, free:2")
    src.add_argument("--graph", help="graph file")
    p.add_argument("--radius", type=_nonneg_int, help="ball radius (with --group)")
    p.add_argument("--source", action="append",
                   help="source vertex label; repeat or separate with ';' (default: identity)")
    if sink:
        p.add_argument("--sink", action="append", help="sink vertex label; repeat or separate with ';'")
    p.add_argument("--phi", type=_phi_arg, default=parse_phi("l2"),
                   help="norming function: l1, l2, lp:<p>, lorentz:<p>, weights:<w1,...>")


def _add_shape(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--shape", help="cube:<n>, interval, cantor or carpet")
    src.add_argument("--cells", help="cell-set file")
    p.add_argument("--level", type=_nonneg_int, help="resolution level (with --shape)")
    p.add_argument("--weights", choices=("lebesgue", "equal"), default="lebesgue")
    p.add_argument("--phi", type=_phi_arg, default=parse_phi("l1"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlcap",
        description="Nonlinear condenser capacities on graphs, operator tuples and cell sets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("cap-graph", help="condenser capacity on a Cayley ball or graph file")
    _add_graph(p)
    p.add_argument("--combiner", type=_combiner_arg, default=GradientCombiner.MAX_THEN_NORM)
    _add_solver(p)
    _add_output(p)

    p = sub.add_parser("cap-profile", help="capacity of a source set over increasing radii")
    p.add_argument("--group", type=_group_arg, required=True)
    p.add_argument("--radii", type=_int_list, required=True, help="e.g. 1..6 or 1,2,4")
    p.add_argument("--source", action="append")
    p.add_argument("--phi", type=_phi_arg, default=parse_phi("l2"))
    p.add_argument("--combiner", type=_combiner_arg, default=GradientCombiner.MAX_THEN_NORM)
    _add_solver(p)
    _add_output(p)

    p = sub.add_parser("probe", help="heuristic p-hyperbolicity verdict from the singleton profile")
    p.add_argument("--group", type=_group_arg, required=True)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--rmax", type=_nonneg_int, default=6)
    p.add_argument("--combiner", type=_combiner_arg, default=GradientCombiner.MAX_THEN_NORM)
    _add_solver(p)
    _add_output(p)

    p = sub.add_parser("modulus", help="condenser modulus of the truncated shift tuple")
    _add_graph(p)
    p.add_argument("--max-dim", type=_nonneg_int, default=DEFAULT_MAX_DIM)
    _add_solver(p)
    _add_output(p)

    p = sub.add_parser("transfer", help="graph capacity against matrix modulus on matched data")
    _add_graph(p)
    p.add_argument("--max-dim", type=_nonneg_int, default=DEFAULT_MAX_DIM)
    _add_solver(p)
    _add_output(p)

    p = sub.add_parser("cover", help="covering-functional upper bound for a cell set")
    _add_shape(p)
    p.add_argument("--eps", type=_positive_float, required=True)
    p.add_argument("--strategy", choices=("dyadic", "triadic", "greedy"), default="dyadic")
    _add_output(p)

    p = sub.add_parser("certify", help="projection certificate for a covering")
    _add_shape(p)
    p.add_argument("--eps", type=_positive_float, required=True)
    p.add_argument("--parts", type=_nonneg_int,
                   help="blocks per axis (a power of the cell base); default: best dyadic covering")
    p.add_argument("--strategy", choices=("dyadic", "triadic", "greedy"), default="dyadic")
    _add_output(p)

    p = sub.add_parser("scale", help="covering values and certificates across levels")
    p.add_argument("--shape", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--levels", type=_int_list, required=True)
    p.add_argument("--phi-kind", choices=("lorentz", "lp"), default="lorentz")
    p.add_argument("--refine", type=_nonneg_int, default=1)
    _add_output(p)
    return parser


# --------------------------------------------------------------------------
# helpers


def _labels(values: Optional[list], default: Sequence[str]) -> list[str]:
    if not values:
        return list(default)
    out = []
    for v in values:
        out.extend(s.strip() for s in v.split(";") if s.strip())
    return out


def _options(args) -> SolverOptions:
    return SolverOptions(max_iters=args.max_iters, step_rule=args.step_rule, tol=args.tol, seed=args.seed)


def _build_graph(args):
    """Return the graph and source/sink index arrays."""
    if args.group is not None:
        if args.radius is None:
            raise UsageError("--radius is required with --group")
        grp = args.group
        g = cayley_ball(grp, args.radius)

        def resolve(text):
            try:
                return grp.label(grp.parse_element(text))
            except ValueError as exc:
                raise UsageError(str(exc)) from None

        src = [resolve(s) for s in _labels(args.source, ["e"])]
        snk = [resolve(s) for s in _labels(getattr(args, "sink", None), [])]
    else:
        if args.radius is not None:
            raise UsageError("--radius applies only with --group")
        try:
            with open(args.graph, encoding="utf-8") as fh:
                g = load_graph(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read graph file: {exc}") from None
        src = _labels(args.source, [])
        if not src:
            raise UsageError("--source is required with --graph")
        snk = _labels(getattr(args, "sink", None), [])
    try:
        s_idx = g.indices(src)
        t_idx = g.indices(snk)
    except KeyError as exc:
        raise UsageError(f"{exc.args[0]} (vertex not in the graph)") from None
    if set(s_idx.tolist()) & set(t_idx.tolist()):
        raise UsageError("source and sink sets must be disjoint")
    if np.any(g.halo[s_idx]):
        raise UsageError("source vertices must lie in the interior (not the halo)")
    return g, s_idx, t_idx


def _build_cells(args):
    if args.shape is not None:
        if args.level is None:
            raise UsageError("--level is required with --shape")
        return build_cell_set(args.shape, args.level, weights=args.weights)
    if args.level is not None:
        raise UsageError("--level applies only with --shape")
    try:
        with open(args.cells, encoding="utf-8") as fh:
            return load_cells(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read cell file: {exc}") from None


def _report_solve(rep) -> dict:
    return {
        "value": rep.value,
        "iterations": rep.iterations,
        "tolerance_met": rep.tolerance_met,
        "feasibility_residual": rep.feasibility_residual,
    }


def _invocation(args, argv: Sequence[str]) -> dict:
    opts = {}
    for k, v in sorted(vars(args).items()):
        if k in ("command",):
            continue
        if isinstance(v, GradientCombiner):
            v = v.value
        elif v is not None and not isinstance(v, (int, float, str, bool, list)):
            v = str(v)
        opts[k] = v
    return {"command": args.command, "argv": list(argv), "options": opts}


# --------------------------------------------------------------------------
# subcommands; each returns (results dict, csv rows, converged)


def _cmd_cap_graph(args):
    g, s, t = _build_graph(args)
    problem = CondenserProblem(g, s, t, args.phi, args.combiner)
    rep = solve_condenser(problem, _options(args))
    res = {"n_vertices": g.n_vertices, "phi": str(args.phi), "combiner": args.combiner.value}
    res.update(_report_solve(rep))
    return res, [res], rep.tolerance_met


def _cmd_cap_profile(args):
    src = _labels(args.source, ["e"])
    try:
        pts = capacity_profile(args.group, src, args.phi, args.combiner, args.radii, _options(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [{"R": q.radius, "value": q.value} for q in pts]
    res = {
        "phi": str(args.phi),
        "combiner": args.combiner.value,
        "profile": [dict(r, iterations=q.report.iterations, tolerance_met=q.report.tolerance_met)
                    for r, q in zip(rows, pts)],
    }
    return res, rows, all(q.report.tolerance_met for q in pts)


def _cmd_probe(args):
    try:
        pr = hyperbolicity_probe(args.group, args.p, args.rmax, args.combiner, _options(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [{"R": r, "value": v} for r, v in pr.profile]
    res = {"p": args.p, "profile": rows, "verdict": pr.verdict, "fit": pr.fit}
    return res, rows, True


def _cmd_modulus(args):
    g, s, t = _build_graph(args)
    tau = truncated_shift_tuple(g)
    pq = ProjectionPair.from_coordinates(g.n_vertices, s, np.union1d(t, g.halo_indices))
    opts = _options(args)
    graph = solve_condenser(CondenserProblem(g, s, t, args.phi, GradientCombiner.MAX_THEN_NORM), opts)
    try:
        rep = solve_modulus(tau, pq, args.phi, opts, initial=np.diag(graph.minimizer),
                            max_dim=args.max_dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if rep.feasibility_residual > 1e-10:
        raise InvariantFailure(f"modulus minimizer infeasible (residual {rep.feasibility_residual:.3g})")
    res = {"dim": tau.dim, "phi": str(args.phi)}
    res.update(_report_solve(rep))
    return res, [res], rep.tolerance_met


def _cmd_transfer(args):
    g, s, t = _build_graph(args)
    try:
        tr = transfer_compare(g, s, t, args.phi, _options(args), max_dim=args.max_dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = {
        "phi": str(args.phi),
        "cap_graph": tr.cap_graph,
        "k_matrix": tr.k_matrix,
        "gap": tr.gap,
        "relative_gap": tr.relative_gap,
        "embedding_ok": tr.embedding_ok,
        "compression_ok": tr.compression_ok,
        "diag_roundtrip_ok": tr.diag_roundtrip_ok,
    }
    if not tr.diag_roundtrip_ok:
        raise InvariantFailure("transfer sandwich check failed", res)
    ok = tr.graph_report.tolerance_met and tr.matrix_report.tolerance_met
    return res, [res], ok


def _cmd_cover(args):
    e = _build_cells(args)
    try:
        cr = covering_value(e, args.eps, args.phi, args.strategy)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = {
        "phi": str(args.phi),
        "eps": args.eps,
        "value": cr.value,
        "strategy": cr.strategy,
        "block_level": cr.block_level,
        "n_parts": cr.covering.n_parts,
        "max_radius": float(cr.covering.radii.max()),
        "n_cells": len(e),
    }
    return res, [res], True


def _cmd_certify(args):
    e = _build_cells(args)
    try:
        if args.parts is not None:
            k = round(math.log(args.parts) / math.log(e.base)) if args.parts > 0 else -1
            if k < 0 or e.base ** k != args.parts or k > e.level:
                raise UsageError(f"--parts must be a power of {e.base} not exceeding {e.base ** e.level}")
            cov = block_covering(e, k)
        else:
            cov = covering_value(e, args.eps, args.phi, args.strategy).covering
        cert = certificate_check(build_grid_model(e), cov, args.phi, args.eps)
    except PreconditionError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = {
        "phi": str(args.phi),
        "eps": args.eps,
        "n_parts": cov.n_parts,
        "covering_value": evaluate_norm(args.phi, cov.radii),
        "lhs_ideal": cert.lhs_ideal,
        "rhs_ideal": cert.rhs_ideal,
        "lhs_op": cert.lhs_op,
        "rhs_op": cert.rhs_op,
        "ok": cert.ok,
    }
    if not cert.ok:
        raise InvariantFailure("certificate inequality violated", res)
    return res, [res], True


def _cmd_scale(args):
    try:
        st = scaling_study(args.shape, args.p, args.levels, args.phi_kind, refine=args.refine)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [
        {
            "level": r.level,
            "eps": r.eps,
            "covering_value": r.covering_value,
            "lhs_ideal": r.lhs_ideal,
            "rhs_ideal": r.rhs_ideal,
            "certificate_ok": r.certificate_ok,
        }
        for r in st.rows
    ]
    res = {
        "shape": st.shape,
        "phi": str(st.phi),
        "dimension": st.dimension,
        "expected": st.expected,
        "band_ratio": st.band_ratio,
        "trend_ok": st.trend_ok,
        "rows": rows,
    }
    if not all(r.certificate_ok for r in st.rows):
        raise InvariantFailure("certificate inequality violated", res)
    return res, rows, True


COMMANDS = {
    "cap-graph": _cmd_cap_graph,
    "cap-profile": _cmd_cap_profile,
    "probe": _cmd_probe,
    "modulus": _cmd_modulus,
    "transfer": _cmd_transfer,
    "cover": _cmd_cover,
    "certify": _cmd_certify,
    "scale": _cmd_scale,
}


# --------------------------------------------------------------------------
# output


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        fields = list(rows[0])
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_cell(v) for k, v in r.items()})
    return buf.getvalue()


def _csv_cell(v):
    v = _plain(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    start = time.perf_counter()
    code = EXIT_OK
    try:
        results, rows, converged = COMMANDS[args.command](args)
        if not converged:
            code = EXIT_NOT_CONVERGED
    except UsageError as exc:
        sys.stderr.write(f"nlcap {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except InvariantFailure as exc:
        sys.stderr.write(f"nlcap {args.command}: invariant failure: {exc.args[0]}\n")
        results = exc.args[1] if len(exc.args) > 1 else {}
        rows = [results] if results else []
        code = EXIT_INVARIANT
    except (AssertionError, FloatingPointError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"nlcap {args.command}: internal failure: {exc}\n")
        return EXIT_INVARIANT
    except ValueError as exc:
        # rejected inputs surfacing from the library (bad files, vertex sets, shapes)
        sys.stderr.write(f"nlcap {args.command}: error: {exc}\n")
        return EXIT_USAGE
    elapsed = time.perf_counter() - start
    if args.format == "csv":
        text = _csv_text(rows)
    else:
        report = {
            "schema": SCHEMA_VERSION,
            "invocation": _invocation(args, argv),
            "results": results,
            "timing": {"wall_seconds": elapsed} if args.timing else None,
            "version": __version__,
            "seed": args.seed,
        }
        text = json.dumps(_plain(report), indent=2) + "\n"
    _emit(text, args.output)
    return code


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
