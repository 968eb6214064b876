"""Command-line entry point.

Exit codes: 0 on success (an INDETERMINATE verdict is a successful answer),
2 for usage and parse errors, 3 for validation and runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from fractions import Fraction

import numpy as np

from . import __version__, edl
from .born import (
    BornIndeterminate,
    MultiTimeQuery,
    QueryError,
    chained_two_time,
    classify,
    describe_query,
    evaluate,
    resolve_outcome,
)
from .guidance import GuidanceConfig, Grid1D, SeparationError, run_guidance
from .hilbert import DenseUnitary, LayoutError, PermutationUnitary
from .lab import SCENARIOS, ScheduleError, Timeline, builtin_scenario, evolve
from .trajectories import (
    DynamicsRule,
    RuleInapplicable,
    equivariance_report,
    exact_permutation_joint,
    multi_time_joint,
    run_ensemble,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
DEFAULT_TRAJECTORIES = 100_000
DEFAULT_GUIDANCE_TRAJECTORIES = 10_000


class UsageError(Exception):
    pass


def _time(t) -> str | None:
    return None if t is None else str(t)


def standard_queries(timeline: Timeline) -> list[MultiTimeQuery]:
    """P(A1), P(B1) and P(A1 & B1), each read while the record exists."""
    a = resolve_outcome(timeline, "A", "A1", Fraction(3, 2))
    b = resolve_outcome(timeline, "B", "B1", Fraction(7, 2))
    return [MultiTimeQuery.of(a), MultiTimeQuery.of(b), MultiTimeQuery.of(a, b)]


def born_section(timeline: Timeline, queries) -> list[dict]:
    rows = []
    for q in queries:
        row = {"query": describe_query(q, timeline), "status": "value", "value": None, "reason": None}
        try:
            row["value"] = evaluate(q, timeline)
            row["time"] = _time(classify(q, timeline).time)
        except BornIndeterminate as exc:
            v = exc.verdict
            row.update(
                status="indeterminate",
                reason=v.reason,
                detail={
                    "erased_event": v.erased_event,
                    "erased_at": _time(v.erased_at),
                    "erased_by": v.erased_by,
                    "blocking_event": v.blocking_event,
                    "blocking_birth": _time(v.blocking_birth),
                },
            )
        rows.append(row)
    return rows


def chained_section(timeline: Timeline, queries) -> list[dict]:
    rows = []
    for q in queries:
        c = chained_two_time(q, timeline)
        rows.append({"query": describe_query(q, timeline), "value": c.value, "max_offdiagonal": c.max_offdiagonal})
    return rows


def dynamics_section(timeline: Timeline, queries, rule: DynamicsRule, n: int, seed: int) -> dict:
    ens = run_ensemble(timeline, rule, n, seed)
    estimates = []
    for q in queries:
        est = multi_time_joint(ens, q, timeline)
        row = {"query": describe_query(q, timeline), "value": est.value, "stderr": est.stderr}
        if rule is DynamicsRule.PERMUTATION:
            row["exact"] = exact_permutation_joint(timeline, q)
        estimates.append(row)
    fits = [
        {
            "epoch": f.epoch,
            "start": _time(f.start),
            "chi2": f.chi2,
            "dof": f.dof,
            "p_value": f.p_value,
            "passed": f.passed(1e-3),
        }
        for f in equivariance_report(ens, timeline)
    ]
    return {"rule": rule.value, "n": n, "seed": seed, "estimates": estimates, "equivariance": fits}


def _report(scenario: str, args) -> dict:
    rep = {"scenario": scenario, "queries": [], "dynamics": None, "guidance": None, "version": __version__}
    if not getattr(args, "no_timestamp", False):
        rep["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return rep


def _lab_report(scenario: str, timeline: Timeline, queries, args) -> dict:
    rep = _report(scenario, args)
    if args.born or not args.dynamics:
        rep["queries"] = born_section(timeline, queries)
    if args.chained:
        rep["chained"] = chained_section(timeline, queries)
    if args.dynamics:
        n = args.trajectories or DEFAULT_TRAJECTORIES
        rep["dynamics"] = dynamics_section(timeline, queries, DynamicsRule(args.dynamics), n, args.seed)
    return rep


def _check_lab_flags(args) -> None:
    if args.trajectories is not None and not args.dynamics:
        raise UsageError("-n/--trajectories needs --dynamics")
    if args.trajectories is not None and args.trajectories < 1:
        raise UsageError("-n/--trajectories must be positive")


def cmd_scenario(args) -> dict:
    _check_lab_flags(args)
    if args.name not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.name!r}; choose from {', '.join(SCENARIOS)}")
    tl = evolve(builtin_scenario(args.name))
    return _lab_report(args.name, tl, standard_queries(tl), args)


def _load_unitary(spec: str):
    name, sep, path = spec.partition("=")
    if not sep:
        raise UsageError(f"--unitary expects NAME=PATH, got {spec!r}")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    targets, dims = data["targets"], data["dims"]
    if "permutation" in data:
        return name, PermutationUnitary(targets, dims, data["permutation"])
    m = np.array(data["matrix"], dtype=float)
    return name, DenseUnitary(targets, dims, m[..., 0] + 1j * m[..., 1])


def cmd_run(args) -> dict:
    _check_lab_flags(args)
    unitaries = dict(_load_unitary(s) for s in args.unitary)
    try:
        with open(args.path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {args.path}: {exc.strerror}") from None
    exp = edl.validate(edl.parse(text), unitaries)
    tl = evolve(exp.schedule)
    return _lab_report(str(args.path), tl, exp.queries, args)


def cmd_guidance(args) -> dict:
    grid = Grid1D(args.x_min, args.x_max, args.grid_n)
    cfg = GuidanceConfig(
        grid=grid,
        centers=tuple(args.centers),
        sigma=args.sigma,
        weights=tuple(args.weights),
        total_time=args.time,
        steps=args.steps,
        store_every=args.store_every,
    )
    run = run_guidance(cfg, args.trajectories, args.seed)
    if args.csv:
        _write_csv(args.csv, run)
    rep = _report("guidance", args)
    rep["guidance"] = run.summary
    return rep


def _write_csv(path, run) -> None:
    tr = run.trajectories
    box = tr.box
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "t", "x", "box"])
        for k in range(tr.n):
            for i, t in enumerate(tr.times):
                w.writerow([k, repr(float(t)), repr(float(tr.x[i, k])), int(box[i, k])])


def cmd_parse(args) -> int:
    try:
        with open(args.path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {args.path}: {exc.strerror}") from None
    doc = edl.parse(text)
    if args.format:
        sys.stdout.write(edl.format(doc))
    else:
        print(
            f"{args.path}: ok ({len(doc.declarations)} declarations, {len(doc.events)} events, "
            f"{len(doc.queries)} queries)"
        )
    return EXIT_OK


def render(rep: dict) -> str:
    """Human-readable tables; probabilities to 6 decimals."""
    out = [f"scenario: {rep['scenario']}   (version {rep['version']})"]
    if rep["queries"]:
        width = max(len(r["query"]) for r in rep["queries"]) + 2
        out.append("")
        out.append("Born rule")
        for r in rep["queries"]:
            if r["status"] == "value":
                out.append(f"  {r['query']:<{width}}{r['value']:.6f}")
            else:
                out.append(f"  {r['query']:<{width}}INDETERMINATE")
                out.append(f"  {'':<{width}}({r['reason']})")
    if rep.get("chained"):
        width = max(len(r["query"]) for r in rep["chained"]) + 2
        out.append("")
        out.append("Chained projections (beyond the record-based Born rule)")
        for r in rep["chained"]:
            out.append(f"  {r['query']:<{width}}{r['value']:.6f}   max off-diagonal {r['max_offdiagonal']:.3g}")
    dyn = rep.get("dynamics")
    if dyn:
        out.append("")
        out.append(f"Trajectories: rule={dyn['rule']} n={dyn['n']} seed={dyn['seed']}")
        width = max(len(r["query"]) for r in dyn["estimates"]) + 2
        for r in dyn["estimates"]:
            line = f"  {r['query']:<{width}}{r['value']:.6f} +/- {r['stderr']:.6f}"
            if "exact" in r:
                line += f"   (exact {r['exact']:.6f})"
            out.append(line)
        out.append("  equivariance (chi-square vs Born weights)")
        out.append(f"    {'epoch':<8}{'from t':<8}{'chi2':>12}{'dof':>6}{'p':>12}  ok")
        for f in dyn["equivariance"]:
            start = f["start"] if f["start"] is not None else "-inf"
            out.append(
                f"    {f['epoch']:<8}{start:<8}{f['chi2']:>12.4f}{f['dof']:>6}{f['p_value']:>12.6f}  "
                f"{'yes' if f['passed'] else 'NO'}"
            )
    g = rep.get("guidance")
    if g:
        out.append("")
        out.append(f"Guidance: n={g['n']} seed={g['seed']} T={g['total_time']} frames={g['frames']}")
        out.append(f"  P(box1) at start        {g['p_box1_start']:.6f} +/- {g['p_box1_stderr']:.6f}")
        out.append(f"  P(box1) throughout      {g['p_box1_throughout']:.6f}")
        out.append(f"  crossing fraction       {g['crossing_fraction']:.6f}")
        out.append(f"  KS vs |psi_T|^2         D={g['ks_statistic']:.6f} p={g['ks_pvalue']:.6f}")
        out.append(f"  KS two-sample           D={g['ks2_statistic']:.6f} p={g['ks2_pvalue']:.6f}")
        out.append(f"  norm drift              {g['norm_drift']:.3g}")
        out.append(f"  max packet overlap      {g['max_packet_overlap']:.3g}")
        out.append(f"  width error (relative)  {g['width_relative_error']:.3g}")
        out.append(f"  excluded (left grid)    {g['excluded']}")
    return "\n".join(out)


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--json", metavar="PATH", help="write the report as JSON")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp from the JSON report")
    p.add_argument("--seed", type=int, default=0)


def _add_lab_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--born", action="store_true", help="evaluate queries with the Born rule (default)")
    p.add_argument("--dynamics", choices=[r.value for r in DynamicsRule], help="run a trajectory ensemble")
    p.add_argument("--chained", action="store_true", help="also report chained-projection values")
    p.add_argument("-n", "--trajectories", type=int, default=None)
    p.add_argument("--csv", metavar="PATH", help=argparse.SUPPRESS)
    _add_output_flags(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bruq", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="run a built-in scenario")
    p.add_argument("name", help="version1 or version2")
    _add_lab_flags(p)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("run", help="run an .edl file")
    p.add_argument("path")
    p.add_argument("--unitary", action="append", default=[], metavar="NAME=PATH",
                   help="JSON unitary for 'at T unitary NAME' statements")
    _add_lab_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("guidance", help="1D Bohmian two-box demonstrator")
    p.add_argument("--centers", type=float, nargs="+", default=[-8.0, 8.0])
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--weights", type=float, nargs="+", default=[0.5, 0.5], help="Born weight per packet")
    p.add_argument("--time", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--store-every", type=int, default=5)
    p.add_argument("--grid-n", type=int, default=2048)
    p.add_argument("--x-min", type=float, default=-40.0)
    p.add_argument("--x-max", type=float, default=40.0)
    p.add_argument("-n", "--trajectories", type=int, default=DEFAULT_GUIDANCE_TRAJECTORIES)
    p.add_argument("--csv", metavar="PATH", help="write (trajectory, t, x, box) rows")
    _add_output_flags(p)
    p.set_defaults(func=cmd_guidance)

    p = sub.add_parser("parse", help="syntax-check an .edl file")
    p.add_argument("path")
    p.add_argument("--format", action="store_true", help="print the canonical form")
    p.set_defaults(func=cmd_parse)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command in ("scenario", "run") and args.csv:
            raise UsageError("--csv is only available for the guidance command")
        result = args.func(args)
        if isinstance(result, int):
            return result
        if args.json:
            with open(args.json, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(result, fh, indent=2)
                fh.write("\n")
        print(render(result))
        return EXIT_OK
    except UsageError as exc:
        print(f"bruq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except edl.ParseError as exc:
        print(f"{getattr(args, 'path', '<input>')}:{exc.line}:{exc.column}: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except edl.ValidationError as exc:
        print(f"{getattr(args, 'path', '<input>')}:{exc.line}:{exc.column}: {exc.message}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SeparationError, RuleInapplicable, QueryError, ScheduleError, LayoutError, ValueError) as exc:
        print(f"bruq: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
