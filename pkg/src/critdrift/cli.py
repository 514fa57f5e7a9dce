"""Command-line front door: norm, field, solve, lab, report subcommands."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .grids import parse_domain, build_grid, radial_reduce
from .fields import write_table, VectorField
from .lorentz import (LorentzSpec, SmallScaleSpec, lorentz_quasinorm,
                      small_scale_quasinorm, INF)
from .drifts import parse_field_spec
from .solver import assemble, solve, continuation_solve, WeakData, \
    NearSingular, sobolev_norm
from .reports import RunConfig, ExperimentReport, EXPERIMENTS, run, emit_plotdata


def _make_grid(args):
    dom = parse_domain(args.domain)
    if getattr(args, "radial", False):
        return radial_reduce(dom, args.h)
    return build_grid(dom, args.h)


def _cmd_norm(args) -> int:
    grid = _make_grid(args)
    f = parse_field_spec(args.field, grid, kind=args.kind)
    mag = f.magnitude() if isinstance(f, VectorField) else f
    print("field_id,p,q,r,value")
    q = INF if args.q in ("inf", None) else float(args.q)
    if args.r is not None:
        val = small_scale_quasinorm(mag, SmallScaleSpec(args.p, args.r,
                                                        variant=args.variant))
        print(f"{f.field_id},{args.p:g},inf,{args.r:g},{val:.12g}")
    else:
        val = lorentz_quasinorm(mag, LorentzSpec(args.p, q))
        qtxt = "inf" if q == INF else f"{q:g}"
        print(f"{f.field_id},{args.p:g},{qtxt},,{val:.12g}")
    return 0


def _cmd_field(args) -> int:
    grid = _make_grid(args)
    f = parse_field_spec(args.field, grid, kind=args.kind)
    write_table(f, args.out)
    print(f"wrote {args.out} ({grid.n_nodes} nodes)")
    return 0


def _cmd_solve(args) -> int:
    grid = _make_grid(args)
    b = parse_field_spec(args.field, grid, kind="vector")
    c = parse_field_spec(args.c, grid, kind="scalar")
    f = parse_field_spec(args.rhs, grid, kind="scalar")
    data = WeakData(volume=f)
    record = {"params": {"kind": args.kind_op, "domain": args.domain,
                         "field": args.field, "rhs": args.rhs, "h": args.h,
                         "lam": args.lam, "steps": args.steps}}
    try:
        if args.steps > 1:
            rep = continuation_solve(grid, b, c, data, steps=args.steps,
                                     kind=args.kind_op)
        else:
            op = assemble(args.kind_op, grid, b=b, c=c, lam=args.lam)
            rep = solve(op, data)
        record.update(residual=rep.residual_norm,
                      sigma_min=rep.smallest_singular_estimate,
                      near_singular=rep.near_singular,
                      norms={"sup": float(np.max(np.abs(rep.solution.values))),
                             "W12": sobolev_norm(rep.solution, 2.0, 1)})
        if args.out_field:
            write_table(rep.solution, args.out_field)
        status = 0
    except NearSingular as exc:
        record.update(residual=exc.report.residual_norm,
                      sigma_min=exc.report.smallest_singular_estimate,
                      near_singular=True, lam_at=exc.lam)
        status = 0  # a signal, not a failure
    print(json.dumps(record, indent=2, default=str))
    return status


def _cmd_lab(args) -> int:
    if args.config:
        cfg = RunConfig.from_yaml(args.config)
        cfg.experiment = args.experiment or cfg.experiment
    else:
        cfg = RunConfig(experiment=args.experiment)
    if args.out:
        cfg.output_dir = args.out
    cfg.with_overrides(args.set or [])
    report = run(cfg)
    print(f"experiment={report.experiment} overall={report.overall}")
    for name, verdict in report.verdicts.items():
        print(f"  {name}: {verdict}")
    return 2 if report.overall == "counterexample" else 0


def _cmd_report(args) -> int:
    report = ExperimentReport.read(args.dir, args.experiment)
    path = emit_plotdata(report, args.dir)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="critdrift",
        description="Numerical lab for drift-diffusion problems with "
                    "critical weak-Lorentz drifts.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--domain", default="ball:R=1")
    common.add_argument("--h", type=float, default=1 / 16)
    common.add_argument("--radial", action="store_true",
                        help="use the 1-d radial reduction")

    p = sub.add_parser("norm", parents=[common],
                       help="Lorentz / small-scale quasi-norms of a field")
    p.add_argument("--field", default="zero")
    p.add_argument("--kind", choices=("vector", "scalar"), default="vector")
    p.add_argument("--p", type=float, default=3.0)
    p.add_argument("--q", default="inf")
    p.add_argument("--r", type=float, default=None,
                   help="localization radius for the small-scale norm")
    p.add_argument("--variant", choices=("ball", "cube"), default="ball")
    p.set_defaults(func=_cmd_norm)

    p = sub.add_parser("field", parents=[common],
                       help="serialize a named field to the table format")
    p.add_argument("--field", required=True)
    p.add_argument("--kind", choices=("vector", "scalar"), default="vector")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_field)

    p = sub.add_parser("solve", parents=[common],
                       help="solve the primal or dual problem")
    p.add_argument("--kind", dest="kind_op", choices=("primal", "dual"),
                   default="dual")
    p.add_argument("--field", default="zero", help="drift field spec")
    p.add_argument("--c", default="zero", help="potential coefficient spec")
    p.add_argument("--rhs", default="zero")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=1,
                   help="method-of-continuity steps (1 = direct)")
    p.add_argument("--out-field", default=None)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("lab", help="run an estimate-verification experiment")
    p.add_argument("experiment", nargs="?", default=None,
                   choices=[None, *sorted(EXPERIMENTS)])
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override config values (CLI wins over file)")
    p.set_defaults(func=_cmd_lab)

    p = sub.add_parser("report", help="emit plot data from a stored report")
    p.add_argument("experiment")
    p.add_argument("--dir", default="out")
    p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
