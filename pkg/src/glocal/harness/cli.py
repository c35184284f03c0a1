"""Command line front end.

Subcommands::

    glocal run CONFIG [--out DIR] [--plots] [--threads N] [--dump] [--cache DIR]
    glocal orders CSV
    glocal cellprobe CONFIG --at X Y
    glocal mesh-info CONFIG --level I
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from glocal.errors import convergence_orders
from glocal.exceptions import GlocalError
from glocal.harness.config import load_config
from glocal.harness.examples import coefficients
from glocal.harness.output import emit_outputs, read_csv_columns
from glocal.harness.runner import COLUMNS, level_mesh, run_experiment
from glocal.homogenize import CellProblemSpec, default_policy, solve_cell_problem
from glocal.mesh import Region, validate_mesh


def cmd_run(args):
    config = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    cache = args.cache or os.path.join(args.out, "cache")
    dump = os.path.join(args.out, "dump") if args.dump else None
    report = run_experiment(config, cache_dir=cache, threads=args.threads, dump_dir=dump)
    csv_path = os.path.join(args.out, f"{config.name}.csv")
    svg_path = os.path.join(args.out, f"{config.name}.svg") if args.plots else None
    sys.stdout.write(emit_outputs(report, csv_path, svg_path))
    for lv in report.levels:
        if not lv.ok:
            print(f"level {lv.level} failed: {lv.failure}", file=sys.stderr)
        for w in lv.warnings:
            print(f"level {lv.level} warning: {w}", file=sys.stderr)
    return 0 if report.complete else 1


def cmd_orders(args):
    rows = read_csv_columns(args.csv)
    print("column         " + "  ".join(f"{r['param']:>10}" for r in rows))
    for c in COLUMNS:
        pairs = [(float(r["param"]), float(r[c])) for r in rows if r[c]]
        if len(pairs) < 2:
            continue
        orders = convergence_orders(pairs).orders
        print(f"{c:<14} " + "  ".join([" " * 10] + [f"{o:>10.4f}" for o in orders]))
    return 0


def cmd_cellprobe(args):
    config = load_config(args.config)
    micro, analytic = coefficients(config)
    eff = config.effective
    policy = default_policy(micro, periodic=(eff.bc or "periodic") == "periodic",
                            delta=eff.delta, cell_n=eff.cell_n)
    spec = CellProblemSpec((args.at[0], args.at[1]), policy.delta, policy.bc, policy.cell_n)
    A = solve_cell_problem(spec, micro)
    np.set_printoptions(precision=8, suppress=True)
    print(f"cell: center={spec.center} delta={spec.delta} bc={spec.bc} cell_n={spec.cell_n}")
    print("A_H =")
    print(A)
    if analytic is not None:
        ref = analytic(np.array(args.at))
        print("A =")
        print(ref)
        rel = np.linalg.norm(A - ref, 2) / np.linalg.norm(ref, 2)
        print(f"relative spectral deviation: {rel:.3e}")
    return 0


def cmd_mesh_info(args):
    config = load_config(args.config)
    levels = config.levels()
    if not 0 <= args.level < len(levels):
        print(f"level must lie in [0, {len(levels) - 1}]", file=sys.stderr)
        return 2
    H, h = levels[args.level]
    mesh = level_mesh(config, H, h)
    stats = mesh.size_stats()
    print(f"level {args.level}: H={H:.6g} h={h:.6g}")
    print(f"vertices {mesh.nv}  elements {mesh.ne}")
    for r in Region:
        print(f"{r.name.lower():<9} {int(mesh.region_mask(r).sum())}")
    for k, v in stats.items():
        print(f"{k:<9} {v:.6g}")
    problems = validate_mesh(mesh)
    print("valid" if not problems else "problems: " + "; ".join(problems))
    for w in mesh.warnings:
        print(f"warning: {w}")
    return 0 if not problems else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="glocal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a convergence sweep")
    run.add_argument("config")
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--plots", action="store_true", help="also write an SVG plot")
    run.add_argument("--threads", type=int, default=1, help="levels solved concurrently")
    run.add_argument("--dump", action="store_true", help="write per-step trajectories")
    run.add_argument("--cache", default=None, help="reference cache directory")
    run.set_defaults(func=cmd_run)

    orders = sub.add_parser("orders", help="recompute order columns of a CSV table")
    orders.add_argument("csv")
    orders.set_defaults(func=cmd_orders)

    probe = sub.add_parser("cellprobe", help="solve one cell problem")
    probe.add_argument("config")
    probe.add_argument("--at", nargs=2, type=float, required=True, metavar=("X", "Y"))
    probe.set_defaults(func=cmd_cellprobe)

    info = sub.add_parser("mesh-info", help="describe the mesh of one sweep level")
    info.add_argument("config")
    info.add_argument("--level", type=int, default=0)
    info.set_defaults(func=cmd_mesh_info)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GlocalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
