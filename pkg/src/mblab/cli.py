"""Command line entry point.

    mblab run CONFIG
    mblab sweep CONFIG --axis beta --values 0,0.05,0.1
    mblab bound INSTANCE
    mblab plot A.csv B.csv --out fig.svg
    mblab export-lp CONFIG --episode-snapshot model.lp [--episode K]
"""
from __future__ import annotations

import argparse
import sys

from . import bounds, harness, optimizer, plotting
from .errors import MBLabError


def _cmd_run(args):
    res = harness.run_experiment(harness.load_config(args.config))
    if res.error:
        raise MBLabError(res.error)
    finals = res.final_cum_norm_regret
    print(f"wrote {res.csv_path}" + (f" and {res.plot_path}" if res.plot_path else ""))
    print(f"final cumulative normalized regret: mean {finals.mean():.4g} over {finals.size} run(s)")


def _cmd_sweep(args):
    values = [v for v in args.values.split(",") if v.strip()]
    results, summary = harness.run_sweep(harness.load_config(args.config), args.axis, values)
    for res in results:
        if res.error:
            raise MBLabError(res.error)
    for axis, value, seed, mean, _ in summary:
        print(f"{axis}={value} seed={seed} final_cum_norm_regret={mean}")


def _cmd_bound(args):
    inst = bounds.read_instance(args.instance)
    lb = bounds.lower_bound_weights(inst)
    opt = lb.lp.opt
    fmt = lambda a: "(" + ",".join(str(x + 1) for x in a) + ")"  # noqa: E731
    print(f"optimal value: {opt.best_value:.10g}")
    print("optimal assignments: " + " ".join(fmt(a) for a in opt.optimal))
    for i, sub in enumerate(opt.suboptimal):
        print(f"actor {i + 1} suboptimal actions: "
              + (",".join(str(j + 1) for j in sorted(sub)) or "none"))
    print(f"rho(w*): {lb.rho:.10g}")
    for a, w in sorted(lb.weights.items()):
        print(f"  w{fmt(a)} = {w:.10g}")
    consts = bounds.single_actor_constants(inst)
    print("single-actor constants: " + " ".join(f"{c:.10g}" for c in consts)
          + f" (sum {sum(consts):.10g})")
    if inst.n == 1:
        print(f"single-bandit bound: {bounds.lai_robbins_bound(inst):.10g}")


def _cmd_plot(args):
    print(f"wrote {plotting.emit_plot(args.csv, args.out)}")


def _cmd_export_lp(args):
    cfg = harness.load_config(args.config)
    table = harness.snapshot_table(cfg, args.episode)
    optimizer.export_lp(optimizer.AssignmentModel(table), args.episode_snapshot)
    N, n, k, H = optimizer.as_table(table).shape
    print(f"wrote {args.episode_snapshot} (N={N}, n={n}, k={k}, H={H})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mblab", description="Max-min multi-bandit experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run a configuration over one parameter axis")
    s.add_argument("config")
    s.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
    s.add_argument("--values", required=True, help="comma separated values")
    s.set_defaults(func=_cmd_sweep)

    b = sub.add_parser("bound", help="lower-bound constant of an explicit instance")
    b.add_argument("instance")
    b.set_defaults(func=_cmd_bound)

    pl = sub.add_parser("plot", help="cumulative normalized regret chart")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=_cmd_plot)

    e = sub.add_parser("export-lp", help="write the assignment program as an LP file")
    e.add_argument("config")
    e.add_argument("--episode-snapshot", required=True, metavar="FILE",
                   help="output LP file")
    e.add_argument("--episode", type=int, default=0,
                   help="policy table at this episode (0: offline ground-truth table)")
    e.set_defaults(func=_cmd_export_lp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (MBLabError, ValueError, OSError, IndexError) as exc:
        print(f"mblab: error: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
