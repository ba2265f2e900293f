"""Command line entry point: ``csmd-bench run|aggregate|schedule|selftest``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from ..multistage import build_schedule
from .aggregate import aggregate
from .config import ConfigError, load_config
from .output import AGGREGATE, emit_outputs, read_traces, write_aggregate
from .runner import build_model, run_experiment, setup_run
from .selftest import run_selftest


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("CSMD_THREADS", "1")))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.repetitions is not None:
        cfg = replace(cfg, repetitions=args.repetitions)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    outdir = args.out or cfg.output
    start = time.perf_counter()
    traces = run_experiment(cfg, threads=_threads(args))
    curves = aggregate(traces) if any(t.failed is None for t in traces) else []
    echo = dict(cfg.raw, repetitions=cfg.repetitions, base_seed=cfg.base_seed)
    emit_outputs(curves, traces, outdir, config=echo, wall_clock=time.perf_counter() - start)
    failed = sum(t.failed is not None for t in traces)
    print(f"{len(traces)} runs ({failed} failed) -> {outdir}")
    for c in curves:
        print(f"  {c.algorithm:<28} final median l1 error {c.median_l1[-1]:.4g}")
    return 0


def cmd_aggregate(args) -> int:
    traces = read_traces(args.dir)
    curves = aggregate(traces)
    outdir = Path(args.out or args.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_aggregate(curves, outdir)
    print(f"{len(curves)} curves -> {outdir / AGGREGATE}")
    return 0


def cmd_schedule(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    report = []
    for sigma in cfg.model.sigmas:
        model = build_model(cfg, sigma, 0)
        _, _, R0, params = setup_run(cfg, model)
        for alg in cfg.algorithms:
            if alg.kind != "csmd_sr":
                continue
            sched = build_schedule(params, model.s, R0, cfg.budget, alg.params["mode"],
                                   alg.schedule_constants())
            report.append({"algorithm": cfg.label(alg, sigma), "R0": R0,
                           "params": params.__dict__, "schedule": sched.as_dict()})
    if args.json:
        print(json.dumps(report, indent=2, default=str))
        return 0
    for r in report:
        s = r["schedule"]
        p = r["params"]
        print(f"{r['algorithm']}: mode={s['mode']} N={s['N']} R0={r['R0']:.4g}")
        print(f"  nu={p['nu']:.4g} sigma*={p['sigma_star']:.4g} rho={p['rho']:.4g} t={p['t']:.4g} "
              f"Theta={p['Theta']:.4g}")
        print(f"  m0={s['m0']} (theory {s['m0_theory']}) K1={s['K1_max']} r0={s['r0']:.4g}"
              f"{' skip-preliminary' if s['skip_preliminary'] else ''}")
        print(f"  {'k':>3} {'phase':<12} {'radius':>10} {'kappa':>10} {'gamma':>10} {'m':>8} {'L':>6}")
        for e in s["entries"]:
            flag = " truncated" if e["truncated"] else ""
            print(f"  {e['k']:>3} {e['phase']:<12} {e['radius']:>10.4g} {e['kappa']:>10.4g} "
                  f"{e['gamma']:>10.4g} {e['m']:>8} {e['L']:>6}{flag}")
    return 0


def cmd_selftest(args) -> int:
    return 0 if run_selftest(args.seed or 0) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="csmd-bench", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", help="output directory (default: the config's 'output')")
        p.add_argument("--repetitions", type=int)
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--threads", type=int, help="worker processes (default: $CSMD_THREADS or 1)")

    p = sub.add_parser("run", help="run an experiment and write traces, aggregates and manifest")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("aggregate", help="recompute aggregate.csv from a run directory")
    p.add_argument("dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("schedule", help="print the stage schedule without running")
    p.add_argument("config")
    p.add_argument("--json", action="store_true")
    common(p, out=False)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("selftest", help="run quick property checks")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
