"""Command-line interface: ``gen``, ``solve``, ``gap`` and ``bench``.

Exit codes: 0 success, 2 usage or input error, 3 budget exhausted,
4 numerical failure. Output files go to ``--out-dir``, else to
``$FOMVI_OUTPUT_DIR``, else to the working directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import anderson_vi, avi, gs_vi, vi_robust
from .errors import FomViError, NumericalFailure
from .gap import duality_gap
from .instances import GarnetParams, gen_garnet, gen_healthcare, gen_machine_replacement
from .model import load_instance, return_value, save_instance
from .solver import Schedule, run_fom_vi

EXIT_OK, EXIT_USAGE, EXIT_BUDGET, EXIT_NUMERICAL = 0, 2, 3, 4
OUTPUT_ENV = "FOMVI_OUTPUT_DIR"

TRACE_COLUMNS = ["run_id", "method", "norm_pair", "p", "q", "S", "A", "uncertainty_kind", "alpha", "seed", "epoch",
                 "iteration", "residual_inf", "certified_gap", "elapsed_seconds"]
BENCH_COLUMNS = ["run_id", "method", "norm_pair", "p", "q", "S", "A", "uncertainty_kind", "alpha", "seed", "converged",
                 "epochs", "iterations", "return_value", "certified_gap", "elapsed_seconds", "error"]

METHODS = ("fomvi", "vi", "gs_vi", "avi", "anderson_vi")
SOLVE_DEFAULTS = {"method": "fomvi", "norm_pair": "l2", "p": 2, "q": 2, "eps": 0.1, "seed": 0, "max_epochs": 1000,
                  "max_seconds": None, "m": 5, "gap_check_period": 5}
FOMVI_ONLY = ("norm_pair", "p", "q", "gap_check_period")


class UsageError(FomViError):
    pass


def _out_dir(args) -> Path:
    path = Path(args.out_dir or os.environ.get(OUTPUT_ENV) or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(value):
    """CSV cell: empty for missing values, ``repr`` precision for floats."""
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if value == np.inf else repr(value)
    return str(value)


def _write_csv(path, columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---- gen ---------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.generator == "garnet":
        if args.actions is None:
            raise UsageError("garnet needs --actions")
        params = GarnetParams(args.states, args.actions, args.branch, args.cost_low, args.cost_high, args.discount,
                              args.seed)
        inst = gen_garnet(params, args.kind, args.radius)
    elif args.generator == "machine":
        inst = gen_machine_replacement(args.states, args.kind, args.radius, args.seed, args.discount)
    else:
        inst = gen_healthcare(args.states, args.samples, args.seed, args.kind, args.discount)
        if args.radius is not None:
            inst = inst.with_radius(args.radius)
    path = Path(args.output) if args.output else _out_dir(args) / (
        f"{args.generator}_S{inst.num_states}_A{inst.num_actions}_{inst.uncertainty_kind.value}_seed{args.seed}.json")
    save_instance(inst, path)
    print(path)
    return EXIT_OK


# ---- solve -------------------------------------------------------------------


def resolve_config(cli: dict, config_path=None) -> dict:
    """Merge settings: CLI flags over config-file values over defaults.

    Settings that do not apply to the chosen method are a usage error when
    given explicitly.
    """
    file_cfg = {}
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        unknown = set(file_cfg) - set(SOLVE_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    explicit = {**file_cfg, **{k: v for k, v in cli.items() if v is not None}}
    cfg = {**SOLVE_DEFAULTS, **explicit}
    method = cfg["method"]
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method != "fomvi":
        stray = [k for k in FOMVI_ONLY if k in explicit]
        if stray:
            raise UsageError(f"fomvi-only settings given for {method}: {', '.join(stray)}")
    if method != "anderson_vi" and "m" in explicit:
        raise UsageError(f"anderson_vi-only setting given for {method}: m")
    if not cfg["eps"] > 0:
        raise UsageError(f"eps must be positive, got {cfg['eps']}")
    if cfg["max_epochs"] < 1:
        raise UsageError("max_epochs must be positive")
    return cfg


def run_method(instance, cfg: dict, run_id: str):
    """Run one configured solve; returns ``(report_dict, trace_rows, converged)``."""
    method = cfg["method"]
    base = {"run_id": run_id, "method": method, "S": instance.num_states, "A": instance.num_actions,
            "uncertainty_kind": instance.uncertainty_kind.value, "alpha": instance.radius, "seed": cfg["seed"]}
    if method == "fomvi":
        base.update(norm_pair=cfg["norm_pair"], p=cfg["p"], q=cfg["q"])
        schedule = Schedule(p=cfg["p"], q=cfg["q"], max_epochs=cfg["max_epochs"],
                            gap_check_period=cfg["gap_check_period"], eps=cfg["eps"])
        rep = run_fom_vi(instance, cfg["norm_pair"], schedule, max_seconds=cfg["max_seconds"], seed=cfg["seed"])
        trace = [{**base, **row} for row in rep.trace]
        gap = rep.gap.to_dict() if rep.gap is not None else None
        report = {"epochs": rep.epochs, "iterations": rep.iterations, "stop_reason": rep.stop_reason,
                  "return_value": None if rep.gap is None else rep.gap.worst_case_value,
                  "certified_gap": None if rep.gap is None else rep.gap.certified_gap, "gap": gap,
                  "policy": rep.x.tolist(), "kernel": rep.y.tolist(), "value": rep.v.tolist()}
        converged = rep.converged
    else:
        kwargs = {"max_iter": cfg["max_epochs"], "max_seconds": cfg["max_seconds"]}
        if method == "anderson_vi":
            kwargs["m"] = cfg["m"]
        solver = {"vi": vi_robust, "gs_vi": gs_vi, "avi": avi, "anderson_vi": anderson_vi}[method]
        res = solver(instance, cfg["eps"], **kwargs)
        trace = [{**base, "iteration": row["iteration"], "residual_inf": row["residual_inf"],
                  "elapsed_seconds": row["elapsed_seconds"]} for row in res.trace]
        report = {"epochs": None, "iterations": res.iterations,
                  "stop_reason": "threshold" if res.converged else "budget",
                  "return_value": return_value(instance, res.value), "certified_gap": None, "gap": None,
                  "policy": res.policy.tolist(), "kernel": res.kernel.tolist(), "value": res.value.tolist()}
        converged = res.converged
    elapsed = trace[-1]["elapsed_seconds"] if trace else 0.0
    report = {**base, "norm_pair": base.get("norm_pair"), "eps": cfg["eps"], "converged": converged,
              "elapsed_seconds": elapsed, "config": cfg, **report}
    return report, trace, converged


def cmd_solve(args) -> int:
    cli = {k: getattr(args, k) for k in SOLVE_DEFAULTS}
    cfg = resolve_config(cli, args.config)
    instance = load_instance(args.instance)
    run_id = args.run_id or f"{Path(args.instance).stem}_{cfg['method']}_seed{cfg['seed']}"
    report, trace, converged = run_method(instance, cfg, run_id)
    report["instance"] = str(args.instance)
    out = _out_dir(args)
    (out / f"{run_id}.report.json").write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    _write_csv(out / f"{run_id}.trace.csv", TRACE_COLUMNS, trace)
    print(json.dumps({"run_id": run_id, "converged": converged, "return_value": report["return_value"],
                      "certified_gap": report["certified_gap"], "iterations": report["iterations"]}))
    return EXIT_OK if converged else EXIT_BUDGET


# ---- gap ---------------------------------------------------------------------


def cmd_gap(args) -> int:
    instance = load_instance(args.instance)
    try:
        pair = json.loads(Path(args.pair).read_text(encoding="utf-8"))
        x, y = np.asarray(pair["policy"], dtype=float), np.asarray(pair["kernel"], dtype=float)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read policy/kernel pair from {args.pair}: {exc}") from None
    rep = duality_gap(instance, x, y, tol=args.tol, max_seconds=args.max_seconds)
    text = json.dumps(rep.to_dict(), indent=1) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK if rep.converged else EXIT_BUDGET


# ---- bench -------------------------------------------------------------------


def _bench_job(job):
    size, kind, method, seed, cfg = job
    run_id = f"garnet_S{size}_{kind}_{method}_seed{seed}"
    row = {"run_id": run_id, "method": method, "S": size, "A": size, "uncertainty_kind": kind, "seed": seed}
    if method == "fomvi":
        row.update(norm_pair=cfg["norm_pair"], p=cfg["p"], q=cfg["q"])
    try:
        inst = gen_garnet(GarnetParams(size, size, n_branch=cfg["branch"], discount=cfg["discount"], seed=seed), kind)
        row["alpha"] = inst.radius
        report, trace, converged = run_method(inst, {**cfg, "method": method, "seed": seed}, run_id)
        row.update(converged=converged, epochs=report["epochs"], iterations=report["iterations"],
                   return_value=report["return_value"], certified_gap=report["certified_gap"],
                   elapsed_seconds=report["elapsed_seconds"])
    except (FomViError, ValueError, RuntimeError) as exc:
        row.update(converged=False, error=f"{type(exc).__name__}: {exc}")
        trace = []
    return row, trace


def cmd_bench(args) -> int:
    cfg = {**SOLVE_DEFAULTS, "eps": args.eps, "max_epochs": args.max_epochs, "max_seconds": args.max_seconds,
           "norm_pair": args.norm_pair, "p": args.p, "q": args.q, "branch": args.branch, "discount": args.discount}
    if not args.eps > 0:
        raise UsageError("eps must be positive")
    for m in args.methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    jobs = [(size, kind, method, seed, cfg) for size in args.sizes for kind in args.kinds for method in args.methods
            for seed in args.seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_bench_job, jobs))
    else:
        results = [_bench_job(job) for job in jobs]
    out = _out_dir(args)
    path = Path(args.output) if args.output else out / "bench.csv"
    _write_csv(path, BENCH_COLUMNS, [r for r, _ in results])
    if args.trace_output:
        _write_csv(args.trace_output, TRACE_COLUMNS, [t for _, trace in results for t in trace])
    print(path)
    return EXIT_OK


# ---- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fomvi", description="Robust MDP solvers and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an instance file")
    g.add_argument("generator", choices=["garnet", "machine", "healthcare"])
    g.add_argument("--states", type=int, required=True)
    g.add_argument("--actions", type=int)
    g.add_argument("--branch", type=float, default=0.5)
    g.add_argument("--cost-low", type=float, default=0.0)
    g.add_argument("--cost-high", type=float, default=10.0)
    g.add_argument("--discount", type=float, default=0.8)
    g.add_argument("--kind", choices=["ellipsoidal", "kl"], default="ellipsoidal")
    g.add_argument("--radius", type=float)
    g.add_argument("--samples", type=int, default=60, help="healthcare: number of perturbed kernels")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output")
    g.add_argument("--out-dir")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve an instance and write a report and trace")
    s.add_argument("instance")
    s.add_argument("--config", help="JSON file with solve settings; flags override it")
    s.add_argument("--method", choices=METHODS)
    s.add_argument("--norm-pair", choices=["l1", "l2"])
    s.add_argument("--p", type=int)
    s.add_argument("--q", type=int)
    s.add_argument("--eps", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--max-epochs", type=int, help="epoch cap (sweep cap for the value-iteration methods)")
    s.add_argument("--max-seconds", type=float)
    s.add_argument("--gap-check-period", type=int)
    s.add_argument("--m", type=int, help="anderson_vi memory")
    s.add_argument("--run-id")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_solve)

    d = sub.add_parser("gap", help="certified duality gap of a policy/kernel pair")
    d.add_argument("instance")
    d.add_argument("pair", help="JSON with 'policy' and 'kernel' (a solve report works)")
    d.add_argument("--tol", type=float, default=1e-6)
    d.add_argument("--max-seconds", type=float)
    d.add_argument("-o", "--output")
    d.set_defaults(func=cmd_gap)

    b = sub.add_parser("bench", help="sweep Garnet sizes, methods and seeds")
    b.add_argument("--sizes", type=int, nargs="+", default=[5, 10])
    b.add_argument("--kinds", nargs="+", choices=["ellipsoidal", "kl"], default=["ellipsoidal"])
    b.add_argument("--methods", nargs="+", default=["fomvi", "vi"])
    b.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    b.add_argument("--eps", type=float, default=0.1)
    b.add_argument("--branch", type=float, default=0.5)
    b.add_argument("--discount", type=float, default=0.8)
    b.add_argument("--norm-pair", choices=["l1", "l2"], default="l2")
    b.add_argument("--p", type=int, default=2)
    b.add_argument("--q", type=int, default=2)
    b.add_argument("--max-epochs", type=int, default=1000)
    b.add_argument("--max-seconds", type=float)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("-o", "--output")
    b.add_argument("--trace-output")
    b.add_argument("--out-dir")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FomViError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
