"""Command-line interface.

Subcommands: gen, schedule, oracle, lowerbound, export-lp, validate, bench,
gantt. All artifacts are JSON/CSV/SVG files; errors go to stderr as a
machine-readable JSON line. Exit codes: 0 success, 1 infeasible/invalid,
2 usage error.

The environment variable HETSCHED_SOLVER may point at an external MILP
solver executable (called as `exe model.lp timeout_s out.json`); without it
the embedded branch-and-bound is used.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from typing import Optional

from . import benchgen, bounds, heuristics, oracle, plotting, splitting
from . import milp as milp_mod
from .core import (DnnGraph, GraphError, HardwareSystem, LatencyTable,
                   Schedule, ScheduleError, load_graph, load_hardware,
                   load_latency, load_schedule, save_graph, save_hardware,
                   save_latency, save_schedule, validate_schedule)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_USAGE = 2

PROFILES = {
    "default3": benchgen.DEFAULT3,
    "uniform2": tuple(benchgen.DeviceSpec(id=f"dev{k}", factor=1.0)
                      for k in range(2)),
    "uniform3": tuple(benchgen.DeviceSpec(id=f"dev{k}", factor=1.0)
                      for k in range(3)),
}

ALGOS = ("milp", "split", "best-device", "met", "greedy", "heft", "sa", "ea",
         "bmet", "bgreedy", "bheft")


def _fail(code: str, message: str, exit_code: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return exit_code


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def _write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _load_instance(args) -> tuple[DnnGraph, HardwareSystem, LatencyTable]:
    g = load_graph(_read(args.graph))
    hw = load_hardware(_read(args.hardware))
    table = load_latency(_read(args.latency))
    table.check_complete(g, hw)
    return g, hw, table


def _backend() -> Optional[milp_mod.ExternalBackend]:
    path = os.environ.get("HETSCHED_SOLVER")
    return milp_mod.ExternalBackend(path) if path else None


def _detect_groups(g: DnnGraph, hw: HardwareSystem,
                   table: LatencyTable) -> list[list[str]]:
    """Devices with identical memory, batch sizes, and latency columns are
    interchangeable for symmetry breaking."""
    buckets: dict[tuple, list[str]] = {}
    for u in sorted(hw.devices):
        d = hw.devices[u]
        sig = (d.memory, d.batch_sizes,
               tuple(table.get(i, u, b) for i in sorted(g.tasks)
                     for b in d.batch_sizes))
        buckets.setdefault(sig, []).append(u)
    return [grp for grp in buckets.values() if len(grp) > 1]


def _run_algo(algo: str, g, hw, table, L, *, objective="latency",
              timeout=None, channels=1, symmetry="none", seed=0,
              budget=2000) -> Schedule:
    if algo == "milp":
        model = milp_mod.build_milp(g, hw, table, L, objective=objective)
        if symmetry != "none":
            groups = _detect_groups(g, hw, table)
            if groups:
                milp_mod.add_symmetry_constraints(model, groups, symmetry)
        res = milp_mod.solve(model, timeout=timeout, backend=_backend())
        if res.status not in ("optimal", "feasible"):
            raise ScheduleError(f"MILP solve ended with status {res.status}")
        return milp_mod.extract_schedule(model, res)
    if algo == "split":
        decomp = splitting.k_edge_components(g, c=channels)
        return splitting.milp_split(g, hw, table, L, decomp,
                                    timeout=timeout, objective=objective)
    if algo == "best-device":
        return heuristics.best_device(g, hw, table, L)
    if algo == "met":
        return heuristics.met(g, hw, table, L)
    if algo == "greedy":
        return heuristics.greedy(g, hw, table, L)
    if algo == "heft":
        return heuristics.heft(g, hw, table, L)
    if algo == "sa":
        return heuristics.simulated_annealing(g, hw, table, L, seed=seed,
                                              budget=budget)
    if algo == "ea":
        return heuristics.one_plus_one_ea(g, hw, table, L, seed=seed,
                                          budget=budget)
    if algo in ("bmet", "bgreedy", "bheft"):
        return heuristics.batched_variant(algo[1:], g, hw, table, L)
    raise GraphError(f"unknown algorithm {algo!r}")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_gen(args) -> int:
    specs = PROFILES[args.profile]
    g, decomp, hw, table = benchgen.gen_stacked_instance(
        args.model, args.n, args.modules, args.channels, args.mode,
        args.seed, specs=specs, noise_sigma=args.noise,
        p=args.p, k=args.k, m=args.m)
    os.makedirs(args.out_dir, exist_ok=True)
    _write(os.path.join(args.out_dir, "graph.json"), save_graph(g))
    _write(os.path.join(args.out_dir, "hardware.json"), save_hardware(hw))
    _write(os.path.join(args.out_dir, "latency.json"), save_latency(table))
    _write(os.path.join(args.out_dir, "modules.json"), decomp.to_json())
    print(f"wrote instance {g.name} ({len(g)} tasks, "
          f"{len(decomp.modules)} modules) to {args.out_dir}")
    return EXIT_OK


def _cmd_schedule(args) -> int:
    g, hw, table = _load_instance(args)
    t0 = time.perf_counter()
    s = _run_algo(args.algo, g, hw, table, args.inputs,
                  objective=args.objective, timeout=args.timeout,
                  channels=args.channels, symmetry=args.symmetry,
                  seed=args.seed, budget=args.budget)
    wall = time.perf_counter() - t0
    _write(args.out, save_schedule(s, table))
    tput = 1000.0 * s.input_count / s.objective if s.objective > 0 else None
    line = (f"{args.algo}: makespan {s.objective:.6f} ms, L={s.input_count}, "
            f"{wall:.3f} s")
    if args.objective == "throughput" and tput is not None:
        line += f", throughput {tput:.3f} inputs/s"
    print(line)
    return EXIT_OK


def _cmd_oracle(args) -> int:
    g, hw, table = _load_instance(args)
    s = oracle.brute_force(g, hw, table, args.inputs)
    _write(args.out, save_schedule(s, table))
    print(f"oracle: makespan {s.objective:.6f} ms, L={s.input_count}")
    return EXIT_OK


def _cmd_lowerbound(args) -> int:
    g, hw, table = _load_instance(args)
    if args.modules:
        with open(args.modules) as f:
            decomp = splitting.ModuleDecomposition.from_json(f.read())
    else:
        decomp = splitting.k_edge_components(g, c=args.channels)
    rep = bounds.lower_bound(g, hw, table, args.inputs, decomp,
                             timeout=args.timeout)
    _write(args.out, rep.to_json())
    print(f"lower bound {rep.lower_bound_ms:.6f} ms, throughput cap "
          f"{rep.throughput_upper_bound:.3f} inputs/s "
          f"({len(decomp.modules)} modules)")
    return EXIT_OK


def _cmd_export_lp(args) -> int:
    g, hw, table = _load_instance(args)
    model = milp_mod.build_milp(g, hw, table, args.inputs,
                                objective=args.objective)
    if args.symmetry != "none":
        groups = _detect_groups(g, hw, table)
        if groups:
            milp_mod.add_symmetry_constraints(model, groups, args.symmetry)
    _write(args.out, milp_mod.export_lp(model))
    print(f"wrote {len(model.variables)} variables, "
          f"{len(model.constraints)} constraints to {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    g, hw, table = _load_instance(args)
    s = load_schedule(_read(args.schedule))
    validate_schedule(g, hw, table, s)
    print("schedule valid")
    return EXIT_OK


def _cmd_gantt(args) -> int:
    g, hw, table = _load_instance(args)
    s = load_schedule(_read(args.schedule))
    plotting.render_gantt(s, hw, table, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for a in algos:
        if a not in ALGOS:
            raise GraphError(f"unknown algorithm {a!r}")
    os.makedirs(args.out_dir, exist_ok=True)
    rows: list[dict] = []
    for k in range(args.seeds):
        seed = args.seed + k
        g, decomp, hw, table = benchgen.gen_stacked_instance(
            args.model, args.n, args.modules, args.channels, args.mode,
            seed, noise_sigma=args.noise, p=args.p, k=args.k, m=args.m)
        rep = bounds.lower_bound(g, hw, table, args.inputs, decomp,
                                 timeout=args.timeout)
        lb = rep.lower_bound_ms
        for algo in algos:
            t0 = time.perf_counter()
            try:
                s = _run_algo(algo, g, hw, table, args.inputs,
                              timeout=args.timeout, channels=args.channels,
                              seed=seed, budget=args.budget)
                ms = s.objective
            except (GraphError, ScheduleError):
                ms = float("nan")
            wall = time.perf_counter() - t0
            gap = (ms - lb) / ms if ms and ms == ms and ms > 0 else float("nan")
            rows.append({"instance": g.name, "algo": algo,
                         "objective": f"{ms:.6f}", "ms": f"{ms:.6f}",
                         "wall_s": f"{wall:.4f}", "lbound": f"{lb:.6f}",
                         "gap": f"{gap:.6f}"})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["instance", "algo", "objective",
                                        "ms", "wall_s", "lbound", "gap"])
    w.writeheader()
    w.writerows(rows)
    csv_path = os.path.join(args.out_dir, "bench.csv")
    _write(csv_path, buf.getvalue())
    figs = plotting.render_bench(rows, os.path.join(args.out_dir, "bench"))
    print(f"wrote {csv_path} and " + ", ".join(figs))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser plumbing

def _add_instance_flags(p) -> None:
    p.add_argument("--graph", required=True)
    p.add_argument("--hardware", required=True)
    p.add_argument("--latency", required=True)


def _add_gen_flags(p) -> None:
    p.add_argument("--model", choices=("er", "ws", "ba"), default="er")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--modules", type=int, default=10)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--mode", choices=("sdep", "wdep"), default="sdep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="hetsched",
        description="Map weighted DNN task graphs onto heterogeneous devices.")
    top.add_argument("--config", default=None,
                     help="JSON file with default flag values")
    sub = top.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate a benchmark instance")
    _add_gen_flags(p)
    p.add_argument("--profile", choices=sorted(PROFILES), default="default3")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("schedule", help="run one scheduling algorithm")
    _add_instance_flags(p)
    p.add_argument("--algo", choices=ALGOS, required=True)
    p.add_argument("--objective", choices=("latency", "throughput"),
                   default="latency")
    p.add_argument("--inputs", type=int, default=1)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--symmetry", choices=("none", "batch", "task", "time"),
                   default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=2000,
                   help="evaluation budget for sa/ea")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_schedule)

    p = sub.add_parser("oracle", help="brute-force optimum (tiny instances)")
    _add_instance_flags(p)
    p.add_argument("--inputs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_oracle)

    p = sub.add_parser("lowerbound", help="provable latency lower bound")
    _add_instance_flags(p)
    p.add_argument("--inputs", type=int, default=1)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--modules", default=None,
                   help="decomposition JSON (default: detect from the graph)")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_lowerbound)

    p = sub.add_parser("export-lp", help="write the model in CPLEX-LP text")
    _add_instance_flags(p)
    p.add_argument("--inputs", type=int, default=1)
    p.add_argument("--objective", choices=("latency", "throughput"),
                   default="latency")
    p.add_argument("--symmetry", choices=("none", "batch", "task", "time"),
                   default="none")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_export_lp)

    p = sub.add_parser("validate", help="check a schedule JSON")
    _add_instance_flags(p)
    p.add_argument("--schedule", required=True)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("bench", help="sweep algorithms over generated suites")
    _add_gen_flags(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--inputs", type=int, default=1)
    p.add_argument("--algos", default="best-device,met,greedy,heft,sa,ea,split")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("gantt", help="render a schedule to SVG/PNG")
    _add_instance_flags(p)
    p.add_argument("--schedule", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gantt)
    return top


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    if args.config:
        try:
            cfg = json.loads(_read(args.config))
        except (OSError, json.JSONDecodeError) as e:
            return _fail("config", str(e), EXIT_USAGE)
        # command-line flags win over config-file values
        explicit = {a.lstrip("-").split("=")[0].replace("-", "_")
                    for a in argv if a.startswith("--")}
        for key, val in cfg.items():
            attr = key.replace("-", "_")
            if hasattr(args, attr) and attr not in explicit:
                setattr(args, attr, val)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        return _fail("io", str(e), EXIT_USAGE)
    except (GraphError, ScheduleError) as e:
        return _fail(type(e).__name__, str(e), EXIT_INFEASIBLE)


if __name__ == "__main__":
    sys.exit(main())
