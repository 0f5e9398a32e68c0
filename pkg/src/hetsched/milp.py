"""Exact MILP formulation of the mapping-and-scheduling problem.

Builds a solver-agnostic model (named variables, linear constraints, a
minimize objective), exports CPLEX-LP text, and solves either with the
embedded scipy/HiGHS backend or through an external solver executable.
"""
from __future__ import annotations

import json
import math
import subprocess
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint
from scipy.optimize import milp as _scipy_milp

from .core import (DnnGraph, GraphError, HardwareSystem, LatencyTable,
                   Schedule, ScheduledBatch, transitive_closure)

INTEGRALITY_TOL = 1e-4


@dataclass
class Var:
    name: str
    kind: str  # "binary" | "continuous"
    lb: float = 0.0
    ub: float = math.inf


@dataclass
class Constraint:
    name: str
    coeffs: dict[str, float]
    sense: str  # "<=", "=", ">="
    rhs: float


@dataclass
class ModelContext:
    graph: DnnGraph
    hw: HardwareSystem
    table: LatencyTable
    L: int
    objective: str  # "latency" | "throughput"
    horizon: float


class MilpModel:
    def __init__(self, context: Optional[ModelContext] = None):
        self.variables: list[Var] = []
        self.var_index: dict[str, int] = {}
        self.constraints: list[Constraint] = []
        self.objective: dict[str, float] = {}
        self.context = context

    def add_var(self, name: str, kind: str, lb: float = 0.0,
                ub: float = math.inf) -> str:
        if name in self.var_index:
            raise GraphError(f"duplicate variable name {name!r}")
        self.var_index[name] = len(self.variables)
        self.variables.append(Var(name, kind, lb, ub))
        return name

    def add_constraint(self, name: str, coeffs: dict[str, float], sense: str,
                       rhs: float) -> None:
        for v in coeffs:
            if v not in self.var_index:
                raise GraphError(f"constraint {name!r} references undeclared "
                                 f"variable {v!r}")
        if sense not in ("<=", "=", ">="):
            raise GraphError(f"bad sense {sense!r}")
        self.constraints.append(Constraint(name, dict(coeffs), sense, rhs))

    def fix(self, name: str, value: float) -> None:
        v = self.variables[self.var_index[name]]
        v.lb = v.ub = value


@dataclass
class SolveResult:
    status: str  # optimal | feasible | infeasible | unbounded | unknown
    objective: Optional[float]
    values: dict[str, float]
    wall_time: float
    gap: Optional[float] = None
    node_count: Optional[int] = None
    dual_bound: Optional[float] = None


def x_name(i, u, l):
    return f"x({i},{u},{l})"


def b_name(i, u, p):
    return f"b({i},{u},{p})"


def s_name(i, u):
    return f"s({i},{u})"


def d_name(i, j, u):
    return f"d({i},{j},{u})"


def horizon(g: DnnGraph, hw: HardwareSystem, table: LatencyTable, L: int) -> float:
    """Upper bound on the optimal makespan; used as big-M for time constraints.

    Bounds the fully serialized schedule: each task runs at most min(|K|, L)
    batches, none larger than L, and every edge ships at most L transfers."""
    slots = min(len(hw.devices), L)
    h = 0.0
    for i in g.tasks:
        per_dev = []
        for d in hw.devices.values():
            usable = [p for p in d.batch_sizes if p <= L] or list(d.batch_sizes)
            per_dev.append(max(table.get(i, d.id, p) for p in usable))
        h += slots * max(per_dev)
    for (i, j) in g.edges:
        om = g.tasks[i].om
        worst = 0.0
        for (u, v), beta in hw.bandwidth.items():
            if u != v:
                worst = max(worst, om / beta)
        h += L * worst
    return h


def build_milp(g: DnnGraph, hw: HardwareSystem, table: LatencyTable, L: int,
               objective: str = "latency", prune: bool = True,
               pins: Optional[dict[str, str]] = None,
               same_device: Optional[Sequence[tuple[str, str]]] = None) -> MilpModel:
    """Build the exact model: assignment, batching, precedence with
    communication, memory, and no-overlap constraints.

    The latency and throughput objectives share the same model (minimize the
    makespan C; throughput is reported as L/C). No-overlap disjunctions are
    instantiated only for task pairs whose ordering is not already implied by
    a dependency path, via the transitive closure.
    """
    if L < 1:
        raise GraphError("L must be >= 1")
    if objective not in ("latency", "throughput"):
        raise GraphError(f"unknown objective {objective!r}")
    table.check_complete(g, hw)
    H = horizon(g, hw, table, L)
    m = MilpModel(ModelContext(g, hw, table, L, objective, H))
    devs = list(hw.devices.values())
    inputs = range(1, L + 1)

    def sizes(d):
        # batches larger than the input count can never be filled
        return [p for p in d.batch_sizes if p <= L]

    for i in g.tasks:
        for d in devs:
            for l in inputs:
                m.add_var(x_name(i, d.id, l), "binary", 0, 1)
    for i in g.tasks:
        for d in devs:
            for p in sizes(d):
                m.add_var(b_name(i, d.id, p), "binary", 0, 1)
    for i in g.tasks:
        for d in devs:
            m.add_var(s_name(i, d.id), "continuous", 0.0, H)
    m.add_var("C", "continuous", 0.0, H)
    m.objective = {"C": 1.0}

    def dur_terms(i, u_dev):
        return {b_name(i, u_dev.id, p): table.get(i, u_dev.id, p)
                for p in sizes(u_dev)}

    # (1) each (task, input) on exactly one device
    for i in g.tasks:
        for l in inputs:
            m.add_constraint(f"assign({i},{l})",
                             {x_name(i, d.id, l): 1.0 for d in devs}, "=", 1.0)

    # (5) the per-device batch size equals the number of inputs placed there
    # and is a supported size; at most one batch of a task per device.
    for i in g.tasks:
        for d in devs:
            coeffs = {b_name(i, d.id, p): float(p) for p in sizes(d)}
            for l in inputs:
                coeffs[x_name(i, d.id, l)] = -1.0
            m.add_constraint(f"batch_count({i},{d.id})", coeffs, "=", 0.0)
            m.add_constraint(f"batch_once({i},{d.id})",
                             {b_name(i, d.id, p): 1.0 for p in sizes(d)},
                             "<=", 1.0)

    # (4) batch decomposition adds up to L (implied by (1)+(5); kept explicit)
    for i in g.tasks:
        coeffs = {b_name(i, d.id, p): float(p)
                  for d in devs for p in sizes(d)}
        m.add_constraint(f"decomp({i})", coeffs, "=", float(L))

    # (2) every batch finishes within the makespan; pin unused starts to 0
    for i in g.tasks:
        for d in devs:
            coeffs = {s_name(i, d.id): 1.0, "C": -1.0}
            for v, c in dur_terms(i, d).items():
                coeffs[v] = c
            m.add_constraint(f"finish({i},{d.id})", coeffs, "<=", 0.0)
            pin = {s_name(i, d.id): 1.0}
            for p in sizes(d):
                pin[b_name(i, d.id, p)] = -H
            m.add_constraint(f"start_used({i},{d.id})", pin, "<=", 0.0)

    # (3) dependency + communication, gated per input on the x activation
    for (i, j) in g.edges:
        om = g.tasks[i].om
        for du in devs:
            for dv in devs:
                comm = hw.comm_time(om, du.id, dv.id)
                if comm is None:
                    # no link: dependent tasks cannot straddle this pair
                    for l in inputs:
                        m.add_constraint(
                            f"nolink({i},{j},{du.id},{dv.id},{l})",
                            {x_name(i, du.id, l): 1.0,
                             x_name(j, dv.id, l): 1.0}, "<=", 1.0)
                    continue
                for l in inputs:
                    coeffs = {s_name(i, du.id): 1.0, s_name(j, dv.id): -1.0}
                    for v, c in dur_terms(i, du).items():
                        coeffs[v] = coeffs.get(v, 0.0) + c
                    coeffs[x_name(j, dv.id, l)] = comm + H
                    coeffs[x_name(i, du.id, l)] = \
                        coeffs.get(x_name(i, du.id, l), 0.0) + comm + H
                    m.add_constraint(f"prec({i},{j},{du.id},{dv.id},{l})",
                                     coeffs, "<=", comm + 2 * H)

    # (6) preemptive-residency memory per device
    for d in devs:
        coeffs: dict[str, float] = {}
        for i, node in g.tasks.items():
            if node.im + node.om > 0:
                for l in inputs:
                    coeffs[x_name(i, d.id, l)] = node.im + node.om
            if node.wm > 0:
                for p in sizes(d):
                    coeffs[b_name(i, d.id, p)] = node.wm
        if coeffs:
            m.add_constraint(f"memory({d.id})", coeffs, "<=", d.memory)

    # (7) no overlap between distinct batches on one device, linearized with
    # one ordering binary per unordered pair; pairs already ordered by a
    # dependency path are pruned when any two batches on the device must
    # share an input (always true for L=1).
    closure = transitive_closure(g)
    ids = list(g.tasks)
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            related = j in closure[i] or i in closure[j]
            for d in devs:
                if prune and related and 2 * min(d.batch_sizes) > L:
                    continue
                dv = m.add_var(d_name(i, j, d.id), "binary", 0, 1)
                c1 = {s_name(i, d.id): 1.0, s_name(j, d.id): -1.0, dv: H}
                for v, c in dur_terms(i, d).items():
                    c1[v] = c1.get(v, 0.0) + c
                m.add_constraint(f"order({i},{j},{d.id})", c1, "<=", H)
                c2 = {s_name(j, d.id): 1.0, s_name(i, d.id): -1.0, dv: -H}
                for v, c in dur_terms(j, d).items():
                    c2[v] = c2.get(v, 0.0) + c
                m.add_constraint(f"order({j},{i},{d.id})", c2, "<=", 0.0)

    if pins:
        for task, dev in pins.items():
            if task not in g.tasks or dev not in hw.devices:
                raise GraphError(f"bad pin ({task!r}, {dev!r})")
            for d in devs:
                for l in inputs:
                    m.fix(x_name(task, d.id, l), 1.0 if d.id == dev else 0.0)
    if same_device:
        for (ta, tb) in same_device:
            for d in devs:
                for l in inputs:
                    m.add_constraint(
                        f"colocate({ta},{tb},{d.id},{l})",
                        {x_name(ta, d.id, l): 1.0, x_name(tb, d.id, l): -1.0},
                        "=", 0.0)
    return m


def _check_interchangeable(hw: HardwareSystem, table: LatencyTable,
                           g: DnnGraph, group: Sequence[str]) -> None:
    devs = [hw.devices[u] for u in group]
    ref = devs[0]
    for d in devs[1:]:
        if d.memory != ref.memory or d.batch_sizes != ref.batch_sizes:
            raise GraphError(f"group {group}: devices differ in memory/batches")
    for i in g.tasks:
        for p in ref.batch_sizes:
            vals = {table.get(i, u, p) for u in group}
            if len(vals) > 1:
                raise GraphError(f"group {group}: latency columns differ "
                                 f"for task {i!r}")
    members = set(group)
    outside = [w for w in hw.devices if w not in members]
    for w in outside:
        if len({hw.bandwidth.get((u, w)) for u in group}) > 1 or \
           len({hw.bandwidth.get((w, u)) for u in group}) > 1:
            raise GraphError(f"group {group}: bandwidth to/from {w!r} differs")
    internal = {hw.bandwidth.get((u, v)) for u in group for v in group if u != v}
    if len(internal) > 1:
        raise GraphError(f"group {group}: internal bandwidth not uniform")


def add_symmetry_constraints(m: MilpModel, groups: Sequence[Sequence[str]],
                             criterion: str) -> MilpModel:
    """Order interchangeable devices by per-device task count, batch count,
    or busy time. Excludes permuted duplicates without changing the optimum.
    """
    if criterion not in ("batch", "task", "time"):
        raise GraphError(f"unknown symmetry criterion {criterion!r}")
    ctx = m.context
    if ctx is None:
        raise GraphError("model has no build context")
    g, hw, table, L = ctx.graph, ctx.hw, ctx.table, ctx.L
    for group in groups:
        if len(group) < 2:
            continue
        _check_interchangeable(hw, table, g, group)
        for (u, v) in zip(group, group[1:]):
            coeffs: dict[str, float] = {}
            if criterion == "task":
                for i in g.tasks:
                    for l in range(1, L + 1):
                        coeffs[x_name(i, u, l)] = 1.0
                        coeffs[x_name(i, v, l)] = -1.0
            elif criterion == "batch":
                for i in g.tasks:
                    for p in (q for q in hw.devices[u].batch_sizes if q <= L):
                        coeffs[b_name(i, u, p)] = 1.0
                        coeffs[b_name(i, v, p)] = -1.0
            else:  # time
                for i in g.tasks:
                    for p in (q for q in hw.devices[u].batch_sizes if q <= L):
                        coeffs[b_name(i, u, p)] = table.get(i, u, p)
                        coeffs[b_name(i, v, p)] = -table.get(i, v, p)
            m.add_constraint(f"sym_{criterion}({u},{v})", coeffs, ">=", 0.0)
    return m


# ---------------------------------------------------------------------------
# LP text export (CPLEX LP format)

def _lp_expr(coeffs: dict[str, float]) -> str:
    parts = []
    for v, c in coeffs.items():
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        parts.append(f"{sign} {mag:.12g} {v}")
    if not parts:
        return "0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def export_lp(m: MilpModel) -> str:
    """Deterministic CPLEX-LP text: variables in declaration order,
    constraints in build order."""
    lines = ["Minimize", f" obj: {_lp_expr(m.objective)}", "Subject To"]
    for c in m.constraints:
        op = {"<=": "<=", ">=": ">=", "=": "="}[c.sense]
        lines.append(f" {c.name}: {_lp_expr(c.coeffs)} {op} {c.rhs:.12g}")
    lines.append("Bounds")
    for v in m.variables:
        if v.kind == "binary":
            if (v.lb, v.ub) != (0.0, 1.0):
                lines.append(f" {v.lb:.12g} <= {v.name} <= {v.ub:.12g}")
            continue
        ub = "+inf" if math.isinf(v.ub) else f"{v.ub:.12g}"
        lines.append(f" {v.lb:.12g} <= {v.name} <= {ub}")
    binaries = [v.name for v in m.variables if v.kind == "binary"]
    if binaries:
        lines.append("Binaries")
        for chunk in range(0, len(binaries), 8):
            lines.append(" " + " ".join(binaries[chunk:chunk + 8]))
    lines.append("End")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Solving

def _solve_embedded(m: MilpModel, timeout: Optional[float]) -> SolveResult:
    n = len(m.variables)
    c = np.zeros(n)
    for v, coef in m.objective.items():
        c[m.var_index[v]] = coef
    integrality = np.array([1 if v.kind == "binary" else 0
                            for v in m.variables])
    lb = np.array([v.lb for v in m.variables])
    ub = np.array([v.ub for v in m.variables])
    rows, cols, data, clo, cup = [], [], [], [], []
    for r, con in enumerate(m.constraints):
        for v, coef in con.coeffs.items():
            rows.append(r)
            cols.append(m.var_index[v])
            data.append(coef)
        if con.sense == "<=":
            clo.append(-np.inf)
            cup.append(con.rhs)
        elif con.sense == ">=":
            clo.append(con.rhs)
            cup.append(np.inf)
        else:
            clo.append(con.rhs)
            cup.append(con.rhs)
    A = sparse.csc_matrix((data, (rows, cols)),
                          shape=(len(m.constraints), n))
    # presolve and the solver's own symmetry detection in this HiGHS build
    # can both prune the true optimum of big-M scheduling models and still
    # report optimality; keep them off. The feasibility tolerances are
    # tightened because the default 1e-7 lets objectives drift by ~1e-6
    # across chained precedence constraints.
    options = {"presolve": False, "mip_rel_gap": 1e-9,
               "mip_detect_symmetry": False,
               "primal_feasibility_tolerance": 1e-9,
               "mip_feasibility_tolerance": 1e-9}
    if timeout is not None:
        options["time_limit"] = float(timeout)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        # scipy warns that the tolerance options are forwarded verbatim
        warnings.filterwarnings("ignore", message="Unrecognized options")
        res = _scipy_milp(c=c, constraints=LinearConstraint(A, clo, cup),
                          integrality=integrality, bounds=Bounds(lb, ub),
                          options=options)
    wall = time.perf_counter() - t0
    values = {}
    if res.x is not None:
        values = {v.name: float(res.x[k]) for k, v in enumerate(m.variables)}
    status = {0: "optimal", 1: "feasible", 2: "infeasible",
              3: "unbounded"}.get(res.status, "unknown")
    if status == "feasible" and res.x is None:
        status = "unknown"
    return SolveResult(
        status=status,
        objective=float(res.fun) if res.fun is not None else None,
        values=values, wall_time=wall,
        gap=float(res.mip_gap) if getattr(res, "mip_gap", None) is not None else None,
        node_count=int(res.mip_node_count)
        if getattr(res, "mip_node_count", None) is not None else None,
        dual_bound=float(res.mip_dual_bound)
        if getattr(res, "mip_dual_bound", None) is not None else None)


class ExternalBackend:
    """Solver subprocess contract: `exe model.lp timeout_s out.json`, where
    out.json is {"status": ..., "objective": ..., "values": {var: val}}."""

    def __init__(self, path: str):
        self.path = path

    def solve(self, m: MilpModel, timeout: Optional[float]) -> SolveResult:
        with tempfile.TemporaryDirectory() as tmp:
            lp = Path(tmp) / "model.lp"
            out = Path(tmp) / "solution.json"
            lp.write_text(export_lp(m))
            t0 = time.perf_counter()
            proc = subprocess.run(
                [self.path, str(lp), str(timeout or 0), str(out)],
                capture_output=True, text=True)
            wall = time.perf_counter() - t0
            if proc.returncode != 0 or not out.exists():
                raise RuntimeError(f"external solver failed: {proc.stderr}")
            doc = json.loads(out.read_text())
        return SolveResult(status=doc["status"],
                           objective=doc.get("objective"),
                           values=doc.get("values", {}),
                           wall_time=wall, gap=doc.get("gap"))


def solve(m: MilpModel, timeout: Optional[float] = None,
          backend: Optional[ExternalBackend] = None) -> SolveResult:
    if timeout is not None and timeout <= 0:
        raise GraphError("timeout must be > 0")
    if backend is not None:
        return backend.solve(m, timeout)
    return _solve_embedded(m, timeout)


def extract_schedule(m: MilpModel, r: SolveResult) -> Schedule:
    """Reconstruct the per-batch schedule from rounded variable values."""
    if r.status not in ("optimal", "feasible"):
        raise GraphError(f"cannot extract schedule from status {r.status!r}")
    ctx = m.context
    g, hw, table, L = ctx.graph, ctx.hw, ctx.table, ctx.L

    def binval(name: str) -> int:
        val = r.values.get(name, 0.0)
        if abs(val - round(val)) > INTEGRALITY_TOL:
            raise GraphError(f"integrality violation: {name} = {val}")
        return int(round(val))

    batches = []
    for i in g.tasks:
        for d in hw.devices.values():
            sizes = [p for p in d.batch_sizes if binval(b_name(i, d.id, p))]
            members = tuple(l for l in range(1, L + 1)
                            if binval(x_name(i, d.id, l)))
            if not sizes:
                if members:
                    raise GraphError(f"inputs {members} of {i!r} on {d.id!r} "
                                     "without a batch-size indicator")
                continue
            if len(sizes) > 1 or sizes[0] != len(members):
                raise GraphError(f"inconsistent batch indicators for "
                                 f"({i!r}, {d.id!r}): sizes {sizes}, "
                                 f"members {members}")
            start = max(0.0, r.values.get(s_name(i, d.id), 0.0))
            batches.append(ScheduledBatch(task=i, device=d.id, size=sizes[0],
                                          inputs=members, start=start))
    batches = _tighten_starts(g, hw, table, batches)
    makespan = max((b.start + table.get(b.task, b.device, b.size)
                    for b in batches), default=0.0)
    return Schedule(batches=tuple(batches), objective=makespan, input_count=L)


def _tighten_starts(g, hw, table, batches):
    """Recompute earliest start times for the solver's assignment and
    per-device order; removes sub-tolerance numerical overlaps and never
    increases the makespan."""
    n = len(batches)
    dur = [table.get(b.task, b.device, b.size) for b in batches]
    index = {}
    for k, b in enumerate(batches):
        for l in b.inputs:
            index[(b.task, l)] = k
    succ: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    indeg = [0] * n
    for (i, j) in g.edges:
        om = g.tasks[i].om
        for b in batches:
            if b.task != i:
                continue
            a = index[(i, b.inputs[0])]
            for l in b.inputs:
                bk = index.get((j, l))
                if bk is None:
                    return batches
                comm = hw.comm_time(om, b.device, batches[bk].device)
                if comm is None:
                    return batches
                succ[a].append((bk, dur[a] + comm))
                indeg[bk] += 1
    topo_pos = {t: k for k, t in enumerate(g._topo)}
    by_dev: dict[str, list[int]] = {}
    for k, b in enumerate(batches):
        by_dev.setdefault(b.device, []).append(k)
    for ks in by_dev.values():
        # zero-duration batches first on start ties, or they would be
        # pushed behind a tied long batch and inflate the makespan
        ks.sort(key=lambda k: (batches[k].start, dur[k],
                               topo_pos[batches[k].task]))
        for a, b in zip(ks, ks[1:]):
            succ[a].append((b, dur[a]))
            indeg[b] += 1
    start = [0.0] * n
    stack = [k for k in range(n) if indeg[k] == 0]
    seen = 0
    while stack:
        a = stack.pop()
        seen += 1
        for (b, w) in succ[a]:
            start[b] = max(start[b], start[a] + w)
            indeg[b] -= 1
            if indeg[b] == 0:
                stack.append(b)
    if seen != n:
        return batches
    return [ScheduledBatch(task=b.task, device=b.device, size=b.size,
                           inputs=b.inputs, start=start[k])
            for k, b in enumerate(batches)]
