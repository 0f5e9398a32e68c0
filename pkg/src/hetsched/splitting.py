"""Divide-and-conquer scheduling over weakly-communicating graph modules.

Detects modules (bridges / articulation points for single-channel cuts,
k-edge-connected components for multi-channel cuts), optionally rewrites
articulation points into bridges via a dummy node, and combines per-module
optimal schedules with a dynamic program over channel-endpoint device
pinnings.
"""
from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import networkx as nx

from .core import (DnnGraph, GraphError, HardwareSystem, LatencyTable,
                   Schedule, ScheduledBatch, ScheduleError, TaskNode)
from . import milp as milp_mod

MAX_PIN_TASKS = 4


# ---------------------------------------------------------------------------
# Module detection

def _undirected_shadow(g: DnnGraph) -> nx.Graph:
    sh = nx.Graph()
    sh.add_nodes_from(g.tasks)
    sh.add_edges_from(g.edges)
    return sh


def find_bridges_and_articulation_points(g: DnnGraph):
    """Tarjan low-link bridges and articulation vertices of the undirected
    shadow. Bridges are reported with their original edge orientation.
    Returns (bridges, articulation_points, connected)."""
    sh = _undirected_shadow(g)
    connected = nx.is_connected(sh) if len(sh) else True
    disc: dict[str, int] = {}
    low: dict[str, int] = {}
    parent: dict[str, Optional[str]] = {}
    bridges_u: set[frozenset[str]] = set()
    artic: set[str] = set()
    counter = itertools.count()
    for root in sorted(sh.nodes):
        if root in disc:
            continue
        parent[root] = None
        stack = [(root, iter(sorted(sh.neighbors(root))))]
        disc[root] = low[root] = next(counter)
        root_children = 0
        while stack:
            v, it = stack[-1]
            advanced = False
            for w in it:
                if w not in disc:
                    parent[w] = v
                    disc[w] = low[w] = next(counter)
                    if v == root:
                        root_children += 1
                    stack.append((w, iter(sorted(sh.neighbors(w)))))
                    advanced = True
                    break
                elif w != parent[v]:
                    low[v] = min(low[v], disc[w])
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[v])
                    if low[v] > disc[p]:
                        bridges_u.add(frozenset((p, v)))
                    if p != root and low[v] >= disc[p]:
                        artic.add(p)
        if root_children > 1:
            artic.add(root)
    bridges = [(a, b) for (a, b) in g.edges if frozenset((a, b)) in bridges_u]
    return bridges, artic, connected


def articulation_to_bridge_transform(g: DnnGraph, v: str):
    """Split articulation vertex v by handing its pure-successor side(s) to a
    dummy task connected through a new bridge edge (v, v_dummy).

    The dummy inherits v's output size so downstream transfers keep their
    cost; the caller must co-locate (v, dummy) in every solve and give the
    dummy zero latency (see zero_latency_for).
    """
    bridges, artic, _ = find_bridges_and_articulation_points(g)
    if v not in artic:
        raise GraphError(f"{v!r} is not an articulation point")
    if any(v in e for e in bridges):
        raise GraphError(f"{v!r} is a bridge endpoint; no transform needed")
    sh = _undirected_shadow(g)
    sh.remove_node(v)
    comps = [set(c) for c in nx.connected_components(sh)]
    out_only = []
    for comp in comps:
        touching = [(a, b) for (a, b) in g.edges if (a == v and b in comp)
                    or (b == v and a in comp)]
        if touching and all(a == v for (a, b) in touching):
            out_only.append(comp)
    if not out_only:
        raise GraphError(f"{v!r} has no pure-successor side to split off")
    moved = set().union(*out_only)
    dummy = f"{v}__dup"
    while dummy in g.tasks:
        dummy += "_"
    node = g.tasks[v]
    tasks = list(g.tasks.values()) + [TaskNode(id=dummy, wm=0, im=0, om=node.om)]
    edges = []
    for (a, b) in g.edges:
        if a == v and b in moved:
            edges.append((dummy, b))
        else:
            edges.append((a, b))
    edges.append((v, dummy))
    return DnnGraph(tasks, edges, name=g.name), (v, dummy)


def zero_latency_for(table: LatencyTable, hw: HardwareSystem,
                     tasks: Sequence[str]) -> LatencyTable:
    entries = dict(table.entries)
    for t in tasks:
        for d in hw.devices.values():
            for b in d.batch_sizes:
                entries[(t, d.id, b)] = 0.0
    return LatencyTable(entries)


@dataclass
class ModuleDecomposition:
    modules: list[frozenset[str]]  # topologically ordered partition of V
    cut_edges: dict[tuple[int, int], list[tuple[str, str]]]
    channels: int  # channel budget c the decomposition was built for
    is_chain: bool

    def module_of(self) -> dict[str, int]:
        return {t: k for k, mod in enumerate(self.modules) for t in mod}

    def in_edges(self, t: int) -> list[tuple[int, tuple[str, str]]]:
        out = []
        for (a, b), edges in self.cut_edges.items():
            if b == t:
                out.extend((a, e) for e in edges)
        return out

    def max_cut_width(self) -> int:
        return max((len(e) for e in self.cut_edges.values()), default=0)

    def to_json(self) -> str:
        return json.dumps({
            "channels": self.channels,
            "is_chain": self.is_chain,
            "modules": [sorted(m) for m in self.modules],
            "cuts": [{"from": a, "to": b, "edges": [list(e) for e in edges]}
                     for (a, b), edges in sorted(self.cut_edges.items())],
        }, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModuleDecomposition":
        doc = json.loads(text)
        try:
            modules = [frozenset(m) for m in doc["modules"]]
            cuts = {(int(c["from"]), int(c["to"])):
                    [(e[0], e[1]) for e in c["edges"]]
                    for c in doc["cuts"]}
            return cls(modules=modules, cut_edges=cuts,
                       channels=int(doc["channels"]),
                       is_chain=bool(doc["is_chain"]))
        except (KeyError, TypeError, IndexError) as exc:
            raise GraphError(f"bad decomposition document: {exc}") from exc


def k_edge_components(g: DnnGraph, c: int = 1) -> ModuleDecomposition:
    """Partition into (c+1)-edge-connected components of the undirected
    shadow, ordered topologically; c=1 reduces to bridge decomposition."""
    if c < 1:
        raise GraphError("channel budget c must be >= 1")
    sh = _undirected_shadow(g)
    comps = [frozenset(s) for s in nx.k_edge_components(sh, k=c + 1)]

    # reduced graph over components; merge any cycles so the module order
    # is well defined (the partition of a DAG need not be acyclic)
    comp_of = {t: k for k, comp in enumerate(comps) for t in comp}
    red = nx.DiGraph()
    red.add_nodes_from(range(len(comps)))
    for (a, b) in g.edges:
        if comp_of[a] != comp_of[b]:
            red.add_edge(comp_of[a], comp_of[b])
    sccs = list(nx.strongly_connected_components(red))
    if any(len(s) > 1 for s in sccs):
        merged = []
        for s in sccs:
            merged.append(frozenset().union(*(comps[k] for k in s)))
        comps = merged
        comp_of = {t: k for k, comp in enumerate(comps) for t in comp}
        red = nx.DiGraph()
        red.add_nodes_from(range(len(comps)))
        for (a, b) in g.edges:
            if comp_of[a] != comp_of[b]:
                red.add_edge(comp_of[a], comp_of[b])

    order = list(nx.lexicographical_topological_sort(
        red, key=lambda k: min(comps[k])))
    rank = {k: r for r, k in enumerate(order)}
    modules = [comps[k] for k in order]
    module_of = {t: rank[comp_of[t]] for t in g.tasks}
    cuts: dict[tuple[int, int], list[tuple[str, str]]] = {}
    for (a, b) in g.edges:
        ma, mb = module_of[a], module_of[b]
        if ma != mb:
            cuts.setdefault((ma, mb), []).append((a, b))
    is_chain = all(b == a + 1 for (a, b) in cuts)
    return ModuleDecomposition(modules=modules, cut_edges=cuts, channels=c,
                               is_chain=is_chain)


# ---------------------------------------------------------------------------
# DP combination of per-module schedules

ModuleSolver = Callable[..., tuple[Optional[float], Optional[Schedule], bool]]


def default_module_solver(objective: str = "latency") -> ModuleSolver:
    """Per-module exact solve through the MILP with pinned endpoint devices.
    Returns (objective, schedule, proven_optimal); (None, None, False) when
    the pinning is infeasible or no incumbent was found in time."""

    def solver(sub: DnnGraph, hw: HardwareSystem, table: LatencyTable, L: int,
               pins: dict[str, str], same_device, timeout):
        model = milp_mod.build_milp(sub, hw, table, L, objective=objective,
                                    pins=pins, same_device=same_device)
        res = milp_mod.solve(model, timeout=timeout)
        if res.status in ("optimal", "feasible"):
            sched = milp_mod.extract_schedule(model, res)
            # the schedule's recomputed makespan is what downstream modules
            # must wait for (== the solver objective on exact solves)
            return sched.objective, sched, res.status == "optimal"
        return None, None, False

    return solver


def _met_device(task: str, hw: HardwareSystem, table: LatencyTable, L: int) -> str:
    best = None
    for u in sorted(hw.devices):
        sizes = hw.devices[u].batch_sizes
        b = L if L in sizes else sizes[0]
        ms = table.get(task, u, b)
        if best is None or ms < best[0] - 1e-12:
            best = (ms, u)
    return best[1]


def milp_split(g: DnnGraph, hw: HardwareSystem, table: LatencyTable, L: int,
               decomposition: ModuleDecomposition,
               module_solver: Optional[ModuleSolver] = None,
               timeout: Optional[float] = None,
               objective: str = "latency",
               same_device: Optional[Sequence[tuple[str, str]]] = None,
               max_pins: int = MAX_PIN_TASKS,
               workers: Optional[int] = None) -> Schedule:
    """Solve each module once per endpoint-device pinning and combine the
    results: dp(module, pins) = min over predecessor pins of previous cost
    plus channel communication plus the module optimum.

    Exact for single-channel chains when module solves reach optimality;
    multi-channel and capped-pinning results are flagged quasi-optimal.
    """
    if module_solver is None:
        module_solver = default_module_solver(objective)
    same_pairs = list(same_device or ())
    mod_of = decomposition.module_of()
    T = len(decomposition.modules)
    flags: set[str] = set()
    if decomposition.max_cut_width() > 1:
        flags.add("multi-channel")
    if not decomposition.is_chain:
        flags.add("non-chain")
    if L > 1 and decomposition.max_cut_width() > 1:
        flags.add("quasi-optimal")

    # a zero-byte transfer costs nothing on any linked device pair, so its
    # endpoints need no cross-module coordination when every pair is linked
    dev_list = sorted(hw.devices)
    full_mesh = all((u, v) in hw.bandwidth
                    for u in dev_list for v in dev_list if u != v)

    def needs_pin(src: str) -> bool:
        return g.tasks[src].om > 0 or not full_mesh

    # interface bookkeeping: which cut-edge sources stay live after module t
    out_src: list[list[str]] = [[] for _ in range(T)]
    in_tgt: list[list[str]] = [[] for _ in range(T)]
    last_use: dict[str, int] = {}
    for (a, b), edges in decomposition.cut_edges.items():
        for (src, tgt) in edges:
            if not needs_pin(src):
                continue
            if src not in out_src[a]:
                out_src[a].append(src)
            if tgt not in in_tgt[b]:
                in_tgt[b].append(tgt)
            last_use[src] = max(last_use.get(src, -1), b)

    subgraphs = [g.subgraph(mod, name=f"module{t}")
                 for t, mod in enumerate(decomposition.modules)]
    dev_ids = sorted(hw.devices)

    def pin_combos(tasks: list[str]):
        if len(tasks) > max_pins:
            flags.add("quasi-optimal")
            flags.add("heuristic-pinning")
            yield {t: _met_device(t, hw, table, L) for t in tasks}
            return
        for combo in itertools.product(dev_ids, repeat=len(tasks)):
            pins = dict(zip(tasks, combo))
            ok = True
            for (ta, tb) in same_pairs:
                if ta in pins and tb in pins and pins[ta] != pins[tb]:
                    ok = False
                    break
            if ok:
                yield pins

    # memoized module solves, dispatched concurrently per module
    def solve_module_all(t: int) -> dict[tuple, tuple]:
        pin_tasks = sorted(set(in_tgt[t]) | set(out_src[t]))
        combos = list(pin_combos(pin_tasks))
        local_pairs = [(a, b) for (a, b) in same_pairs
                       if a in decomposition.modules[t]
                       and b in decomposition.modules[t]]

        def run(pins):
            return module_solver(subgraphs[t], hw, table, L, pins,
                                 local_pairs, timeout)

        if workers and workers > 1 and len(combos) > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(run, combos))
        else:
            results = [run(p) for p in combos]
        table_t = {}
        for pins, (obj, sched, optimal) in zip(combos, results):
            if obj is None:
                continue
            if not optimal:
                flags.add("quasi-optimal")
            table_t[tuple(sorted(pins.items()))] = (obj, sched, pins)
        return table_t

    # dp over live interface-device states
    states: dict[tuple, tuple[float, list]] = {(): (0.0, [])}
    for t in range(T):
        solved = solve_module_all(t)
        if not solved and decomposition.modules[t]:
            raise ScheduleError(f"no feasible pinning for module {t}")
        nxt: dict[tuple, tuple[float, list]] = {}
        for state, (cost, trail) in sorted(states.items()):
            held = dict(state)
            for key, (obj, sched, pins) in sorted(solved.items()):
                delay = 0.0
                ok = True
                for (a, (src, tgt)) in decomposition.in_edges(t):
                    if not needs_pin(src):
                        continue
                    comm = hw.comm_time(g.tasks[src].om, held[src], pins[tgt])
                    if comm is None:
                        ok = False
                        break
                    delay = max(delay, comm)
                if not ok:
                    continue
                new_cost = cost + delay + obj
                carried = {s: d for s, d in held.items() if last_use[s] > t}
                for s in out_src[t]:
                    if last_use[s] > t:
                        carried[s] = pins[s]
                new_state = tuple(sorted(carried.items()))
                entry = nxt.get(new_state)
                if entry is None or new_cost < entry[0] - 1e-12:
                    nxt[new_state] = (new_cost,
                                      trail + [(t, sched, cost + delay)])
        if not nxt:
            raise ScheduleError(f"no feasible pinning for module {t} "
                                "(missing links)")
        states = nxt

    best_state = min(states, key=lambda s: states[s][0])
    total, trail = states[best_state]
    batches: list[ScheduledBatch] = []
    for (t, sched, offset) in trail:
        for b in sched.batches:
            batches.append(ScheduledBatch(task=b.task, device=b.device,
                                          size=b.size, inputs=b.inputs,
                                          start=b.start + offset))
    return Schedule(batches=tuple(batches), objective=total, input_count=L,
                    flags=tuple(sorted(flags)))
