"""Brute-force optimal scheduler for tiny instances.

Ground truth for cross-checking the MILP, the splitting heuristic, the
bounds, and every baseline. Enumerates all feasible device assignments,
batch decompositions, and per-device batch orderings; start times follow
from a longest-path pass over the induced order.
"""
from __future__ import annotations

import itertools
from typing import Optional

from .core import (DnnGraph, HardwareSystem, LatencyTable, Schedule,
                   ScheduledBatch, ScheduleError)

MAX_TASKS = 8
MAX_DEVICES = 3
MAX_INPUTS = 2


def _placements_for_task(task: str, dev_ids, hw: HardwareSystem, L: int):
    """All ways to spread inputs 1..L of one task over devices such that the
    per-device group size is a supported batch size. Lexicographic order."""
    out = []
    for combo in itertools.product(range(len(dev_ids)), repeat=L):
        ok = True
        for k in set(combo):
            size = combo.count(k)
            if size not in hw.devices[dev_ids[k]].batch_sizes:
                ok = False
                break
        if ok:
            out.append(combo)
    return out


def _linear_extensions(items, reach):
    """All orderings of `items` consistent with the partial order `reach`
    (reach[a][b] true when a must come before b)."""
    if not items:
        yield ()
        return
    for k, a in enumerate(items):
        rest = items[:k] + items[k + 1:]
        if any(reach[b][a] for b in rest):
            continue
        for tail in _linear_extensions(rest, reach):
            yield (a,) + tail


def _batch_reachability(n, prec_edges):
    """Transitive closure of the inter-batch precedence relation."""
    direct = [[False] * n for _ in range(n)]
    for (a, b, _) in prec_edges:
        direct[a][b] = True
    reach = [row[:] for row in direct]
    for k in range(n):
        rk = reach[k]
        for a in range(n):
            if reach[a][k]:
                ra = reach[a]
                for b in range(n):
                    if rk[b]:
                        ra[b] = True
    return reach


def _earliest_starts(batches, prec_edges, order_pairs, durations):
    """Longest-path start times over precedence plus per-device sequencing.
    Returns None if the combined relation is cyclic."""
    n = len(batches)
    succ = [[] for _ in range(n)]
    indeg = [0] * n
    for (a, b, w) in prec_edges:
        succ[a].append((b, w))
        indeg[b] += 1
    for (a, b) in order_pairs:
        succ[a].append((b, durations[a]))
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
        return None
    return start


def brute_force(g: DnnGraph, hw: HardwareSystem, table: LatencyTable, L: int,
                objective: str = "latency") -> Schedule:
    """Globally optimal schedule; deterministic tie-break by the
    lexicographically smallest assignment vector."""
    if len(g.tasks) > MAX_TASKS:
        raise ScheduleError(f"oracle cap exceeded: {len(g.tasks)} tasks")
    if len(hw.devices) > MAX_DEVICES:
        raise ScheduleError(f"oracle cap exceeded: {len(hw.devices)} devices")
    if L > MAX_INPUTS:
        raise ScheduleError(f"oracle cap exceeded: L={L}")

    dev_ids = sorted(hw.devices)
    task_ids = sorted(g.tasks)
    per_task = {i: _placements_for_task(i, dev_ids, hw, L) for i in task_ids}
    for i, opts in per_task.items():
        if not opts:
            raise ScheduleError(f"infeasible batching for task {i!r}")

    best: Optional[tuple[float, list[ScheduledBatch]]] = None
    for assign in itertools.product(*(per_task[i] for i in task_ids)):
        placement = {task_ids[k]: assign[k] for k in range(len(task_ids))}

        # link feasibility per edge and input
        feasible = True
        for (i, j) in g.edges:
            for l in range(L):
                u = dev_ids[placement[i][l]]
                v = dev_ids[placement[j][l]]
                if hw.comm_time(g.tasks[i].om, u, v) is None:
                    feasible = False
                    break
            if not feasible:
                break
        if not feasible:
            continue

        # form batches
        batches: list[tuple[str, str, tuple[int, ...]]] = []
        index: dict[tuple[str, int], int] = {}
        for i in task_ids:
            groups: dict[str, list[int]] = {}
            for l in range(L):
                groups.setdefault(dev_ids[placement[i][l]], []).append(l + 1)
            for dev, members in groups.items():
                for l in members:
                    index[(i, l)] = len(batches)
                batches.append((i, dev, tuple(members)))

        # memory accounting per device
        ok = True
        for dev in dev_ids:
            used = 0.0
            for (i, d, members) in batches:
                if d == dev:
                    used += (g.tasks[i].im + g.tasks[i].om) * len(members) \
                        + g.tasks[i].wm
            if used > hw.devices[dev].memory + 1e-9:
                ok = False
                break
        if not ok:
            continue

        durations = [table.get(i, d, len(members))
                     for (i, d, members) in batches]
        prec = []
        for (i, j) in g.edges:
            om = g.tasks[i].om
            for l in range(1, L + 1):
                a, b = index[(i, l)], index[(j, l)]
                comm = hw.comm_time(om, batches[a][1], batches[b][1])
                prec.append((a, b, durations[a] + comm))
        by_dev: dict[str, list[int]] = {}
        for k, (_, d, _) in enumerate(batches):
            by_dev.setdefault(d, []).append(k)

        # only per-device orders consistent with precedence can be optimal:
        # a predecessor batch must end before its successor starts
        reach = _batch_reachability(len(batches), prec)
        for combo in itertools.product(
                *(_linear_extensions(tuple(ks), reach)
                  for ks in by_dev.values())):
            order_pairs = [(seq[k], seq[k + 1])
                           for seq in combo for k in range(len(seq) - 1)]
            starts = _earliest_starts(batches, prec, order_pairs, durations)
            if starts is None:
                continue
            makespan = max(starts[k] + durations[k]
                           for k in range(len(batches)))
            if best is None or makespan < best[0] - 1e-9:
                sched = [ScheduledBatch(task=i, device=d, size=len(members),
                                        inputs=members, start=starts[k])
                         for k, (i, d, members) in enumerate(batches)]
                best = (makespan, sched)

    if best is None:
        raise ScheduleError("no feasible schedule (missing links or memory)")
    return Schedule(batches=tuple(best[1]), objective=best[0], input_count=L)
