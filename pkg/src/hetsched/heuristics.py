"""Baseline schedulers: best-device, MET, Greedy, HEFT, simulated annealing,
(1+1) EA, and batched variants of the list heuristics.

All of them share the integer-string genome (one device per task, positions
in BFS topological order) and the same earliest-feasible-start decoder, so
fitness values are directly comparable.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (DnnGraph, GraphError, HardwareSystem, LatencyTable,
                   Schedule, ScheduledBatch, ScheduleError,
                   bfs_topological_order)

INF = float("inf")


@dataclass(frozen=True)
class MappingGenome:
    genes: tuple[int, ...]  # device index per task, BFS topological positions
    order: tuple[str, ...]  # the task ordering the positions refer to

    def __post_init__(self):
        if len(self.genes) != len(self.order):
            raise GraphError("genome length must equal task count")


def genome_from_map(g: DnnGraph, hw: HardwareSystem,
                    mapping: dict[str, str]) -> MappingGenome:
    order = tuple(bfs_topological_order(g))
    dev_ids = sorted(hw.devices)
    idx = {u: k for k, u in enumerate(dev_ids)}
    return MappingGenome(genes=tuple(idx[mapping[t]] for t in order),
                         order=order)


class _ListScheduler:
    """Incremental earliest-feasible-start placement of per-task batches."""

    def __init__(self, g: DnnGraph, hw: HardwareSystem, table: LatencyTable,
                 L: int, insertion: bool = False):
        self.g, self.hw, self.table, self.L = g, hw, table, L
        self.insertion = insertion
        self.dev_busy: dict[str, list[tuple[float, float]]] = \
            {u: [] for u in hw.devices}
        self.placed: dict[tuple[str, int], tuple[str, float]] = {}  # -> dev, end
        self.batches: list[ScheduledBatch] = []
        self.makespan = 0.0
        # preemptive residency: inputs/outputs per batch member plus the
        # task weights once per device
        self.mem_used: dict[str, float] = {u: 0.0 for u in hw.devices}
        self.tasks_on: dict[str, set[str]] = {u: set() for u in hw.devices}

    def _mem_extra(self, task: str, dev: str, size: int) -> float:
        node = self.g.tasks[task]
        extra = (node.im + node.om) * size
        if task not in self.tasks_on[dev]:
            extra += node.wm
        return extra

    def ready_time(self, task: str, inputs: Sequence[int],
                   dev: str) -> Optional[float]:
        ready = 0.0
        for p in self.g.pred[task]:
            om = self.g.tasks[p].om
            for l in inputs:
                src, end = self.placed[(p, l)]
                comm = self.hw.comm_time(om, src, dev)
                if comm is None:
                    return None
                ready = max(ready, end + comm)
        return ready

    def _slot(self, dev: str, ready: float, dur: float) -> float:
        busy = self.dev_busy[dev]
        if not self.insertion:
            last = busy[-1][1] if busy else 0.0
            return max(ready, last)
        t = ready
        for (s, e) in busy:
            if t + dur <= s + 1e-12:
                return t
            t = max(t, e)
        return t

    def try_place(self, task: str, dev: str,
                  inputs: Sequence[int]) -> Optional[tuple[float, float]]:
        """Earliest (start, end) of a batch without committing it."""
        size = len(inputs)
        if size not in self.hw.devices[dev].batch_sizes:
            return None
        if self.mem_used[dev] + self._mem_extra(task, dev, size) \
                > self.hw.devices[dev].memory + 1e-9:
            return None
        ready = self.ready_time(task, inputs, dev)
        if ready is None:
            return None
        dur = self.table.get(task, dev, size)
        start = self._slot(dev, ready, dur)
        return start, start + dur

    def commit(self, task: str, dev: str, inputs: Sequence[int],
               start: float, end: float) -> None:
        busy = self.dev_busy[dev]
        busy.append((start, end))
        busy.sort()
        self.mem_used[dev] += self._mem_extra(task, dev, len(inputs))
        self.tasks_on[dev].add(task)
        for l in inputs:
            self.placed[(task, l)] = (dev, end)
        self.batches.append(ScheduledBatch(
            task=task, device=dev, size=len(inputs),
            inputs=tuple(inputs), start=start))
        self.makespan = max(self.makespan, end)

    def schedule(self) -> Schedule:
        return Schedule(batches=tuple(self.batches), objective=self.makespan,
                        input_count=self.L)


def decode(genome: MappingGenome, g: DnnGraph, hw: HardwareSystem,
           table: LatencyTable, L: int) -> Optional[Schedule]:
    """List-schedule the genome's mapping in BFS topological order at the
    earliest feasible start. Returns None for structurally infeasible
    genomes (missing links or unsupported full-batch size)."""
    dev_ids = sorted(hw.devices)
    if any(not 0 <= k < len(dev_ids) for k in genome.genes):
        raise GraphError("gene value out of device range")
    ls = _ListScheduler(g, hw, table, L)
    inputs = tuple(range(1, L + 1))
    for pos, task in enumerate(genome.order):
        dev = dev_ids[genome.genes[pos]]
        spot = ls.try_place(task, dev, inputs)
        if spot is None:
            return None
        ls.commit(task, dev, inputs, *spot)
    return ls.schedule()


def fitness(genome: MappingGenome, g, hw, table, L) -> float:
    s = decode(genome, g, hw, table, L)
    return INF if s is None else s.objective


def best_device(g: DnnGraph, hw: HardwareSystem, table: LatencyTable,
                L: int) -> Schedule:
    """Whole graph serially on the single fastest device."""
    best = None
    for u in sorted(hw.devices):
        if L not in hw.devices[u].batch_sizes:
            continue
        total = sum(table.get(i, u, L) for i in g.tasks)
        if best is None or total < best[0] - 1e-12:
            best = (total, u)
    if best is None:
        raise ScheduleError(f"no device supports batch size {L}")
    genome = genome_from_map(g, hw, {i: best[1] for i in g.tasks})
    s = decode(genome, g, hw, table, L)
    if s is None:
        raise ScheduleError(f"device {best[1]!r} cannot hold the whole graph")
    return s


def met(g: DnnGraph, hw: HardwareSystem, table: LatencyTable,
        L: int) -> Schedule:
    """Each task on its minimum-execution-time device, ties to the
    lexicographically smallest device id."""
    mapping = {}
    for i in g.tasks:
        best = None
        for u in sorted(hw.devices):
            if L not in hw.devices[u].batch_sizes:
                continue
            ms = table.get(i, u, L)
            if best is None or ms < best[0] - 1e-12:
                best = (ms, u)
        if best is None:
            raise ScheduleError(f"no device supports batch size {L}")
        mapping[i] = best[1]
    s = decode(genome_from_map(g, hw, mapping), g, hw, table, L)
    if s is None:
        raise ScheduleError("MET mapping infeasible (missing links or memory)")
    return s


def greedy(g: DnnGraph, hw: HardwareSystem, table: LatencyTable,
           L: int) -> Schedule:
    """Tasks in BFS topological order, each placed where the partial-schedule
    makespan (communication and queueing included) grows the least."""
    ls = _ListScheduler(g, hw, table, L)
    inputs = tuple(range(1, L + 1))
    for task in bfs_topological_order(g):
        choice = None
        for u in sorted(hw.devices):
            spot = ls.try_place(task, u, inputs)
            if spot is None:
                continue
            cand = max(ls.makespan, spot[1])
            if choice is None or cand < choice[0] - 1e-12:
                choice = (cand, u, spot)
        if choice is None:
            raise ScheduleError(f"no feasible placement for task {task!r}")
        ls.commit(task, choice[1], inputs, *choice[2])
    return ls.schedule()


def _upward_ranks(g: DnnGraph, hw: HardwareSystem, table: LatencyTable,
                  L: int) -> dict[str, float]:
    dev_ids = sorted(hw.devices)
    link_inv = [1.0 / hw.bandwidth[(u, v)]
                for u in dev_ids for v in dev_ids
                if u != v and (u, v) in hw.bandwidth]
    mean_inv_bw = sum(link_inv) / len(link_inv) if link_inv else 0.0

    def mean_exec(i):
        vals = [table.get(i, u, L) for u in dev_ids
                if L in hw.devices[u].batch_sizes]
        return sum(vals) / len(vals) if vals else 0.0

    rank: dict[str, float] = {}
    for i in reversed(bfs_topological_order(g)):
        down = 0.0
        for j in g.succ[i]:
            down = max(down, g.tasks[i].om * mean_inv_bw + rank[j])
        rank[i] = mean_exec(i) + down
    return rank


def heft(g: DnnGraph, hw: HardwareSystem, table: LatencyTable,
         L: int) -> Schedule:
    """Upward-rank priorities with arithmetic-mean costs, then insertion-based
    earliest-finish-time device selection."""
    rank = _upward_ranks(g, hw, table, L)
    order = bfs_topological_order(g)
    topo_pos = {t: k for k, t in enumerate(order)}
    priority = sorted(order, key=lambda t: (-rank[t], topo_pos[t]))
    ls = _ListScheduler(g, hw, table, L, insertion=True)
    inputs = tuple(range(1, L + 1))
    for task in priority:
        choice = None
        for u in sorted(hw.devices):
            spot = ls.try_place(task, u, inputs)
            if spot is None:
                continue
            if choice is None or spot[1] < choice[0] - 1e-12:
                choice = (spot[1], u, spot)
        if choice is None:
            raise ScheduleError(f"no feasible placement for task {task!r}")
        ls.commit(task, choice[1], inputs, *choice[2])
    return ls.schedule()


def simulated_annealing(g: DnnGraph, hw: HardwareSystem, table: LatencyTable,
                        L: int, seed: int = 0, budget: int = 2000,
                        t0_fraction: float = 0.1,
                        alpha: float = 0.995) -> Schedule:
    """Single-gene-reassignment neighborhood, geometric cooling, Metropolis
    acceptance; starts from the greedy mapping, returns the best-ever genome
    decoded. Deterministic given the seed."""
    rng = np.random.default_rng(seed)
    start = greedy(g, hw, table, L)
    mapping = {b.task: b.device for b in start.batches}
    cur = genome_from_map(g, hw, mapping)
    cur_fit = fitness(cur, g, hw, table, L)
    best, best_fit = cur, cur_fit
    temp = max(t0_fraction * cur_fit, 1e-9)
    n_dev = len(hw.devices)
    genes = list(cur.genes)
    for _ in range(budget):
        pos = int(rng.integers(len(genes)))
        old = genes[pos]
        if n_dev > 1:
            new = int(rng.integers(n_dev - 1))
            if new >= old:
                new += 1
        else:
            new = old
        genes[pos] = new
        cand = MappingGenome(genes=tuple(genes), order=cur.order)
        cand_fit = fitness(cand, g, hw, table, L)
        delta = cand_fit - cur_fit
        accept = delta <= 0 or (math.isfinite(cand_fit)
                                and rng.random() < math.exp(-delta / temp))
        if accept:
            cur, cur_fit = cand, cand_fit
            if cand_fit < best_fit:
                best, best_fit = cand, cand_fit
        else:
            genes[pos] = old
        temp *= alpha
    out = decode(best, g, hw, table, L)
    assert out is not None
    return out


def one_plus_one_ea(g: DnnGraph, hw: HardwareSystem, table: LatencyTable,
                    L: int, seed: int = 0, budget: int = 2000,
                    biased: bool = True) -> Schedule:
    """(1+1) EA: mutate each gene independently with probability 1/|V|,
    accept when not worse. Biased initialisation starts from the MET
    mapping, unbiased from uniform random genes."""
    rng = np.random.default_rng(seed)
    order = tuple(bfs_topological_order(g))
    n_dev = len(hw.devices)
    if biased:
        cur = genome_from_map(
            g, hw, {b.task: b.device for b in met(g, hw, table, L).batches})
    else:
        cur = MappingGenome(
            genes=tuple(int(v) for v in rng.integers(n_dev, size=len(order))),
            order=order)
    cur_fit = fitness(cur, g, hw, table, L)
    p = 1.0 / max(len(order), 1)
    genes = list(cur.genes)
    for _ in range(budget):
        child = list(genes)
        for pos in range(len(child)):
            if rng.random() < p:
                child[pos] = int(rng.integers(n_dev))
        cand = MappingGenome(genes=tuple(child), order=order)
        cand_fit = fitness(cand, g, hw, table, L)
        if cand_fit <= cur_fit:
            genes, cur_fit = child, cand_fit
    final = decode(MappingGenome(genes=tuple(genes), order=order),
                   g, hw, table, L)
    if final is None:
        raise ScheduleError("EA produced an infeasible genome")
    return final


def _split_sizes(L: int) -> list[int]:
    sizes = []
    for k in (1, 2, 3, 4):
        if (L * k) % 4 == 0:
            sizes.append(L * k // 4)
    return sorted(set(s for s in sizes if s >= 1))


def _decompositions(L: int, sizes: list[int], max_parts: int):
    """Multisets of allowed sub-batch sizes summing to L."""
    out = []

    def rec(remaining, start, acc):
        if remaining == 0:
            out.append(tuple(acc))
            return
        if len(acc) >= max_parts:
            return
        for k in range(start, len(sizes)):
            if sizes[k] <= remaining:
                rec(remaining - sizes[k], k, acc + [sizes[k]])

    rec(L, 0, [])
    return out


def batched_variant(algorithm: str, g: DnnGraph, hw: HardwareSystem,
                    table: LatencyTable, L: int,
                    splits: Optional[Sequence[int]] = None) -> Schedule:
    """bMET / bGreedy / bHEFT: the batch of L inputs may be decomposed into
    sub-batches of L/4, L/2, 3L/4 or L (where integral and supported), each
    sub-batch placed on its own device by the base heuristic's rule."""
    if algorithm not in ("met", "greedy", "heft"):
        raise GraphError(f"no batched variant for {algorithm!r}")
    sizes = sorted(set(splits)) if splits else _split_sizes(L)
    decomps = _decompositions(L, sizes, max_parts=len(hw.devices))
    if (L,) not in decomps and L in sizes:
        decomps.append((L,))
    dev_ids = sorted(hw.devices)

    if algorithm == "heft":
        rank = _upward_ranks(g, hw, table, L)
        order = bfs_topological_order(g)
        topo_pos = {t: k for k, t in enumerate(order)}
        task_order = sorted(order, key=lambda t: (-rank[t], topo_pos[t]))
    else:
        task_order = bfs_topological_order(g)

    ls = _ListScheduler(g, hw, table, L, insertion=(algorithm == "heft"))
    for task in task_order:
        choice = None  # (key, parts) with parts = [(dev, inputs, start, end)]
        for decomp in decomps:
            for devs in itertools.permutations(dev_ids, len(decomp)):
                if any(decomp[k] not in hw.devices[devs[k]].batch_sizes
                       for k in range(len(decomp))):
                    continue
                parts = []
                nxt = 1
                ok = True
                tentative_busy = {u: list(ls.dev_busy[u]) for u in dev_ids}
                for k, size in enumerate(decomp):
                    inputs = tuple(range(nxt, nxt + size))
                    nxt += size
                    dev = devs[k]
                    ready = ls.ready_time(task, inputs, dev)
                    if ready is None:
                        ok = False
                        break
                    dur = ls.table.get(task, dev, size)
                    busy = tentative_busy[dev]
                    if ls.insertion:
                        start = ready
                        for (s, e) in busy:
                            if start + dur <= s + 1e-12:
                                break
                            start = max(start, e)
                    else:
                        start = max(ready, busy[-1][1] if busy else 0.0)
                    busy.append((start, start + dur))
                    busy.sort()
                    parts.append((dev, inputs, start, start + dur))
                if not ok:
                    continue
                finish = max(p[3] for p in parts)
                if algorithm == "met":
                    key = (max(table.get(task, p[0], len(p[1]))
                               for p in parts), finish)
                else:  # greedy and heft both minimize the finish time
                    key = (finish,)
                if choice is None or key < choice[0]:
                    choice = (key, parts)
        if choice is None:
            raise ScheduleError(f"no realizable batch decomposition for "
                                f"{task!r}")
        for (dev, inputs, start, end) in choice[1]:
            ls.commit(task, dev, inputs, start, end)
    return ls.schedule()
