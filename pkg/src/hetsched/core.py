"""Task graphs, hardware descriptions, latency tables and schedule validation.

Units are fixed across the toolkit: time in milliseconds, memory in bytes,
bandwidth in bytes per millisecond. Feasibility comparisons use an absolute
tolerance of 1e-6 ms.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

TOL = 1e-6


class GraphError(ValueError):
    pass


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class TaskNode:
    id: str
    wm: float = 0.0  # weight bytes
    im: float = 0.0  # input tensor bytes
    om: float = 0.0  # output tensor bytes

    def __post_init__(self):
        if self.wm < 0 or self.im < 0 or self.om < 0:
            raise GraphError(f"task {self.id!r}: wm/im/om must be >= 0")


class DnnGraph:
    """Directed acyclic task graph. Immutable after construction."""

    def __init__(self, tasks: Iterable[TaskNode], edges: Iterable[tuple[str, str]],
                 name: Optional[str] = None):
        self.tasks: dict[str, TaskNode] = {}
        for t in tasks:
            if t.id in self.tasks:
                raise GraphError(f"duplicate task id {t.id!r}")
            self.tasks[t.id] = t
        self.edges: list[tuple[str, str]] = []
        self.succ: dict[str, list[str]] = {i: [] for i in self.tasks}
        self.pred: dict[str, list[str]] = {i: [] for i in self.tasks}
        seen = set()
        for (a, b) in edges:
            if a not in self.tasks or b not in self.tasks:
                raise GraphError(f"dangling edge endpoint in ({a!r}, {b!r})")
            if (a, b) in seen:
                raise GraphError(f"duplicate edge ({a!r}, {b!r})")
            seen.add((a, b))
            self.edges.append((a, b))
            self.succ[a].append(b)
            self.pred[b].append(a)
        self.name = name
        self._topo = _kahn_order(self.tasks, self.succ, self.pred)  # raises on cycle

    def __len__(self) -> int:
        return len(self.tasks)

    def task_ids(self) -> list[str]:
        return list(self.tasks)

    def subgraph(self, keep: Iterable[str], name: Optional[str] = None) -> "DnnGraph":
        keep = set(keep)
        tasks = [self.tasks[i] for i in self.tasks if i in keep]
        edges = [(a, b) for (a, b) in self.edges if a in keep and b in keep]
        return DnnGraph(tasks, edges, name=name)

    def sources(self) -> list[str]:
        return [i for i in self.tasks if not self.pred[i]]

    def sinks(self) -> list[str]:
        return [i for i in self.tasks if not self.succ[i]]


def _kahn_order(tasks: Mapping[str, TaskNode], succ, pred) -> list[str]:
    indeg = {i: len(pred[i]) for i in tasks}
    heap = [i for i in tasks if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, j)
    if len(order) != len(tasks):
        raise GraphError("cycle detected")
    return order


def bfs_topological_order(g: DnnGraph) -> list[str]:
    """Kahn's method, ties broken by ascending task id. Deterministic."""
    return list(g._topo)


def transitive_closure(g: DnnGraph) -> dict[str, frozenset[str]]:
    """Map each task to the set of tasks reachable by a directed path."""
    desc: dict[str, set[str]] = {i: set() for i in g.tasks}
    for i in reversed(g._topo):
        for j in g.succ[i]:
            desc[i].add(j)
            desc[i] |= desc[j]
    return {i: frozenset(s) for i, s in desc.items()}


@dataclass(frozen=True)
class Device:
    id: str
    memory: float
    batch_sizes: tuple[int, ...]

    def __post_init__(self):
        if self.memory <= 0:
            raise GraphError(f"device {self.id!r}: memory must be > 0")
        bs = self.batch_sizes
        if not bs or any(b < 1 for b in bs) or list(bs) != sorted(set(bs)):
            raise GraphError(f"device {self.id!r}: batch sizes must be "
                             "non-empty, strictly ascending, all >= 1")


class HardwareSystem:
    def __init__(self, devices: Iterable[Device],
                 bandwidth: Mapping[tuple[str, str], float]):
        self.devices: dict[str, Device] = {}
        for d in devices:
            if d.id in self.devices:
                raise GraphError(f"duplicate device id {d.id!r}")
            self.devices[d.id] = d
        self.bandwidth: dict[tuple[str, str], float] = {}
        for (a, b), v in bandwidth.items():
            if a not in self.devices or b not in self.devices:
                raise GraphError(f"bandwidth references unknown device ({a!r}, {b!r})")
            if v <= 0:
                raise GraphError(f"bandwidth ({a!r}, {b!r}) must be > 0")
            self.bandwidth[(a, b)] = float(v)

    def device_ids(self) -> list[str]:
        return list(self.devices)

    def comm_time(self, nbytes: float, src: str, dst: str) -> Optional[float]:
        """Transfer time in ms; 0 on the same device, None if no link exists."""
        if src == dst:
            return 0.0
        beta = self.bandwidth.get((src, dst))
        if beta is None:
            return None
        return nbytes / beta


class LatencyTable:
    def __init__(self, entries: Mapping[tuple[str, str, int], float]):
        self.entries: dict[tuple[str, str, int], float] = {}
        for (task, dev, b), ms in entries.items():
            if ms < 0:
                raise GraphError(f"latency for ({task},{dev},{b}) must be >= 0")
            self.entries[(task, dev, int(b))] = float(ms)

    def get(self, task: str, dev: str, batch: int) -> float:
        try:
            return self.entries[(task, dev, batch)]
        except KeyError:
            raise GraphError(f"missing latency entry for ({task!r}, {dev!r}, {batch})")

    def has(self, task: str, dev: str, batch: int) -> bool:
        return (task, dev, batch) in self.entries

    def check_complete(self, g: DnnGraph, hw: HardwareSystem) -> None:
        for i in g.tasks:
            for d in hw.devices.values():
                for b in d.batch_sizes:
                    self.get(i, d.id, b)


@dataclass(frozen=True)
class ScheduledBatch:
    task: str
    device: str
    size: int
    inputs: tuple[int, ...]  # 1-based input indices
    start: float


@dataclass(frozen=True)
class Schedule:
    batches: tuple[ScheduledBatch, ...]
    objective: float  # makespan C in ms
    input_count: int
    flags: tuple[str, ...] = ()

    def assignments(self) -> dict[tuple[str, int], tuple[str, float]]:
        out = {}
        for b in self.batches:
            for l in b.inputs:
                out[(b.task, l)] = (b.device, b.start)
        return out


def validate_schedule(g: DnnGraph, hw: HardwareSystem, table: LatencyTable,
                      s: Schedule, tol: float = TOL) -> float:
    """Check every Schedule invariant; return the makespan.

    Raises ScheduleError naming the offending edge/batch on the first
    violation found.
    """
    L = s.input_count
    by_input: dict[tuple[str, int], ScheduledBatch] = {}
    ends: dict[ScheduledBatch, float] = {}
    per_device: dict[str, list[ScheduledBatch]] = {}
    for b in s.batches:
        if b.task not in g.tasks:
            raise ScheduleError(f"unknown task {b.task!r}")
        if b.device not in hw.devices:
            raise ScheduleError(f"unknown device {b.device!r}")
        if b.size != len(b.inputs) or len(set(b.inputs)) != len(b.inputs):
            raise ScheduleError(f"batch {b.task}@{b.device}: size {b.size} "
                                f"inconsistent with inputs {b.inputs}")
        if b.size not in hw.devices[b.device].batch_sizes:
            raise ScheduleError(f"batch {b.task}@{b.device}: unsupported "
                                f"batch size {b.size}")
        if b.start < -tol:
            raise ScheduleError(f"batch {b.task}@{b.device}: negative start")
        for l in b.inputs:
            if not 1 <= l <= L:
                raise ScheduleError(f"batch {b.task}@{b.device}: input index {l} "
                                    f"out of range 1..{L}")
            key = (b.task, l)
            if key in by_input:
                raise ScheduleError(f"({b.task}, input {l}) assigned more than once")
            by_input[key] = b
        ends[b] = b.start + table.get(b.task, b.device, b.size)
        per_device.setdefault(b.device, []).append(b)

    for i in g.tasks:
        for l in range(1, L + 1):
            if (i, l) not in by_input:
                raise ScheduleError(f"({i}, input {l}) not assigned")

    # precedence with communication, per input
    for (i, j) in g.edges:
        om = g.tasks[i].om
        for l in range(1, L + 1):
            bi, bj = by_input[(i, l)], by_input[(j, l)]
            comm = hw.comm_time(om, bi.device, bj.device)
            if comm is None:
                raise ScheduleError(
                    f"precedence violation on edge ({i}->{j}), input {l}: "
                    f"no link {bi.device}->{bj.device}")
            if bj.start + tol < ends[bi] + comm:
                raise ScheduleError(
                    f"precedence violation on edge ({i}->{j}), input {l}: "
                    f"start {bj.start} < {ends[bi]} + comm {comm}")

    # no overlap of distinct batches on the same device (open intervals)
    for dev, batches in per_device.items():
        batches = sorted(batches, key=lambda b: (b.start, ends[b]))
        for a in range(len(batches)):
            for b in range(a + 1, len(batches)):
                b1, b2 = batches[a], batches[b]
                if max(b1.start, b2.start) < min(ends[b1], ends[b2]) - tol:
                    raise ScheduleError(
                        f"overlap on {dev}: batch {b1.task}{b1.inputs} "
                        f"[{b1.start},{ends[b1]}] and batch {b2.task}{b2.inputs} "
                        f"[{b2.start},{ends[b2]}]")

    # preemptive-residency memory accounting per device
    for dev_id, dev in hw.devices.items():
        used = 0.0
        tasks_seen = set()
        for b in per_device.get(dev_id, ()):
            node = g.tasks[b.task]
            used += (node.im + node.om) * b.size
            if b.task not in tasks_seen:
                used += node.wm
                tasks_seen.add(b.task)
        if used > dev.memory + tol:
            raise ScheduleError(f"memory capacity exceeded on {dev_id}: "
                                f"{used} > {dev.memory}")

    makespan = max(ends.values()) if ends else 0.0
    if abs(makespan - s.objective) > tol:
        raise ScheduleError(f"objective mismatch: stated {s.objective}, "
                            f"actual {makespan}")
    return makespan


# ---------------------------------------------------------------------------
# JSON wire formats

def load_graph(text: str) -> DnnGraph:
    doc = json.loads(text)
    tasks = [TaskNode(id=str(t["id"]), wm=float(t.get("wm", 0)),
                      im=float(t.get("im", 0)), om=float(t.get("om", 0)))
             for t in doc["tasks"]]
    edges = [(str(a), str(b)) for a, b in doc.get("edges", [])]
    return DnnGraph(tasks, edges, name=doc.get("name"))


def save_graph(g: DnnGraph) -> str:
    doc = {
        "tasks": [{"id": t.id, "wm": t.wm, "im": t.im, "om": t.om}
                  for t in g.tasks.values()],
        "edges": [[a, b] for (a, b) in g.edges],
    }
    if g.name is not None:
        doc["name"] = g.name
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def load_hardware(text: str) -> HardwareSystem:
    doc = json.loads(text)
    devices = [Device(id=str(d["id"]), memory=float(d["memory"]),
                      batch_sizes=tuple(int(b) for b in d["batch_sizes"]))
               for d in doc["devices"]]
    bw = {}
    for src, row in doc.get("bandwidth", {}).items():
        for dst, v in row.items():
            bw[(str(src), str(dst))] = float(v)
    return HardwareSystem(devices, bw)


def save_hardware(hw: HardwareSystem) -> str:
    bw: dict[str, dict[str, float]] = {}
    for (a, b), v in hw.bandwidth.items():
        bw.setdefault(a, {})[b] = v
    doc = {
        "devices": [{"id": d.id, "memory": d.memory,
                     "batch_sizes": list(d.batch_sizes)}
                    for d in hw.devices.values()],
        "bandwidth": bw,
    }
    return json.dumps(doc, indent=2) + "\n"


def load_latency(text: str) -> LatencyTable:
    doc = json.loads(text)
    entries = {}
    for task, row in doc.items():
        for dev, cells in row.items():
            for b, ms in cells.items():
                entries[(str(task), str(dev), int(b))] = float(ms)
    return LatencyTable(entries)


def save_latency(t: LatencyTable) -> str:
    doc: dict[str, dict[str, dict[str, float]]] = {}
    for (task, dev, b), ms in t.entries.items():
        doc.setdefault(task, {}).setdefault(dev, {})[str(b)] = ms
    return json.dumps(doc, indent=2) + "\n"


def load_schedule(text: str) -> Schedule:
    doc = json.loads(text)
    batches = tuple(
        ScheduledBatch(task=str(b["task"]), device=str(b["device"]),
                       size=int(b["batch_size"]),
                       inputs=tuple(int(l) for l in b["inputs"]),
                       start=float(b["start_ms"]))
        for b in doc["batches"])
    return Schedule(batches=batches, objective=float(doc["objective_ms"]),
                    input_count=int(doc["input_count"]),
                    flags=tuple(doc.get("flags", ())))


def save_schedule(s: Schedule, table: Optional[LatencyTable] = None) -> str:
    def end(b: ScheduledBatch) -> Optional[float]:
        if table is not None and table.has(b.task, b.device, b.size):
            return b.start + table.get(b.task, b.device, b.size)
        return None

    batches = sorted(s.batches, key=lambda b: (b.start, b.device, b.task))
    doc = {
        "objective_ms": s.objective,
        "input_count": s.input_count,
        "batches": [
            {"task": b.task, "device": b.device, "batch_size": b.size,
             "inputs": list(b.inputs), "start_ms": b.start,
             **({"end_ms": end(b)} if end(b) is not None else {})}
            for b in batches
        ],
    }
    if s.flags:
        doc["flags"] = list(s.flags)
    return json.dumps(doc, indent=2) + "\n"
