"""Shared builders for the test suite: tiny hand-made instances and a
random mini-instance generator for oracle cross-checks."""
from __future__ import annotations

import numpy as np

from hetsched.core import (Device, DnnGraph, HardwareSystem, LatencyTable,
                           TaskNode)


def mk_graph(specs, edges=(), name=None) -> DnnGraph:
    """specs: iterable of task ids (zero memory) or {id: (wm, im, om)}."""
    if isinstance(specs, dict):
        tasks = [TaskNode(id=i, wm=w, im=im, om=om)
                 for i, (w, im, om) in specs.items()]
    else:
        tasks = [TaskNode(id=i, wm=0.0, im=0.0, om=0.0) for i in specs]
    return DnnGraph(tasks, [tuple(e) for e in edges], name=name)


def mk_hw(devices, bandwidth=None, mesh_bw=None) -> HardwareSystem:
    """devices: {id: (memory, batch_sizes)}; mesh_bw fills a full mesh."""
    devs = [Device(id=u, memory=mem, batch_sizes=tuple(bs))
            for u, (mem, bs) in devices.items()]
    bw = dict(bandwidth or {})
    if mesh_bw is not None:
        for a in devices:
            for b in devices:
                if a != b and (a, b) not in bw:
                    bw[(a, b)] = mesh_bw
    return HardwareSystem(devs, bw)


def mk_table(g: DnnGraph, hw: HardwareSystem, latency) -> LatencyTable:
    """latency: float, {(task, dev): ms}, or callable (task, dev, b) -> ms.
    Scalar and per-pair forms scale linearly with the batch size."""
    entries = {}
    for i in g.tasks:
        for d in hw.devices.values():
            for b in d.batch_sizes:
                if callable(latency):
                    ms = latency(i, d.id, b)
                elif isinstance(latency, dict):
                    ms = latency[(i, d.id)] * b
                else:
                    ms = float(latency) * b
                entries[(i, d.id, b)] = ms
    return LatencyTable(entries)


def random_instance(seed: int, *, max_tasks: int = 6, max_devices: int = 3,
                    L: int = 1, edge_p: float = 0.4,
                    allow_missing_links: bool = True,
                    allow_tight_memory: bool = True):
    """Random mini-instance for oracle cross-checks: random DAG, mixed
    per-device batch sets, random latencies, occasional missing links and
    tight memory budgets. Returns (graph, hardware, latency table)."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, max_tasks + 1))
    ids = [f"t{k}" for k in range(n)]
    tasks = [TaskNode(id=i,
                      wm=float(rng.integers(0, 60)),
                      im=float(rng.integers(0, 30)),
                      om=float(rng.integers(0, 40)))
             for i in ids]
    edges = [(ids[a], ids[b]) for a in range(n) for b in range(a + 1, n)
             if rng.random() < edge_p]
    g = DnnGraph(tasks, edges)

    n_dev = int(rng.integers(2, max_devices + 1))
    if L == 1:
        batch_options = [(1,), (1, 2)]
    else:
        batch_options = [(1,), (2,), (1, 2), (1, 2, 4)]
    devices = []
    for k in range(n_dev):
        bs = batch_options[int(rng.integers(len(batch_options)))]
        devices.append(Device(id=f"d{k}", memory=1e9, batch_sizes=bs))

    bw = {}
    for a in range(n_dev):
        for b in range(n_dev):
            if a != b:
                bw[(f"d{a}", f"d{b}")] = float(rng.uniform(1.0, 10.0))
    if allow_missing_links and n_dev > 2 and rng.random() < 0.15:
        victim = (f"d{int(rng.integers(n_dev))}",
                  f"d{int(rng.integers(n_dev))}")
        bw.pop(victim, None)
    hw = HardwareSystem(devices, bw)

    if allow_tight_memory and rng.random() < 0.2:
        # shrink one device so colocation of everything becomes impossible
        total = sum(t.wm + L * (t.im + t.om) for t in tasks)
        k = int(rng.integers(n_dev))
        devices[k] = Device(id=f"d{k}",
                            memory=float(total * rng.uniform(0.4, 0.9)),
                            batch_sizes=devices[k].batch_sizes)
        hw = HardwareSystem(devices, bw)

    entries = {}
    for i in ids:
        base = float(rng.uniform(1.0, 20.0))
        for d in devices:
            factor = float(rng.uniform(0.5, 3.0))
            exp = float(rng.uniform(0.6, 1.1))
            for b in d.batch_sizes:
                entries[(i, d.id, b)] = base * factor * (b ** exp)
    return g, hw, LatencyTable(entries)

# ---------------------------------------------------------------------------
# acceptance gate reporting: one summary line per criterion at session end

import pytest

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def accept():
    """Record a criterion verdict and assert it. The terminal summary
    repeats one [PASS]/[FAIL] line per recorded criterion."""
    def _rec(name: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.append((name, bool(ok), detail))
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        print(line)
        assert ok, line
    return _rec


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {name}: {detail}")
