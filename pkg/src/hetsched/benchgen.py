"""Benchmark instance generation: random-graph modules, multi-module
stacking with strongly or weakly dependent channels, synthetic heterogeneous
latency profiles, and a stacked-transformer skeleton for multi-node systems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import networkx as nx
import numpy as np

from .core import (Device, DnnGraph, GraphError, HardwareSystem,
                   LatencyTable, TaskNode)
from .splitting import ModuleDecomposition

MAX_STACK_ATTEMPTS = 200


def _is_virtual(t: TaskNode) -> bool:
    return t.wm == 0 and t.im == 0 and t.om == 0


def gen_module(model: str, n: int, seed: int, *,
               p: Optional[float] = None, k: Optional[int] = None,
               m: Optional[int] = None,
               mem_range: tuple[float, float] = (1e4, 1e5),
               weight_range: tuple[float, float] = (1e5, 1e6)) -> DnnGraph:
    """One random-graph module: an undirected ER/WS/BA graph oriented from
    lower to higher node index, wrapped between a zero-cost virtual input
    (`vin`) and virtual output (`vout`). Deterministic per seed."""
    if n < 2:
        raise GraphError("module size n must be >= 2")
    model = model.lower()
    if model == "er":
        if p is None:
            p = 0.2
        und = nx.gnp_random_graph(n, p, seed=seed)
    elif model == "ws":
        if k is None:
            k = 4
        if p is None:
            p = 0.75
        if k >= n:
            raise GraphError("WS ring degree k must be < n")
        und = nx.watts_strogatz_graph(n, k, p, seed=seed)
    elif model == "ba":
        if m is None:
            m = 5
        if m >= n or m < 1:
            raise GraphError("BA attachment m must satisfy 1 <= m < n")
        und = nx.barabasi_albert_graph(n, m, seed=seed)
    else:
        raise GraphError(f"unknown random-graph model {model!r}")

    rng = np.random.default_rng(seed)

    def logu(lo, hi):
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

    ids = [f"t{i:03d}" for i in range(n)]
    tasks = [TaskNode(id=ids[i],
                      wm=logu(*weight_range),
                      im=logu(*mem_range),
                      om=logu(*mem_range)) for i in range(n)]
    edges = [(ids[min(a, b)], ids[max(a, b)]) for (a, b) in und.edges()]
    edges.sort()
    has_pred = {b for (_, b) in edges}
    has_succ = {a for (a, _) in edges}
    tasks.append(TaskNode(id="vin"))
    tasks.append(TaskNode(id="vout"))
    edges = ([("vin", i) for i in ids if i not in has_pred] + edges
             + [(i, "vout") for i in ids if i not in has_succ])
    return DnnGraph(tasks, edges, name=f"{model}_{n}_{seed}")


def _reachable(succ: dict[str, list[str]], roots) -> set[str]:
    seen = set(roots)
    stack = list(roots)
    while stack:
        a = stack.pop()
        for b in succ[a]:
            if b not in seen:
                seen.add(b)
                stack.append(b)
    return seen


def stack_modules(modules: Sequence[DnnGraph], channels: int, mode: str,
                  seed: int,
                  max_attempts: int = MAX_STACK_ATTEMPTS
                  ) -> tuple[DnnGraph, ModuleDecomposition]:
    """Join single-input single-output modules into a chain with exactly
    `channels` edges between consecutive modules.

    channels=1 keeps the virtual boundary nodes and is plain concatenation.
    For channels >= 2 the interior virtual nodes are removed and channel
    endpoints are chosen among the real nodes: `sdep` forces the endpoint
    sets to include every module source and sink, which makes all internal
    paths stem from an input endpoint and converge to an output endpoint;
    `wdep` samples endpoints uniformly and prunes nodes left disconnected
    from the sampled endpoints so the result stays single-input
    single-output.
    """
    if channels < 1:
        raise GraphError("channels must be >= 1")
    if mode not in ("sdep", "wdep"):
        raise GraphError(f"unknown stacking mode {mode!r}")
    T = len(modules)
    if T < 1:
        raise GraphError("need at least one module")
    prefixes = [f"m{t:02d}_" for t in range(T)]

    def renamed(t: int, keep) -> tuple[list[TaskNode], list[tuple[str, str]]]:
        g = modules[t]
        pre = prefixes[t]
        tasks = [TaskNode(id=pre + i, wm=g.tasks[i].wm, im=g.tasks[i].im,
                          om=g.tasks[i].om) for i in g.tasks if i in keep]
        edges = [(pre + a, pre + b) for (a, b) in g.edges
                 if a in keep and b in keep]
        return tasks, edges

    if channels == 1:
        all_tasks: list[TaskNode] = []
        all_edges: list[tuple[str, str]] = []
        blocks = []
        cuts: dict[tuple[int, int], list[tuple[str, str]]] = {}
        for t in range(T):
            tasks, edges = renamed(t, set(modules[t].tasks))
            all_tasks += tasks
            all_edges += edges
            blocks.append(frozenset(x.id for x in tasks))
            if t + 1 < T:
                ch = (prefixes[t] + "vout", prefixes[t + 1] + "vin")
                all_edges.append(ch)
                cuts[(t, t + 1)] = [ch]
        g = DnnGraph(all_tasks, all_edges, name=f"stack_{mode}_c1_{seed}")
        return g, ModuleDecomposition(modules=blocks, cut_edges=cuts,
                                      channels=1, is_chain=True)

    # interior virtual nodes are stripped for multi-channel stacking
    stripped: list[dict] = []
    for t in range(T):
        g = modules[t]
        drop = set()
        if t > 0:
            drop.add("vin")
        if t + 1 < T:
            drop.add("vout")
        keep = [i for i in g.tasks if i not in drop]
        succ = {i: [b for b in g.succ[i] if b not in drop] for i in keep}
        pred = {i: [a for a in g.pred[i] if a not in drop] for i in keep}
        real = sorted(i for i in keep if not _is_virtual(g.tasks[i]))
        if len(real) < channels:
            raise GraphError(f"module {t} has fewer than {channels} real nodes")
        stripped.append({
            "keep": keep, "succ": succ, "pred": pred, "real": real,
            "sources": [i for i in real if not pred[i]],
            "sinks": [i for i in real if not succ[i]],
        })

    rng = np.random.default_rng(seed)
    for attempt in range(max_attempts):

        def endpoints(t: int, side: int, base: list[str]) -> Optional[list[str]]:
            # drawn from a channel-independent permutation so endpoint sets
            # for c and c+1 channels nest (keeps bounds monotone in c)
            if len(base) > channels:
                return None
            extra = [i for i in stripped[t]["real"] if i not in base]
            side_rng = np.random.default_rng([seed, attempt, t, side])
            perm = [extra[k] for k in side_rng.permutation(len(extra))]
            return sorted(base + perm[:channels - len(base)])

        ins: list[Optional[list[str]]] = [None] * T   # input endpoints
        outs: list[Optional[list[str]]] = [None] * T  # output endpoints
        ok = True
        for t in range(T):
            st = stripped[t]
            if t > 0:
                ins[t] = endpoints(t, 0, st["sources"] if mode == "sdep" else [])
                ok = ins[t] is not None
            if ok and t + 1 < T:
                outs[t] = endpoints(t, 1, st["sinks"] if mode == "sdep" else [])
                ok = outs[t] is not None
            if not ok:
                break
        if not ok:
            if mode == "sdep":
                raise GraphError("sdep coverage unsatisfiable: a module has "
                                 f"more than {channels} sources or sinks; "
                                 "re-seed the module")
            continue

        # prune nodes not wired to the sampled endpoints (wdep only; the
        # sdep endpoint sets cover every module by construction)
        kept_sets: list[set[str]] = []
        for t in range(T):
            st = stripped[t]
            kept = set(st["keep"])
            if mode == "wdep":
                if ins[t] is not None:
                    kept &= _reachable(st["succ"], ins[t])
                if outs[t] is not None:
                    kept &= _reachable(st["pred"], outs[t])
            kept_sets.append(kept)
        if any((ins[t] and not set(ins[t]) <= kept_sets[t])
               or (outs[t] and not set(outs[t]) <= kept_sets[t])
               for t in range(T)):
            continue

        all_tasks, all_edges, blocks = [], [], []
        cuts = {}
        for t in range(T):
            tasks, edges = renamed(t, kept_sets[t])
            all_tasks += tasks
            all_edges += edges
            blocks.append(frozenset(x.id for x in tasks))
        for t in range(T - 1):
            srcs = [prefixes[t] + o for o in outs[t]]
            tgts = [prefixes[t + 1] + i for i in ins[t + 1]]
            rng.shuffle(srcs)
            rng.shuffle(tgts)
            ch = sorted(zip(srcs, tgts))
            all_edges += ch
            cuts[(t, t + 1)] = ch
        g = DnnGraph(all_tasks, all_edges,
                     name=f"stack_{mode}_c{channels}_{seed}")
        return g, ModuleDecomposition(modules=blocks, cut_edges=cuts,
                                      channels=channels, is_chain=True)
    raise GraphError(f"{mode} stacking failed after {max_attempts} attempts; "
                     "re-seed the modules")


@dataclass(frozen=True)
class DeviceSpec:
    id: str
    factor: float                      # relative latency multiplier
    memory: float = 1e12
    batch_sizes: tuple[int, ...] = (1, 2, 4, 8)
    bandwidth: float = 1e6             # bytes per ms to/from this device


# latency factors relative to the fastest accelerator: CPU 7.10x,
# mid-range accelerator 1.26x, flagship 1.0x
DEFAULT3 = (
    DeviceSpec(id="cpu", factor=7.10),
    DeviceSpec(id="gpuA", factor=1.26),
    DeviceSpec(id="gpuB", factor=1.0),
)


def synth_profile(g: DnnGraph, specs: Sequence[DeviceSpec] = DEFAULT3,
                  seed: int = 0, *,
                  base_range: tuple[float, float] = (5.0, 50.0),
                  noise_sigma: float = 0.1,
                  batch_exponent: float = 0.8
                  ) -> tuple[LatencyTable, HardwareSystem]:
    """Synthetic heterogeneous profile: per-task base latency log-uniform,
    device latency = base x device factor x lognormal noise, batch latency
    sub-linear in the batch size. Zero-memory virtual tasks get zero
    latency everywhere."""
    if not specs:
        raise GraphError("need at least one device spec")
    rng = np.random.default_rng(seed)
    devices = [Device(id=s.id, memory=s.memory, batch_sizes=s.batch_sizes)
               for s in specs]
    bw = {}
    for a in specs:
        for b in specs:
            if a.id != b.id:
                bw[(a.id, b.id)] = min(a.bandwidth, b.bandwidth)
    hw = HardwareSystem(devices, bw)

    entries: dict[tuple[str, str, int], float] = {}
    for i in sorted(g.tasks):
        virtual = _is_virtual(g.tasks[i])
        base = float(np.exp(rng.uniform(np.log(base_range[0]),
                                        np.log(base_range[1]))))
        for s in specs:
            noise = float(np.exp(rng.normal(0.0, noise_sigma))) \
                if noise_sigma > 0 else 1.0
            t1 = 0.0 if virtual else base * s.factor * noise
            for b in s.batch_sizes:
                entries[(i, s.id, b)] = t1 * (b ** batch_exponent)
    return LatencyTable(entries), hw


def gen_stacked_instance(model: str, n: int, n_modules: int, channels: int,
                         mode: str, seed: int, *,
                         specs: Sequence[DeviceSpec] = DEFAULT3,
                         noise_sigma: float = 0.1,
                         retries: int = 50,
                         **model_params):
    """Generate modules, stack them, and synthesize a profile, retrying with
    shifted module seeds when the stacking construction rejects a draw.
    Returns (graph, ground-truth decomposition, hardware, latency table)."""
    for attempt in range(retries):
        mods = [gen_module(model, n, seed * 10007 + t * 101 + attempt,
                           **model_params) for t in range(n_modules)]
        try:
            g, decomp = stack_modules(mods, channels, mode,
                                      seed=seed + attempt)
        except GraphError:
            continue
        table, hw = synth_profile(g, specs, seed=seed,
                                  noise_sigma=noise_sigma)
        return g, decomp, hw, table
    raise GraphError(f"could not build a {mode} c={channels} instance for "
                     f"seed {seed} after {retries} retries")


def gen_transformer_stack(layers: int, nodes: int, devices_per_node: int
                          ) -> tuple[DnnGraph, HardwareSystem]:
    """Chain of coarse transformer blocks (attention task followed by an MLP
    task per layer) on a multi-node system: each node holds one CPU plus
    `devices_per_node` identical accelerators, fast links inside a node and
    slower links across nodes. Interchangeable-device groups are exposed as
    `hw.symmetry_groups` for symmetry-breaking constraints."""
    if layers < 1 or nodes < 1 or devices_per_node < 1:
        raise GraphError("layers, nodes and devices_per_node must be >= 1")
    tasks: list[TaskNode] = []
    edges: list[tuple[str, str]] = []
    prev = None
    for k in range(layers):
        attn = f"L{k:03d}_attn"
        mlp = f"L{k:03d}_mlp"
        res = f"L{k:03d}_res"
        tasks.append(TaskNode(id=attn, wm=4e6, im=2e5, om=2e5))
        tasks.append(TaskNode(id=mlp, wm=8e6, im=2e5, om=2e5))
        # residual add joining the attention output (skip path) with the MLP
        # output; it also makes each block 2-edge-connected, so the block
        # survives single-channel module detection as one unit
        tasks.append(TaskNode(id=res, wm=0.0, im=2e5, om=2e5))
        edges.append((attn, mlp))
        edges.append((attn, res))
        edges.append((mlp, res))
        if prev is not None:
            edges.append((prev, attn))
        prev = res
    g = DnnGraph(tasks, edges, name=f"transformer_{layers}x")

    devices: list[Device] = []
    node_groups: list[list[str]] = []
    for j in range(nodes):
        cpu = f"n{j:02d}_cpu"
        devices.append(Device(id=cpu, memory=1e12, batch_sizes=(1, 2, 4, 8)))
        accs = [f"n{j:02d}_acc{i}" for i in range(devices_per_node)]
        for a in accs:
            devices.append(Device(id=a, memory=1e12, batch_sizes=(1, 2, 4, 8)))
        node_groups.append([cpu] + accs)
    bw = {}
    for ga in node_groups:
        for gb in node_groups:
            for a in ga:
                for b in gb:
                    if a != b:
                        bw[(a, b)] = 1e7 if ga is gb else 1e5
    hw = HardwareSystem(devices, bw)
    # accelerators inside a node are interchangeable; whole nodes are
    # interchangeable with each other as groups
    hw.symmetry_groups = {
        "intra": [grp[1:] for grp in node_groups],
        "inter": node_groups,
    }
    return g, hw


def symmetry_compression(nodes: int, devices_per_node: int) -> float:
    """Size of the assignment-symmetry group for the multi-node layout:
    devices_per_node ** nodes orderings of identical accelerators times
    nodes! permutations of identical nodes."""
    return float(devices_per_node ** nodes * math.factorial(nodes))
