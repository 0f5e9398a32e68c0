"""Per-task latency profiling: median-of-repeats timed execution on devices
the host framework can reach, analytic byte-cost estimates elsewhere."""
from __future__ import annotations

import statistics
import time

import torch
from torch import fx

# relative latency multipliers used by the analytic fallback, keyed by the
# conventional device ids of the primary toolkit's default profile
DEFAULT_FACTORS = {"cpu": 7.10, "gpuA": 1.26, "gpuB": 1.0}

_CALL_OPS = ("call_module", "call_function", "call_method")


class _TimingInterpreter(fx.Interpreter):
    """Executes the traced module node by node, timing each call node."""

    def __init__(self, gm: fx.GraphModule, repeats: int, device):
        super().__init__(gm)
        self.repeats = repeats
        self.device = device
        self.ms: dict[str, float] = {}

    def run_node(self, n):
        if n.op not in _CALL_OPS:
            return super().run_node(n)
        samples = []
        result = None
        for _ in range(max(1, self.repeats)):
            t0 = time.perf_counter()
            result = super().run_node(n)
            samples.append((time.perf_counter() - t0) * 1000.0)
        self.ms[n.name] = statistics.median(samples)
        return result


def _torch_device(dev_id: str):
    try:
        d = torch.device(dev_id)
        torch.zeros(1, device=d)
        return d
    except (RuntimeError, ValueError, TypeError):
        return None


def _measure(gm: fx.GraphModule, example_shape, batch_sizes, repeats, device):
    gm = gm.to(device).eval()
    out: dict[int, dict[str, float]] = {}
    with torch.no_grad():
        for b in batch_sizes:
            x = torch.ones(b, *example_shape[1:], device=device)
            interp = _TimingInterpreter(gm, repeats, device)
            interp.run(x)
            out[b] = interp.ms
    return out


def _estimate(task: dict, factor: float, b: int) -> float:
    wm = float(task.get("wm", 0.0))
    act = float(task.get("im", 0.0)) + float(task.get("om", 0.0))
    return factor * (0.01 + (wm + b * act) / 1e5)


def profile_graph(graph_doc: dict, hw_doc: dict, repeats: int = 5,
                  model: torch.nn.Module = None, example_shape=None,
                  factors: dict = None) -> tuple[dict, dict]:
    """Build a complete latency document for every (task, device, declared
    batch size) triple. Devices the host framework cannot reach, and tasks
    absent from the traced module (for example after fusion), fall back to
    the analytic estimate; the meta document flags any estimated entries.

    Returns (latency_doc, meta_doc)."""
    factors = dict(DEFAULT_FACTORS) if factors is None else dict(factors)
    devices = {str(d["id"]): [int(b) for b in d["batch_sizes"]]
               for d in hw_doc["devices"]}
    gm = None
    if model is not None and example_shape is not None:
        gm = fx.symbolic_trace(model)

    measured: dict[str, dict[int, dict[str, float]]] = {}
    meta_devices: dict[str, str] = {}
    for dev_id, sizes in devices.items():
        td = _torch_device(dev_id) if gm is not None else None
        if td is not None:
            measured[dev_id] = _measure(gm, example_shape, sizes,
                                        repeats, td)
            meta_devices[dev_id] = "measured"
        else:
            meta_devices[dev_id] = "estimated"

    latency: dict[str, dict[str, dict[str, float]]] = {}
    estimated_entries = 0
    for task in graph_doc["tasks"]:
        tid = str(task["id"])
        latency[tid] = {}
        for dev_id, sizes in devices.items():
            f = float(factors.get(dev_id, 1.0))
            row = {}
            for b in sizes:
                cell = measured.get(dev_id, {}).get(b, {}).get(tid)
                if cell is None:
                    cell = _estimate(task, f, b)
                    estimated_entries += 1
                row[str(b)] = cell
            latency[tid][dev_id] = row
    meta = {
        "estimated": estimated_entries > 0,
        "estimated_entries": estimated_entries,
        "devices": meta_devices,
        "repeats": repeats,
        "factors": factors,
    }
    return latency, meta
