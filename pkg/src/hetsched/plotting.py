"""Figure rendering: schedule gantt charts and benchmark summary plots.

All figures are written to files (SVG or PNG by extension); rendering is
deterministic so golden-file comparisons stay stable.
"""
from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import DnnGraph, HardwareSystem, LatencyTable, Schedule  # noqa: E402

plt.rcParams["svg.hashsalt"] = "hetsched"

_SAVE_KW = {"metadata": {"Date": None}}


def _save(fig, path: str) -> None:
    kw = _SAVE_KW if path.endswith(".svg") else {}
    fig.savefig(path, bbox_inches="tight", **kw)
    plt.close(fig)


def render_gantt(s: Schedule, hw: HardwareSystem, table: LatencyTable,
                 path: str, title: Optional[str] = None) -> None:
    """One lane per device, one rectangle per scheduled batch, labeled with
    the task id and batch size."""
    dev_ids = sorted(hw.devices)
    lane = {u: k for k, u in enumerate(dev_ids)}
    fig, ax = plt.subplots(figsize=(10, 1.0 + 0.6 * len(dev_ids)))
    cmap = plt.get_cmap("tab20")
    tasks = sorted({b.task for b in s.batches})
    color = {t: cmap(k % 20) for k, t in enumerate(tasks)}
    for b in sorted(s.batches, key=lambda b: (b.start, b.device, b.task)):
        dur = table.get(b.task, b.device, b.size)
        ax.barh(lane[b.device], dur, left=b.start, height=0.8,
                color=color[b.task], edgecolor="black", linewidth=0.5)
        if dur > 0:
            ax.text(b.start + dur / 2, lane[b.device],
                    f"{b.task}\nx{b.size}", ha="center", va="center",
                    fontsize=7)
    ax.set_yticks(range(len(dev_ids)))
    ax.set_yticklabels(dev_ids)
    ax.set_xlabel("time (ms)")
    ax.set_xlim(0, max(s.objective, 1e-9) * 1.02)
    ax.set_title(title or f"makespan {s.objective:.3f} ms, L={s.input_count}")
    _save(fig, path)


def render_bench(rows: Sequence[dict], out_prefix: str) -> list[str]:
    """Two summary figures from bench CSV rows: median makespan per
    algorithm and median wall time per algorithm. Returns written paths."""
    algos = sorted({r["algo"] for r in rows})

    def med(vals):
        vals = sorted(vals)
        n = len(vals)
        return vals[n // 2] if n % 2 else 0.5 * (vals[n // 2 - 1] + vals[n // 2])

    paths = []
    for field, ylabel, suffix in (("ms", "median makespan (ms)", "objective"),
                                  ("wall_s", "median wall time (s)", "walltime")):
        fig, ax = plt.subplots(figsize=(8, 4))
        vals = [med([float(r[field]) for r in rows if r["algo"] == a])
                for a in algos]
        ax.bar(range(len(algos)), vals, color="steelblue",
               edgecolor="black", linewidth=0.5)
        ax.set_xticks(range(len(algos)))
        ax.set_xticklabels(algos, rotation=30, ha="right")
        ax.set_ylabel(ylabel)
        path = f"{out_prefix}_{suffix}.svg"
        _save(fig, path)
        paths.append(path)
    return paths
