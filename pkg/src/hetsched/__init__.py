"""Scheduling toolkit for mapping weighted DNN task graphs onto
heterogeneous devices: an exact MILP, a divide-and-conquer splitting
scheduler, provable latency lower bounds, baseline heuristics, and a
benchmark generator."""

from .core import (Device, DnnGraph, GraphError, HardwareSystem,
                   LatencyTable, Schedule, ScheduledBatch, ScheduleError,
                   TaskNode, bfs_topological_order, load_graph,
                   load_hardware, load_latency, load_schedule, save_graph,
                   save_hardware, save_latency, save_schedule,
                   transitive_closure, validate_schedule)

__version__ = "0.1.0"

__all__ = [
    "Device", "DnnGraph", "GraphError", "HardwareSystem", "LatencyTable",
    "Schedule", "ScheduledBatch", "ScheduleError", "TaskNode",
    "bfs_topological_order", "load_graph", "load_hardware", "load_latency",
    "load_schedule", "save_graph", "save_hardware", "save_latency",
    "save_schedule", "transitive_closure", "validate_schedule",
    "__version__",
]
