"""torch.fx tracing into hetsched graph JSON: one task per traced call
node, weight bytes from parameters, tensor bytes from propagated shapes."""
from __future__ import annotations

import math

import torch
from torch import fx, nn
from torch.fx.passes.shape_prop import ShapeProp


class TraceError(ValueError):
    pass


_CALL_OPS = ("call_module", "call_function", "call_method")


def _elem_size(dtype) -> int:
    try:
        return torch.empty((), dtype=dtype).element_size()
    except (TypeError, RuntimeError):
        return 4


def _tensor_bytes(meta) -> float:
    if meta is None:
        return 0.0
    shape = getattr(meta, "shape", None)
    if shape is not None:
        return float(math.prod(shape) * _elem_size(meta.dtype))
    if isinstance(meta, (list, tuple)):
        # multi-output nodes carry one metadata entry per output
        return float(sum(_tensor_bytes(m) for m in meta))
    return 0.0


def _node_meta(node: fx.Node):
    return node.meta.get("tensor_meta")


def _op_kind(gm: fx.GraphModule, node: fx.Node) -> str:
    if node.op == "call_module":
        return type(gm.get_submodule(node.target)).__name__.lower()
    if node.op == "call_function":
        return getattr(node.target, "__name__", str(node.target)).lower()
    return str(node.target).lower()


def _param_bytes(gm: fx.GraphModule, node: fx.Node) -> float:
    if node.op != "call_module":
        return 0.0
    sub = gm.get_submodule(node.target)
    total = sum(p.numel() * p.element_size() for p in sub.parameters())
    total += sum(b.numel() * b.element_size() for b in sub.buffers())
    return float(total)


def trace_model(model: nn.Module, example_shape) -> dict:
    """Trace `model` with an all-ones example of `example_shape` and return
    a graph document (hetsched graph JSON plus an `op` tag per task)."""
    try:
        gm = fx.symbolic_trace(model)
    except Exception as exc:  # fx raises TraceError subclasses of Exception
        raise TraceError(f"model is not symbolically traceable: {exc}") \
            from exc
    example = torch.ones(*example_shape)
    ShapeProp(gm).propagate(example)

    tasks = []
    edges = []
    task_ids = set()
    for node in gm.graph.nodes:
        if node.op not in _CALL_OPS:
            continue
        # parameters reach call_function nodes as get_attr inputs; count
        # them as weight bytes, not activation bytes
        im = sum(_tensor_bytes(_node_meta(a))
                 for a in node.all_input_nodes if a.op != "get_attr")
        wm = _param_bytes(gm, node) + sum(
            _tensor_bytes(_node_meta(a))
            for a in node.all_input_nodes if a.op == "get_attr")
        tasks.append({
            "id": node.name,
            "wm": wm,
            "im": float(im),
            "om": _tensor_bytes(_node_meta(node)),
            "op": _op_kind(gm, node),
        })
        task_ids.add(node.name)
        for a in node.all_input_nodes:
            if a.name in task_ids or a.op in _CALL_OPS:
                edges.append([a.name, node.name])
    name = type(model).__name__
    return {"tasks": tasks, "edges": edges, "name": name}
