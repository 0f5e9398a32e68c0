"""Conv -> batch-norm -> relu chain fusion on graph documents. Operates on
plain JSON dicts so the primary toolkit stays the only schema authority."""
from __future__ import annotations


def _kind(task: dict) -> str:
    op = str(task.get("op", "")).replace("_", "")
    if "conv" in op:
        return "conv"
    if "batchnorm" in op:
        return "bn"
    if "relu" in op:
        return "relu"
    return ""


def fuse(doc: dict) -> dict:
    """Collapse every linear conv->bn->relu chain into one task: wm summed,
    im of the conv, om of the relu. No match returns an equivalent copy."""
    tasks = {t["id"]: dict(t) for t in doc["tasks"]}
    order = [t["id"] for t in doc["tasks"]]
    succ: dict[str, list[str]] = {i: [] for i in tasks}
    pred: dict[str, list[str]] = {i: [] for i in tasks}
    for a, b in doc.get("edges", []):
        succ[a].append(b)
        pred[b].append(a)

    matches = []
    used: set[str] = set()
    for cid in order:
        if cid in used or _kind(tasks[cid]) != "conv":
            continue
        if len(succ[cid]) != 1:
            continue
        bid = succ[cid][0]
        if bid in used or _kind(tasks[bid]) != "bn" or len(pred[bid]) != 1 \
                or len(succ[bid]) != 1:
            continue
        rid = succ[bid][0]
        if rid in used or _kind(tasks[rid]) != "relu" or len(pred[rid]) != 1:
            continue
        matches.append((cid, bid, rid))
        used.update((cid, bid, rid))

    replaced = {}  # old id -> fused id
    fused_tasks = {}
    for cid, bid, rid in matches:
        fid = cid
        fused_tasks[fid] = {
            "id": fid,
            "wm": tasks[cid]["wm"] + tasks[bid]["wm"] + tasks[rid]["wm"],
            "im": tasks[cid]["im"],
            "om": tasks[rid]["om"],
            "op": "fused_conv_bn_relu",
        }
        for old in (cid, bid, rid):
            replaced[old] = fid

    out_tasks = []
    for tid in order:
        if tid in replaced:
            if replaced[tid] == tid:
                out_tasks.append(fused_tasks[tid])
        else:
            out_tasks.append(dict(tasks[tid]))

    out_edges = []
    seen = set()
    for a, b in doc.get("edges", []):
        na, nb = replaced.get(a, a), replaced.get(b, b)
        if na == nb:
            continue  # internal chain edge
        if (na, nb) not in seen:
            seen.add((na, nb))
            out_edges.append([na, nb])

    out = {"tasks": out_tasks, "edges": out_edges}
    if "name" in doc:
        out["name"] = doc["name"]
    return out
