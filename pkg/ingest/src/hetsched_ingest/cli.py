"""`ingest` command line: trace | fuse | profile, producing the JSON files
the hetsched CLI consumes."""
from __future__ import annotations

import argparse
import json
import sys

from hetsched_ingest.fusion import fuse
from hetsched_ingest.models import resolve
from hetsched_ingest.profiling import profile_graph
from hetsched_ingest.tracing import TraceError, trace_model

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def _shape(text: str):
    return tuple(int(x) for x in text.split(","))


def _cmd_trace(args) -> int:
    model = resolve(args.model)
    doc = trace_model(model, _shape(args.input_shape))
    with open(args.out, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    print(json.dumps({"tasks": len(doc["tasks"]),
                      "edges": len(doc["edges"])}))
    return EXIT_OK


def _cmd_fuse(args) -> int:
    with open(args.graph) as f:
        doc = json.load(f)
    fused = fuse(doc)
    with open(args.out, "w") as f:
        json.dump(fused, f, indent=2)
        f.write("\n")
    print(json.dumps({"tasks_before": len(doc["tasks"]),
                      "tasks_after": len(fused["tasks"])}))
    return EXIT_OK


def _cmd_profile(args) -> int:
    with open(args.graph) as f:
        graph_doc = json.load(f)
    with open(args.hardware) as f:
        hw_doc = json.load(f)
    model = resolve(args.model) if args.model else None
    shape = _shape(args.input_shape) if args.input_shape else None
    factors = None
    if args.factors:
        factors = {}
        for part in args.factors.split(","):
            dev, val = part.split("=", 1)
            factors[dev] = float(val)
    latency, meta = profile_graph(graph_doc, hw_doc, repeats=args.repeats,
                                  model=model, example_shape=shape,
                                  factors=factors)
    with open(args.out, "w") as f:
        json.dump(latency, f, indent=2)
        f.write("\n")
    if args.meta:
        with open(args.meta, "w") as f:
            json.dump(meta, f, indent=2)
            f.write("\n")
    if meta["estimated"]:
        print("warning: some entries are analytic estimates "
              f"({meta['estimated_entries']})", file=sys.stderr)
    print(json.dumps({"estimated": meta["estimated"]}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="ingest")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="trace a torch model to graph JSON")
    p.add_argument("--model", required=True,
                   help="registry name (toycnn, linear, mlp) or module:attr")
    p.add_argument("--input-shape", required=True,
                   help="example input shape, e.g. 1,3,8,8")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_trace)

    p = sub.add_parser("fuse", help="collapse conv-bn-relu chains")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_fuse)

    p = sub.add_parser("profile", help="measure or estimate task latencies")
    p.add_argument("--graph", required=True)
    p.add_argument("--hardware", required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--model", default=None,
                   help="traceable model for measured timings")
    p.add_argument("--input-shape", default=None)
    p.add_argument("--factors", default=None,
                   help="fallback factors, e.g. cpu=7.10,gpuA=1.26")
    p.add_argument("--out", required=True)
    p.add_argument("--meta", default=None,
                   help="write the measurement metadata JSON here")
    p.set_defaults(fn=_cmd_profile)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except (TraceError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
