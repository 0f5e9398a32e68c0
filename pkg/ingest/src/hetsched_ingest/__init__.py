"""Model ingest for the hetsched toolkit: torch.fx tracing to graph JSON,
conv/bn/relu fusion, and latency profiling or estimation."""

from hetsched_ingest.tracing import trace_model
from hetsched_ingest.fusion import fuse
from hetsched_ingest.profiling import profile_graph

__all__ = ["trace_model", "fuse", "profile_graph"]
