"""Payment-network analytics: graph construction, topology and risk statistics,
community/hierarchy inference with enrichment testing, and rating prediction."""

__version__ = "0.1.0"

from . import classify, graph, ingest, metrics, partition, riskstats, synth
from .graph import FirmMeta, PaymentGraph

__all__ = [
    "classify", "graph", "ingest", "metrics", "partition", "riskstats", "synth",
    "FirmMeta", "PaymentGraph", "__version__",
]
