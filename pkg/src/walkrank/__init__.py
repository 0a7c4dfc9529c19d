"""Personalized trust rankings for peer-to-peer interaction networks.

Monte Carlo random-walk estimation of personalized PageRank over a ledger-
derived interaction graph, incremental walk repair under graph mutations,
reference power-iteration/exact solvers, and a sybil-resistance evaluation
harness.
"""
from .graph import (
    DeltaKind,
    GraphDelta,
    InteractionGraph,
    dump_graph_csv,
    load_graph_csv,
)
from .ingest import BlockRecord, IngestReport, flatten, holdback_split, read_blocks
from .oracle import (
    PowerIterConfig,
    RankVector,
    exact_solve,
    personalized_power_iteration,
)
from .sybil import (
    LabeledGraph,
    RocResult,
    SybilTopologyConfig,
    generate_topology,
    ordered_nodes,
    roc,
    sweep_attack_edges,
)
from .walks import (
    VisitEstimate,
    Walk,
    WalkConfig,
    WalkCorpus,
    apply_delta,
    apply_deltas,
    dump_corpus,
    estimate,
    load_corpus,
    rank,
    sample_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "BlockRecord",
    "DeltaKind",
    "GraphDelta",
    "IngestReport",
    "InteractionGraph",
    "LabeledGraph",
    "PowerIterConfig",
    "RankVector",
    "RocResult",
    "SybilTopologyConfig",
    "VisitEstimate",
    "Walk",
    "WalkConfig",
    "WalkCorpus",
    "apply_delta",
    "apply_deltas",
    "dump_corpus",
    "dump_graph_csv",
    "estimate",
    "exact_solve",
    "flatten",
    "generate_topology",
    "holdback_split",
    "load_corpus",
    "load_graph_csv",
    "ordered_nodes",
    "personalized_power_iteration",
    "rank",
    "read_blocks",
    "roc",
    "sample_corpus",
    "sweep_attack_edges",
]
