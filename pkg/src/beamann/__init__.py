"""beamann: updatable graph-based approximate nearest neighbor search on CPU.

Core pieces: a bounded-degree navigable graph built by batch-parallel
insertion, greedy beam search with an exact visited set, alpha-robust edge
pruning, rotation-based scalar quantization with a metadata-folded distance
estimator, an exact brute-force oracle, and a recall/QPS benchmark harness.
"""

from .bench import SweepPoint, recall_at_k, run_queries, sweep
from .build import BuildParams, EdgeBuffer, batch_insert, build, insert_stream
from .core import (
    AugmentedDataset,
    DistanceKind,
    ElementKind,
    VectorDataset,
    dot,
    gen_synthetic,
    mips_augment,
    sq_l2,
)
from .graph import Candidate, GraphIndex, medoid, robust_prune
from .io import (
    FormatError,
    GroundTruth,
    read_ground_truth,
    read_vectors_bin,
    write_ground_truth,
    write_sweep_csv,
    write_vectors_bin,
)
from .oracle import exact_knn
from .rabitq import QueryPrep, RaBitQIndex, estimate_sq_dist, prep_query, rotate
from .rabitq import fit as rabitq_fit
from .search import SearchParams, SearchResult, SearchStats, beam_search, search_knn, search_knn_batch

__version__ = "0.1.0"

__all__ = [
    "AugmentedDataset",
    "BuildParams",
    "Candidate",
    "DistanceKind",
    "EdgeBuffer",
    "ElementKind",
    "FormatError",
    "GraphIndex",
    "GroundTruth",
    "QueryPrep",
    "RaBitQIndex",
    "SearchParams",
    "SearchResult",
    "SearchStats",
    "SweepPoint",
    "VectorDataset",
    "batch_insert",
    "beam_search",
    "build",
    "dot",
    "estimate_sq_dist",
    "exact_knn",
    "gen_synthetic",
    "insert_stream",
    "medoid",
    "mips_augment",
    "prep_query",
    "rabitq_fit",
    "read_ground_truth",
    "read_vectors_bin",
    "recall_at_k",
    "robust_prune",
    "rotate",
    "run_queries",
    "search_knn",
    "search_knn_batch",
    "sq_l2",
    "sweep",
    "write_ground_truth",
    "write_sweep_csv",
    "write_vectors_bin",
]
