"""Command-line interface: build, insert, gt, search, sweep, quantize.

An index lives in a directory: ``meta.json`` (parameters), ``vectors.bin``
(the indexed base vectors), ``graph.bin``, and optionally ``rabitq.bin``
after quantization. Inner-product indexes store base vectors and re-derive
the augmented search space from the recorded norm bound on load.

Every command exits non-zero with a one-line message on validation failure;
all randomness flows from an explicit ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as bio
from .bench import recall_at_k, run_queries, sweep
from .build import BuildParams, build, insert_stream
from .core import DistanceKind, ElementKind, VectorDataset
from .graph import GraphIndex
from .io import FormatError, GroundTruth
from .oracle import exact_knn
from .rabitq import RaBitQIndex
from .rabitq import fit as rabitq_fit
from .search import SearchParams

__all__ = ["main"]

_META_NAME = "meta.json"
_VECTORS_NAME = "vectors.bin"
_GRAPH_NAME = "graph.bin"
_RABITQ_NAME = "rabitq.bin"


def _element_kind_for(path: str, explicit: str | None) -> ElementKind:
    if explicit is not None:
        return ElementKind.U8 if explicit == "u8" else ElementKind.F32
    return ElementKind.U8 if path.endswith(".u8bin") else ElementKind.F32


def _augment_fixed(data: np.ndarray, max_norm: float) -> VectorDataset:
    """Augment data rows with the stored norm bound (must not be exceeded)."""
    norms_sq = np.einsum("nd,nd->n", data.astype(np.float64), data.astype(np.float64))
    bound_sq = float(max_norm) ** 2
    if (norms_sq > bound_sq * (1 + 1e-6)).any():
        raise ValueError(
            "vector norm exceeds the index norm bound; rebuild the index to raise it"
        )
    extra = np.sqrt(np.maximum(bound_sq - norms_sq, 0.0)).astype(np.float32)
    return VectorDataset(np.hstack([data.astype(np.float32), extra[:, None]]))


def _pad_queries(queries: np.ndarray) -> np.ndarray:
    zeros = np.zeros((queries.shape[0], 1), dtype=np.float32)
    return np.hstack([queries.astype(np.float32), zeros])


class _Index:
    """An index directory loaded into memory."""

    def __init__(self, root: Path):
        self.root = root
        meta_path = root / _META_NAME
        if not meta_path.exists():
            raise ValueError(f"{root}: not an index directory (missing {_META_NAME})")
        self.meta = json.loads(meta_path.read_text())
        kind = ElementKind.U8 if self.meta["element_kind"] == "u8" else ElementKind.F32
        self.base = bio.read_vectors_bin(root / _VECTORS_NAME, kind)
        self.is_ip = self.meta["distance"] == "ip"
        if self.is_ip:
            self.search_data = _augment_fixed(self.base.data, self.meta["max_norm"])
        else:
            self.search_data = self.base
        self.graph = GraphIndex.load(root / _GRAPH_NAME)
        rq_path = root / _RABITQ_NAME
        self.rabitq = RaBitQIndex.load(rq_path) if rq_path.exists() else None

    def prepare_queries(self, queries: VectorDataset) -> np.ndarray:
        if queries.dims != self.base.dims:
            raise ValueError(
                f"query dims {queries.dims} != index dims {self.base.dims}"
            )
        if self.is_ip:
            return _pad_queries(queries.data)
        return queries.data


def _save_index(
    root: Path,
    dataset: VectorDataset,
    graph: GraphIndex,
    params: BuildParams,
    distance: str,
    max_norm: float | None,
) -> None:
    root.mkdir(parents=True, exist_ok=True)
    bio.write_vectors_bin(root / _VECTORS_NAME, dataset)
    graph.save(root / _GRAPH_NAME)
    meta = {
        "version": 1,
        "element_kind": dataset.element_kind.value,
        "distance": distance,
        "dims": dataset.dims,
        "count": dataset.count,
        "degree_cap": params.degree_cap,
        "build_beam_width": params.build_beam_width,
        "alpha": params.alpha,
        "max_norm": max_norm,
    }
    (root / _META_NAME).write_text(json.dumps(meta, indent=2) + "\n")


def _cmd_build(args) -> int:
    kind = _element_kind_for(args.input, args.element_kind)
    data = bio.read_vectors_bin(args.input, kind)
    params = BuildParams(
        degree_cap=args.R,
        build_beam_width=args.beam,
        alpha=args.alpha,
        max_batch=args.max_batch,
        two_pass=args.two_pass,
    )
    max_norm = None
    if args.distance == "ip":
        if kind is not ElementKind.F32:
            raise ValueError("inner-product indexes require f32 vectors")
        norms_sq = np.einsum(
            "nd,nd->n", data.data.astype(np.float64), data.data.astype(np.float64)
        )
        max_norm = float(np.sqrt(norms_sq.max()))
        build_data = _augment_fixed(data.data, max_norm)
    else:
        build_data = data
    graph = build(build_data, params)
    _save_index(Path(args.out), data, graph, params, args.distance, max_norm)
    print(f"built index over {data.count} vectors (dims={data.dims}) at {args.out}")
    return 0


def _cmd_insert(args) -> int:
    idx = _Index(Path(args.index))
    kind = ElementKind.U8 if idx.meta["element_kind"] == "u8" else ElementKind.F32
    new = bio.read_vectors_bin(args.input, kind)
    if new.dims != idx.base.dims:
        raise ValueError(f"insert dims {new.dims} != index dims {idx.base.dims}")
    combined = VectorDataset(np.vstack([idx.base.data, new.data]))
    total = combined.count
    if not 0 < args.batch_pct <= 100:
        raise ValueError("--batch-pct must be in (0, 100]")
    batch = max(1, int(total * args.batch_pct / 100.0))
    params = BuildParams(
        degree_cap=idx.meta["degree_cap"],
        build_beam_width=idx.meta["build_beam_width"],
        alpha=idx.meta["alpha"],
        max_batch=batch,
    )
    if idx.is_ip:
        search_data = _augment_fixed(combined.data, idx.meta["max_norm"])
    else:
        search_data = combined
    graph = GraphIndex.load(idx.root / _GRAPH_NAME, capacity=total)
    insert_stream(graph, search_data, range(idx.base.count, total), params)
    bio.write_vectors_bin(idx.root / _VECTORS_NAME, combined)
    graph.save(idx.root / _GRAPH_NAME)
    idx.meta["count"] = total
    (idx.root / _META_NAME).write_text(json.dumps(idx.meta, indent=2) + "\n")
    print(f"inserted {new.count} vectors in batches of {batch} ({args.batch_pct}%)")
    return 0


def _cmd_gt(args) -> int:
    kind = _element_kind_for(args.data, args.element_kind)
    data = bio.read_vectors_bin(args.data, kind)
    queries = bio.read_vectors_bin(args.queries, kind)
    dk = DistanceKind.INNER_PRODUCT if args.distance == "ip" else DistanceKind.SQUARED_EUCLIDEAN
    gt = exact_knn(data, queries, args.k, dk)
    bio.write_ground_truth(args.out, gt)
    print(f"wrote exact top-{args.k} for {queries.count} queries to {args.out}")
    return 0


def _cmd_search(args) -> int:
    idx = _Index(Path(args.index))
    queries = bio.read_vectors_bin(args.queries, idx.base.element_kind)
    q = idx.prepare_queries(queries)
    params = SearchParams(beam_width=args.beam, k=args.k, rerank=args.rerank)
    source = idx.rabitq if (args.quantized and idx.rabitq is not None) else idx.search_data
    if args.quantized and idx.rabitq is None:
        raise ValueError("index has no quantized codes; run the quantize command first")
    ids, dists = run_queries(
        graph=idx.graph,
        source=source,
        queries=q,
        params=params,
        exact_data=idx.search_data if params.rerank else None,
        workers=args.workers,
    )
    if (ids < 0).any():
        raise ValueError("fewer than k reachable vertices; lower --k")
    if args.out:
        bio.write_ground_truth(args.out, GroundTruth(ids=ids, distances=dists.astype(np.float32)))
        print(f"wrote {ids.shape[0]}x{ids.shape[1]} results to {args.out}")
    else:
        for qi in range(ids.shape[0]):
            row = " ".join(f"{i}:{d:.4f}" for i, d in zip(ids[qi], dists[qi]))
            print(f"query {qi}: {row}")
    return 0


def _cmd_sweep(args) -> int:
    idx = _Index(Path(args.index))
    queries = bio.read_vectors_bin(args.queries, idx.base.element_kind)
    q = idx.prepare_queries(queries)
    gt = bio.read_ground_truth(args.gt)
    beams = [int(b) for b in args.beams.split(",") if b]
    if not beams and args.beams:
        raise ValueError("--beams must be a comma-separated list of positive integers")
    if any(b < 1 for b in beams):
        raise ValueError("beam widths must be >= 1")
    source = idx.rabitq if (args.quantized and idx.rabitq is not None) else idx.search_data
    if args.quantized and idx.rabitq is None:
        raise ValueError("index has no quantized codes; run the quantize command first")
    points = sweep(
        idx.graph,
        source,
        q,
        gt,
        args.k,
        beams,
        rerank=args.rerank,
        exact_data=idx.search_data if args.rerank else None,
        workers=args.workers,
        csv_path=args.out,
    )
    print(",".join(bio.SWEEP_CSV_HEADER))
    for p in points:
        print(f"{p.beam_width},{p.k},{p.recall:.6f},{p.qps:.2f},{p.mean_latency_us:.2f}")
    if args.out:
        print(f"wrote {len(points)} rows to {args.out}")
    return 0


def _cmd_quantize(args) -> int:
    idx = _Index(Path(args.index))
    if idx.base.element_kind is not ElementKind.F32:
        raise ValueError("quantization requires an f32 index")
    rq = rabitq_fit(idx.search_data, bits=args.bits, seed=args.seed)
    rq.save(idx.root / _RABITQ_NAME)
    print(
        f"quantized {rq.count} vectors at {args.bits} bits "
        f"({rq.per_vector_bytes} bytes/vector) to {idx.root / _RABITQ_NAME}"
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamann", description="Graph-based approximate nearest neighbor search"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_data(p):
        p.add_argument("--element-kind", choices=["u8", "f32"], default=None,
                       help="override element kind inferred from the file extension")

    p = sub.add_parser("build", help="bulk-build an index directory from a vector file")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--R", type=int, default=64, help="max out-degree (>= 2)")
    p.add_argument("--beam", type=int, default=128, help="construction beam width")
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--max-batch", type=int, default=100_000)
    p.add_argument("--two-pass", action="store_true")
    p.add_argument("--distance", choices=["l2", "ip"], default="l2")
    add_common_data(p)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("insert", help="stream new vectors into an existing index")
    p.add_argument("--index", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--batch-pct", type=float, default=2.0,
                   help="batch size as a percent of the grown dataset")
    p.set_defaults(func=_cmd_insert)

    p = sub.add_parser("gt", help="write exact ground truth for a query file")
    p.add_argument("--data", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--distance", choices=["l2", "ip"], default="l2")
    add_common_data(p)
    p.set_defaults(func=_cmd_gt)

    p = sub.add_parser("search", help="query an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--beam", type=int, default=64)
    p.add_argument("--quantized", action="store_true")
    p.add_argument("--rerank", action="store_true")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=None, help="write results in the ground-truth format")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("sweep", help="recall/QPS sweep over beam widths, CSV output")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--beams", required=True, help="comma-separated beam widths")
    p.add_argument("--quantized", action="store_true")
    p.add_argument("--rerank", action="store_true")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("quantize", help="add quantized codes to an index")
    p.add_argument("--index", required=True)
    p.add_argument("--bits", type=int, choices=[1, 2, 4, 8], default=4)
    p.add_argument("--seed", type=int, required=True, help="rotation seed")
    p.set_defaults(func=_cmd_quantize)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
