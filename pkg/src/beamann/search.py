"""Greedy beam search over the graph, single-query and batched.

The engine keeps, per query, a frontier of the ``beam_width`` best
candidates seen so far and an exact visited set. Each iteration expands the
closest unvisited frontier entry, evaluates its not-yet-seen out-neighbors,
and re-truncates the frontier. The visited set is exact (a per-vertex flag,
not a lossy table) and candidates merge into the frontier every iteration.

Ordering is ascending (dist, id) everywhere. Internally each candidate is a
single uint64 key: the distance in the high 32 bits (IEEE bit pattern for
float distances, raw value for integer distances; both order-preserving for
non-negative values) and the vertex id in the low 32 bits. One stable sort
of keys therefore realizes the exact (dist, id) order with no tie ambiguity.

Many queries run in lockstep as rows of shared numpy arrays. Per-query
results are bit-identical to running each query alone: every per-element
computation (gathers, einsum reductions, key sorts) is independent of how
many rows the batch holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ElementKind, VectorDataset
from .graph import Candidate, GraphIndex

__all__ = ["SearchParams", "SearchStats", "SearchResult", "beam_search", "search_knn",
           "search_knn_batch"]

MAX_BEAM_WIDTH = 1024
_UMAX = np.uint64(0xFFFFFFFFFFFFFFFF)
_ID_MASK = np.uint64(0xFFFFFFFF)

# Upper bound on queries * vertices boolean cells held at once by one
# lockstep chunk (256 MB of seen flags).
_SEEN_CELL_BUDGET = 1 << 28


@dataclass(frozen=True)
class SearchParams:
    """Beam width (frontier capacity), result count k, and the rerank switch."""

    beam_width: int
    k: int = 10
    rerank: bool = False

    def __post_init__(self):
        if not 1 <= self.beam_width <= MAX_BEAM_WIDTH:
            raise ValueError(f"beam_width must be in [1, {MAX_BEAM_WIDTH}]")
        if not 1 <= self.k <= self.beam_width:
            raise ValueError("k must satisfy 1 <= k <= beam_width")


@dataclass
class SearchStats:
    hops: int = 0
    distance_evals: int = 0


@dataclass
class SearchResult:
    """Frontier (ascending by (dist, id)) plus the visited trace of one search."""

    frontier_ids: np.ndarray
    frontier_dists: np.ndarray
    visited_ids: np.ndarray
    visited_dists: np.ndarray
    stats: SearchStats = field(default_factory=SearchStats)

    @property
    def frontier(self) -> list[Candidate]:
        return [Candidate(int(i), float(d)) for i, d in zip(self.frontier_ids, self.frontier_dists)]

    @property
    def visited(self) -> list[Candidate]:
        return [Candidate(int(i), float(d)) for i, d in zip(self.visited_ids, self.visited_dists)]


class ExactDistances:
    """Squared-distance evaluator over raw vectors.

    f32 data evaluates ||x||^2 - 2<x,q> + ||q||^2 in f32 with precomputed row
    norms; u8 data uses the same identity in exact 64-bit integers.
    """

    def __init__(self, dataset: VectorDataset):
        self.dataset = dataset
        x = dataset.data
        self.is_integer = dataset.element_kind is ElementKind.U8
        if self.is_integer:
            wide = x.astype(np.int64)
            self._x = wide
            self._xnorm = np.einsum("nd,nd->n", wide, wide)
            if x.shape[1] * (255 ** 2) >= 1 << 32:
                raise ValueError("u8 dims too large for 32-bit packed distances")
        else:
            self._x = x
            self._xnorm = np.einsum("nd,nd->n", x, x)

    def bind(self, queries: np.ndarray) -> "_BoundExact":
        q = np.atleast_2d(np.asarray(queries))
        if q.shape[1] != self.dataset.dims:
            raise ValueError(f"query dims {q.shape[1]} != dataset dims {self.dataset.dims}")
        if self.is_integer:
            if q.dtype != np.uint8:
                raise ValueError("u8 dataset requires u8 queries")
            q = q.astype(np.int64)
        else:
            q = q.astype(np.float32, copy=False)
        qnorm = np.einsum("qd,qd->q", q, q)
        return _BoundExact(self, q, qnorm)


class _BoundExact:
    def __init__(self, parent: ExactDistances, q: np.ndarray, qnorm: np.ndarray):
        self._p = parent
        self._q = q
        self._qnorm = qnorm
        self.n_queries = q.shape[0]

    def distances(self, qrows: np.ndarray, ids: np.ndarray) -> np.ndarray:
        p = self._p
        dots = np.einsum("md,md->m", p._x[ids], self._q[qrows])
        d = p._xnorm[ids] - 2 * dots + self._qnorm[qrows]
        if p.is_integer:
            return d
        return np.maximum(d, np.float32(0.0))

    def pack(self, dists: np.ndarray, ids: np.ndarray) -> np.ndarray:
        return _pack_keys(dists, ids, self._p.is_integer)

    def decode(self, keys: np.ndarray) -> np.ndarray:
        return _decode_keys(keys, self._p.is_integer)


def _pack_keys(dists: np.ndarray, ids: np.ndarray, is_integer: bool) -> np.ndarray:
    if is_integer:
        hi = dists.astype(np.uint64)
    else:
        hi = np.maximum(dists.astype(np.float32, copy=False), np.float32(0.0))
        hi = hi.view(np.uint32).astype(np.uint64)
    return (hi << np.uint64(32)) | ids.astype(np.uint64)


def _decode_keys(keys: np.ndarray, is_integer: bool) -> np.ndarray:
    hi = keys >> np.uint64(32)
    if is_integer:
        return hi.astype(np.float64)
    return hi.astype(np.uint32).view(np.float32).astype(np.float64)


def _key_ids(keys: np.ndarray) -> np.ndarray:
    return (keys & _ID_MASK).astype(np.int64)


def bind_distance_source(source, queries: np.ndarray):
    """Bind a distance source (dataset or quantized index) to a query block."""
    if isinstance(source, VectorDataset):
        return ExactDistances(source).bind(queries)
    # Late import keeps rabitq optional for purely exact usage.
    from .rabitq import RaBitQIndex

    if isinstance(source, RaBitQIndex):
        return source.bind(queries)
    raise TypeError(f"unsupported distance source {type(source).__name__}")


def _run_lockstep(
    graph: GraphIndex,
    bound,
    qrows: np.ndarray,
    starts: np.ndarray,
    beam_width: int,
) -> list[SearchResult]:
    """Run one lockstep chunk of beam searches; one SearchResult per query row."""
    n_vertices = graph.active_count
    nq = qrows.size
    width = beam_width
    adjacency = graph.adjacency

    fr_keys = np.full((nq, width), _UMAX, dtype=np.uint64)
    fr_vis = np.ones((nq, width), dtype=bool)
    seen = np.zeros((nq, n_vertices), dtype=bool)
    evals = np.zeros(nq, dtype=np.int64)
    hops = np.zeros(nq, dtype=np.int64)

    d0 = bound.distances(qrows, starts)
    fr_keys[:, 0] = bound.pack(d0, starts)
    fr_vis[:, 0] = False
    seen[np.arange(nq), starts] = True
    evals += 1

    trace_q: list[np.ndarray] = []
    trace_id: list[np.ndarray] = []
    trace_dist: list[np.ndarray] = []

    act = np.arange(nq)
    while act.size:
        unvis = ~fr_vis[act]
        alive = unvis.any(axis=1)
        act = act[alive]
        if not act.size:
            break
        pos = unvis[alive].argmax(axis=1)
        u_keys = fr_keys[act, pos]
        fr_vis[act, pos] = True
        u_ids = _key_ids(u_keys)
        hops[act] += 1
        trace_q.append(act)
        trace_id.append(u_ids.astype(np.int32))
        trace_dist.append(bound.decode(u_keys))

        nbrs = adjacency[u_ids]
        valid = nbrs >= 0
        safe = np.where(valid, nbrs, 0)
        new = valid & ~seen[act[:, None], safe]

        canvas = np.full(nbrs.shape, _UMAX, dtype=np.uint64)
        canvas_vis = ~new
        rows, cols = np.nonzero(new)
        if rows.size:
            flat_ids = nbrs[rows, cols].astype(np.int64)
            flat_act = act[rows]
            d = bound.distances(qrows[flat_act], flat_ids)
            canvas[rows, cols] = bound.pack(d, flat_ids)
            seen[flat_act, flat_ids] = True
            evals[act] += np.bincount(rows, minlength=act.size)

        cat_keys = np.concatenate([fr_keys[act], canvas], axis=1)
        cat_vis = np.concatenate([fr_vis[act], canvas_vis], axis=1)
        order = np.argsort(cat_keys, axis=1, kind="stable")[:, :width]
        ar = np.arange(act.size)[:, None]
        fr_keys[act] = cat_keys[ar, order]
        fr_vis[act] = cat_vis[ar, order]

    # Reassemble per-query visited traces from the iteration-major record.
    if trace_q:
        flat_q = np.concatenate(trace_q)
        flat_id = np.concatenate(trace_id)
        flat_dist = np.concatenate(trace_dist)
        by_query = np.argsort(flat_q, kind="stable")
        flat_id = flat_id[by_query]
        flat_dist = flat_dist[by_query]
        bounds = np.zeros(nq + 1, dtype=np.int64)
        np.cumsum(hops, out=bounds[1:])
    else:
        flat_id = np.empty(0, dtype=np.int32)
        flat_dist = np.empty(0, dtype=np.float64)
        bounds = np.zeros(nq + 1, dtype=np.int64)

    results = []
    for q in range(nq):
        keys = fr_keys[q]
        keep = keys != _UMAX
        keys = keys[keep]
        lo, hi = bounds[q], bounds[q + 1]
        results.append(
            SearchResult(
                frontier_ids=_key_ids(keys).astype(np.int32),
                frontier_dists=bound.decode(keys),
                visited_ids=flat_id[lo:hi],
                visited_dists=flat_dist[lo:hi],
                stats=SearchStats(hops=int(hops[q]), distance_evals=int(evals[q])),
            )
        )
    return results


def run_beam_searches(
    graph: GraphIndex,
    source,
    queries: np.ndarray,
    beam_width: int,
    starts: np.ndarray | int | None = None,
) -> list[SearchResult]:
    """Beam-search every row of ``queries``; returns one SearchResult per row.

    Queries are processed in lockstep chunks sized to bound the visited-flag
    memory; per-query output does not depend on the chunking.
    """
    if graph.active_count == 0:
        raise ValueError("search on an empty graph")
    if not 1 <= beam_width <= MAX_BEAM_WIDTH:
        raise ValueError(f"beam_width must be in [1, {MAX_BEAM_WIDTH}]")
    queries = np.atleast_2d(np.asarray(queries))
    nq = queries.shape[0]
    if starts is None:
        starts = graph.entry_point
    starts = np.broadcast_to(np.asarray(starts, dtype=np.int64), (nq,)).copy()
    if starts.size and (starts.min() < 0 or starts.max() >= graph.active_count):
        raise ValueError("start vertex out of range")

    bound = bind_distance_source(source, queries)
    chunk = max(1, _SEEN_CELL_BUDGET // max(graph.active_count, 1))
    out: list[SearchResult] = []
    for lo in range(0, nq, chunk):
        hi = min(nq, lo + chunk)
        out.extend(
            _run_lockstep(graph, bound, np.arange(lo, hi), starts[lo:hi], beam_width)
        )
    return out


def beam_search(
    graph: GraphIndex,
    source,
    query: np.ndarray,
    params: SearchParams,
    start: int | None = None,
) -> SearchResult:
    """Single-query greedy beam search returning the frontier and visited trace."""
    return run_beam_searches(graph, source, np.atleast_2d(query), params.beam_width, start)[0]


def _exact_rescore(data: VectorDataset, query: np.ndarray, ids: np.ndarray) -> np.ndarray:
    diff = data.data[ids].astype(np.float32) - np.asarray(query, dtype=np.float32)
    return np.einsum("md,md->m", diff, diff)


def search_knn(
    graph: GraphIndex,
    source,
    query: np.ndarray,
    params: SearchParams,
    start: int | None = None,
    exact_data: VectorDataset | None = None,
) -> list[Candidate]:
    """Top-k search from the graph entry point (or ``start``).

    With ``params.rerank`` and a quantized source, the full frontier is
    re-scored with exact squared distances over ``exact_data`` before
    truncating to k. Rerank on an exact source is a no-op.
    """
    result = beam_search(graph, source, query, params, start)
    ids = result.frontier_ids
    dists = result.frontier_dists
    if params.rerank and not isinstance(source, VectorDataset):
        if exact_data is None:
            raise ValueError("rerank over a quantized source requires exact_data")
        exact = _exact_rescore(exact_data, query, ids).astype(np.float64)
        order = np.lexsort((ids, exact))
        ids = ids[order]
        dists = exact[order]
    k = min(params.k, ids.size)
    return [Candidate(int(i), float(d)) for i, d in zip(ids[:k], dists[:k])]


def search_knn_batch(
    graph: GraphIndex,
    source,
    queries: np.ndarray,
    params: SearchParams,
    exact_data: VectorDataset | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized top-k for many queries.

    Returns (ids, dists) of shape (n_queries, k); rows with fewer than k
    reachable vertices are padded with id -1 and dist +inf.
    """
    results = run_beam_searches(graph, source, queries, params.beam_width)
    rerank = params.rerank and not isinstance(source, VectorDataset)
    if rerank and exact_data is None:
        raise ValueError("rerank over a quantized source requires exact_data")
    nq = len(results)
    k = params.k
    out_ids = np.full((nq, k), -1, dtype=np.int32)
    out_dists = np.full((nq, k), np.inf, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries))
    for qi, res in enumerate(results):
        ids = res.frontier_ids
        dists = res.frontier_dists
        if rerank and ids.size:
            exact = _exact_rescore(exact_data, queries[qi], ids).astype(np.float64)
            order = np.lexsort((ids, exact))
            ids = ids[order]
            dists = exact[order]
        take = min(k, ids.size)
        out_ids[qi, :take] = ids[:take]
        out_dists[qi, :take] = dists[:take]
    return out_ids, out_dists
