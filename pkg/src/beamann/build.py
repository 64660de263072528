"""Batch-parallel index construction and streaming batch insertion.

A batch is processed in three phases with a barrier between each:

1. Search: every new vector independently beam-searches the current graph,
   which stays read-only, collecting its visited set as edge candidates.
2. New-node wiring: each new vector prunes its visited set to at most
   ``degree_cap`` neighbors and writes its own adjacency; for every kept
   edge (x -> v) a reverse triple (target=v, source=x, dist) is appended to
   a shared edge buffer.
3. Reverse-edge application: the buffer is fully sorted by
   (target, dist, source); each distinct target's group is then merged into
   that vertex's adjacency by exactly one owner, appending when under the
   degree cap and re-pruning on overflow.

Exclusivity comes from the grouping, not from locks: within a phase every
written vertex has exactly one writer, so the same code is correct run
serially or with workers. This module runs the phases as plain loops.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import ElementKind, VectorDataset
from .graph import GraphIndex, medoid, robust_prune
from .search import MAX_BEAM_WIDTH, run_beam_searches

__all__ = ["BuildParams", "EdgeBuffer", "batch_insert", "build", "insert_stream"]


@dataclass(frozen=True)
class BuildParams:
    """Construction knobs: degree cap, insertion beam width, prune alpha, batching."""

    degree_cap: int = 64
    build_beam_width: int = 128
    alpha: float = 1.2
    max_batch: int = 100_000
    two_pass: bool = False
    # Prune every reverse-edge target even when under the degree cap.
    always_prune: bool = False
    # Emit reverse edges for the full visited set instead of kept neighbors.
    reverse_all_visited: bool = False

    def __post_init__(self):
        if self.degree_cap < 2:
            raise ValueError("degree_cap must be >= 2")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")
        if not 1 <= self.build_beam_width <= MAX_BEAM_WIDTH:
            raise ValueError(f"build_beam_width must be in [1, {MAX_BEAM_WIDTH}]")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.build_beam_width < self.degree_cap:
            warnings.warn(
                "build_beam_width below degree_cap gives sparse candidate sets",
                stacklevel=2,
            )


class EdgeBuffer:
    """Flat (target, source, dist) triples accumulated during a batch."""

    def __init__(self):
        self._targets: list[np.ndarray] = []
        self._sources: list[np.ndarray] = []
        self._dists: list[np.ndarray] = []

    def add(self, targets: np.ndarray, source: int, dists: np.ndarray) -> None:
        targets = np.asarray(targets, dtype=np.int64).ravel()
        self._targets.append(targets)
        self._sources.append(np.full(targets.size, source, dtype=np.int64))
        self._dists.append(np.asarray(dists, dtype=np.float64).ravel())

    def __len__(self) -> int:
        return sum(t.size for t in self._targets)

    def sorted_triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All triples sorted by (target, dist, source)."""
        if not self._targets:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty.copy(), np.empty(0, dtype=np.float64)
        targets = np.concatenate(self._targets)
        sources = np.concatenate(self._sources)
        dists = np.concatenate(self._dists)
        order = np.lexsort((sources, dists, targets))
        return targets[order], sources[order], dists[order]

    def groups(self):
        """Yield (target, source_ids, dists) per distinct target, sorted."""
        targets, sources, dists = self.sorted_triples()
        if not targets.size:
            return
        uniq, starts = np.unique(targets, return_index=True)
        bounds = np.append(starts, targets.size)
        for i, t in enumerate(uniq):
            lo, hi = bounds[i], bounds[i + 1]
            yield int(t), sources[lo:hi], dists[lo:hi]


class _PairwiseDistances:
    """Squared distance from one stored vector to many, for pruning."""

    def __init__(self, dataset: VectorDataset, quantizer=None):
        self._quantizer = quantizer
        if quantizer is not None:
            if dataset.element_kind is not ElementKind.F32:
                raise ValueError("quantized construction requires f32 data")
            self._x = dataset.data
            return
        x = dataset.data
        if dataset.element_kind is ElementKind.U8:
            self._x = x.astype(np.int64)
        else:
            self._x = x
        self._norms = np.einsum("nd,nd->n", self._x, self._x)

    def __call__(self, pivot: int, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if self._quantizer is not None:
            from .rabitq import prep_query

            prep = prep_query(self._quantizer, self._x[pivot])
            bound = self._quantizer.bind(self._x[pivot][None, :])
            return bound.distances(np.zeros(ids.size, dtype=np.int64), ids).astype(np.float64)
        dots = np.einsum("md,d->m", self._x[ids], self._x[pivot])
        d = self._norms[ids] - 2 * dots + self._norms[pivot]
        if self._x.dtype == np.int64:
            return d.astype(np.float64)
        return np.maximum(d, np.float32(0.0)).astype(np.float64)


def _reachable_mask(graph: GraphIndex) -> np.ndarray:
    """Vertices reachable from the entry point by directed BFS."""
    n = graph.active_count
    seen = np.zeros(n, dtype=bool)
    frontier = np.array([graph.entry_point], dtype=np.int64)
    seen[frontier] = True
    while frontier.size:
        nbrs = graph.adjacency[frontier].ravel()
        nbrs = nbrs[nbrs >= 0]
        nbrs = nbrs[~seen[nbrs]]
        if not nbrs.size:
            break
        frontier = np.unique(nbrs)
        seen[frontier] = True
    return seen


def _repair_connectivity(
    graph: GraphIndex,
    dataset: VectorDataset,
    dist: _PairwiseDistances,
) -> int:
    """Attach every entry-unreachable vertex from its nearest reachable vertex.

    Reverse-edge pruning is a competition that a small fraction of each batch
    loses at every target; with directed edges a vertex without in-edges can
    never be visited again, so the loss would be permanent. One bridge edge
    per stranded vertex (evicting the donor's farthest non-bridge neighbor
    when full) restores reachability; a vertex's own out-edges then make its
    whole region reachable. Returns the number of bridges added.
    """
    n = graph.active_count
    if n < 2:
        return 0
    cap = graph.degree_cap
    added = 0
    pinned: dict[int, set[int]] = {}
    fanout = min(cap, 16)
    while True:
        # Recompute from scratch: evictions below can strand other vertices.
        seen = _reachable_mask(graph)
        stranded = np.where(~seen)[0]
        if not stranded.size:
            return added
        reachable = np.where(seen)[0]
        # Candidate donors per stranded vertex, nearest first. Donor choices
        # go stale within a round as attachments cascade; the outer loop
        # refreshes them, so staleness only costs extra rounds.
        donors = np.empty((stranded.size, fanout), dtype=np.int64)
        donor_d = np.empty(stranded.size, dtype=np.float64)
        for i, x in enumerate(stranded):
            d = dist(int(x), reachable)
            top = np.argpartition(d, min(fanout, d.size) - 1)[:fanout]
            top = top[np.lexsort((reachable[top], d[top]))]
            donors[i] = reachable[top]
            donor_d[i] = d[top[0]]
        order = np.lexsort((stranded, donor_d))
        for i in order:
            x = int(stranded[i])
            if seen[x]:
                continue
            for u in donors[i]:
                u = int(u)
                nb = graph.neighbors(u)
                pins = pinned.setdefault(u, set())
                if nb.size >= cap:
                    evictable = nb[~np.isin(nb, list(pins))] if pins else nb
                    if not evictable.size:
                        continue  # donor saturated with bridges, try the next
                    drop = evictable[np.argmax(dist(u, evictable))]
                    nb = nb[nb != drop]
                graph.set_neighbors(u, np.append(nb, x))
                pins.add(x)
                added += 1
                break
            else:
                raise RuntimeError(f"connectivity repair: no donor for vertex {x}")
            # Everything below x becomes reachable too.
            frontier = np.array([x], dtype=np.int64)
            seen[frontier] = True
            while frontier.size:
                nxt = graph.adjacency[frontier].ravel()
                nxt = nxt[nxt >= 0]
                nxt = nxt[~seen[nxt]]
                if not nxt.size:
                    break
                frontier = np.unique(nxt)
                seen[frontier] = True


def _validate_range(graph: GraphIndex, dataset: VectorDataset, new_ids: range) -> tuple[int, int]:
    start, stop = new_ids.start, new_ids.stop
    if new_ids.step != 1:
        raise ValueError("new id range must be contiguous")
    if start < stop and start < graph.active_count:
        raise ValueError(
            f"id range [{start}, {stop}) overlaps active vertices (< {graph.active_count})"
        )
    if start != graph.active_count and start < stop:
        raise ValueError(
            f"id range must start at active_count={graph.active_count}, got {start}"
        )
    if stop > dataset.count:
        raise ValueError("id range exceeds dataset count")
    if stop > graph.capacity:
        raise ValueError("id range exceeds graph capacity")
    return start, stop


def _seed_batch(
    graph: GraphIndex,
    dataset: VectorDataset,
    start: int,
    stop: int,
    params: BuildParams,
    dist: _PairwiseDistances,
) -> None:
    """Bootstrap an empty graph: wire the first batch mutually via pruning."""
    graph.active_count = stop
    graph.entry_point = medoid(dataset.slice_rows(0, stop))
    if stop - start == 1:
        return
    ids = np.arange(start, stop, dtype=np.int64)
    for x in range(start, stop):
        others = ids[ids != x]
        cand_d = dist(x, others)
        kept_ids, _ = robust_prune(
            x, others, cand_d, alpha=params.alpha, degree_cap=params.degree_cap, dist_fn=dist
        )
        graph.set_neighbors(x, kept_ids)


def _merge_reverse_edges(
    graph: GraphIndex,
    buffer: EdgeBuffer,
    params: BuildParams,
    dist: _PairwiseDistances,
) -> None:
    """Phase 3: one owner per target merges its group into the adjacency."""
    cap = params.degree_cap
    for target, sources, dists in buffer.groups():
        existing = graph.neighbors(target)
        fresh = ~np.isin(sources, existing)
        sources = sources[fresh]
        dists = dists[fresh]
        if not sources.size:
            continue
        if not params.always_prune and existing.size + sources.size <= cap:
            graph.set_neighbors(target, np.concatenate([existing, sources.astype(np.int32)]))
            continue
        existing_d = dist(target, existing) if existing.size else np.empty(0)
        merged_ids = np.concatenate([existing.astype(np.int64), sources])
        merged_d = np.concatenate([np.asarray(existing_d, dtype=np.float64), dists])
        kept_ids, _ = robust_prune(
            target, merged_ids, merged_d, alpha=params.alpha, degree_cap=cap, dist_fn=dist
        )
        graph.set_neighbors(target, kept_ids)


def batch_insert(
    graph: GraphIndex,
    dataset: VectorDataset,
    new_ids: range,
    params: BuildParams,
    quantizer=None,
) -> None:
    """Insert a contiguous id range in one three-phase batch.

    The range must start exactly at ``graph.active_count``; overlapping an
    active vertex is an error. On an empty graph the batch seeds it by
    mutual pruning. After return every inserted vertex is active and all
    degrees are within the cap.
    """
    start, stop = _validate_range(graph, dataset, new_ids)
    if start == stop:
        return
    dist = _PairwiseDistances(dataset, quantizer)
    if graph.active_count == 0:
        _seed_batch(graph, dataset, start, stop, params, dist)
        _repair_connectivity(graph, dataset, dist)
        return

    # Phase 1: candidate generation against the read-only graph.
    source = quantizer if quantizer is not None else dataset
    results = run_beam_searches(
        graph, source, dataset.data[start:stop], params.build_beam_width
    )

    # Phase 2: activate the batch, wire each new vertex, emit reverse triples.
    graph.active_count = stop
    buffer = EdgeBuffer()
    for x, res in zip(range(start, stop), results):
        kept_ids, kept_dists = robust_prune(
            x,
            res.visited_ids,
            res.visited_dists,
            alpha=params.alpha,
            degree_cap=params.degree_cap,
            dist_fn=dist,
        )
        graph.set_neighbors(x, kept_ids)
        if params.reverse_all_visited:
            buffer.add(res.visited_ids, x, res.visited_dists)
        else:
            buffer.add(kept_ids, x, kept_dists)

    # Phase 3: grouped reverse-edge application.
    _merge_reverse_edges(graph, buffer, params, dist)

    # Batches whose reverse edges all lost their pruning duels would be
    # permanently unsearchable; bridge them back in before the next batch.
    _repair_connectivity(graph, dataset, dist)


def _refine_pass(
    graph: GraphIndex,
    dataset: VectorDataset,
    params: BuildParams,
    quantizer=None,
) -> None:
    """Re-run search + prune for every active vertex at the final alpha."""
    dist = _PairwiseDistances(dataset, quantizer)
    source = quantizer if quantizer is not None else dataset
    n = graph.active_count
    for lo in range(0, n, params.max_batch):
        hi = min(n, lo + params.max_batch)
        results = run_beam_searches(
            graph, source, dataset.data[lo:hi], params.build_beam_width
        )
        buffer = EdgeBuffer()
        for x, res in zip(range(lo, hi), results):
            current = graph.neighbors(x)
            extra = current[~np.isin(current, res.visited_ids)]
            cand_ids = np.concatenate([res.visited_ids.astype(np.int64), extra.astype(np.int64)])
            cand_d = np.concatenate(
                [res.visited_dists, dist(x, extra) if extra.size else np.empty(0)]
            )
            keep = cand_ids != x
            kept_ids, kept_dists = robust_prune(
                x,
                cand_ids[keep],
                cand_d[keep],
                alpha=params.alpha,
                degree_cap=params.degree_cap,
                dist_fn=dist,
            )
            graph.set_neighbors(x, kept_ids)
            buffer.add(kept_ids, x, kept_dists)
        _merge_reverse_edges(graph, buffer, params, dist)
    _repair_connectivity(graph, dataset, dist)


def build(
    dataset: VectorDataset,
    params: BuildParams,
    quantizer=None,
) -> GraphIndex:
    """Bulk-build a graph over the whole dataset.

    Inserts ids 0..N in batches of exponentially growing size, starting at
    degree_cap + 1 and doubling up to ``params.max_batch``. The small seed
    keeps the early graph near-complete and navigable, so every later vertex
    wires itself by searching an already-searchable graph. The entry point
    becomes the dataset medoid as soon as that vertex is active. With
    ``two_pass`` the insertion passes prune at alpha=1 and a final
    refinement pass re-prunes everything at the configured alpha.
    """
    if dataset.count == 0:
        raise ValueError("cannot build over an empty dataset")
    graph = GraphIndex(capacity=dataset.count, degree_cap=params.degree_cap)
    global_medoid = medoid(dataset)
    pass_params = replace(params, alpha=1.0) if params.two_pass else params

    size = params.degree_cap + 1
    pos = 0
    while pos < dataset.count:
        stop = min(dataset.count, pos + size)
        batch_insert(graph, dataset, range(pos, stop), pass_params, quantizer)
        if global_medoid < graph.active_count and graph.entry_point != global_medoid:
            # Reachability is defined from the entry; re-check after moving it.
            graph.entry_point = global_medoid
            _repair_connectivity(graph, dataset, _PairwiseDistances(dataset, quantizer))
        pos = stop
        size = min(size * 2, params.max_batch)

    if params.two_pass:
        _refine_pass(graph, dataset, params, quantizer)
    return graph


def insert_stream(
    graph: GraphIndex,
    dataset: VectorDataset,
    new_range: range,
    params: BuildParams,
    quantizer=None,
) -> None:
    """Insert externally-arriving vectors already appended to ``dataset``.

    Thin wrapper over :func:`batch_insert` that splits the range into
    ``params.max_batch`` chunks. An empty range is a no-op; a range
    overlapping active vertices is an error.
    """
    if len(new_range) == 0:
        return
    _validate_range(graph, dataset, new_range)
    pos = new_range.start
    while pos < new_range.stop:
        stop = min(new_range.stop, pos + params.max_batch)
        batch_insert(graph, dataset, range(pos, stop), params, quantizer)
        pos = stop
