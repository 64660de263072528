"""Exact brute-force k-nearest-neighbor reference.

Used to generate ground truth, to measure recall, and as the independent
check for every approximate path in the test suite. All arithmetic is f64
and the scan is exhaustive, blocked over queries to bound memory.
"""

from __future__ import annotations

import numpy as np

from .core import DistanceKind, VectorDataset
from .io import GroundTruth

__all__ = ["exact_knn"]

_QUERY_BLOCK = 256


def exact_knn(
    data: VectorDataset,
    queries: VectorDataset,
    k: int,
    distance_kind: DistanceKind = DistanceKind.SQUARED_EUCLIDEAN,
) -> GroundTruth:
    """Exhaustive top-k scan per query; deterministic with ties broken by id.

    Squared-Euclidean results are sorted by (dist, id) ascending. For inner
    product the stored "distances" are negated inner products, so rows stay
    ascending and larger inner products rank first.
    """
    if not 1 <= k <= data.count:
        raise ValueError(f"k must be in [1, {data.count}]")
    if data.dims != queries.dims:
        raise ValueError(f"dimension mismatch: data {data.dims}, queries {queries.dims}")
    if data.element_kind is not queries.element_kind:
        raise ValueError("data and queries must share an element kind")

    x = data.data.astype(np.float64)
    q_all = queries.data.astype(np.float64)
    ids = np.empty((queries.count, k), dtype=np.int32)
    dists = np.empty((queries.count, k), dtype=np.float32)

    if distance_kind is DistanceKind.SQUARED_EUCLIDEAN:
        xnorm = np.einsum("nd,nd->n", x, x)
    for lo in range(0, queries.count, _QUERY_BLOCK):
        hi = min(queries.count, lo + _QUERY_BLOCK)
        q = q_all[lo:hi]
        if distance_kind is DistanceKind.SQUARED_EUCLIDEAN:
            qnorm = np.einsum("bd,bd->b", q, q)
            scores = xnorm[None, :] - 2.0 * (q @ x.T) + qnorm[:, None]
            np.maximum(scores, 0.0, out=scores)
        elif distance_kind is DistanceKind.INNER_PRODUCT:
            scores = -(q @ x.T)
        else:
            raise ValueError(f"unsupported distance kind {distance_kind}")
        # Stable sort of scores breaks exact ties by ascending id.
        order = np.argsort(scores, axis=1, kind="stable")[:, :k]
        ids[lo:hi] = order.astype(np.int32)
        dists[lo:hi] = np.take_along_axis(scores, order, axis=1).astype(np.float32)

    return GroundTruth(ids=ids, distances=dists)
