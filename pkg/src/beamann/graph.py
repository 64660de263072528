"""Bounded-degree directed graph store, medoid entry point, and robust pruning.

The adjacency is a fixed-stride slab: row u holds up to ``degree_cap``
neighbor ids, padded with -1 beyond ``degree(u)``. The fixed stride gives
O(1) vertex addressing and a flat persistence layout.

Pruning compares alpha^2 * d^2(p*, p') <= d^2(p, p'), which for alpha >= 1
and non-negative distances orders identically to the same test on true
distances, so no square root is needed anywhere.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .core import VectorDataset
from .io import FormatError

__all__ = ["Candidate", "GraphIndex", "medoid", "robust_prune"]

_GRAPH_MAGIC = 0x56414D47  # "GMAV" little-endian on disk
_GRAPH_VERSION = 1
_NO_NEIGHBOR = -1


class Candidate(NamedTuple):
    """A vertex id paired with its (squared) distance to some pivot."""

    id: int
    dist: float


class GraphIndex:
    """Directed graph with out-degree capped at ``degree_cap`` and one entry point.

    Neighbor lists are distinct, contain no self-loops, and only reference
    vertices below ``active_count``. Mutation happens through
    :meth:`set_neighbors` so the invariants are enforced in one place.
    """

    def __init__(self, capacity: int, degree_cap: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if degree_cap < 1:
            raise ValueError("degree_cap must be >= 1")
        self.capacity = int(capacity)
        self.degree_cap = int(degree_cap)
        self.adjacency = np.full((capacity, degree_cap), _NO_NEIGHBOR, dtype=np.int32)
        self.degrees = np.zeros(capacity, dtype=np.int32)
        self.entry_point = 0
        self.active_count = 0

    def degree(self, u: int) -> int:
        return int(self.degrees[u])

    def neighbors(self, u: int) -> np.ndarray:
        """Snapshot copy of u's neighbor ids, in stored order."""
        return self.adjacency[u, : self.degrees[u]].copy()

    def set_neighbors(self, u: int, ids: np.ndarray) -> None:
        """Replace u's adjacency with ``ids`` (length <= degree_cap, distinct, no self-loop)."""
        ids = np.asarray(ids, dtype=np.int32).ravel()
        if ids.size > self.degree_cap:
            raise ValueError(f"neighbor list of length {ids.size} exceeds degree cap {self.degree_cap}")
        if ids.size:
            if ids.min() < 0 or ids.max() >= self.active_count:
                raise ValueError("neighbor id out of range")
            if (ids == u).any():
                raise ValueError(f"self-loop on vertex {u}")
            if np.unique(ids).size != ids.size:
                raise ValueError(f"duplicate neighbor ids for vertex {u}")
        row = self.adjacency[u]
        row[: ids.size] = ids
        row[ids.size :] = _NO_NEIGHBOR
        self.degrees[u] = ids.size

    def validate(self) -> None:
        """Full-graph invariant scan; raises on any violation."""
        n = self.active_count
        if n == 0:
            return
        if not (0 <= self.entry_point < n):
            raise AssertionError("entry point out of range")
        degs = self.degrees[:n]
        if (degs < 0).any() or (degs > self.degree_cap).any():
            raise AssertionError("degree outside [0, degree_cap]")
        for u in range(n):
            row = self.adjacency[u, : degs[u]]
            if row.size == 0:
                continue
            if row.min() < 0 or row.max() >= n:
                raise AssertionError(f"vertex {u}: neighbor id out of range")
            if (row == u).any():
                raise AssertionError(f"vertex {u}: self-loop")
            if np.unique(row).size != row.size:
                raise AssertionError(f"vertex {u}: duplicate neighbors")

    def save(self, path: str | Path) -> None:
        """Persist header, degree array, and the fixed-stride adjacency slab."""
        path = Path(path)
        header = np.array(
            [_GRAPH_MAGIC, _GRAPH_VERSION, self.degree_cap, 0], dtype="<u4"
        )
        tail = np.array([self.active_count, self.entry_point], dtype="<u8")
        n = self.active_count
        slab = self.adjacency[:n].astype("<i4", copy=True)
        # Normalize padding so identical graphs serialize identically.
        cols = np.arange(self.degree_cap)[None, :]
        slab[cols >= self.degrees[:n, None]] = _NO_NEIGHBOR
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(tail.tobytes())
            fh.write(self.degrees[:n].astype("<i4", copy=False).tobytes())
            fh.write(np.ascontiguousarray(slab).tobytes())

    @classmethod
    def load(cls, path: str | Path, capacity: int | None = None) -> "GraphIndex":
        """Load a persisted graph; ``capacity`` may reserve room for future inserts."""
        path = Path(path)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise FormatError(f"{path}: file not found") from None
        if len(raw) < 32:
            raise FormatError(f"{path}: too short for a graph header")
        magic, version, degree_cap, _ = (int(v) for v in np.frombuffer(raw, "<u4", count=4))
        if magic != _GRAPH_MAGIC:
            raise FormatError(f"{path}: bad magic {magic:#x}")
        if version != _GRAPH_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        active_count, entry_point = (
            int(v) for v in np.frombuffer(raw, "<u8", count=2, offset=16)
        )
        expected = 32 + active_count * 4 + active_count * degree_cap * 4
        if len(raw) != expected:
            raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
        if capacity is None:
            capacity = max(active_count, 1)
        if capacity < active_count:
            raise ValueError("capacity smaller than stored active_count")
        g = cls(capacity, degree_cap)
        degrees = np.frombuffer(raw, "<i4", count=active_count, offset=32).astype(np.int32)
        slab = (
            np.frombuffer(raw, "<i4", count=active_count * degree_cap, offset=32 + active_count * 4)
            .astype(np.int32)
            .reshape(active_count, degree_cap)
        )
        g.degrees[:active_count] = degrees
        g.adjacency[:active_count] = slab
        g.active_count = active_count
        g.entry_point = entry_point
        g.validate()
        return g


def medoid(dataset: VectorDataset) -> int:
    """Index of the vector closest to the dataset mean (ties broken by lowest id).

    The mean and the distances to it are computed in f64, and the scan is
    exhaustive, so the result is exact and deterministic.
    """
    if dataset.count == 0:
        raise ValueError("medoid of an empty dataset")
    x = dataset.data.astype(np.float64)
    center = x.mean(axis=0)
    diff = x - center
    d = np.einsum("nd,nd->n", diff, diff)
    return int(np.argmin(d))


def robust_prune(
    p: int,
    candidate_ids: np.ndarray,
    candidate_dists: np.ndarray,
    *,
    alpha: float,
    degree_cap: int,
    dist_fn: Callable[[int, np.ndarray], np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Select up to ``degree_cap`` diverse neighbors for vertex ``p``.

    Candidates (ids with squared distances to p) are taken closest-first,
    ties broken by lower id. Each extracted neighbor p* discards every
    remaining candidate p' with alpha^2 * d^2(p*, p') <= d^2(p, p'): edges
    reachable through a much closer kept neighbor are redundant. ``dist_fn``
    must return squared distances from one vertex to an array of vertices.

    Returns the kept (ids, dists) in extraction order, which is ascending
    distance among the survivors.
    """
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    if degree_cap < 1:
        raise ValueError("degree_cap must be >= 1")
    ids = np.asarray(candidate_ids, dtype=np.int64).ravel()
    dists = np.asarray(candidate_dists, dtype=np.float64).ravel()
    if ids.shape != dists.shape:
        raise ValueError("candidate ids and dists length mismatch")
    if (ids == p).any():
        raise ValueError("candidate set must not contain the pivot")
    if np.unique(ids).size != ids.size:
        raise ValueError("candidate set must be deduplicated")
    if ids.size == 0:
        return ids.astype(np.int32), dists

    order = np.lexsort((ids, dists))
    ids = ids[order]
    dists = dists[order]

    alpha_sq = float(alpha) * float(alpha)
    kept_ids: list[int] = []
    kept_dists: list[float] = []
    while ids.size and len(kept_ids) < degree_cap:
        star = int(ids[0])
        kept_ids.append(star)
        kept_dists.append(float(dists[0]))
        ids = ids[1:]
        dists = dists[1:]
        if not ids.size:
            break
        d_star = np.asarray(dist_fn(star, ids), dtype=np.float64)
        keep = alpha_sq * d_star > dists
        ids = ids[keep]
        dists = dists[keep]
    return np.asarray(kept_ids, dtype=np.int32), np.asarray(kept_dists, dtype=np.float64)
