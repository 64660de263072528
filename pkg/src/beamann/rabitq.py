"""Rotation-based scalar quantization with a precomputed-metadata distance estimator.

Vectors are centered on the dataset centroid, normalized, rotated by a
seeded random orthonormal matrix, and each rotated coordinate is quantized
to m bits (m in {1, 2, 4, 8}) with a per-vector symmetric step. After
rotation the coordinates of a unit vector concentrate near zero (on the
order of 1/sqrt(D)), which is what makes plain scalar quantization accurate
here. Stored per vector: ceil(D*m/8) code bytes plus two f32 scalars.

Distance estimation expands

    ||q - v||^2 = ||q - c||^2 + ||v - c||^2 - 2 * ||v - c|| * <q_rot, o>

with o the rotated unit residual, and estimates <q_rot, o> from the code as
<q_rot, o_bar> / <o, o_bar>, where o_bar = delta * (u - (2^m - 1)/2) is the
dequantized code. Folding constants gives the evaluation actually performed:

    est = query_add + data_add + data_rescale * (<u, q_rot> - query_sumq)

with per-vector  data_add   = ||v - c||^2
                 data_rescale = -2 * ||v - c|| * delta / <o, o_bar>
and per-query    query_add  = ||q - c||^2
                 query_sumq = (2^m - 1)/2 * sum(q_rot).

So the hot loop is one linear scan of the packed code and a dot product
against the rotated query; no lookup tables and no random access. The
estimator is calibrated against exact distances in the test suite
(near-zero mean signed error at m=8).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ElementKind, VectorDataset
from .io import FormatError

__all__ = [
    "RaBitQIndex",
    "QueryPrep",
    "rotate",
    "fit",
    "prep_query",
    "estimate_sq_dist",
    "pack_codes",
    "unpack_codes",
]

_RABITQ_MAGIC = 0x52425149  # "IQBR" little-endian on disk
_RABITQ_VERSION = 1
_ALLOWED_BITS = (1, 2, 4, 8)
_FIT_BLOCK = 4096


@functools.lru_cache(maxsize=8)
def _rotation_matrix(seed: int, dims: int) -> np.ndarray:
    """Seeded orthonormal (dims, dims) matrix, sign-canonicalized."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dims, dims))
    q, r = np.linalg.qr(a)
    signs = np.where(np.diag(r) >= 0, 1.0, -1.0)
    q = q * signs
    q.setflags(write=False)
    return q


def rotate(seed: int, v: np.ndarray) -> np.ndarray:
    """Apply the seeded orthonormal rotation to a vector (norm-preserving)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    m = _rotation_matrix(seed, v.size)
    return m @ v


def pack_codes(u: np.ndarray, bits: int) -> np.ndarray:
    """Pack (n, dims) m-bit codes into (n, ceil(dims*m/8)) bytes.

    Code j of a byte occupies bits [m*j, m*j + m), lowest dimensions in the
    lowest bits.
    """
    per = 8 // bits
    n, d = u.shape
    nbytes = (d * bits + 7) // 8
    pad = nbytes * per - d
    if pad:
        u = np.pad(u, ((0, 0), (0, pad)))
    u = u.reshape(n, nbytes, per).astype(np.uint16)
    shifts = (bits * np.arange(per)).astype(np.uint16)
    return (u << shifts).sum(axis=2, dtype=np.uint16).astype(np.uint8)


def unpack_codes(packed: np.ndarray, bits: int, dims: int) -> np.ndarray:
    """Inverse of :func:`pack_codes`; one linear pass over the packed bytes."""
    per = 8 // bits
    mask = np.uint8((1 << bits) - 1)
    shifts = (bits * np.arange(per)).astype(np.uint8)
    u = (packed[..., :, None] >> shifts) & mask
    return u.reshape(*packed.shape[:-1], -1)[..., :dims]


@dataclass(frozen=True)
class QueryPrep:
    """Per-query precomputation for the estimator."""

    rotated_query: np.ndarray  # (dims,) f32
    query_add: float
    query_sumq: float


class RaBitQIndex:
    """Quantized vector store: centroid, rotation seed, packed codes, metadata.

    ``meta[:, 0]`` is data_add and ``meta[:, 1]`` is data_rescale (see module
    docstring). The rotation matrix is rebuilt from the seed on demand, so
    persistence stores only the seed.
    """

    def __init__(
        self,
        dims: int,
        bits: int,
        rotation_seed: int,
        centroid: np.ndarray,
        codes: np.ndarray,
        meta: np.ndarray,
    ):
        if bits not in _ALLOWED_BITS:
            raise ValueError(f"bits must be one of {_ALLOWED_BITS}")
        self.dims = int(dims)
        self.bits = int(bits)
        self.rotation_seed = int(rotation_seed)
        self.centroid = np.asarray(centroid, dtype=np.float32)
        self.codes = np.asarray(codes, dtype=np.uint8)
        self.meta = np.asarray(meta, dtype=np.float32)
        expected_bytes = (self.dims * self.bits + 7) // 8
        if self.codes.ndim != 2 or self.codes.shape[1] != expected_bytes:
            raise ValueError(f"codes must have {expected_bytes} bytes per vector")
        if self.meta.shape != (self.codes.shape[0], 2):
            raise ValueError("meta must be (count, 2)")
        if self.centroid.shape != (self.dims,):
            raise ValueError("centroid dims mismatch")

    @property
    def count(self) -> int:
        return self.codes.shape[0]

    @property
    def code_bytes(self) -> int:
        return self.codes.shape[1]

    @property
    def per_vector_bytes(self) -> int:
        """Code bytes plus the two f32 metadata scalars."""
        return self.code_bytes + 8

    @property
    def data_add(self) -> np.ndarray:
        return self.meta[:, 0]

    @property
    def data_rescale(self) -> np.ndarray:
        return self.meta[:, 1]

    def rotation(self) -> np.ndarray:
        return _rotation_matrix(self.rotation_seed, self.dims)

    def bind(self, queries: np.ndarray) -> "_BoundQuantized":
        """Prepare a query block for use as a beam-search distance source."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float32))
        if q.shape[1] != self.dims:
            raise ValueError(f"query dims {q.shape[1]} != index dims {self.dims}")
        qc = q - self.centroid[None, :]
        rot = self.rotation()
        rotated = (qc.astype(np.float64) @ rot.T).astype(np.float32)
        qadd = np.einsum("qd,qd->q", qc, qc)
        mid = np.float32((2**self.bits - 1) / 2.0)
        qsumq = (rotated.sum(axis=1) * mid).astype(np.float32)
        return _BoundQuantized(self, rotated, qadd, qsumq)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = np.array([_RABITQ_MAGIC, _RABITQ_VERSION, self.dims, self.bits], dtype="<u4")
        tail = np.array([self.count, self.rotation_seed], dtype="<u8")
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(tail.tobytes())
            fh.write(self.centroid.astype("<f4", copy=False).tobytes())
            fh.write(np.ascontiguousarray(self.meta.astype("<f4", copy=False)).tobytes())
            fh.write(np.ascontiguousarray(self.codes).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "RaBitQIndex":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise FormatError(f"{path}: file not found") from None
        if len(raw) < 32:
            raise FormatError(f"{path}: too short for a header")
        magic, version, dims, bits = (int(v) for v in np.frombuffer(raw, "<u4", count=4))
        if magic != _RABITQ_MAGIC:
            raise FormatError(f"{path}: bad magic {magic:#x}")
        if version != _RABITQ_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        count, seed = (int(v) for v in np.frombuffer(raw, "<u8", count=2, offset=16))
        if bits not in _ALLOWED_BITS:
            raise FormatError(f"{path}: invalid bits {bits}")
        code_bytes = (dims * bits + 7) // 8
        expected = 32 + dims * 4 + count * 8 + count * code_bytes
        if len(raw) != expected:
            raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
        off = 32
        centroid = np.frombuffer(raw, "<f4", count=dims, offset=off).astype(np.float32)
        off += dims * 4
        meta = np.frombuffer(raw, "<f4", count=count * 2, offset=off).astype(np.float32)
        off += count * 8
        codes = np.frombuffer(raw, np.uint8, count=count * code_bytes, offset=off).copy()
        return cls(dims, bits, seed, centroid, codes.reshape(count, code_bytes),
                   meta.reshape(count, 2))


class _BoundQuantized:
    """Estimator bound to a query block, for use by the beam-search engine."""

    def __init__(self, index: RaBitQIndex, rotated, qadd, qsumq):
        self.index = index
        self._rotated = rotated
        self._qadd = qadd
        self._qsumq = qsumq
        self.n_queries = rotated.shape[0]

    def distances(self, qrows: np.ndarray, ids: np.ndarray) -> np.ndarray:
        idx = self.index
        u = unpack_codes(idx.codes[ids], idx.bits, idx.dims).astype(np.float32)
        dots = np.einsum("md,md->m", u, self._rotated[qrows])
        est = (
            self._qadd[qrows]
            + idx.data_add[ids]
            + idx.data_rescale[ids] * (dots - self._qsumq[qrows])
        )
        return np.maximum(est, np.float32(0.0))

    def pack(self, dists: np.ndarray, ids: np.ndarray) -> np.ndarray:
        from .search import _pack_keys

        return _pack_keys(dists, ids, False)

    def decode(self, keys: np.ndarray) -> np.ndarray:
        from .search import _decode_keys

        return _decode_keys(keys, False)


def fit(dataset: VectorDataset, bits: int = 4, seed: int = 0) -> RaBitQIndex:
    """Quantize an f32 dataset to m-bit codes with per-vector metadata.

    Zero-residual rows (vectors equal to the centroid) store a midpoint code
    with data_add = data_rescale = 0, making their estimate exactly
    ||q - c||^2.
    """
    if dataset.element_kind is not ElementKind.F32:
        raise ValueError("fit requires an f32 dataset")
    if dataset.count == 0:
        raise ValueError("fit requires a non-empty dataset")
    if bits not in _ALLOWED_BITS:
        raise ValueError(f"bits must be one of {_ALLOWED_BITS}")

    x = dataset.data
    n, dims = x.shape
    centroid = x.astype(np.float64).mean(axis=0).astype(np.float32)
    rot = _rotation_matrix(seed, dims)
    levels = 2**bits - 1
    mid = levels / 2.0

    code_bytes = (dims * bits + 7) // 8
    codes = np.empty((n, code_bytes), dtype=np.uint8)
    meta = np.empty((n, 2), dtype=np.float32)

    for lo in range(0, n, _FIT_BLOCK):
        hi = min(n, lo + _FIT_BLOCK)
        resid = (x[lo:hi] - centroid[None, :]).astype(np.float64)
        norms = np.sqrt(np.einsum("bd,bd->b", resid, resid))
        nonzero = norms > 0.0
        safe = np.where(nonzero, norms, 1.0)
        o = (resid / safe[:, None]) @ rot.T
        delta = 2.0 * np.abs(o).max(axis=1) / levels
        safe_delta = np.where(delta > 0.0, delta, 1.0)
        u = np.clip(np.round(o / safe_delta[:, None] + mid), 0, levels).astype(np.uint8)
        u[~nonzero] = 1 << (bits - 1)
        obar = safe_delta[:, None] * (u.astype(np.float64) - mid)
        ip_oo = np.einsum("bd,bd->b", o, obar)
        ok = nonzero & (ip_oo > 1e-12)
        rescale = np.where(ok, -2.0 * norms * delta / np.where(ok, ip_oo, 1.0), 0.0)
        meta[lo:hi, 0] = np.where(nonzero, norms * norms, 0.0).astype(np.float32)
        meta[lo:hi, 1] = rescale.astype(np.float32)
        codes[lo:hi] = pack_codes(u, bits)

    return RaBitQIndex(dims, bits, seed, centroid, codes, meta)


def prep_query(index: RaBitQIndex, q: np.ndarray) -> QueryPrep:
    """Rotate and summarize one query for repeated estimation."""
    q = np.asarray(q, dtype=np.float32).ravel()
    if q.size != index.dims:
        raise ValueError(f"query dims {q.size} != index dims {index.dims}")
    qc = q - index.centroid
    rotated = (index.rotation() @ qc.astype(np.float64)).astype(np.float32)
    query_add = float(np.einsum("d,d->", qc, qc))
    mid = (2**index.bits - 1) / 2.0
    query_sumq = float(rotated.astype(np.float64).sum() * mid)
    return QueryPrep(rotated_query=rotated, query_add=query_add, query_sumq=query_sumq)


def estimate_sq_dist(index: RaBitQIndex, vector_id: int, prep: QueryPrep) -> float:
    """Estimated squared distance between the prepped query and one stored vector.

    Reads the packed code row once and scans it linearly; may return a small
    negative value since the estimator is unbiased rather than clamped.
    """
    if not 0 <= vector_id < index.count:
        raise ValueError(f"vector_id {vector_id} out of range")
    row = index.codes[vector_id]
    u = unpack_codes(row, index.bits, index.dims).astype(np.float32)
    dot_uq = float(np.einsum("d,d->", u, prep.rotated_query))
    return (
        prep.query_add
        + float(index.data_add[vector_id])
        + float(index.data_rescale[vector_id]) * (dot_uq - prep.query_sumq)
    )
