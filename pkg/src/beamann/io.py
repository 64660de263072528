"""Bit-exact readers and writers for the binary vector and ground-truth formats.

Vector files follow the public big-ann-benchmarks layout: two unsigned
32-bit little-endian integers (count, dims) followed by count*dims row-major
elements, u8 for ``.u8bin`` and little-endian f32 for ``.fbin``. Byte order
is little-endian regardless of host so public dataset slices load unmodified.

Ground-truth files: u32 query_count, u32 k, then query_count*k i32 ids, then
query_count*k f32 distances, both little-endian and row-major. Distance rows
must be non-decreasing; ids are signed to match the public format but
negative values are rejected.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ElementKind, VectorDataset

__all__ = [
    "FormatError",
    "GroundTruth",
    "read_vectors_bin",
    "write_vectors_bin",
    "read_ground_truth",
    "write_ground_truth",
    "SWEEP_CSV_HEADER",
    "write_sweep_csv",
]

_HEADER = np.dtype("<u4")
_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")

SWEEP_CSV_HEADER = ("beam_width", "k", "recall", "qps", "mean_latency_us")


class FormatError(ValueError):
    """A file does not conform to the expected binary layout."""


@dataclass(frozen=True)
class GroundTruth:
    """Exact top-k reference: per-query neighbor ids and their distances.

    ``distances`` rows are non-decreasing. For inner-product ground truth the
    stored values are negated inner products, which keeps rows sorted
    ascending under the same convention.
    """

    ids: np.ndarray  # (query_count, k) int32
    distances: np.ndarray  # (query_count, k) float32

    def __post_init__(self):
        ids = np.asarray(self.ids)
        dists = np.asarray(self.distances)
        if ids.ndim != 2 or dists.ndim != 2 or ids.shape != dists.shape:
            raise ValueError("ids and distances must be matching 2-D matrices")
        if ids.shape[1] < 1:
            raise ValueError("k must be >= 1")
        if ids.size:
            if ids.min() < 0:
                raise ValueError("negative neighbor id in ground truth")
            sorted_rows = np.sort(ids, axis=1)
            if (sorted_rows[:, 1:] == sorted_rows[:, :-1]).any():
                raise ValueError("duplicate neighbor id within a ground-truth row")
            if (np.diff(dists.astype(np.float64), axis=1) < 0).any():
                raise ValueError("ground-truth distance row is not non-decreasing")

    @property
    def query_count(self) -> int:
        return self.ids.shape[0]

    @property
    def k(self) -> int:
        return self.ids.shape[1]


def _read_exact(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None


def read_vectors_bin(path: str | Path, element_kind: ElementKind) -> VectorDataset:
    """Parse a ``.fbin``/``.u8bin`` vector file into a dataset.

    Raises :class:`FormatError` for a short file, trailing bytes, a zero
    count or dims, or a payload size that overflows the header claim.
    """
    path = Path(path)
    raw = _read_exact(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: too short for an 8-byte header")
    count, dims = (int(v) for v in np.frombuffer(raw, dtype=_HEADER, count=2))
    if count == 0 or dims == 0:
        raise FormatError(f"{path}: header claims count={count}, dims={dims}")
    itemsize = element_kind.itemsize
    payload = count * dims * itemsize
    expected = 8 + payload
    if len(raw) < expected:
        raise FormatError(
            f"{path}: truncated payload, header claims {expected} bytes, file has {len(raw)}"
        )
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    dt = np.dtype("<u1") if element_kind is ElementKind.U8 else _F32
    arr = np.frombuffer(raw, dtype=dt, count=count * dims, offset=8)
    arr = arr.astype(element_kind.dtype, copy=True).reshape(count, dims)
    return VectorDataset(arr)


def write_vectors_bin(path: str | Path, dataset: VectorDataset) -> None:
    """Write a dataset in the vector binary format (exact inverse of read)."""
    if dataset.count == 0:
        raise ValueError("refusing to write an empty dataset (unreadable header)")
    path = Path(path)
    header = np.array([dataset.count, dataset.dims], dtype=_HEADER)
    if dataset.element_kind is ElementKind.U8:
        payload = dataset.data.astype("<u1", copy=False)
    else:
        payload = dataset.data.astype(_F32, copy=False)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(payload).tobytes())


def read_ground_truth(path: str | Path) -> GroundTruth:
    """Parse a ground-truth file; validates row sortedness and id uniqueness."""
    path = Path(path)
    raw = _read_exact(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: too short for an 8-byte header")
    query_count, k = (int(v) for v in np.frombuffer(raw, dtype=_HEADER, count=2))
    if query_count == 0 or k == 0:
        raise FormatError(f"{path}: header claims query_count={query_count}, k={k}")
    n = query_count * k
    expected = 8 + n * 4 + n * 4
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    ids = np.frombuffer(raw, dtype=_I32, count=n, offset=8).astype(np.int32).reshape(
        query_count, k
    )
    dists = (
        np.frombuffer(raw, dtype=_F32, count=n, offset=8 + n * 4)
        .astype(np.float32)
        .reshape(query_count, k)
    )
    try:
        return GroundTruth(ids=ids, distances=dists)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_ground_truth(path: str | Path, gt: GroundTruth) -> None:
    """Write a ground-truth file (exact inverse of read)."""
    path = Path(path)
    header = np.array([gt.query_count, gt.k], dtype=_HEADER)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(gt.ids.astype(_I32, copy=False)).tobytes())
        fh.write(np.ascontiguousarray(gt.distances.astype(_F32, copy=False)).tobytes())


def write_sweep_csv(path: str | Path, points) -> None:
    """Write sweep results with the fixed schema beam_width,k,recall,qps,mean_latency_us."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_HEADER)
        for p in points:
            writer.writerow(
                [p.beam_width, p.k, f"{p.recall:.6f}", f"{p.qps:.2f}", f"{p.mean_latency_us:.2f}"]
            )
