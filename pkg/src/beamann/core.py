"""Vector datasets, distance kernels, and the inner-product-to-Euclidean reduction.

Everything else in the package builds on the two container types defined
here (:class:`VectorDataset`, :class:`AugmentedDataset`) and the scalar
distance kernels (:func:`sq_l2`, :func:`dot`). Distances are always squared
Euclidean unless stated otherwise; no square root is ever taken, since
ordering by squared distance equals ordering by true distance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ElementKind",
    "DistanceKind",
    "VectorDataset",
    "AugmentedDataset",
    "sq_l2",
    "dot",
    "mips_augment",
    "gen_synthetic",
]


class ElementKind(enum.Enum):
    """Storage type of a dataset's elements."""

    U8 = "u8"
    F32 = "f32"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.uint8) if self is ElementKind.U8 else np.dtype(np.float32)

    @property
    def itemsize(self) -> int:
        return self.dtype.itemsize


class DistanceKind(enum.Enum):
    """Metric used for ranking neighbors.

    Squared Euclidean values are non-negative; inner products are
    unrestricted reals (larger means more similar).
    """

    SQUARED_EUCLIDEAN = "sq_l2"
    INNER_PRODUCT = "ip"


class VectorDataset:
    """Immutable, contiguous row-major store of ``count`` vectors of ``dims`` elements.

    Element kind is either u8 or f32. Float data is validated to be finite at
    ingestion so downstream kernels never have to branch on NaN/Inf.
    """

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise ValueError(f"dataset array must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValueError("dims must be >= 1")
        if arr.dtype == np.uint8:
            self._kind = ElementKind.U8
        elif arr.dtype == np.float32:
            self._kind = ElementKind.F32
        else:
            raise ValueError(f"unsupported element dtype {arr.dtype}; use uint8 or float32")
        arr = np.ascontiguousarray(arr)
        if self._kind is ElementKind.F32 and arr.size and not np.isfinite(arr).all():
            raise ValueError("dataset contains non-finite values")
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        """The underlying (count, dims) read-only array."""
        return self._data

    @property
    def element_kind(self) -> ElementKind:
        return self._kind

    @property
    def dims(self) -> int:
        return self._data.shape[1]

    @property
    def count(self) -> int:
        return self._data.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self._data[i]

    def slice_rows(self, start: int, stop: int) -> "VectorDataset":
        return VectorDataset(self._data[start:stop])

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return f"VectorDataset(count={self.count}, dims={self.dims}, kind={self._kind.value})"


@dataclass(frozen=True)
class AugmentedDataset:
    """A dataset lifted into dims+1 space so inner-product ranking becomes L2 ranking.

    ``max_norm`` is the bound M taken over the data rows. Data rows carry
    sqrt(M^2 - ||x||^2) in the synthetic last coordinate (so every augmented
    data row has norm M); query rows carry 0 there.
    """

    dataset: VectorDataset
    base_dims: int
    max_norm: float
    role: str  # "data" or "query"

    def __post_init__(self):
        if self.dataset.dims != self.base_dims + 1:
            raise ValueError("augmented dims must equal base dims + 1")
        if self.role not in ("data", "query"):
            raise ValueError(f"role must be 'data' or 'query', got {self.role!r}")


def _require_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def sq_l2(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance between two vectors.

    For u8 inputs the subtraction and accumulation happen in 64-bit integers,
    which is exact for dims <= 4096. For f32 inputs the accumulation uses
    numpy's fixed pairwise summation, so results are run-to-run identical.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    _require_same_shape(a, b)
    if a.dtype == np.uint8 and b.dtype == np.uint8:
        d = a.astype(np.int64) - b.astype(np.int64)
        return int(np.dot(d, d))
    diff = a.astype(np.float32, copy=False) - b.astype(np.float32, copy=False)
    return float(np.dot(diff, diff))


def dot(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product of two f32 vectors, accumulated in fixed order."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    _require_same_shape(a, b)
    return float(np.dot(a, b))


def row_sq_norms(x: np.ndarray) -> np.ndarray:
    """Per-row squared norms. Integer-exact for u8, f32 for float input."""
    if x.dtype == np.uint8:
        w = x.astype(np.int64)
        return np.einsum("nd,nd->n", w, w)
    return np.einsum("nd,nd->n", x, x)


def mips_augment(
    data: VectorDataset, queries: VectorDataset
) -> tuple[AugmentedDataset, AugmentedDataset]:
    """Reduce maximum-inner-product search to nearest-Euclidean search.

    Appends one coordinate: data row x becomes [x, sqrt(M^2 - ||x||^2)] with
    M the max data row norm, and query row q becomes [q, 0]. Then for any
    query q and data rows x, y:

        dot(q, x) > dot(q, y)  <=>  sq_l2(q', x') < sq_l2(q', y')

    so argmax by inner product equals argmin by augmented squared distance.

    Returns the augmented (data, queries) pair.
    """
    if data.element_kind is not ElementKind.F32 or queries.element_kind is not ElementKind.F32:
        raise ValueError("mips_augment requires f32 datasets")
    if data.count == 0:
        raise ValueError("mips_augment requires non-empty data")
    if data.dims != queries.dims:
        raise ValueError(f"dimension mismatch: data dims {data.dims}, query dims {queries.dims}")

    norms_sq = np.einsum("nd,nd->n", data.data.astype(np.float64), data.data.astype(np.float64))
    max_sq = float(norms_sq.max())
    if not np.isfinite(max_sq):
        raise ValueError("non-finite norms in data")
    # Clamp tiny negatives from rounding before the square root.
    extra = np.sqrt(np.maximum(max_sq - norms_sq, 0.0)).astype(np.float32)

    aug_data = np.hstack([data.data, extra[:, None]])
    aug_queries = np.hstack(
        [queries.data, np.zeros((queries.count, 1), dtype=np.float32)]
    )
    m = float(np.sqrt(max_sq))
    return (
        AugmentedDataset(VectorDataset(aug_data), data.dims, m, "data"),
        AugmentedDataset(VectorDataset(aug_queries), data.dims, m, "query"),
    )


def gen_synthetic(
    count: int,
    dims: int,
    seed: int,
    distribution: str = "gaussian",
) -> VectorDataset:
    """Deterministic synthetic f32 dataset for experiments and tests.

    ``gaussian`` draws i.i.d. standard normals. ``clustered`` draws from 16
    well-separated Gaussian clusters with unit-variance noise, giving the
    data non-trivial nearest-neighbor structure.
    """
    if count < 1 or dims < 1:
        raise ValueError("count and dims must be >= 1")
    rng = np.random.default_rng(seed)
    if distribution == "gaussian":
        x = rng.standard_normal((count, dims))
    elif distribution == "clustered":
        n_clusters = 16
        centers = rng.standard_normal((n_clusters, dims)) * 4.0
        assign = rng.integers(0, n_clusters, size=count)
        x = centers[assign] + rng.standard_normal((count, dims))
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return VectorDataset(x.astype(np.float32))
