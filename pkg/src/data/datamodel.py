"""
Core data containers: client datasets, label histograms, sparse gradients and
block-structured model parameters.

Containers are immutable after construction; arrays are copied in and marked
read-only.
"""

import struct
from dataclasses import dataclass
from typing import Dict, Iterator, List, Tuple

import numpy as np

from ..errors import DataFormatError, InvalidArgumentError

BLOCK_NAMES: Tuple[str, str, str] = ("enc1", "enc2", "head")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """A client's feature matrix and labels; at least one sample"""

    client_id: int
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=float, copy=True)
        labels = np.array(self.labels, copy=True)
        if features.ndim != 2:
            raise InvalidArgumentError(f"Features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise InvalidArgumentError("Labels must be 1-D with one entry per feature row")
        if labels.size == 0:
            raise InvalidArgumentError(f"Client {self.client_id} has no samples")
        if self.num_classes < 1:
            raise InvalidArgumentError(f"num_classes must be ≥ 1, got {self.num_classes}")
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise InvalidArgumentError("Labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise InvalidArgumentError(
                f"Labels must lie in [0, {self.num_classes}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        if not np.all(np.isfinite(features)):
            raise InvalidArgumentError("Features contain non-finite values")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def class_slice(self, c: int) -> np.ndarray:
        """Rows of the class-c slice D_{i,c}"""
        return self.features[self.labels == c]

    def subset(self, indices: np.ndarray) -> "ClientDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return ClientDataset(self.client_id, self.features[idx], self.labels[idx], self.num_classes)

    def with_labels(self, labels: np.ndarray) -> "ClientDataset":
        return ClientDataset(self.client_id, self.features, labels, self.num_classes)

    def with_id(self, client_id: int) -> "ClientDataset":
        return ClientDataset(client_id, self.features, self.labels, self.num_classes)


def concat_datasets(datasets: List[ClientDataset], client_id: int = -1) -> ClientDataset:
    """Pool several datasets into one"""
    if not datasets:
        raise InvalidArgumentError("Nothing to concatenate")
    num_classes = datasets[0].num_classes
    features = np.vstack([d.features for d in datasets])
    labels = np.concatenate([d.labels for d in datasets])
    return ClientDataset(client_id, features, labels, num_classes)


@dataclass(frozen=True, eq=False)
class LabelHistogram:
    """Per-class sample counts"""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.ndim != 1 or counts.size == 0:
            raise InvalidArgumentError("Histogram counts must be a non-empty 1-D vector")
        if np.any(counts < 0):
            raise InvalidArgumentError("Histogram counts must be non-negative")
        object.__setattr__(self, "counts", _frozen(counts))

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def present_classes(self) -> np.ndarray:
        return np.flatnonzero(self.counts > 0)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelHistogram):
            return NotImplemented
        return bool(np.array_equal(self.counts, other.counts))

    def __hash__(self) -> int:
        return hash(self.counts.tobytes())


def class_histogram(d: ClientDataset) -> LabelHistogram:
    """Count samples per class"""
    return LabelHistogram(np.bincount(d.labels, minlength=d.num_classes))


def wasserstein_1d(h1: LabelHistogram, h2: LabelHistogram) -> float:
    """
    1-D Wasserstein distance between two histograms on the integer line.

    Classes sit at points 0..C−1, so the distance is the sum of absolute
    differences of the cumulative counts over c = 0..C−2 (raw counts).
    """
    if h1.num_classes != h2.num_classes:
        raise InvalidArgumentError(
            f"Histogram length mismatch: {h1.num_classes} vs {h2.num_classes}"
        )
    diff = np.cumsum(h1.counts - h2.counts)[:-1]
    return float(np.abs(diff).sum())


_SPARSE_HEADER = struct.Struct("<4sQQ")
_SPARSE_MAGIC = b"SPG1"


@dataclass(frozen=True, eq=False)
class SparseGradient:
    """A k-sparse view of a flattened update vector"""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        indices = np.array(self.indices, dtype=np.int64, copy=True)
        values = np.array(self.values, dtype=float, copy=True)
        if indices.ndim != 1 or values.shape != indices.shape:
            raise InvalidArgumentError("indices and values must be 1-D and the same length")
        if indices.size and (indices[0] < 0 or indices[-1] >= self.dim):
            raise InvalidArgumentError(f"indices must lie in [0, {self.dim})")
        if indices.size > 1 and np.any(np.diff(indices) <= 0):
            raise InvalidArgumentError("indices must be strictly increasing")
        object.__setattr__(self, "indices", _frozen(indices))
        object.__setattr__(self, "values", _frozen(values))

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @property
    def density(self) -> float:
        return self.nnz / self.dim if self.dim else 0.0

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim, dtype=float)
        dense[self.indices] = self.values
        return dense

    def nbytes(self, index_bytes: int = 4, value_bytes: int = 8) -> int:
        return self.nnz * (index_bytes + value_bytes)

    def to_bytes(self) -> bytes:
        return (
            _SPARSE_HEADER.pack(_SPARSE_MAGIC, self.dim, self.nnz)
            + self.indices.astype("<i8").tobytes()
            + self.values.astype("<f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, payload: bytes) -> "SparseGradient":
        if len(payload) < _SPARSE_HEADER.size:
            raise DataFormatError("Sparse gradient payload is truncated")
        magic, dim, nnz = _SPARSE_HEADER.unpack_from(payload, 0)
        if magic != _SPARSE_MAGIC:
            raise DataFormatError("Not a sparse gradient payload")
        offset = _SPARSE_HEADER.size
        expected = offset + 16 * nnz
        if len(payload) != expected:
            raise DataFormatError(f"Sparse gradient payload has {len(payload)} bytes, expected {expected}")
        indices = np.frombuffer(payload, dtype="<i8", count=nnz, offset=offset)
        values = np.frombuffer(payload, dtype="<f8", count=nnz, offset=offset + 8 * nnz)
        return cls(int(dim), indices, values)


@dataclass(eq=False)
class ModelParams:
    """
    Block-structured parameters of the dual-encoder model.

    enc1 is the primary encoder, enc2 the secondary encoder and head the
    classifier. A single-encoder model carries an empty enc2.
    """

    enc1: np.ndarray
    enc2: np.ndarray
    head: np.ndarray

    def __post_init__(self) -> None:
        for name in BLOCK_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=float, copy=True).ravel())

    def block(self, name: str) -> np.ndarray:
        if name not in BLOCK_NAMES:
            raise InvalidArgumentError(f"Unknown parameter block: {name}")
        return getattr(self, name)

    def blocks(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name in BLOCK_NAMES:
            yield name, getattr(self, name)

    def copy(self) -> "ModelParams":
        return ModelParams(self.enc1, self.enc2, self.head)

    def replace(self, **blocks: np.ndarray) -> "ModelParams":
        current: Dict[str, np.ndarray] = {name: arr for name, arr in self.blocks()}
        for name, value in blocks.items():
            if name not in BLOCK_NAMES:
                raise InvalidArgumentError(f"Unknown parameter block: {name}")
            current[name] = value
        return ModelParams(current["enc1"], current["enc2"], current["head"])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.enc1, self.enc2, self.head])

    @property
    def size(self) -> int:
        return int(self.enc1.size + self.enc2.size + self.head.size)

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(arr))) for _, arr in self.blocks())

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of every block"""
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.blocks(), other.blocks())
        )
