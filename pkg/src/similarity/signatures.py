"""
Client signatures: the compact summary a client uploads once after warm-up.

A signature holds a sparsified warm-up update, per-class principal vectors
and the label histogram.
"""

import base64
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from ..data.datamodel import ClientDataset, LabelHistogram, SparseGradient, class_histogram
from ..errors import InvalidArgumentError
from ..linalg import OrthonormalBasis, truncated_svd
from ..utils.helpers import derive_rng


def retained_count(fraction: float, dim: int) -> int:
    """⌈fraction·dim⌉, robust to float noise in the product"""
    return min(dim, max(1, math.ceil(round(fraction * dim, 9)))) if dim else 0


def sparse_mask(dim: int, fraction: float, seed: int) -> np.ndarray:
    """Sorted coordinates retained by a uniformly random mask"""
    if not 0.0 < fraction <= 1.0:
        raise InvalidArgumentError(f"fraction must be in (0, 1], got {fraction}")
    k = retained_count(fraction, dim)
    if k == dim:
        return np.arange(dim, dtype=np.int64)
    rng = derive_rng(seed, "sparsify")
    return np.sort(rng.choice(dim, size=k, replace=False)).astype(np.int64)


def sparsify(delta: np.ndarray, fraction: float, seed: int, mask: Optional[np.ndarray] = None) -> SparseGradient:
    """
    Keep ⌈fraction·dim⌉ uniformly random coordinates of delta.

    Args:
        delta: Full flattened update
        fraction: Retained share in (0, 1]
        seed: Mask seed (per client for independent masks)
        mask: Precomputed sorted coordinates, used instead of drawing one

    Returns:
        SparseGradient over the retained coordinates
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidArgumentError(f"fraction must be in (0, 1], got {fraction}")
    vec = np.asarray(delta, dtype=float).ravel()
    indices = sparse_mask(vec.size, fraction, seed) if mask is None else np.asarray(mask, dtype=np.int64)
    return SparseGradient(vec.size, indices, vec[indices])


def class_principal_vectors(
    d: ClientDataset,
    p_fraction: float = 0.01,
    p_min: int = 1,
    subsample: Optional[int] = None,
    seed: int = 0,
    svd_method: str = "exact",
) -> Dict[int, OrthonormalBasis]:
    """
    Per-class principal vectors U^i_c of a client's data.

    Args:
        d: Client dataset
        p_fraction: Vectors per class as a share of the class size
        p_min: Lower bound on vectors per class
        subsample: Optional cap on rows per class before the SVD
        seed: Seed for subsampling and the randomized SVD
        svd_method: "exact" or "randomized"

    Returns:
        Mapping from each present class to its basis
    """
    if not 0.0 < p_fraction <= 1.0:
        raise InvalidArgumentError(f"p_fraction must be in (0, 1], got {p_fraction}")
    if p_min < 1:
        raise InvalidArgumentError(f"p_min must be ≥ 1, got {p_min}")
    if subsample is not None and subsample < 1:
        raise InvalidArgumentError(f"subsample must be ≥ 1, got {subsample}")

    rng = derive_rng(seed, "class-subsample", d.client_id if d.client_id >= 0 else 0)
    bases: Dict[int, OrthonormalBasis] = {}
    for c in np.flatnonzero(np.bincount(d.labels, minlength=d.num_classes)):
        rows = d.class_slice(int(c))
        if subsample is not None and rows.shape[0] > subsample:
            keep = np.sort(rng.choice(rows.shape[0], size=subsample, replace=False))
            rows = rows[keep]
        n_used = rows.shape[0]
        p = max(p_min, math.ceil(round(p_fraction * n_used, 9)))
        p = min(p, d.n_features, n_used)
        bases[int(c)] = truncated_svd(rows.T, p, method=svd_method, seed=seed)
    return bases


def _encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(text: str, shape: Any) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").reshape(shape).copy()


@dataclass
class ClientSignature:
    """What the server learns about a client before clustering"""

    client_id: int
    sparse_grad: SparseGradient
    per_class_bases: Dict[int, OrthonormalBasis]
    histogram: LabelHistogram

    def __post_init__(self) -> None:
        present = set(int(c) for c in self.histogram.present_classes)
        extra = set(self.per_class_bases) - present
        if extra:
            raise InvalidArgumentError(f"Bases given for absent classes {sorted(extra)}")

    def nbytes(self, index_bytes: int = 4, value_bytes: int = 8) -> int:
        """Upload size: sparse update, principal vectors and histogram"""
        basis_values = sum(b.vectors.size for b in self.per_class_bases.values())
        return (
            self.sparse_grad.nbytes(index_bytes=index_bytes, value_bytes=value_bytes)
            + basis_values * value_bytes
            + self.histogram.num_classes * 8
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "client_id": self.client_id,
            "histogram": [int(x) for x in self.histogram.counts],
            "sparse_grad": base64.b64encode(self.sparse_grad.to_bytes()).decode("ascii"),
            "bases": {
                str(c): {"shape": list(b.vectors.shape), "data": _encode_array(b.vectors)}
                for c, b in sorted(self.per_class_bases.items())
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClientSignature":
        return cls(
            client_id=int(data["client_id"]),
            sparse_grad=SparseGradient.from_bytes(base64.b64decode(data["sparse_grad"])),
            per_class_bases={
                int(c): OrthonormalBasis(_decode_array(b["data"], b["shape"]))
                for c, b in data["bases"].items()
            },
            histogram=LabelHistogram(data["histogram"]),
        )


def build_signature(
    d: ClientDataset,
    delta: np.ndarray,
    sparsity: float,
    mask_seed: int,
    p_fraction: float = 0.01,
    p_min: int = 1,
    subsample: Optional[int] = None,
    seed: int = 0,
    svd_method: str = "exact",
) -> ClientSignature:
    """Assemble a client's signature from its data and warm-up update"""
    return ClientSignature(
        client_id=d.client_id,
        sparse_grad=sparsify(delta, sparsity, mask_seed),
        per_class_bases=class_principal_vectors(d, p_fraction, p_min, subsample, seed, svd_method),
        histogram=class_histogram(d),
    )
