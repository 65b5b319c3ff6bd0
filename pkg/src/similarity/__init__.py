"""Client signatures and pairwise proximity"""

from .proximity import (
    FusionWeightLearner,
    ProximityMatrix,
    build_proximity,
    data_similarity_matrix,
    fuse_proximity,
    gradient_similarity_matrix,
    learn_fusion_weights,
)
from .signatures import ClientSignature, build_signature, class_principal_vectors, sparsify
from .warmup import WarmupResult, local_warmup

__all__ = [
    "ClientSignature",
    "FusionWeightLearner",
    "ProximityMatrix",
    "WarmupResult",
    "build_proximity",
    "build_signature",
    "class_principal_vectors",
    "data_similarity_matrix",
    "fuse_proximity",
    "gradient_similarity_matrix",
    "learn_fusion_weights",
    "local_warmup",
    "sparsify",
]
