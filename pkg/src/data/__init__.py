"""Client data containers, partitioners and persistence"""

from .datamodel import (
    BLOCK_NAMES,
    ClientDataset,
    LabelHistogram,
    ModelParams,
    SparseGradient,
    class_histogram,
    concat_datasets,
    wasserstein_1d,
)
from .partitioner import (
    Federation,
    apply_concept_shift,
    gen_synthetic_clusters,
    holdout_split,
    partition_label_skew_quantity,
    partition_lda,
    with_holdout,
)
from .storage import load_csv_dataset, load_federation, save_federation, write_csv_dataset

__all__ = [
    "BLOCK_NAMES",
    "ClientDataset",
    "Federation",
    "LabelHistogram",
    "ModelParams",
    "SparseGradient",
    "apply_concept_shift",
    "class_histogram",
    "concat_datasets",
    "gen_synthetic_clusters",
    "holdout_split",
    "load_csv_dataset",
    "load_federation",
    "partition_label_skew_quantity",
    "partition_lda",
    "save_federation",
    "wasserstein_1d",
    "with_holdout",
    "write_csv_dataset",
]
