"""
Non-IID federation generators.

Label-and-quantity skew, per-class Dirichlet (LDA) splits, concept shift by
label remapping and a synthetic generator with known ground-truth clusters.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InvalidArgumentError
from ..utils.helpers import derive_rng
from .datamodel import ClientDataset, LabelHistogram, class_histogram

logger = logging.getLogger("Partitioner")

CONCEPTS = ("identity", "flip", "rotate")
MAX_REDRAWS = 50


@dataclass
class Federation:
    """A set of client datasets with optional ground truth and test splits"""

    clients: List[ClientDataset]
    num_classes: int
    ground_truth: Optional[np.ndarray] = None
    test_clients: Optional[List[Optional[ClientDataset]]] = None
    concepts: Optional[List[str]] = None
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.ground_truth is not None:
            self.ground_truth = np.asarray(self.ground_truth, dtype=np.int64)
            if self.ground_truth.size != len(self.clients):
                raise InvalidArgumentError("ground_truth needs one entry per client")
        if self.test_clients is not None and len(self.test_clients) != len(self.clients):
            raise InvalidArgumentError("test_clients needs one entry per client")

    @property
    def N(self) -> int:
        return len(self.clients)

    @property
    def n_features(self) -> int:
        return self.clients[0].n_features if self.clients else 0

    def histograms(self) -> List[LabelHistogram]:
        return [class_histogram(d) for d in self.clients]

    def test_set(self, i: int) -> Optional[ClientDataset]:
        return self.test_clients[i] if self.test_clients is not None else None


def _split_by_proportions(indices: np.ndarray, proportions: np.ndarray) -> List[np.ndarray]:
    cuts = (np.cumsum(proportions) * indices.size).astype(np.int64)[:-1]
    return np.split(indices, cuts)


def _dirichlet_split(
    rng: np.random.Generator,
    indices: np.ndarray,
    holders: int,
    alpha_q: float,
    min_each: int,
) -> List[np.ndarray]:
    for _ in range(MAX_REDRAWS):
        pieces = _split_by_proportions(indices, rng.dirichlet(np.full(holders, alpha_q)))
        if all(p.size >= min_each for p in pieces):
            return pieces
    raise InvalidArgumentError(
        f"Could not give every holder ≥{min_each} of {indices.size} samples after {MAX_REDRAWS} redraws"
    )


def _assemble(src: ClientDataset, parts: List[List[np.ndarray]]) -> List[ClientDataset]:
    empty = [i for i, pieces in enumerate(parts) if sum(p.size for p in pieces) == 0]
    if empty:
        raise InvalidArgumentError(f"Clients {empty} received no samples")
    return [src.subset(np.sort(np.concatenate(pieces))).with_id(i) for i, pieces in enumerate(parts)]


def label_groups(num_classes: int, rho: float, rng: np.random.Generator) -> List[List[int]]:
    """Shuffle the labels and cut them into blocks of ⌈rho·C⌉, wrapping the last block"""
    size = math.ceil(round(rho * num_classes, 9))
    order = rng.permutation(num_classes).tolist()
    count = math.ceil(num_classes / size)
    padded = order + order[: count * size - num_classes]
    return [sorted(padded[b * size : (b + 1) * size]) for b in range(count)]


def partition_label_skew_quantity(
    src: ClientDataset,
    N: int,
    rho: float,
    alpha_q: float,
    seed: int,
) -> Federation:
    """
    Label-and-quantity skew.

    Label blocks of size ⌈rho·C⌉ go round-robin to client groups; every label
    is split across the clients holding it by Dirichlet(alpha_q) proportions.

    Args:
        src: Source dataset
        N: Number of clients
        rho: Share of labels per client, in (0, 1]
        alpha_q: Dirichlet concentration
        seed: Partition seed

    Returns:
        Federation whose clients jointly hold every source sample exactly once
    """
    c_total = src.num_classes
    if N < 1:
        raise InvalidArgumentError(f"N must be ≥ 1, got {N}")
    if not 0.0 < rho <= 1.0:
        raise InvalidArgumentError(f"rho must be in (0, 1], got {rho}")
    if rho * c_total < 1.0:
        raise InvalidArgumentError(f"rho·C = {rho * c_total:.3g} is below one label")
    if alpha_q <= 0:
        raise InvalidArgumentError(f"alpha_q must be > 0, got {alpha_q}")

    rng = derive_rng(seed, "label-skew")
    blocks = label_groups(c_total, rho, rng)
    n_groups = min(len(blocks), N)
    group_labels: List[set] = [set() for _ in range(n_groups)]
    for b, labels in enumerate(blocks):
        group_labels[b % n_groups].update(labels)
    client_group = [i % n_groups for i in range(N)]

    parts: List[List[np.ndarray]] = [[] for _ in range(N)]
    for c in range(c_total):
        holders = [i for i in range(N) if c in group_labels[client_group[i]]]
        indices = rng.permutation(np.flatnonzero(src.labels == c))
        if indices.size == 0:
            continue
        min_each = 1 if indices.size >= len(holders) else 0
        for holder, piece in zip(holders, _dirichlet_split(rng, indices, len(holders), alpha_q, min_each)):
            parts[holder].append(piece)

    clients = _assemble(src, parts)
    logger.info(f"Label/quantity skew: {N} clients, {len(blocks)} label blocks of {len(blocks[0])}")
    return Federation(
        clients,
        c_total,
        params={"kind": "label_skew", "N": N, "rho": rho, "alpha_q": alpha_q, "seed": seed},
    )


def partition_lda(src: ClientDataset, N: int, alpha_q: float, seed: int) -> Federation:
    """Per-class Dirichlet(alpha_q) allocation of samples over N clients"""
    if N < 1:
        raise InvalidArgumentError(f"N must be ≥ 1, got {N}")
    if alpha_q <= 0:
        raise InvalidArgumentError(f"alpha_q must be > 0, got {alpha_q}")

    rng = derive_rng(seed, "lda")
    for attempt in range(MAX_REDRAWS):
        parts: List[List[np.ndarray]] = [[] for _ in range(N)]
        for c in range(src.num_classes):
            indices = rng.permutation(np.flatnonzero(src.labels == c))
            if indices.size == 0:
                continue
            for i, piece in enumerate(_split_by_proportions(indices, rng.dirichlet(np.full(N, alpha_q)))):
                parts[i].append(piece)
        if all(sum(p.size for p in pieces) > 0 for pieces in parts):
            logger.info(f"LDA split over {N} clients (alpha_q={alpha_q}, attempt {attempt + 1})")
            return Federation(
                _assemble(src, parts),
                src.num_classes,
                params={"kind": "lda", "N": N, "alpha_q": alpha_q, "seed": seed},
            )
    raise InvalidArgumentError(f"LDA split left a client empty after {MAX_REDRAWS} redraws")


def concept_label_map(concept: str, num_classes: int) -> np.ndarray:
    """Lookup table y → concept(y)"""
    y = np.arange(num_classes)
    if concept == "identity":
        return y
    if concept == "flip":
        return (num_classes - y) % num_classes
    if concept == "rotate":
        return (y + 1) % num_classes
    raise InvalidArgumentError(f"Unknown concept: {concept}")


def apply_concept_shift(d: ClientDataset, concept: str) -> ClientDataset:
    """Remap labels by concept; features are untouched"""
    return d.with_labels(concept_label_map(concept, d.num_classes)[d.labels])


def holdout_split(d: ClientDataset, test_fraction: float, seed: int) -> Tuple[ClientDataset, Optional[ClientDataset]]:
    """Random train/test split of one client's data; the test part is None when it would be empty"""
    if not 0.0 <= test_fraction < 1.0:
        raise InvalidArgumentError(f"test_fraction must be in [0, 1), got {test_fraction}")
    order = derive_rng(seed, "holdout", max(d.client_id, 0)).permutation(d.n_samples)
    n_test = int(math.floor(test_fraction * d.n_samples))
    test = d.subset(np.sort(order[:n_test])) if n_test else None
    return d.subset(np.sort(order[n_test:])), test


def cluster_class_sets(K: int, num_classes: int, classes_per_cluster: Optional[int]) -> List[List[int]]:
    """Disjoint class blocks when they fit, cyclic windows otherwise; all classes when unset"""
    if classes_per_cluster is None:
        return [list(range(num_classes)) for _ in range(K)]
    if not 1 <= classes_per_cluster <= num_classes:
        raise InvalidArgumentError(f"classes_per_cluster must be in [1, {num_classes}]")
    size = classes_per_cluster
    if K * size <= num_classes:
        return [list(range(k * size, (k + 1) * size)) for k in range(K)]
    return [sorted({(k * size + j) % num_classes for j in range(size)}) for k in range(K)]


def _synthetic_client(
    rng: np.random.Generator,
    client_id: int,
    classes: Sequence[int],
    means: np.ndarray,
    n: int,
    noise: float,
    concept: str,
    num_classes: int,
) -> ClientDataset:
    labels = rng.permutation(np.asarray(classes)[np.arange(n) % len(classes)])
    features = means[labels] + noise * rng.standard_normal((n, means.shape[1]))
    return apply_concept_shift(ClientDataset(client_id, features, labels, num_classes), concept)


def gen_synthetic_clusters(
    K: int,
    clients_per_cluster: int,
    C: int,
    F: int,
    n_per_client: int,
    separation: float,
    seed: int,
    *,
    classes_per_cluster: Optional[int] = None,
    concepts: Optional[Sequence[str]] = None,
    n_test_per_client: int = 0,
    noise: float = 1.0,
) -> Federation:
    """
    Gaussian federation with K ground-truth clusters.

    Class c is centred at separation·e_c. Clusters differ by their class
    subset, their concept, or both.

    Args:
        K: Ground-truth clusters, ≥ 2
        clients_per_cluster: Clients per cluster
        C: Classes
        F: Feature dimension, ≥ C
        n_per_client: Training samples per client
        separation: Scale of the class means
        seed: Generator seed
        classes_per_cluster: Classes each cluster holds; all when omitted
        concepts: Concept per cluster; identity when omitted
        n_test_per_client: Test samples per client, drawn the same way
        noise: Standard deviation of the isotropic noise

    Returns:
        Federation with ground_truth set, clients ordered cluster by cluster
    """
    if K < 2:
        raise InvalidArgumentError(f"K must be ≥ 2, got {K}")
    if clients_per_cluster < 1 or n_per_client < 1:
        raise InvalidArgumentError("clients_per_cluster and n_per_client must be ≥ 1")
    if F < C:
        raise InvalidArgumentError(f"F must be ≥ C, got F={F}, C={C}")
    concept_list = list(concepts) if concepts is not None else ["identity"] * K
    if len(concept_list) != K:
        raise InvalidArgumentError(f"concepts needs {K} entries")

    means = np.zeros((C, F))
    means[np.arange(C), np.arange(C)] = separation
    class_sets = cluster_class_sets(K, C, classes_per_cluster)

    clients: List[ClientDataset] = []
    tests: List[ClientDataset] = []
    truth: List[int] = []
    client_concepts: List[str] = []
    for k in range(K):
        for _ in range(clients_per_cluster):
            i = len(clients)
            rng = derive_rng(seed, "synthetic", i)
            clients.append(_synthetic_client(rng, i, class_sets[k], means, n_per_client, noise, concept_list[k], C))
            if n_test_per_client > 0:
                test_rng = derive_rng(seed, "synthetic-test", i)
                tests.append(
                    _synthetic_client(test_rng, i, class_sets[k], means, n_test_per_client, noise, concept_list[k], C)
                )
            truth.append(k)
            client_concepts.append(concept_list[k])

    return Federation(
        clients,
        C,
        ground_truth=np.asarray(truth),
        test_clients=tests if n_test_per_client > 0 else None,
        concepts=client_concepts,
        params={
            "kind": "synthetic",
            "K": K,
            "clients_per_cluster": clients_per_cluster,
            "C": C,
            "F": F,
            "n_per_client": n_per_client,
            "separation": separation,
            "classes_per_cluster": classes_per_cluster,
            "concepts": concept_list,
            "n_test_per_client": n_test_per_client,
            "noise": noise,
            "seed": seed,
        },
    )


def with_holdout(fed: Federation, test_fraction: float, seed: int) -> Federation:
    """Split every client into train and test parts"""
    pairs = [holdout_split(d, test_fraction, seed) for d in fed.clients]
    return Federation(
        [train for train, _ in pairs],
        fed.num_classes,
        ground_truth=fed.ground_truth,
        test_clients=[test for _, test in pairs],
        concepts=fed.concepts,
        params={**fed.params, "test_fraction": test_fraction},
    )
