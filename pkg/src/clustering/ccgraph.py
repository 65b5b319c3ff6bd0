"""
Cluster Complementarity Graph.

Clusters that are short on a class (demand) are linked to clusters that hold
it plentifully (supply) with aligned class subspaces. An edge p→q means
cluster p receives knowledge from cluster q.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..data.datamodel import LabelHistogram
from ..errors import InvalidArgumentError

logger = logging.getLogger("CCGraphBuilder")


def rarity_ranks(h: LabelHistogram) -> Dict[int, int]:
    """
    Rank present classes from rarest (0) to most common.

    Ties go to the lower class index first. Absent classes are not ranked.
    """
    present = h.present_classes
    if present.size == 0:
        raise InvalidArgumentError("Histogram has no samples")
    order = sorted(present.tolist(), key=lambda c: (int(h.counts[c]), c))
    return {int(c): rank for rank, c in enumerate(order)}


def demand_supply(
    assignment: Sequence[int],
    histograms: Sequence[LabelHistogram],
    num_clusters: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-cluster class demand and supply.

    d_{p,c} sums m_i − r_{i,c} over the members of p; s_{q,c} averages
    r_{i,c} + 1 over the members of q. Classes a client lacks contribute 0.
    """
    labels = np.asarray(assignment, dtype=np.int64)
    if labels.size != len(histograms):
        raise InvalidArgumentError("One histogram per client is required")
    if labels.size == 0:
        raise InvalidArgumentError("Empty assignment")
    z = int(labels.max()) + 1 if num_clusters is None else num_clusters
    c_total = histograms[0].num_classes
    demand = np.zeros((z, c_total))
    supply = np.zeros((z, c_total))
    sizes = np.bincount(labels, minlength=z)
    for i, h in enumerate(histograms):
        if h.total == 0:
            continue
        ranks = rarity_ranks(h)
        m = len(ranks)
        for c, r in ranks.items():
            demand[labels[i], c] += m - r
            supply[labels[i], c] += r + 1
    nonzero = sizes > 0
    supply[nonzero] /= sizes[nonzero, None]
    return demand, supply


def alignment_scores(
    Vprime: np.ndarray,
    assignment: Sequence[int],
    histograms: Optional[Sequence[LabelHistogram]] = None,
    num_clusters: Optional[int] = None,
) -> np.ndarray:
    """
    Mean class-subspace alignment Γ̄_{p,q,c} = mean over i∈p, j∈q of 1 − V′_{i,j,c}/90.

    With histograms given, a class absent from either cluster entirely scores 0.
    """
    labels = np.asarray(assignment, dtype=np.int64)
    tensor = np.asarray(Vprime, dtype=float)
    if tensor.ndim != 3 or tensor.shape[0] != labels.size or tensor.shape[1] != labels.size:
        raise InvalidArgumentError("Vprime must be N×N×C matching the assignment")
    gamma = 1.0 - np.clip(tensor, 0.0, 90.0) / 90.0
    z = int(labels.max()) + 1 if num_clusters is None else num_clusters
    onehot = np.zeros((labels.size, z))
    onehot[np.arange(labels.size), labels] = 1.0
    sizes = onehot.sum(axis=0)
    sums = np.einsum("ip,ijc,jq->pqc", onehot, gamma, onehot)
    denom = np.outer(sizes, sizes)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(denom[:, :, None] > 0, sums / np.where(denom > 0, denom, 1.0)[:, :, None], 0.0)

    if histograms is not None:
        counts = np.vstack([h.counts for h in histograms])
        present = (onehot.T @ counts) > 0
        mean = mean * (present[:, None, :] & present[None, :, :])
    return mean


@dataclass
class CCGraph:
    """Complementarity scores and the retained top-k source clusters per cluster"""

    Z: int
    scores: np.ndarray
    edges: List[List[int]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def sources_of(self, p: int) -> List[int]:
        """Clusters that p receives from"""
        return list(self.edges[p]) if p < len(self.edges) else []

    def learners_of(self, source: int) -> List[int]:
        """Clusters that receive from source"""
        return [p for p, row in enumerate(self.edges) if source in row]

    @property
    def is_empty(self) -> bool:
        return not any(self.edges)

    def edge_rows(self) -> List[Dict[str, Any]]:
        return [
            {"learner": p, "source": q, "score": float(self.scores[p, q])}
            for p, row in enumerate(self.edges)
            for q in row
        ]


def complementarity_scores(demand: np.ndarray, supply: np.ndarray, gamma_bar: np.ndarray) -> np.ndarray:
    """H_{p,q} = Σ_c d_{p,c}·s_{q,c}·Γ̄_{p,q,c} with a −∞ diagonal"""
    h = np.einsum("pc,qc,pqc->pq", demand, supply, gamma_bar)
    np.fill_diagonal(h, -np.inf)
    return h


def build_cc_graph(demand: np.ndarray, supply: np.ndarray, gamma_bar: np.ndarray, k: int = 2) -> CCGraph:
    """
    Keep each cluster's top-min(k, Z−1) complementary source clusters.

    Ties go to the lower cluster id.
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be ≥ 1, got {k}")
    z = demand.shape[0]
    scores = complementarity_scores(demand, supply, gamma_bar)
    if z < 2:
        message = "Fewer than two clusters; the complementarity graph is empty"
        logger.warning(message)
        return CCGraph(z, scores, [[] for _ in range(z)], [message])

    keep = min(k, z - 1)
    edges: List[List[int]] = []
    for p in range(z):
        candidates = [q for q in range(z) if q != p and np.isfinite(scores[p, q])]
        candidates.sort(key=lambda q: (-scores[p, q], q))
        edges.append(candidates[:keep])
    return CCGraph(z, scores, edges)


def cc_graph_for(
    assignment: Sequence[int],
    histograms: Sequence[LabelHistogram],
    Vprime: np.ndarray,
    k: int = 2,
    num_clusters: Optional[int] = None,
) -> CCGraph:
    """Demand, supply, alignment and top-k selection in one call"""
    demand, supply = demand_supply(assignment, histograms, num_clusters)
    gamma_bar = alignment_scores(Vprime, assignment, histograms, num_clusters)
    graph = build_cc_graph(demand, supply, gamma_bar, k)
    logger.info(f"Complementarity graph: {graph.Z} clusters, {sum(len(e) for e in graph.edges)} edges")
    return graph
