"""Client clustering and the cluster complementarity graph"""

from .ccgraph import CCGraph, alignment_scores, build_cc_graph, cc_graph_for, demand_supply, rarity_ranks
from .hierarchy import (
    Clustering,
    SweepCandidate,
    SweepResult,
    clustering_loss,
    default_alpha_grid,
    hierarchical_cluster,
    optimal_clustering,
    run_sweep,
    select_clustering,
    sweep_alpha,
)

__all__ = [
    "CCGraph",
    "Clustering",
    "SweepCandidate",
    "SweepResult",
    "alignment_scores",
    "build_cc_graph",
    "cc_graph_for",
    "clustering_loss",
    "default_alpha_grid",
    "demand_supply",
    "hierarchical_cluster",
    "optimal_clustering",
    "rarity_ranks",
    "run_sweep",
    "select_clustering",
    "sweep_alpha",
]
