"""
Agglomerative clustering of clients over the fused proximity matrix, the
federated-aware clustering loss and the threshold sweep that picks α*.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from ..errors import InvalidArgumentError

logger = logging.getLogger("ClusteringSweep")

LINKAGES = ("single", "average", "complete")


@dataclass
class Clustering:
    """A partition of clients into Z clusters with ids 0..Z−1"""

    assignment: np.ndarray
    Z: int
    alpha: float
    L1: Optional[float] = None
    L2: Optional[float] = None
    L: Optional[float] = None

    def __post_init__(self) -> None:
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        # A cluster may be emptied by a later reassignment, so ids need only lie in range
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() >= self.Z):
            raise InvalidArgumentError(f"Cluster ids must lie in 0..{self.Z - 1}")

    @property
    def N(self) -> int:
        return int(self.assignment.size)

    def members(self, z: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == z)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.Z)

    def with_client(self, cluster: int) -> "Clustering":
        """Append one client to an existing cluster"""
        if not 0 <= cluster < self.Z:
            raise InvalidArgumentError(f"Unknown cluster {cluster}")
        return replace(self, assignment=np.append(self.assignment, cluster))

    def with_reassignment(self, client: int, cluster: int) -> "Clustering":
        """Move one client to another existing cluster"""
        if not 0 <= cluster < self.Z:
            raise InvalidArgumentError(f"Unknown cluster {cluster}")
        assignment = self.assignment.copy()
        assignment[client] = cluster
        return replace(self, assignment=assignment)

    def same_partition(self, other: "Clustering") -> bool:
        """Equal up to relabeling"""
        return self.N == other.N and bool(
            np.array_equal(canonical_labels(self.assignment)[0], canonical_labels(other.assignment)[0])
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "Z": self.Z,
            "alpha": self.alpha,
            "assignment": [int(z) for z in self.assignment],
            "L1": self.L1,
            "L2": self.L2,
            "L": self.L,
        }


def canonical_labels(labels: Sequence[int]) -> Tuple[np.ndarray, int]:
    """Relabel clusters 0..Z−1 in order of their lowest member id"""
    raw = np.asarray(labels)
    mapping: Dict[Any, int] = {}
    out = np.empty(raw.size, dtype=np.int64)
    for i, label in enumerate(raw.tolist()):
        if label not in mapping:
            mapping[label] = len(mapping)
        out[i] = mapping[label]
    return out, len(mapping)


def _validate_matrix(a: np.ndarray) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise InvalidArgumentError("Proximity matrix must be a non-empty square matrix")
    return m


def hierarchical_cluster(A: np.ndarray, alpha: float, method: str = "average") -> Clustering:
    """
    Merge clusters while their linkage distance is below alpha.

    Args:
        A: Symmetric dissimilarity matrix with a zero diagonal
        alpha: Threshold in (0, 1]
        method: single, average or complete linkage

    Returns:
        Clustering with losses unset
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must be in (0, 1], got {alpha}")
    if method not in LINKAGES:
        raise InvalidArgumentError(f"Unknown linkage: {method}")
    m = _validate_matrix(A)
    n = m.shape[0]
    if n == 1:
        return Clustering(np.zeros(1, dtype=np.int64), 1, alpha)

    tree = linkage(squareform(m, checks=False), method=method)
    # fcluster keeps merges at height ≤ t; merges at exactly alpha must not happen
    labels = fcluster(tree, t=np.nextafter(alpha, -np.inf), criterion="distance")
    assignment, z = canonical_labels(labels)
    return Clustering(assignment, z, alpha)


def clustering_loss(
    A: np.ndarray,
    assignment: Sequence[int],
    gamma: float = 0.5,
    tau: float = 0.1,
    lam: float = 0.5,
) -> Tuple[float, float, float]:
    """
    Tightness and size-balance loss of a partition.

    L1 sums each cluster's mean pairwise dissimilarity (diagonal and both
    orders included). L2 averages exp(max(0, N/Z − γσ − |C_z|)/τ) over clusters
    with σ the population std of cluster sizes.

    Returns:
        (L1, L2, L1 + lam·L2)
    """
    if tau <= 0:
        raise InvalidArgumentError(f"tau must be > 0, got {tau}")
    m = _validate_matrix(A)
    labels = np.asarray(assignment, dtype=np.int64)
    if labels.size != m.shape[0]:
        raise InvalidArgumentError("Assignment length must match the matrix size")
    clusters = np.unique(labels)
    n, z = labels.size, clusters.size

    l1 = 0.0
    sizes = np.empty(z)
    for k, c in enumerate(clusters):
        members = np.flatnonzero(labels == c)
        sizes[k] = members.size
        l1 += float(m[np.ix_(members, members)].sum()) / members.size**2

    sigma = float(np.std(sizes)) if z > 1 else 0.0
    excess = np.maximum(0.0, n / z - gamma * sigma - sizes)
    with np.errstate(over="ignore"):
        l2 = float(np.mean(np.exp(excess / tau)))
    return l1, l2, l1 + lam * l2


def default_alpha_grid(start: float = 1.0, stop: float = 0.05, step: float = 0.05) -> List[float]:
    """Descending thresholds from start to stop inclusive"""
    if step <= 0 or stop <= 0 or start > 1.0 or stop > start:
        raise InvalidArgumentError("Grid needs 0 < stop ≤ start ≤ 1 and step > 0")
    count = int(np.floor((start - stop) / step + 1e-9)) + 1
    return [round(start - k * step, 10) for k in range(count)]


@dataclass
class SweepCandidate:
    """One grid point of the threshold sweep"""

    alpha: float
    clustering: Clustering
    plateau: int = 1

    @property
    def Z(self) -> int:
        return self.clustering.Z

    def to_row(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "Z": self.Z,
            "L1": self.clustering.L1,
            "L2": self.clustering.L2,
            "L": self.clustering.L,
            "plateau": self.plateau,
        }


@dataclass
class SweepResult:
    """All evaluated candidates and the selected one"""

    candidates: List[SweepCandidate]
    selected: SweepCandidate
    notes: List[str] = field(default_factory=list)

    @property
    def alpha_star(self) -> float:
        return self.selected.alpha

    def rows(self) -> List[Dict[str, Any]]:
        return [c.to_row() for c in self.candidates]


def sweep_alpha(
    A: np.ndarray,
    alpha_grid: Sequence[float],
    gamma: float = 0.5,
    tau: float = 0.1,
    lam: float = 0.5,
    method: str = "average",
    workers: int = 1,
) -> List[SweepCandidate]:
    """Cluster and score A at every threshold, annotating plateau widths"""
    if len(alpha_grid) == 0:
        raise InvalidArgumentError("alpha_grid must not be empty")
    grid = [float(a) for a in alpha_grid]
    if any(b > a for a, b in zip(grid, grid[1:])):
        raise InvalidArgumentError("alpha_grid must be sorted in descending order")

    def evaluate(alpha: float) -> SweepCandidate:
        c = hierarchical_cluster(A, alpha, method)
        l1, l2, loss = clustering_loss(A, c.assignment, gamma, tau, lam)
        return SweepCandidate(alpha, replace(c, L1=l1, L2=l2, L=loss))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            candidates = list(pool.map(evaluate, grid))
    else:
        candidates = [evaluate(a) for a in grid]

    start = 0
    for k in range(1, len(candidates) + 1):
        if k == len(candidates) or not np.array_equal(
            candidates[k].clustering.assignment, candidates[start].clustering.assignment
        ):
            for c in candidates[start:k]:
                c.plateau = k - start
            start = k
    return candidates


def select_clustering(
    candidates: Sequence[SweepCandidate],
    rel_tol: float = 0.02,
    min_plateau: int = 2,
) -> Tuple[SweepCandidate, List[str]]:
    """
    Pick α* from evaluated candidates.

    The all-singletons partition is dropped when anything else exists, short
    plateaus are dropped when a wide one exists, and within rel_tol of the
    minimum loss smaller Z wins, then larger α.
    """
    if not candidates:
        raise InvalidArgumentError("No candidates to select from")
    notes: List[str] = []
    pool = list(candidates)
    if len(pool) == 1:
        return pool[0], notes

    non_trivial = [c for c in pool if c.Z < c.clustering.N or c.clustering.N == 1]
    if non_trivial and len(non_trivial) < len(pool):
        notes.append("dropped all-singletons partition")
        pool = non_trivial
    wide = [c for c in pool if c.plateau >= min_plateau]
    if wide and len(wide) < len(pool):
        notes.append(f"kept {len(wide)} candidates on plateaus of width ≥ {min_plateau}")
        pool = wide

    best = min(float(c.clustering.L) for c in pool)  # type: ignore[arg-type]
    near = [c for c in pool if float(c.clustering.L) <= best * (1.0 + rel_tol) + 1e-12]  # type: ignore[arg-type]
    near.sort(key=lambda c: (c.Z, -c.alpha))
    return near[0], notes


def optimal_clustering(
    A: np.ndarray,
    alpha_grid: Optional[Sequence[float]] = None,
    gamma: float = 0.5,
    tau: float = 0.1,
    lam: float = 0.5,
    method: str = "average",
    rel_tol: float = 0.02,
    min_plateau: int = 2,
    workers: int = 1,
) -> Tuple[float, Clustering]:
    """Sweep α over the grid and return (α*, clustering at α* with losses)"""
    result = run_sweep(A, alpha_grid, gamma, tau, lam, method, rel_tol, min_plateau, workers)
    return result.alpha_star, result.selected.clustering


def run_sweep(
    A: np.ndarray,
    alpha_grid: Optional[Sequence[float]] = None,
    gamma: float = 0.5,
    tau: float = 0.1,
    lam: float = 0.5,
    method: str = "average",
    rel_tol: float = 0.02,
    min_plateau: int = 2,
    workers: int = 1,
) -> SweepResult:
    grid = default_alpha_grid() if alpha_grid is None else alpha_grid
    candidates = sweep_alpha(A, grid, gamma, tau, lam, method, workers)
    selected, notes = select_clustering(candidates, rel_tol, min_plateau)
    logger.info(
        f"Selected α*={selected.alpha:.2f} with Z={selected.Z} "
        f"(L={selected.clustering.L:.4f}, plateau {selected.plateau})"
    )
    for note in notes:
        logger.debug(note)
    return SweepResult(candidates, selected, notes)
