"""
Client lifecycle: newcomer integration, distribution-shift detection and
re-evaluation, and periodic reclustering.

All operations run between rounds and mutate the RunState they are given.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..clustering.ccgraph import cc_graph_for
from ..clustering.hierarchy import hierarchical_cluster, run_sweep
from ..data.datamodel import ClientDataset, LabelHistogram, ModelParams, class_histogram, wasserstein_1d
from ..errors import InvalidArgumentError
from ..model.dual_encoder import PRIMARY_BLOCKS, DualEncoderModel
from ..similarity.proximity import (
    FusionWeightLearner,
    ProximityMatrix,
    data_similarity_row,
    gradient_similarity_row,
)
from ..similarity.signatures import ClientSignature
from .state import (
    RunState,
    combined_secondary,
    diversity_weight,
    init_cluster_models,
    local_train,
    sharing_enabled,
    warm_signature,
)

logger = logging.getLogger("Lifecycle")

EVENT_KINDS = ("newcomer", "shift_detected", "reassigned", "recluster")


@dataclass
class LifecycleEvent:
    """One lifecycle occurrence, appended to the run's event log"""

    kind: str
    round: int
    client_id: int
    old_cluster: Optional[int] = None
    new_cluster: Optional[int] = None
    note: str = ""

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise InvalidArgumentError(f"Unknown event kind: {self.kind}")
        if self.kind == "reassigned" and (self.old_cluster is None or self.new_cluster is None):
            raise InvalidArgumentError("Reassignment events carry both cluster ids")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _require_clustered(state: RunState) -> Tuple[ProximityMatrix, float]:
    if state.proximity is None or state.alpha_star is None:
        raise InvalidArgumentError("Lifecycle operations need a proximity matrix and a selected threshold")
    return state.proximity, state.alpha_star


def _similarity_rows(
    state: RunState, signature: ClientSignature, others: List[ClientSignature]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    proximity, _ = _require_clustered(state)
    sim = state.cfg.similarity
    g_row = gradient_similarity_row(signature, others)
    v_row, vprime_rows = data_similarity_row(
        signature, others, state.fed.num_classes, sim.delta, sim.eps, proximity.weight_bounds
    )
    return g_row, v_row, vprime_rows


def _relearn_weight(state: RunState, proximity: ProximityMatrix, client_id: int) -> ProximityMatrix:
    """Learn only w_client, starting from the initial weight, with every other weight frozen"""
    sim = state.cfg.similarity
    w0 = proximity.w.copy()
    if sim.view == "data":
        w0[client_id] = 0.0
        return proximity.refused(w0)
    if sim.view == "gradient":
        w0[client_id] = 1.0
        return proximity.refused(w0)
    w0[client_id] = sim.fusion_init
    learner = FusionWeightLearner(lr=sim.fusion_lr, iters=sim.fusion_iters, init_w=sim.fusion_init)
    w = learner.fit(proximity.Vhat, proximity.Ghat, priority=proximity.priority, w0=w0, trainable=[client_id])
    return proximity.refused(w)


def _place_client(state: RunState, A: np.ndarray, client_id: int) -> Tuple[int, str]:
    """
    Existing cluster for a client after one threshold pass.

    The cluster holding most of its co-members wins; a singleton goes to the
    cluster with the smallest mean dissimilarity. Ties go to the lowest id.
    """
    _, alpha_star = _require_clustered(state)
    labels = hierarchical_cluster(A, alpha_star, state.cfg.clustering.linkage).assignment
    others = [j for j in range(A.shape[0]) if j != client_id]
    co_members = [j for j in others if labels[j] == labels[client_id]]
    current = state.clustering.assignment

    if co_members:
        scores = np.bincount([int(current[j]) for j in co_members], minlength=state.clustering.Z).astype(float)
        best = np.flatnonzero(scores == scores.max())
    else:
        means = np.full(state.clustering.Z, np.inf)
        for z in range(state.clustering.Z):
            members = [j for j in others if current[j] == z]
            if members:
                means[z] = float(np.mean(A[client_id, members]))
        best = np.flatnonzero(means == means.min())
    note = f"newcomer_tie between clusters {best.tolist()}" if best.size > 1 else ""
    return int(best[0]), note


def newcomer_start(state: RunState, cluster: int) -> ModelParams:
    """
    Starting model for a client that joins a cluster.

    enc1 and the head come from the cluster model. enc2 combines the enc2
    blocks of the clusters that learn from this one, the encoder the
    secondary phase trains on its data. The cluster's own enc2 is kept
    without sharing or when no cluster learns from it.
    """
    base = state.states[cluster].model
    if not sharing_enabled(state.cfg, state.ccgraph):
        return base.copy()
    learners = [state.states[p].model for p in state.ccgraph.learners_of(cluster) if state.states[p].members]
    if not learners:
        return base.copy()
    return base.replace(enc2=combined_secondary(learners, state.cfg.training.combine))


def personalize(state: RunState, client_id: int, start: ModelParams) -> ModelParams:
    """One local round on enc1 and the head; cluster models are not touched"""
    d = state.fed.clients[client_id]
    result = local_train(
        DualEncoderModel(state.arch),
        start,
        d.features,
        d.labels,
        state.cfg,
        ("personalize", client_id),
        PRIMARY_BLOCKS,
        diversity_weight(state.cfg, state.arch),
        client_id,
    )
    logger.debug(f"Client {client_id} personalized (loss {result.loss:.4f})")
    return result.params


def integrate_newcomer(
    state: RunState,
    dataset: ClientDataset,
    test: Optional[ClientDataset] = None,
) -> Tuple[int, RunState]:
    """
    Add a client without re-evaluating α* or any existing weight.

    The newcomer warms up alone, uploads its signature and governs all of its
    pairs, so only w_new is learned and every existing entry of A is kept.
    After placement it starts from newcomer_start and runs one
    personalization round; the result serves it until it is next sampled.

    Returns:
        (assigned cluster id, state)
    """
    proximity, _ = _require_clustered(state)
    cfg = state.cfg
    new_id = state.N
    d = dataset.with_id(new_id)
    warm, signature = warm_signature(d, state.arch, cfg)
    g_row, v_row, vprime_rows = _similarity_rows(state, signature, state.signatures)

    extended = proximity.appended(g_row, v_row, vprime_rows, cfg.similarity.fusion_init)
    extended = _relearn_weight(state, extended, new_id)

    # Placement compares against the current assignment, so register the client last
    state.fed.clients.append(d)
    if state.fed.test_clients is not None:
        state.fed.test_clients.append(test.with_id(new_id) if test is not None else None)
    state.signatures.append(signature)
    state.warm_extractors.append(warm.warm_extractor.copy())
    state.proximity = extended
    cluster, note = _place_client(state, extended.A, new_id)
    state.clustering = state.clustering.with_client(cluster)
    state.snapshots[new_id] = class_histogram(d)
    state.newcomers_since_recluster += 1
    state.sync_members()
    state.personal_models[new_id] = personalize(state, new_id, newcomer_start(state, cluster))

    if note:
        logger.warning(f"Newcomer {new_id}: {note}")
    event = LifecycleEvent("newcomer", state.round, new_id, None, cluster, note)
    state.events.append(event)
    logger.info(f"Newcomer {new_id} joined cluster {cluster} (w={extended.w[new_id]:.3f})")
    return cluster, state


def detect_shift(
    client_id: int,
    hist_now: LabelHistogram,
    hist_prev: LabelHistogram,
    n_new: int,
    num_classes: int,
    shift_fraction: float = 0.2,
) -> bool:
    """True iff W1(now, prev) > (shift_fraction / C)·n_new"""
    distance = wasserstein_1d(hist_now, hist_prev)
    flagged = distance > (shift_fraction / num_classes) * n_new
    if flagged:
        logger.info(f"Client {client_id}: label distribution moved by {distance:g}")
    return flagged


def handle_shift(state: RunState, client_id: int) -> RunState:
    """
    Re-evaluate a shifted client in place.

    The client warms up again on its current data, its rows of Ĝ, V̂ and A
    are refreshed, w_client is relearned from the initial weight and one
    threshold pass decides whether it moves cluster.
    """
    proximity, _ = _require_clustered(state)
    d = state.fed.clients[client_id]
    warm, signature = warm_signature(d, state.arch, state.cfg)
    others = [s for j, s in enumerate(state.signatures) if j != client_id]
    g_others, v_others, vprime_others = _similarity_rows(state, signature, others)
    g_row = np.insert(g_others, client_id, 0.0)
    v_row = np.insert(v_others, client_id, 0.0)
    vprime_rows = np.insert(vprime_others, client_id, np.zeros(vprime_others.shape[1]), axis=0)

    refreshed = _relearn_weight(state, proximity.refreshed(client_id, g_row, v_row, vprime_rows), client_id)
    state.signatures[client_id] = signature
    state.warm_extractors[client_id] = warm.warm_extractor.copy()
    state.proximity = refreshed

    old = state.cluster_of(client_id)
    new, note = _place_client(state, refreshed.A, client_id)
    if new != old:
        state.clustering = state.clustering.with_reassignment(client_id, new)
        state.personal_models.pop(client_id, None)
        state.sync_members()
        state.events.append(LifecycleEvent("reassigned", state.round, client_id, old, new, note))
        logger.info(f"Client {client_id} reassigned from cluster {old} to {new}")
    return state


def recluster_threshold(state: RunState) -> int:
    return max(1, math.ceil(state.cfg.lifecycle.recluster_growth * state.initial_n))


def maybe_recluster(state: RunState, force: bool = False) -> RunState:
    """
    Re-run the threshold sweep once enough newcomers have joined.

    On a changed partition the complementarity graph is rebuilt and every
    cluster model is drawn fresh from its seeded stream, with enc1 set to
    the data-weighted mean of its members' current enc1 blocks.
    """
    if not force and state.newcomers_since_recluster < recluster_threshold(state):
        return state
    proximity, _ = _require_clustered(state)
    clus = state.cfg.clustering
    sweep = run_sweep(
        proximity.A,
        clus.alpha_grid,
        clus.gamma,
        clus.tau,
        clus.lam,
        clus.linkage,
        clus.rel_tol,
        clus.min_plateau,
        state.cfg.workers,
    )
    state.newcomers_since_recluster = 0
    candidate = sweep.selected.clustering
    if candidate.same_partition(state.clustering):
        logger.info("Reclustering kept the current partition")
        return state

    current_enc1 = [state.model_for(i).enc1 for i in range(state.N)]
    states = init_cluster_models(
        candidate, current_enc1, state.arch, state.cfg.seed, [d.n_samples for d in state.fed.clients], "warm"
    )

    old_z = state.clustering.Z
    state.clustering = candidate
    state.alpha_star = sweep.alpha_star
    state.sweep = sweep
    state.states = states
    state.personal_models.clear()
    state.ccgraph = cc_graph_for(
        candidate.assignment,
        state.fed.histograms(),
        proximity.Vprime,
        state.cfg.ccgraph.k,
        candidate.Z,
    )
    state.events.append(
        LifecycleEvent("recluster", state.round, -1, old_z, candidate.Z, f"alpha*={sweep.alpha_star:g}")
    )
    logger.info(f"Reclustered into {candidate.Z} clusters (was {old_z})")
    return state


def check_for_shifts(state: RunState) -> List[int]:
    """Compare every client's histogram with its last snapshot; handle flagged clients"""
    life = state.cfg.lifecycle
    flagged: List[int] = []
    for i, d in enumerate(state.fed.clients):
        now = class_histogram(d)
        prev = state.snapshots.get(i, now)
        if detect_shift(i, now, prev, d.n_samples, state.fed.num_classes, life.shift_fraction):
            flagged.append(i)
            state.events.append(LifecycleEvent("shift_detected", state.round, i, state.cluster_of(i), None))
            handle_shift(state, i)
        state.snapshots[i] = now
    return flagged


def run_lifecycle(state: RunState) -> RunState:
    """Between-round driver: integrate queued newcomers, then check for shifts"""
    while state.pending:
        pending = state.pending.pop(0)
        integrate_newcomer(state, pending.dataset, pending.test)
        maybe_recluster(state)
    check_for_shifts(state)
    return state
