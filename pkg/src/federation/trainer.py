"""
Clustered federated training with dual encoders.

A run warms every client up alone, clusters clients on the fused proximity
matrix, links clusters through the complementarity graph and then trains one
dual-encoder model per cluster. Each round the primary phase trains enc1 and
the head inside every cluster, and the secondary phase trains a combined
enc2 on source-cluster data for the clusters that learn from it.

Both phases start from the models as they were at the start of the round
and write disjoint blocks, so their order does not matter.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..clustering.ccgraph import CCGraph, cc_graph_for
from ..clustering.hierarchy import Clustering, SweepResult, run_sweep
from ..config.schema import RunConfig
from ..data.datamodel import ModelParams, class_histogram
from ..data.partitioner import Federation
from ..errors import InvalidArgumentError
from ..model.dual_encoder import PRIMARY_BLOCKS, SECONDARY_BLOCKS, ArchSpec, DualEncoderModel
from ..similarity.signatures import ClientSignature
from ..utils.helpers import derive_rng
from .accounting import full_model_bytes, primary_round_bytes, secondary_round_bytes
from .evaluation import EvaluationResult, evaluate
from .lifecycle import run_lifecycle
from .state import (
    ClusterState,
    LocalResult,
    RoundMetrics,
    RunState,
    arch_for,
    combined_secondary,
    diversity_weight,
    init_cluster_models,
    local_train,
    proximity_from,
    run_parallel,
    sharing_enabled,
    warm_signature,
    weighted_mean,
)

logger = logging.getLogger("FederatedTrainer")

RoundHook = Callable[[RunState, RoundMetrics], None]


def sample_count(rate: float, n: int) -> int:
    """m = max(⌊R·N⌋, 1)"""
    return max(int(np.floor(rate * n + 1e-9)), 1)


def _largest_remainder(total: int, sizes: np.ndarray, caps: np.ndarray) -> np.ndarray:
    quotas = np.zeros(sizes.size, dtype=np.int64)
    if total <= 0 or sizes.sum() == 0:
        return quotas
    exact = total * sizes / sizes.sum()
    quotas = np.minimum(np.floor(exact).astype(np.int64), caps)
    remainder = exact - np.floor(exact)
    order = sorted(range(sizes.size), key=lambda z: (-remainder[z], z))
    while quotas.sum() < total:
        progressed = False
        for z in order:
            if quotas.sum() >= total:
                break
            if quotas[z] < caps[z]:
                quotas[z] += 1
                progressed = True
        if not progressed:
            break
    return quotas


def sample_clients(
    states: Sequence[ClusterState],
    n_clients: int,
    rate: float,
    mode: str,
    seed: int,
    round_idx: int,
) -> List[int]:
    """
    Clients taking part in a round, in ascending order.

    Stratified sampling splits m across non-empty clusters by largest
    remainder, giving every cluster at least one slot when m ≥ Z.
    """
    rng = derive_rng(seed, "sampling", round_idx)
    m = sample_count(rate, n_clients)
    if mode == "global":
        return sorted(int(i) for i in rng.choice(n_clients, size=min(m, n_clients), replace=False))

    active = [s for s in states if s.members]
    sizes = np.array([len(s.members) for s in active], dtype=float)
    caps = sizes.astype(np.int64)
    if m >= len(active):
        base = np.ones(len(active), dtype=np.int64)
        quotas = base + _largest_remainder(m - len(active), sizes, caps - base)
    else:
        quotas = _largest_remainder(m, sizes, caps)
    chosen: List[int] = []
    for state, q in zip(active, quotas):
        if q > 0:
            chosen.extend(int(i) for i in rng.choice(state.members, size=int(q), replace=False))
    return sorted(chosen)


def secondary_active(cfg: RunConfig, ccgraph: CCGraph, round_idx: int) -> bool:
    """Whether the secondary phase runs in this round"""
    if not sharing_enabled(cfg, ccgraph):
        return False
    k = cfg.training.schedule_k
    return k == 0 or (round_idx + 1) % (k + 1) == 0


def aggregate(base: ModelParams, results: Sequence[LocalResult], sizes: Sequence[int], names: Sequence[str]) -> ModelParams:
    """
    Θ ← Θ + Σ w_i·(θ_i − Θ) on the named blocks.

    Weights are data-proportional and renormalized over the given clients;
    terms are summed in the order given.
    """
    total = float(sum(sizes))
    weights = [s / total for s in sizes]
    updates = {}
    for name in names:
        current = base.block(name)
        delta = np.zeros_like(current)
        for result, w in zip(results, weights):
            delta = delta + w * (result.params.block(name) - current)
        updates[name] = current + delta
    return base.replace(**updates)


def primary_phase_round(
    state: ClusterState,
    sampled: Sequence[int],
    fed: Federation,
    cfg: RunConfig,
    arch: ArchSpec,
    round_idx: int,
) -> Tuple[ClusterState, float]:
    """
    Train enc1 and the head of one cluster on its sampled members.

    Returns:
        (updated state, mean local loss); enc2 is carried over unchanged
    """
    clients = [i for i in sampled if i in set(state.members)]
    if not clients:
        logger.warning(f"Cluster {state.cluster_id} has no sampled clients this round")
        return state, float("nan")
    model = DualEncoderModel(arch)
    lambda_div = diversity_weight(cfg, arch)

    def job(i: int) -> LocalResult:
        d = fed.clients[i]
        return local_train(model, state.model, d.features, d.labels, cfg, ("local", round_idx, i, "primary"),
                           PRIMARY_BLOCKS, lambda_div, i)

    results = run_parallel(job, clients, cfg.workers)
    ordered = [results[i] for i in clients]
    sizes = [fed.clients[i].n_samples for i in clients]
    new_model = aggregate(state.model, ordered, sizes, ("enc1", "head"))
    return ClusterState(state.cluster_id, state.members, new_model, state.data_weights), float(
        np.mean([r.loss for r in ordered])
    )


def secondary_phase_round(
    source: ClusterState,
    learners: Sequence[ClusterState],
    fed: Federation,
    cfg: RunConfig,
    arch: ArchSpec,
    sampled: Sequence[int],
    round_idx: int,
) -> Optional[np.ndarray]:
    """
    Train the combined learner enc2 on the source cluster's sampled clients.

    The source's enc1 and head are frozen. Returns the aggregated enc2
    update to add to every learner, or None when nothing was trained.
    """
    learners = [s for s in learners if s.members]
    clients = [i for i in sampled if i in set(source.members)]
    if not learners or not clients:
        return None
    model = DualEncoderModel(arch)
    combined = combined_secondary([s.model for s in learners], cfg.training.combine)
    start = source.model.replace(enc2=combined)

    def job(i: int) -> LocalResult:
        d = fed.clients[i]
        return local_train(model, start, d.features, d.labels, cfg,
                           ("local", round_idx, i, "secondary", source.cluster_id), SECONDARY_BLOCKS, None, i)

    results = run_parallel(job, clients, cfg.workers)
    ordered = [results[i] for i in clients]
    sizes = np.array([fed.clients[i].n_samples for i in clients], dtype=float)
    deltas = [r.params.enc2 - combined for r in ordered]
    return weighted_mean(deltas, sizes / sizes.sum())


class FederatedTrainer:
    """Runs warm-up, clustering and the federated rounds for one configuration"""

    def __init__(self, cfg: RunConfig, fed: Federation, on_round: Optional[RoundHook] = None):
        self.cfg = cfg
        self.fed = fed
        self.arch = arch_for(fed, cfg)
        self.on_round = on_round
        self.logger = logging.getLogger("FederatedTrainer")

    # ------------------------------------------------------------------
    # Setup
    # ------------------------------------------------------------------

    def run_warmup_phase(self) -> Tuple[List[ClientSignature], List[np.ndarray], Dict[int, Tuple[int, int]]]:
        """
        Warm up every client and collect signatures.

        Returns:
            (signatures, warm enc1 per client, (up, down) bytes per client)
        """
        def job(i: int):
            return warm_signature(self.fed.clients[i], self.arch, self.cfg)

        results = run_parallel(job, range(self.fed.N), self.cfg.workers)
        signatures = [results[i][1] for i in range(self.fed.N)]
        extractors = [results[i][0].warm_extractor.copy() for i in range(self.fed.N)]
        down = full_model_bytes(self.arch.single())
        traffic = {i: (signatures[i].nbytes(), down) for i in range(self.fed.N)}
        self.logger.info(
            f"Warm-up done for {self.fed.N} clients; mean signature {np.mean([t[0] for t in traffic.values()]):.0f} bytes"
        )
        return signatures, extractors, traffic

    def cluster(self, proximity_a: np.ndarray) -> Tuple[Clustering, Optional[float], Optional[SweepResult]]:
        clus = self.cfg.clustering
        if clus.fixed_assignment is not None:
            if len(clus.fixed_assignment) != self.fed.N:
                raise InvalidArgumentError(f"fixed_assignment needs {self.fed.N} entries")
            return Clustering(np.asarray(clus.fixed_assignment), max(clus.fixed_assignment) + 1, 1.0), None, None
        sweep = run_sweep(
            proximity_a,
            clus.alpha_grid,
            clus.gamma,
            clus.tau,
            clus.lam,
            clus.linkage,
            clus.rel_tol,
            clus.min_plateau,
            self.cfg.workers,
        )
        return sweep.selected.clustering, sweep.alpha_star, sweep

    def prepare(self) -> RunState:
        """Warm-up, proximity, clustering, complementarity graph and cluster models"""
        if self.fed.N < 2:
            raise InvalidArgumentError("At least two clients are required")
        signatures, extractors, traffic = self.run_warmup_phase()
        proximity = proximity_from(signatures, self.fed.num_classes, self.cfg)
        clustering, alpha_star, sweep = self.cluster(proximity.A)
        ccgraph = cc_graph_for(
            clustering.assignment,
            [class_histogram(d) for d in self.fed.clients],
            proximity.Vprime,
            self.cfg.ccgraph.k,
            clustering.Z,
        )
        sizes = [d.n_samples for d in self.fed.clients]
        states = init_cluster_models(
            clustering, extractors, self.arch, self.cfg.seed, sizes, self.cfg.training.init_mode
        )
        state = RunState(
            cfg=self.cfg,
            arch=self.arch,
            fed=self.fed,
            signatures=signatures,
            warm_extractors=extractors,
            proximity=proximity,
            clustering=clustering,
            alpha_star=alpha_star,
            ccgraph=ccgraph,
            states=states,
            sweep=sweep,
        )
        for i, (up, down) in traffic.items():
            state.ledger.record(-1, i, up, down)
        self.logger.info(f"Clustered {self.fed.N} clients into {clustering.Z} clusters")
        return state

    # ------------------------------------------------------------------
    # Rounds
    # ------------------------------------------------------------------

    def run_round(self, state: RunState, round_idx: int) -> RoundMetrics:
        """One round: sample, primary phases, secondary phases, evaluation"""
        cfg = self.cfg
        arch = state.arch
        sampled = sample_clients(
            state.states, state.N, cfg.training.sampling_rate, cfg.training.sampling, cfg.seed, round_idx
        )
        # Sampled clients are served by their cluster model from here on
        for i in sampled:
            state.personal_models.pop(i, None)
        snapshot = list(state.states)
        with_secondary = secondary_active(cfg, state.ccgraph, round_idx)
        phases: Tuple[str, ...] = ("primary", "secondary") if with_secondary else ("primary",)

        updated: Dict[int, ClusterState] = {}
        losses: Dict[int, float] = {}
        for cs in snapshot:
            if not cs.members:
                continue
            updated[cs.cluster_id], losses[cs.cluster_id] = primary_phase_round(
                cs, sampled, state.fed, cfg, arch, round_idx
            )

        enc2_updates: Dict[int, np.ndarray] = {}
        source_clients: set = set()
        if with_secondary:
            for source in snapshot:
                learner_ids = state.ccgraph.learners_of(source.cluster_id)
                delta = secondary_phase_round(
                    source, [snapshot[p] for p in learner_ids], state.fed, cfg, arch, sampled, round_idx
                )
                if delta is None:
                    continue
                source_clients.update(i for i in sampled if i in set(source.members))
                for p in learner_ids:
                    enc2_updates[p] = enc2_updates.get(p, 0.0) + delta

        new_states = []
        for cs in snapshot:
            model = updated[cs.cluster_id].model if cs.cluster_id in updated else cs.model
            if cs.cluster_id in enc2_updates:
                model = model.replace(enc2=model.enc2 + enc2_updates[cs.cluster_id])
            new_states.append(ClusterState(cs.cluster_id, cs.members, model, cs.data_weights))
        state.states = new_states

        metrics = RoundMetrics(round=round_idx, phases=phases, sampled=sampled, cluster_loss=losses)
        p_up, p_down = primary_round_bytes(arch)
        s_up, s_down = secondary_round_bytes(arch)
        for i in sampled:
            up, down = p_up, p_down
            if i in source_clients:
                up, down = up + s_up, down + s_down
            state.ledger.record(round_idx, i, up, down)
            metrics.bytes_up[i], metrics.bytes_down[i] = up, down

        last = round_idx == cfg.training.rounds - 1
        if last or (round_idx + 1) % cfg.training.eval_every == 0:
            metrics.accuracy = self.evaluate(state).per_client
        return metrics

    def evaluate(self, state: RunState) -> EvaluationResult:
        test_sets = state.fed.test_clients
        if test_sets is None:
            self.logger.warning("No test split; evaluating on training data")
            test_sets = state.fed.clients
        return evaluate(state.arch, state.models(), state.clustering.assignment, test_sets, state.personal_models)

    def run_rounds(self, state: RunState, rounds: Optional[int] = None) -> RunState:
        """Train for the configured number of rounds, running lifecycle checks between them"""
        total = self.cfg.training.rounds if rounds is None else rounds
        life = self.cfg.lifecycle
        for t in range(total):
            state.round = t
            metrics = self.run_round(state, t)
            state.history.append(metrics)
            if metrics.accuracy:
                self.logger.info(f"Round {t}: mean balanced accuracy {metrics.mean_accuracy:.4f}")
            if self.on_round is not None:
                self.on_round(state, metrics)
            if life.enabled and (t + 1) % life.check_period == 0:
                run_lifecycle(state)
        return state

    def train(self) -> RunState:
        """Full run: prepare then train"""
        return self.run_rounds(self.prepare())


def train(fed: Federation, cfg: RunConfig, on_round: Optional[RoundHook] = None) -> RunState:
    """Run the full clustered training pipeline"""
    return FederatedTrainer(cfg, fed, on_round).train()
