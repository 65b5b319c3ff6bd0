"""
Run state shared by the round engine and the lifecycle operations.

Holds the federation, every client signature, the proximity matrix, the
clustering, the complementarity graph, the cluster models and the history.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from ..clustering.ccgraph import CCGraph
from ..clustering.hierarchy import Clustering, SweepResult
from ..config.schema import RunConfig
from ..data.datamodel import ClientDataset, LabelHistogram, ModelParams, class_histogram
from ..data.partitioner import Federation
from ..errors import DivergedError, InvalidArgumentError
from ..model.dual_encoder import ArchSpec, DualEncoderModel, LocalOptimizer, TrainBlocks, init_params
from ..similarity.proximity import ProximityMatrix, build_proximity
from ..similarity.signatures import ClientSignature, build_signature
from ..similarity.warmup import WarmupResult, batch_indices, local_warmup
from ..utils.helpers import derive_rng, derive_seed
from .accounting import CommunicationLedger

logger = logging.getLogger("RunState")

T = TypeVar("T")


def arch_for(fed: Federation, cfg: RunConfig, dual: Optional[bool] = None) -> ArchSpec:
    """ArchSpec for a federation; the single-encoder variant drops enc2"""
    return ArchSpec(
        input_dim=fed.n_features,
        num_classes=fed.num_classes,
        hidden=tuple(cfg.arch.hidden),
        feature_dim=cfg.arch.feature_dim,
        activation=cfg.arch.activation,
        dual=(cfg.training.variant != "single") if dual is None else dual,
    )


def run_parallel(fn: Callable[[int], T], keys: Iterable[int], workers: int) -> Dict[int, T]:
    """Run fn per key, collecting results in a dict keyed the same way"""
    key_list = list(keys)
    if workers <= 1 or len(key_list) <= 1:
        return {k: fn(k) for k in key_list}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return dict(zip(key_list, pool.map(fn, key_list)))


def mask_seed_for(cfg: RunConfig, client_id: int) -> int:
    if cfg.similarity.shared_mask:
        return derive_seed(cfg.seed, "mask")
    return derive_seed(cfg.seed, "mask", client_id)


def warm_signature(d: ClientDataset, arch: ArchSpec, cfg: RunConfig) -> Tuple[WarmupResult, ClientSignature]:
    """Federation-free warm-up and the signature the client uploads"""
    sim = cfg.similarity
    warm = local_warmup(
        d,
        arch,
        t_g=sim.warmup_rounds,
        steps_per_round=sim.warmup_steps,
        lr=sim.warmup_lr,
        seed=cfg.seed,
        batch_size=sim.batch_size,
    )
    signature = build_signature(
        d,
        warm.delta,
        sim.sparsity,
        mask_seed_for(cfg, d.client_id),
        p_fraction=sim.p_fraction,
        p_min=sim.p_min,
        subsample=sim.subsample,
        seed=cfg.seed,
        svd_method=sim.svd_method,
    )
    return warm, signature


def proximity_from(signatures: Sequence[ClientSignature], num_classes: int, cfg: RunConfig) -> ProximityMatrix:
    sim = cfg.similarity
    return build_proximity(
        signatures,
        num_classes,
        delta=sim.delta,
        eps=sim.eps,
        view=sim.view,
        lr=sim.fusion_lr,
        iters=sim.fusion_iters,
        init_w=sim.fusion_init,
        learner=sim.fusion_learner,
        hidden=sim.fusion_hidden,
        seed=cfg.seed,
    )


def weighted_mean(vectors: Sequence[np.ndarray], weights: np.ndarray) -> np.ndarray:
    """Σ w_i·v_i accumulated in the given order"""
    out = np.zeros_like(vectors[0], dtype=float)
    for vec, w in zip(vectors, weights):
        out = out + w * vec
    return out


def data_weights(sizes: Sequence[int]) -> np.ndarray:
    arr = np.asarray(sizes, dtype=float)
    total = arr.sum()
    if total <= 0:
        return np.full(arr.size, 1.0 / arr.size) if arr.size else arr
    return arr / total


@dataclass
class LocalResult:
    """A client's trained copy and its mean training loss"""

    client_id: int
    params: ModelParams
    loss: float


def local_train(
    model: DualEncoderModel,
    start: ModelParams,
    dataset_x: np.ndarray,
    dataset_y: np.ndarray,
    cfg: RunConfig,
    seed_keys: Tuple,
    blocks: TrainBlocks,
    lambda_div: Optional[float] = None,
    client_id: int = -1,
) -> LocalResult:
    """E local SGD steps on the selected blocks"""
    tr = cfg.training
    rng = derive_rng(cfg.seed, *seed_keys)
    optimizer = LocalOptimizer(lr=tr.lr, momentum=tr.momentum)
    params = start.copy()
    losses = []
    for step in range(tr.local_steps):
        idx = batch_indices(rng, dataset_y.size, tr.batch_size)
        try:
            loss, grads = model.loss_and_grads(params, dataset_x[idx], dataset_y[idx], blocks, lambda_div)
        except DivergedError as e:
            raise DivergedError("Local training diverged", client_id=client_id, step=step, loss=e.loss) from e
        params = optimizer.step(params, grads)
        losses.append(loss)
    return LocalResult(client_id, params, float(np.mean(losses)))


def combined_secondary(learners: Sequence[ModelParams], mode: str = "mean") -> np.ndarray:
    """Combine the learners' enc2 blocks into one starting encoder"""
    stacked = [m.enc2 for m in learners]
    total = np.zeros_like(stacked[0])
    for vec in stacked:
        total = total + vec
    return total / len(stacked) if mode == "mean" else total


def sharing_enabled(cfg: RunConfig, ccgraph: CCGraph) -> bool:
    """Whether enc2 is trained across clusters at all"""
    tr = cfg.training
    return tr.variant == "shared" and tr.secondary_enabled and not ccgraph.is_empty


def diversity_weight(cfg: RunConfig, arch: ArchSpec) -> Optional[float]:
    """λ_div for primary-block training, or None when the regularizer is off"""
    if cfg.training.init_mode == "diversity" and arch.dual:
        return cfg.training.lambda_div
    return None


@dataclass
class ClusterState:
    """A cluster's members and model"""

    cluster_id: int
    members: List[int]
    model: ModelParams
    data_weights: np.ndarray


def init_cluster_models(
    clustering: Clustering,
    warm_extractors: Optional[Sequence[np.ndarray]],
    arch: ArchSpec,
    seed: int,
    sizes: Sequence[int],
    init_mode: str = "warm",
) -> List[ClusterState]:
    """
    Fresh cluster models.

    Every block is drawn from the cluster's own seeded stream; in warm mode
    enc1 is then replaced by the data-weighted mean of the members' warm
    extractors.

    Raises:
        InvalidArgumentError: If a warm extractor does not match enc1
    """
    states: List[ClusterState] = []
    for z in range(clustering.Z):
        members = [int(i) for i in clustering.members(z)]
        weights = data_weights([sizes[i] for i in members])
        params = init_params(arch, derive_rng(seed, "cluster-init", z))
        if init_mode == "warm" and members:
            if warm_extractors is None:
                raise InvalidArgumentError("Warm initialization needs warm extractors")
            extractors = [np.asarray(warm_extractors[i], dtype=float) for i in members]
            for i, vec in zip(members, extractors):
                if vec.shape != params.enc1.shape:
                    raise InvalidArgumentError(
                        f"Warm extractor of client {i} has {vec.size} values, enc1 has {params.enc1.size}"
                    )
            params = params.replace(enc1=weighted_mean(extractors, weights))
        states.append(ClusterState(z, members, params, weights))
    return states


@dataclass
class RoundMetrics:
    """What happened in one round"""

    round: int
    phases: Tuple[str, ...]
    sampled: List[int]
    cluster_loss: Dict[int, float] = field(default_factory=dict)
    accuracy: Dict[int, float] = field(default_factory=dict)
    bytes_up: Dict[int, int] = field(default_factory=dict)
    bytes_down: Dict[int, int] = field(default_factory=dict)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(list(self.accuracy.values()))) if self.accuracy else float("nan")

    def rows(self, assignment: Sequence[int]) -> List[Dict[str, Any]]:
        """One row per client"""
        out = []
        sampled = set(self.sampled)
        for i, z in enumerate(assignment):
            out.append(
                {
                    "round": self.round,
                    "client_id": i,
                    "cluster_id": int(z),
                    "sampled": int(i in sampled),
                    "balanced_accuracy": self.accuracy.get(i, float("nan")),
                    "cluster_train_loss": self.cluster_loss.get(int(z), float("nan")),
                    "bytes_up": self.bytes_up.get(i, 0),
                    "bytes_down": self.bytes_down.get(i, 0),
                    "phases": "+".join(self.phases),
                }
            )
        return out


@dataclass
class PendingClient:
    dataset: ClientDataset
    test: Optional[ClientDataset] = None


@dataclass
class RunState:
    """Everything a run knows between rounds"""

    cfg: RunConfig
    arch: ArchSpec
    fed: Federation
    signatures: List[ClientSignature]
    warm_extractors: List[np.ndarray]
    proximity: Optional[ProximityMatrix]
    clustering: Clustering
    alpha_star: Optional[float]
    ccgraph: CCGraph
    states: List[ClusterState]
    sweep: Optional[SweepResult] = None
    round: int = 0
    initial_n: int = 0
    newcomers_since_recluster: int = 0
    snapshots: Dict[int, LabelHistogram] = field(default_factory=dict)
    events: List[Any] = field(default_factory=list)
    history: List[RoundMetrics] = field(default_factory=list)
    ledger: CommunicationLedger = field(default_factory=CommunicationLedger)
    pending: List[PendingClient] = field(default_factory=list)
    personal_models: Dict[int, ModelParams] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.initial_n:
            self.initial_n = self.fed.N
        if not self.snapshots:
            self.snapshots = {i: class_histogram(d) for i, d in enumerate(self.fed.clients)}

    @property
    def N(self) -> int:
        return self.fed.N

    def cluster_of(self, client_id: int) -> int:
        return int(self.clustering.assignment[client_id])

    def models(self) -> List[ModelParams]:
        return [s.model for s in self.states]

    def model_for(self, client_id: int) -> ModelParams:
        """The client's personalized model if it has one, else its cluster model"""
        if client_id in self.personal_models:
            return self.personal_models[client_id]
        return self.states[self.cluster_of(client_id)].model

    def sync_members(self) -> None:
        """Refresh member lists and data weights from the clustering"""
        sizes = [d.n_samples for d in self.fed.clients]
        for state in self.states:
            state.members = [int(i) for i in self.clustering.members(state.cluster_id)]
            state.data_weights = data_weights([sizes[i] for i in state.members])

    def replace_client_data(self, client_id: int, dataset: ClientDataset, test: Optional[ClientDataset] = None) -> None:
        """Swap a client's local data, as a drifting client would"""
        if not 0 <= client_id < self.N:
            raise InvalidArgumentError(f"Unknown client {client_id}")
        self.fed.clients[client_id] = dataset.with_id(client_id)
        if test is not None and self.fed.test_clients is not None:
            self.fed.test_clients[client_id] = test.with_id(client_id)
        self.sync_members()

    def add_client(self, dataset: ClientDataset, test: Optional[ClientDataset] = None) -> None:
        """Queue a newcomer; it is integrated at the next lifecycle check"""
        self.pending.append(PendingClient(dataset, test))
