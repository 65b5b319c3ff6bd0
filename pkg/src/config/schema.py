"""
Run configuration schema.

One pydantic model per section of a run (federation, architecture,
similarity, clustering, complementarity graph, training, lifecycle, output)
assembled into RunConfig. Every field carries its default, bounds and a
description; cross-field rules live in model validators.

Usage:
    from src.config.schema import RunConfig

    config = RunConfig(**raw_dict)
    rounds = config.training.rounds
"""

from __future__ import annotations

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# =============================================================================
# Enums
# =============================================================================

class FederationSource(str, Enum):
    """Where client datasets come from"""
    SYNTHETIC = "synthetic"
    LABEL_SKEW = "label_skew"
    LDA = "lda"
    DIRECTORY = "directory"


class Concept(str, Enum):
    IDENTITY = "identity"
    FLIP = "flip"
    ROTATE = "rotate"


class SimilarityView(str, Enum):
    """Which proximity matrix drives clustering"""
    FUSED = "fused"
    DATA = "data"
    GRADIENT = "gradient"


class FusionLearner(str, Enum):
    DIRECT = "direct"
    MLP = "mlp"


class SvdMethod(str, Enum):
    EXACT = "exact"
    RANDOMIZED = "randomized"


class Linkage(str, Enum):
    SINGLE = "single"
    AVERAGE = "average"
    COMPLETE = "complete"


class TrainingVariant(str, Enum):
    """Dual encoder with sharing, dual encoder without sharing, or single encoder"""
    SHARED = "shared"
    NO_SHARING = "no_sharing"
    SINGLE = "single"


class InitMode(str, Enum):
    WARM = "warm"
    RANDOM = "random"
    DIVERSITY = "diversity"


class SamplingMode(str, Enum):
    STRATIFIED = "stratified"
    GLOBAL = "global"


class CombineMode(str, Enum):
    """How learner secondary encoders are combined before remote training"""
    MEAN = "mean"
    SUM = "sum"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=True, validate_default=True)


# =============================================================================
# Sections
# =============================================================================

class FederationConfig(_Section):
    """Client data generation or loading"""
    source: FederationSource = Field(FederationSource.SYNTHETIC, description="Federation source")
    path: Optional[str] = Field(None, description="CSV file (label_skew, lda) or saved federation directory")
    n_clients: int = Field(20, ge=1, le=10000, description="Clients for label_skew and lda")
    rho: float = Field(0.2, gt=0.0, le=1.0, description="Share of labels per client (label_skew)")
    alpha_q: float = Field(0.5, gt=0.0, description="Dirichlet concentration")
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0, description="Held-out share per client (label_skew, lda)")
    clusters: int = Field(4, ge=2, description="Ground-truth clusters (synthetic)")
    clients_per_cluster: int = Field(5, ge=1, description="Clients per ground-truth cluster (synthetic)")
    num_classes: int = Field(8, ge=2, description="Classes (synthetic)")
    n_features: int = Field(16, ge=1, description="Feature dimension (synthetic)")
    n_per_client: int = Field(60, ge=1, description="Training samples per client (synthetic)")
    n_test_per_client: int = Field(40, ge=0, description="Test samples per client (synthetic)")
    separation: float = Field(4.0, ge=0.0, description="Scale of the class means (synthetic)")
    noise: float = Field(1.0, gt=0.0, description="Noise standard deviation (synthetic)")
    classes_per_cluster: Optional[int] = Field(2, ge=1, description="Classes per ground-truth cluster; all when null")
    concepts: Optional[List[Concept]] = Field(None, description="Concept per ground-truth cluster")

    @model_validator(mode="after")
    def validate_source(self) -> "FederationConfig":
        if self.source != FederationSource.SYNTHETIC.value and not self.path:
            raise ValueError(f"federation.path is required for source '{self.source}'")
        if self.source == FederationSource.SYNTHETIC.value:
            if self.n_features < self.num_classes:
                raise ValueError("n_features must be at least num_classes for synthetic federations")
            if self.classes_per_cluster is not None and self.classes_per_cluster > self.num_classes:
                raise ValueError("classes_per_cluster cannot exceed num_classes")
            if self.concepts is not None and len(self.concepts) != self.clusters:
                raise ValueError(f"concepts needs one entry per cluster ({self.clusters})")
        return self


class ArchConfig(_Section):
    """Dual-encoder MLP shape"""
    hidden: List[int] = Field(default_factory=lambda: [32], description="Encoder hidden layer widths")
    feature_dim: int = Field(16, ge=1, description="Output width of each encoder")
    activation: str = Field("relu", description="relu or tanh")

    @field_validator("hidden")
    @classmethod
    def validate_hidden(cls, v: List[int]) -> List[int]:
        if any(width < 1 for width in v):
            raise ValueError("hidden widths must be positive")
        return v

    @field_validator("activation")
    @classmethod
    def validate_activation(cls, v: str) -> str:
        if v not in ("relu", "tanh"):
            raise ValueError("activation must be relu or tanh")
        return v


class SimilarityConfig(_Section):
    """Warm-up, signatures and proximity fusion"""
    warmup_rounds: int = Field(2, ge=1, description="Federation-free warm-up rounds t_g")
    warmup_steps: int = Field(10, ge=1, description="SGD steps per warm-up round")
    warmup_lr: float = Field(0.01, gt=0.0, description="Warm-up learning rate")
    batch_size: int = Field(10, ge=1, description="Warm-up mini-batch size")
    sparsity: float = Field(0.01, gt=0.0, le=1.0, description="Retained share of the warm-up update")
    shared_mask: bool = Field(False, description="One sparsification mask for every client")
    p_fraction: float = Field(0.01, gt=0.0, le=1.0, description="Principal vectors per class as a share of the class size")
    p_min: int = Field(1, ge=1, description="Minimum principal vectors per class")
    subsample: Optional[int] = Field(None, ge=1, description="Row cap per class before the SVD")
    svd_method: SvdMethod = Field(SvdMethod.EXACT, description="exact or randomized SVD")
    delta: float = Field(0.2, gt=0.0, lt=1.0, description="Class-weight normalization half-width")
    eps: float = Field(1.0, gt=0.0, description="Offset inside the class-weight logarithms")
    view: SimilarityView = Field(SimilarityView.FUSED, description="Proximity used for clustering")
    fusion_learner: FusionLearner = Field(FusionLearner.DIRECT, description="Fusion weight learner")
    fusion_lr: float = Field(1.0, ge=0.0, description="Fusion learning rate")
    fusion_iters: int = Field(500, ge=0, description="Fusion descent iterations")
    fusion_init: float = Field(0.5, ge=0.0, le=1.0, description="Initial fusion weight")
    fusion_hidden: int = Field(8, ge=1, description="Hidden width of the mlp fusion learner")


class ClusteringConfig(_Section):
    """Threshold sweep and loss"""
    linkage: Linkage = Field(Linkage.AVERAGE, description="Agglomerative linkage")
    alpha_grid: Optional[List[float]] = Field(None, description="Descending thresholds; 1.0 to 0.05 by 0.05 when null")
    gamma: float = Field(0.5, ge=0.0, description="Size-deficit tolerance in standard deviations")
    tau: float = Field(0.1, gt=0.0, description="Size penalty temperature")
    lam: float = Field(0.5, ge=0.0, description="Weight of the size penalty")
    rel_tol: float = Field(0.02, ge=0.0, description="Relative loss tolerance when preferring fewer clusters")
    min_plateau: int = Field(2, ge=1, description="Minimum plateau width of a selectable candidate")
    fixed_assignment: Optional[List[int]] = Field(None, description="Cluster id per client, bypassing the sweep")

    @field_validator("alpha_grid")
    @classmethod
    def validate_grid(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is None:
            return v
        if not v:
            raise ValueError("alpha_grid must not be empty")
        if any(not 0.0 < a <= 1.0 for a in v):
            raise ValueError("alpha_grid values must lie in (0, 1]")
        if any(b > a for a, b in zip(v, v[1:])):
            raise ValueError("alpha_grid must be sorted in descending order")
        return v

    @field_validator("fixed_assignment")
    @classmethod
    def validate_assignment(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        if v is None:
            return v
        if not v or min(v) < 0 or sorted(set(v)) != list(range(max(v) + 1)):
            raise ValueError("fixed_assignment must use contiguous cluster ids starting at 0")
        return v


class CCGraphConfig(_Section):
    k: int = Field(2, ge=1, description="Source clusters kept per learner cluster")


class TrainingConfig(_Section):
    """Federated rounds"""
    variant: TrainingVariant = Field(TrainingVariant.SHARED, description="Training variant")
    rounds: int = Field(20, ge=0, description="Federated rounds")
    sampling_rate: float = Field(0.2, gt=0.0, le=1.0, description="Share of clients sampled per round")
    sampling: SamplingMode = Field(SamplingMode.STRATIFIED, description="stratified or global sampling")
    local_steps: int = Field(10, ge=1, description="Local SGD steps per phase")
    lr: float = Field(0.01, ge=0.0, description="Local learning rate")
    momentum: float = Field(0.0, ge=0.0, lt=1.0, description="Local SGD momentum")
    batch_size: int = Field(10, ge=1, description="Local mini-batch size")
    init_mode: InitMode = Field(InitMode.WARM, description="Cluster model initialization")
    lambda_div: float = Field(0.1, ge=0.0, description="Encoder diversity penalty (diversity init mode)")
    schedule_k: int = Field(0, ge=0, description="Primary-only rounds between secondary rounds; 0 runs both every round")
    secondary_enabled: bool = Field(True, description="Run the secondary knowledge-sharing phase")
    combine: CombineMode = Field(CombineMode.MEAN, description="Learner encoder combination")
    eval_every: int = Field(1, ge=1, description="Evaluate every this many rounds")


class LifecycleConfig(_Section):
    """Shift checks and periodic reclustering"""
    enabled: bool = Field(False, description="Run lifecycle checks during training")
    check_period: int = Field(10, ge=1, description="Rounds between shift checks")
    shift_fraction: float = Field(0.2, gt=0.0, description="Share of samples whose move flags a shift")
    recluster_growth: float = Field(0.2, gt=0.0, description="Newcomer share of the initial cohort that triggers a recluster")


class OutputConfig(_Section):
    dir: str = Field("runs/latest", description="Run directory")
    save_checkpoints: bool = Field(True, description="Write final cluster checkpoints")
    save_signatures: bool = Field(True, description="Write client signatures")


# =============================================================================
# Complete Configuration Schema
# =============================================================================

class RunConfig(_Section):
    """Complete experiment configuration"""
    seed: int = Field(0, ge=0, description="Run seed")
    workers: int = Field(1, ge=1, le=256, description="Threads for per-client jobs")

    federation: FederationConfig = Field(default_factory=FederationConfig)
    arch: ArchConfig = Field(default_factory=ArchConfig)
    similarity: SimilarityConfig = Field(default_factory=SimilarityConfig)
    clustering: ClusteringConfig = Field(default_factory=ClusteringConfig)
    ccgraph: CCGraphConfig = Field(default_factory=CCGraphConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    lifecycle: LifecycleConfig = Field(default_factory=LifecycleConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def validate_configuration(self) -> "RunConfig":
        """Cross-section rules"""
        fed = self.federation
        if fed.source == FederationSource.SYNTHETIC.value:
            n_clients = fed.clusters * fed.clients_per_cluster
            if self.clustering.fixed_assignment is not None and len(self.clustering.fixed_assignment) != n_clients:
                raise ValueError(f"fixed_assignment needs {n_clients} entries")
        return self

    def to_snapshot(self) -> dict:
        """Plain JSON-ready dict of every field"""
        return self.model_dump(mode="json")


def create_default_config() -> RunConfig:
    """Default configuration"""
    return RunConfig()


def create_smoke_config() -> RunConfig:
    """Small configuration that runs in seconds"""
    return RunConfig(
        federation=FederationConfig(clusters=2, clients_per_cluster=3, num_classes=4, n_features=8, n_per_client=30),
        arch=ArchConfig(hidden=[8], feature_dim=4),
        similarity=SimilarityConfig(shared_mask=True, sparsity=0.2, fusion_iters=50),
        training=TrainingConfig(rounds=2, sampling_rate=0.5),
    )


__all__ = [
    "RunConfig",
    "FederationConfig",
    "ArchConfig",
    "SimilarityConfig",
    "ClusteringConfig",
    "CCGraphConfig",
    "TrainingConfig",
    "LifecycleConfig",
    "OutputConfig",
    "FederationSource",
    "Concept",
    "SimilarityView",
    "FusionLearner",
    "SvdMethod",
    "Linkage",
    "TrainingVariant",
    "InitMode",
    "SamplingMode",
    "CombineMode",
    "create_default_config",
    "create_smoke_config",
]
