"""Clustered federated training, baselines, evaluation and client lifecycle"""

from .accounting import CommunicationLedger, full_model_bytes
from .evaluation import EvaluationResult, balanced_accuracy, evaluate
from .fedavg import fedavg_reference, train_centralized
from .lifecycle import (
    LifecycleEvent,
    check_for_shifts,
    detect_shift,
    handle_shift,
    integrate_newcomer,
    maybe_recluster,
)
from .state import ClusterState, RoundMetrics, RunState, init_cluster_models
from .trainer import FederatedTrainer, primary_phase_round, secondary_phase_round, train

__all__ = [
    "ClusterState",
    "CommunicationLedger",
    "EvaluationResult",
    "FederatedTrainer",
    "LifecycleEvent",
    "RoundMetrics",
    "RunState",
    "balanced_accuracy",
    "check_for_shifts",
    "detect_shift",
    "evaluate",
    "fedavg_reference",
    "full_model_bytes",
    "handle_shift",
    "init_cluster_models",
    "integrate_newcomer",
    "maybe_recluster",
    "primary_phase_round",
    "secondary_phase_round",
    "train",
]
