"""
Balanced-accuracy evaluation of cluster models on client test splits.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from sklearn.metrics import balanced_accuracy_score

from ..data.datamodel import ClientDataset, ModelParams
from ..model.dual_encoder import ArchSpec, DualEncoderModel

logger = logging.getLogger("Evaluator")


def balanced_accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Mean per-class recall over the classes present in y_true"""
    with warnings.catch_warnings():
        # Predictions of classes absent from y_true are expected under label skew
        warnings.simplefilter("ignore", UserWarning)
        return float(balanced_accuracy_score(y_true, y_pred))


@dataclass
class EvaluationResult:
    """Per-client and per-cluster balanced accuracy"""

    per_client: Dict[int, float] = field(default_factory=dict)
    per_cluster: Dict[int, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        """Mean over evaluated clients (NaN when none)"""
        return float(np.mean(list(self.per_client.values()))) if self.per_client else float("nan")


def evaluate(
    arch: ArchSpec,
    models: Sequence[ModelParams],
    assignment: Sequence[int],
    test_sets: Sequence[Optional[ClientDataset]],
    overrides: Optional[Mapping[int, ModelParams]] = None,
) -> EvaluationResult:
    """
    Evaluate every client on its own test split with its cluster's model.

    Args:
        arch: Architecture of the cluster models
        models: One model per cluster id
        assignment: Cluster id per client
        test_sets: Test split per client; None entries are skipped
        overrides: Per-client models used instead of the cluster model

    Returns:
        EvaluationResult; clients without test data are listed in warnings
    """
    model = DualEncoderModel(arch)
    result = EvaluationResult()
    by_cluster: Dict[int, List[float]] = {}
    for i, (z, test) in enumerate(zip(assignment, test_sets)):
        if test is None:
            message = f"Client {i} has no test data; excluded from evaluation"
            logger.warning(message)
            result.warnings.append(message)
            continue
        params = overrides[i] if overrides and i in overrides else models[int(z)]
        score = balanced_accuracy(test.labels, model.predict(params, test.features))
        result.per_client[i] = score
        by_cluster.setdefault(int(z), []).append(score)
    result.per_cluster = {z: float(np.mean(scores)) for z, scores in sorted(by_cluster.items())}
    return result
