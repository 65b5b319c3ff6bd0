"""
Reference baselines: FedAvg as the single-cluster reduction of the round
engine, and centralized training on pooled data.
"""

import logging
from typing import Tuple

import numpy as np

from ..clustering.ccgraph import CCGraph
from ..clustering.hierarchy import Clustering
from ..config.schema import RunConfig
from ..data.datamodel import ModelParams, concat_datasets
from ..data.partitioner import Federation
from ..model.dual_encoder import PRIMARY_BLOCKS, DualEncoderModel, LocalOptimizer, init_params
from ..similarity.warmup import batch_indices
from ..utils.helpers import derive_rng
from .evaluation import balanced_accuracy
from .state import RunState, arch_for, init_cluster_models
from .trainer import FederatedTrainer

logger = logging.getLogger("FedAvgReference")


def fedavg_config(cfg: RunConfig) -> RunConfig:
    """The configuration under which clustered training reduces to FedAvg"""
    return cfg.model_copy(
        update={
            "training": cfg.training.model_copy(
                update={"variant": "single", "init_mode": "random", "secondary_enabled": False}
            ),
            "lifecycle": cfg.lifecycle.model_copy(update={"enabled": False}),
        }
    )


def fedavg_state(fed: Federation, cfg: RunConfig) -> RunState:
    """One global single-encoder model over every client"""
    ref_cfg = fedavg_config(cfg)
    arch = arch_for(fed, ref_cfg, dual=False)
    clustering = Clustering(np.zeros(fed.N, dtype=np.int64), 1, 1.0)
    sizes = [d.n_samples for d in fed.clients]
    states = init_cluster_models(clustering, None, arch, ref_cfg.seed, sizes, "random")
    return RunState(
        cfg=ref_cfg,
        arch=arch,
        fed=fed,
        signatures=[],
        warm_extractors=[],
        proximity=None,
        clustering=clustering,
        alpha_star=None,
        ccgraph=CCGraph(1, np.full((1, 1), -np.inf), [[]]),
        states=states,
    )


def fedavg_reference(fed: Federation, cfg: RunConfig) -> RunState:
    """
    FedAvg with the same sampling and local-step schedule as clustered training.

    Returns:
        RunState with one cluster holding every client
    """
    ref_cfg = fedavg_config(cfg)
    state = fedavg_state(fed, ref_cfg)
    logger.info(f"FedAvg reference over {fed.N} clients for {ref_cfg.training.rounds} rounds")
    return FederatedTrainer(ref_cfg, fed).run_rounds(state)


def train_centralized(fed: Federation, cfg: RunConfig, steps: int) -> Tuple[ModelParams, float]:
    """
    SGD on the pooled training data with the single-encoder model.

    Returns:
        (parameters, balanced accuracy on the pooled test data or training data)
    """
    arch = arch_for(fed, cfg, dual=False)
    pooled = concat_datasets(fed.clients)
    model = DualEncoderModel(arch)
    params = init_params(arch, derive_rng(cfg.seed, "cluster-init", 0))
    optimizer = LocalOptimizer(lr=cfg.training.lr, momentum=cfg.training.momentum)
    rng = derive_rng(cfg.seed, "centralized")
    for _ in range(steps):
        idx = batch_indices(rng, pooled.n_samples, cfg.training.batch_size)
        _, grads = model.loss_and_grads(params, pooled.features[idx], pooled.labels[idx], PRIMARY_BLOCKS)
        params = optimizer.step(params, grads)

    tests = [t for t in (fed.test_clients or []) if t is not None]
    evaluation = concat_datasets(tests) if tests else pooled
    score = balanced_accuracy(evaluation.labels, model.predict(params, evaluation.features))
    return params, score
