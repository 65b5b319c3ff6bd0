"""
Federation-free local warm-up.

Every client starts from the same seeded single-encoder model and sees the
same stream of batch positions, so differences between the resulting updates
come from the data alone.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..data.datamodel import ClientDataset, ModelParams
from ..errors import DivergedError, InvalidArgumentError
from ..model.dual_encoder import PRIMARY_BLOCKS, ArchSpec, DualEncoderModel, LocalOptimizer, init_params
from ..utils.helpers import derive_rng

logger = logging.getLogger("LocalWarmup")


@dataclass
class WarmupResult:
    """Outcome of a client's warm-up"""

    client_id: int
    model: ModelParams
    delta: np.ndarray
    loss_before: float
    loss_after: float

    @property
    def warm_extractor(self) -> np.ndarray:
        return self.model.enc1


def batch_indices(rng: np.random.Generator, n_samples: int, batch_size: int) -> np.ndarray:
    """One mini-batch of row positions, drawn without replacement"""
    return np.sort(rng.choice(n_samples, size=min(batch_size, n_samples), replace=False))


def warmup_init(arch: ArchSpec, seed: int) -> ModelParams:
    """Shared single-encoder starting point of every warm-up"""
    return init_params(arch.single(), derive_rng(seed, "warmup-init"))


def local_warmup(
    d: ClientDataset,
    arch: ArchSpec,
    t_g: int = 2,
    steps_per_round: int = 10,
    lr: float = 0.01,
    seed: int = 0,
    batch_size: int = 10,
    momentum: float = 0.0,
    init: Optional[ModelParams] = None,
) -> WarmupResult:
    """
    Train a single-encoder model on one client's data only.

    Args:
        d: Client dataset
        arch: Architecture; the warm-up uses its single-encoder reduction
        t_g: Warm-up rounds
        steps_per_round: SGD steps per round
        lr: Learning rate
        seed: Run seed (shared by all clients)
        batch_size: Mini-batch size
        momentum: SGD momentum
        init: Starting parameters; defaults to warmup_init(arch, seed)

    Returns:
        WarmupResult with the warm model and Δ = final − initial (flattened)

    Raises:
        DivergedError: If the loss becomes non-finite
    """
    if t_g < 1:
        raise InvalidArgumentError(f"t_g must be ≥ 1, got {t_g}")
    if steps_per_round < 1:
        raise InvalidArgumentError(f"steps_per_round must be ≥ 1, got {steps_per_round}")

    single = arch.single()
    model = DualEncoderModel(single)
    start = init.copy() if init is not None else warmup_init(arch, seed)
    params = start.copy()
    optimizer = LocalOptimizer(lr=lr, momentum=momentum)
    batches = derive_rng(seed, "warmup-batches")

    try:
        loss_before = model.loss(params, d.features, d.labels, PRIMARY_BLOCKS)
        total_steps = t_g * steps_per_round
        for step in range(total_steps):
            idx = batch_indices(batches, d.n_samples, batch_size)
            _, grads = model.loss_and_grads(params, d.features[idx], d.labels[idx], PRIMARY_BLOCKS)
            params = optimizer.step(params, grads)
        loss_after = model.loss(params, d.features, d.labels, PRIMARY_BLOCKS)
    except DivergedError as e:
        raise DivergedError("Warm-up diverged", client_id=d.client_id, loss=e.loss) from e

    delta = params.flat() - start.flat()
    logger.debug(f"Client {d.client_id} warm-up loss {loss_before:.4f} -> {loss_after:.4f}")
    return WarmupResult(d.client_id, params, delta, loss_before, loss_after)
