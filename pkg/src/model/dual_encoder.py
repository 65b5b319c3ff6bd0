"""
Dual-encoder MLP classifier.

Two MLP encoders map an input to feature vectors whose concatenation feeds a
linear classifier head. Gradients are exact (hand-written backprop) and are
produced only for the parameter blocks selected for training, so a frozen
block is never touched by an update.

Parameter layout of an encoder block: for every layer, the row-major weight
matrix (fan_in × fan_out) followed by the bias vector. The head block uses the
same layout for its single linear layer.
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax

from ..data.datamodel import BLOCK_NAMES, ModelParams
from ..errors import DataFormatError, DivergedError, InvalidArgumentError

logger = logging.getLogger("DualEncoderModel")

NORM_FLOOR = 1e-12
ACTIVATIONS = ("relu", "tanh")

Grads = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ArchSpec:
    """Shape descriptor of the dual-encoder model"""

    input_dim: int
    num_classes: int
    hidden: Tuple[int, ...] = (256,)
    feature_dim: int = 32
    activation: str = "relu"
    dual: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.num_classes < 1 or self.feature_dim < 1:
            raise InvalidArgumentError("input_dim, num_classes and feature_dim must be ≥ 1")
        if any(h < 1 for h in self.hidden):
            raise InvalidArgumentError(f"Hidden sizes must be ≥ 1, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"Unknown activation: {self.activation}")

    @property
    def encoder_layers(self) -> Tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.feature_dim)

    @property
    def encoder_size(self) -> int:
        sizes = self.encoder_layers
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    @property
    def head_input_dim(self) -> int:
        return self.feature_dim * (2 if self.dual else 1)

    @property
    def head_size(self) -> int:
        return self.head_input_dim * self.num_classes + self.num_classes

    def block_size(self, name: str) -> int:
        if name == "enc1":
            return self.encoder_size
        if name == "enc2":
            return self.encoder_size if self.dual else 0
        if name == "head":
            return self.head_size
        raise InvalidArgumentError(f"Unknown parameter block: {name}")

    @property
    def total_size(self) -> int:
        return sum(self.block_size(name) for name in BLOCK_NAMES)

    def single(self) -> "ArchSpec":
        """The single-encoder reduction (head width halved)"""
        return replace(self, dual=False)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["hidden"] = list(self.hidden)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ArchSpec":
        return cls(
            input_dim=int(data["input_dim"]),
            num_classes=int(data["num_classes"]),
            hidden=tuple(data.get("hidden", (256,))),
            feature_dim=int(data.get("feature_dim", 32)),
            activation=str(data.get("activation", "relu")),
            dual=bool(data.get("dual", True)),
        )


@dataclass(frozen=True)
class TrainBlocks:
    """Which parameter blocks receive gradients"""

    enc1: bool = False
    enc2: bool = False
    head: bool = False

    def __post_init__(self) -> None:
        if not (self.enc1 or self.enc2 or self.head):
            raise InvalidArgumentError("At least one block must be selected for training")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for name in BLOCK_NAMES if getattr(self, name))


PRIMARY_BLOCKS = TrainBlocks(enc1=True, head=True)
SECONDARY_BLOCKS = TrainBlocks(enc2=True)
ALL_BLOCKS = TrainBlocks(enc1=True, enc2=True, head=True)


def _layer_views(vec: np.ndarray, sizes: Tuple[int, ...]) -> List[Tuple[np.ndarray, np.ndarray]]:
    layers = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = vec[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = vec[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def _init_layers(sizes: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    # Uniform fan-in scaling, zero biases
    parts = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def init_block(arch: ArchSpec, name: str, rng: np.random.Generator) -> np.ndarray:
    """Draw a fresh parameter block"""
    if name in ("enc1", "enc2"):
        if name == "enc2" and not arch.dual:
            return np.zeros(0)
        return _init_layers(arch.encoder_layers, rng)
    if name == "head":
        return _init_layers((arch.head_input_dim, arch.num_classes), rng)
    raise InvalidArgumentError(f"Unknown parameter block: {name}")


def init_params(arch: ArchSpec, rng: np.random.Generator) -> ModelParams:
    """Random parameters; blocks are drawn in the order enc1, enc2, head"""
    return ModelParams(
        enc1=init_block(arch, "enc1", rng),
        enc2=init_block(arch, "enc2", rng),
        head=init_block(arch, "head", rng),
    )


def zero_params(arch: ArchSpec) -> ModelParams:
    return ModelParams(
        enc1=np.zeros(arch.block_size("enc1")),
        enc2=np.zeros(arch.block_size("enc2")),
        head=np.zeros(arch.block_size("head")),
    )


def validate_params(arch: ArchSpec, params: ModelParams) -> None:
    """Check block lengths against the architecture and finiteness"""
    for name, arr in params.blocks():
        expected = arch.block_size(name)
        if arr.size != expected:
            raise InvalidArgumentError(f"Block {name} has {arr.size} values, expected {expected}")
    if not params.is_finite():
        raise InvalidArgumentError("Parameters contain non-finite values")


class DualEncoderModel:
    """Forward pass, loss and per-block gradients for one ArchSpec"""

    def __init__(self, arch: ArchSpec):
        self.arch = arch

    # ------------------------------------------------------------------
    # Encoder internals
    # ------------------------------------------------------------------

    def _activate(self, z: np.ndarray) -> np.ndarray:
        if self.arch.activation == "relu":
            return np.maximum(z, 0.0)
        return np.tanh(z)

    def _activation_grad(self, z: np.ndarray, out: np.ndarray) -> np.ndarray:
        if self.arch.activation == "relu":
            return (z > 0.0).astype(float)
        return 1.0 - out * out

    def _encode(self, vec: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]]:
        cache = []
        h = x
        for w, b in _layer_views(vec, self.arch.encoder_layers):
            z = h @ w + b
            out = self._activate(z)
            cache.append((h, z, out))
            h = out
        return h, cache

    def _encode_backward(
        self,
        vec: np.ndarray,
        cache: List[Tuple[np.ndarray, np.ndarray, np.ndarray]],
        d_out: np.ndarray,
    ) -> np.ndarray:
        layers = _layer_views(vec, self.arch.encoder_layers)
        grads: List[np.ndarray] = []
        delta = d_out
        for (w, _), (inp, z, out) in zip(reversed(layers), reversed(cache)):
            dz = delta * self._activation_grad(z, out)
            grads.append((dz.sum(axis=0)))
            grads.append((inp.T @ dz).ravel())
            delta = dz @ w.T
        # grads were collected bias-then-weight from the last layer backwards
        return np.concatenate(grads[::-1])

    def _check_input(self, params: ModelParams, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.arch.input_dim:
            raise InvalidArgumentError(
                f"Input must have {self.arch.input_dim} features, got shape {np.shape(x)}"
            )
        for name, block in params.blocks():
            if block.size != self.arch.block_size(name):
                raise InvalidArgumentError(
                    f"Block {name} has {block.size} values, expected {self.arch.block_size(name)}"
                )
        return arr

    def features(self, params: ModelParams, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Encoder outputs (φ¹(x), φ²(x)); φ² is None for a single-encoder model"""
        arr = self._check_input(params, x)
        f1, _ = self._encode(params.enc1, arr)
        f2 = self._encode(params.enc2, arr)[0] if self.arch.dual else None
        return f1, f2

    def forward(self, params: ModelParams, x: np.ndarray) -> np.ndarray:
        """
        Logits ψ(concat(φ¹(x), φ²(x))).

        Args:
            params: Model parameters matching the ArchSpec
            x: One feature vector or a batch (n × F)

        Returns:
            Logits of shape (C,) for a single vector or (n, C) for a batch
        """
        single = np.asarray(x).ndim == 1
        f1, f2 = self.features(params, x)
        h = f1 if f2 is None else np.concatenate([f1, f2], axis=1)
        (w, b), = _layer_views(params.head, (self.arch.head_input_dim, self.arch.num_classes))
        logits = h @ w + b
        return logits[0] if single else logits

    def predict(self, params: ModelParams, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(params, np.atleast_2d(x)), axis=1)

    # ------------------------------------------------------------------
    # Loss and gradients
    # ------------------------------------------------------------------

    def loss(
        self,
        params: ModelParams,
        x: np.ndarray,
        y: np.ndarray,
        blocks: TrainBlocks = ALL_BLOCKS,
        lambda_div: Optional[float] = None,
    ) -> float:
        return self.loss_and_grads(params, x, y, blocks, lambda_div, need_grads=False)[0]

    def loss_and_grads(
        self,
        params: ModelParams,
        x: np.ndarray,
        y: np.ndarray,
        blocks: TrainBlocks,
        lambda_div: Optional[float] = None,
        need_grads: bool = True,
    ) -> Tuple[float, Grads]:
        """
        Mean cross-entropy and gradients on the selected blocks.

        When lambda_div is set and enc1 is trained, the diversity term
        lambda_div·mean(cos²(φ¹(x), φ²(x))) is added to the loss.

        Args:
            params: Model parameters
            x: Batch features (n × F), n ≥ 1
            y: Batch labels
            blocks: Blocks that receive gradients
            lambda_div: Diversity regularizer weight, or None
            need_grads: Skip the backward pass when False

        Returns:
            (loss, grads) where grads holds one array per selected block

        Raises:
            DivergedError: If the loss is not finite
        """
        arr = self._check_input(params, x)
        labels = np.asarray(y, dtype=np.int64).ravel()
        batch = arr.shape[0]
        if batch == 0 or labels.shape[0] != batch:
            raise InvalidArgumentError("Batch must be non-empty with one label per row")
        arch = self.arch
        fd = arch.feature_dim

        f1, cache1 = self._encode(params.enc1, arr)
        if arch.dual:
            f2, cache2 = self._encode(params.enc2, arr)
            h = np.concatenate([f1, f2], axis=1)
        else:
            f2, cache2 = None, []
            h = f1
        (w_head, b_head), = _layer_views(params.head, (arch.head_input_dim, arch.num_classes))
        logits = h @ w_head + b_head
        log_probs = log_softmax(logits, axis=1)
        loss = float(-log_probs[np.arange(batch), labels].mean())

        use_reg = bool(lambda_div) and blocks.enc1 and arch.dual
        if use_reg:
            n1_raw = np.linalg.norm(f1, axis=1)
            n2_raw = np.linalg.norm(f2, axis=1)
            n1 = np.maximum(n1_raw, NORM_FLOOR)
            n2 = np.maximum(n2_raw, NORM_FLOOR)
            dot = np.sum(f1 * f2, axis=1)
            cos = dot / (n1 * n2)
            loss += float(lambda_div) * float(np.mean(cos * cos))

        if not np.isfinite(loss):
            raise DivergedError("Non-finite training loss", loss=loss)
        if not need_grads:
            return loss, {}

        grads: Grads = {}
        dlogits = softmax(logits, axis=1)
        dlogits[np.arange(batch), labels] -= 1.0
        dlogits /= batch

        if blocks.head:
            grads["head"] = np.concatenate([(h.T @ dlogits).ravel(), dlogits.sum(axis=0)])

        if not (blocks.enc1 or blocks.enc2):
            return loss, grads

        dh = dlogits @ w_head.T
        df1 = dh[:, :fd]
        df2 = dh[:, fd:] if arch.dual else None

        if use_reg:
            scale = 2.0 * float(lambda_div) * cos / batch
            inv = 1.0 / (n1 * n2)
            active1 = (n1_raw >= NORM_FLOOR).astype(float)
            active2 = (n2_raw >= NORM_FLOOR).astype(float)
            dcos_df1 = f2 * inv[:, None] - (cos * active1 / (n1 * n1))[:, None] * f1
            dcos_df2 = f1 * inv[:, None] - (cos * active2 / (n2 * n2))[:, None] * f2
            df1 = df1 + scale[:, None] * dcos_df1
            df2 = df2 + scale[:, None] * dcos_df2

        if blocks.enc1:
            grads["enc1"] = self._encode_backward(params.enc1, cache1, df1)
        if blocks.enc2 and arch.dual:
            grads["enc2"] = self._encode_backward(params.enc2, cache2, df2)
        return loss, grads


def sgd_step(params: ModelParams, grads: Grads, lr: float) -> ModelParams:
    """
    Plain SGD update of the blocks present in grads.

    Blocks absent from grads are carried over bit-identical.
    """
    if lr < 0:
        raise InvalidArgumentError(f"Learning rate must be non-negative, got {lr}")
    updates = {name: params.block(name) - lr * grad for name, grad in grads.items()}
    return params.replace(**updates)


@dataclass
class LocalOptimizer:
    """SGD with optional heavy-ball momentum; momentum 0 is exactly sgd_step"""

    lr: float
    momentum: float = 0.0
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: ModelParams, grads: Grads) -> ModelParams:
        if self.momentum == 0.0:
            return sgd_step(params, grads, self.lr)
        effective: Grads = {}
        for name, grad in grads.items():
            prev = self.velocity.get(name)
            vel = grad if prev is None else self.momentum * prev + grad
            self.velocity[name] = vel
            effective[name] = vel
        return sgd_step(params, effective, self.lr)


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------

_CKPT_MAGIC = b"CFFCKPT1"
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def checkpoint_bytes(arch: ArchSpec, params: ModelParams) -> bytes:
    """Serialize as magic, JSON header with the ArchSpec, then length-prefixed blocks"""
    validate_params(arch, params)
    header = json.dumps(
        {"arch": arch.to_dict(), "blocks": [[name, int(arr.size)] for name, arr in params.blocks()]},
        sort_keys=True,
    ).encode("utf-8")
    parts = [_CKPT_MAGIC, _U32.pack(len(header)), header]
    for _, arr in params.blocks():
        parts.append(_U64.pack(arr.size))
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(payload: bytes) -> Tuple[ArchSpec, ModelParams]:
    if not payload.startswith(_CKPT_MAGIC):
        raise DataFormatError("Not a model checkpoint")
    offset = len(_CKPT_MAGIC)
    try:
        (header_len,) = _U32.unpack_from(payload, offset)
        offset += _U32.size
        header = json.loads(payload[offset:offset + header_len].decode("utf-8"))
        offset += header_len
        arch = ArchSpec.from_dict(header["arch"])
        blocks: Dict[str, np.ndarray] = {}
        for name, _ in header["blocks"]:
            (count,) = _U64.unpack_from(payload, offset)
            offset += _U64.size
            blocks[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).copy()
            offset += 8 * count
    except (struct.error, KeyError, ValueError) as e:
        raise DataFormatError(f"Corrupt checkpoint: {e}") from e
    if offset != len(payload):
        raise DataFormatError("Trailing bytes after checkpoint blocks")
    params = ModelParams(**blocks)
    validate_params(arch, params)
    return arch, params


def save_checkpoint(path: Union[str, Path], arch: ArchSpec, params: ModelParams) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(checkpoint_bytes(arch, params))
    logger.debug(f"Saved checkpoint {target}")
    return target


def load_checkpoint(path: Union[str, Path]) -> Tuple[ArchSpec, ModelParams]:
    source = Path(path)
    if not source.exists():
        raise DataFormatError(f"Checkpoint not found: {source}")
    return checkpoint_from_bytes(source.read_bytes())
