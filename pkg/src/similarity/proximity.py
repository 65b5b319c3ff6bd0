"""
Client proximity: gradient matrix G, weighted class-wise data matrix V,
learned fusion weights w and the fused matrix A.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..data.datamodel import LabelHistogram
from ..errors import InvalidArgumentError
from ..linalg import (
    minmax_bounds,
    minmax_normalize,
    normalize_with_bounds,
    principal_angle_min,
    row_softmax_entropy,
    row_softmax_entropy_grad,
)
from ..utils.helpers import derive_rng
from .signatures import ClientSignature

logger = logging.getLogger("ProximityBuilder")

VIEWS = ("fused", "data", "gradient")
FUSION_LEARNERS = ("direct", "mlp")


# ----------------------------------------------------------------------
# Gradient similarity
# ----------------------------------------------------------------------

def _gradient_angles(dense: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(dense, axis=1)
    inner = dense[rows] @ dense[cols].T
    denom = np.outer(norms[rows], norms[cols])
    with np.errstate(divide="ignore", invalid="ignore"):
        cosine = np.where(denom > 0, inner / np.where(denom > 0, denom, 1.0), 0.0)
    angles = np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0)))
    # Zero-norm updates carry no direction
    zero = (norms[rows][:, None] == 0) | (norms[cols][None, :] == 0)
    angles[zero] = 90.0
    return angles


def _warn_zero_norm(sigs: Sequence[ClientSignature]) -> None:
    for sig in sigs:
        if not np.any(sig.sparse_grad.values):
            logger.warning(f"Client {sig.client_id} has a zero-norm sparse update; its pairs are set to 90°")


def gradient_similarity_matrix(sigs: Sequence[ClientSignature]) -> np.ndarray:
    """
    Pairwise angles (degrees) between sparse warm-up updates.

    Inner products run over the union of retained coordinates, with missing
    coordinates treated as 0. Pairs involving a zero-norm update are 90°.
    """
    if len(sigs) < 2:
        raise InvalidArgumentError("At least two signatures are required")
    dims = {sig.sparse_grad.dim for sig in sigs}
    if len(dims) != 1:
        raise InvalidArgumentError(f"Sparse updates have different dimensions: {sorted(dims)}")
    _warn_zero_norm(sigs)
    dense = np.vstack([sig.sparse_grad.to_dense() for sig in sigs])
    idx = np.arange(len(sigs))
    g = _gradient_angles(dense, idx, idx)
    g = (g + g.T) / 2.0
    np.fill_diagonal(g, 0.0)
    return g


def gradient_similarity_row(sig: ClientSignature, others: Sequence[ClientSignature]) -> np.ndarray:
    """Angles between one client's update and every other client's update"""
    _warn_zero_norm([sig])
    dense = np.vstack([sig.sparse_grad.to_dense()] + [o.sparse_grad.to_dense() for o in others])
    return _gradient_angles(dense, np.array([0]), np.arange(1, len(others) + 1))[0]


# ----------------------------------------------------------------------
# Data similarity
# ----------------------------------------------------------------------

def raw_class_weights(h_i: LabelHistogram, h_j: LabelHistogram, eps: float = 1.0) -> np.ndarray:
    """
    Frequency-imbalance weights per class.

    max(ln(|D_i,c|+eps), ln(|D_j,c|+eps)) / min(...) where both clients hold
    class c; NaN elsewhere.
    """
    both = (h_i.counts > 0) & (h_j.counts > 0)
    out = np.full(h_i.num_classes, np.nan)
    if np.any(both):
        li = np.log(h_i.counts[both] + eps)
        lj = np.log(h_j.counts[both] + eps)
        out[both] = np.maximum(li, lj) / np.minimum(li, lj)
    return out


def raw_weight_bounds(sigs: Sequence[ClientSignature], eps: float = 1.0) -> Tuple[float, float]:
    """Range of raw weights over all pairs and classes held by both clients"""
    values: List[np.ndarray] = []
    for i in range(len(sigs)):
        for j in range(i + 1, len(sigs)):
            w = raw_class_weights(sigs[i].histogram, sigs[j].histogram, eps)
            values.append(w[~np.isnan(w)])
    pooled = np.concatenate(values) if values else np.zeros(0)
    if pooled.size == 0:
        return 1.0, 1.0
    return float(pooled.min()), float(pooled.max())


def normalized_class_weights(raw: np.ndarray, bounds: Tuple[float, float], delta: float) -> np.ndarray:
    """Map raw weights into [1−delta, 1+delta]; absent classes and a degenerate range give 1"""
    lo, hi = bounds
    out = np.ones_like(raw)
    valid = ~np.isnan(raw)
    if hi > lo:
        scaled = np.clip((raw[valid] - lo) / (hi - lo), 0.0, 1.0)
        out[valid] = (1.0 - delta) + 2.0 * delta * scaled
    return out


def class_angles(sig_i: ClientSignature, sig_j: ClientSignature, num_classes: int) -> np.ndarray:
    """V′_{i,j,c}: principal angle when both hold c, 90° when one does, 0° when neither"""
    angles = np.zeros(num_classes)
    for c in range(num_classes):
        bi = sig_i.per_class_bases.get(c)
        bj = sig_j.per_class_bases.get(c)
        if bi is not None and bj is not None:
            angles[c] = principal_angle_min(bi, bj)
        elif bi is not None or bj is not None:
            angles[c] = 90.0
    return angles


def pair_data_similarity(
    sig_i: ClientSignature,
    sig_j: ClientSignature,
    num_classes: int,
    delta: float,
    eps: float,
    weight_bounds: Tuple[float, float],
) -> Tuple[float, np.ndarray]:
    """(V_{i,j}, V′_{i,j,·}) for one pair"""
    angles = class_angles(sig_i, sig_j, num_classes)
    raw = raw_class_weights(sig_i.histogram, sig_j.histogram, eps)
    weights = normalized_class_weights(raw, weight_bounds, delta)
    return float(np.sum(angles * weights) / num_classes), angles


def data_similarity_matrix(
    sigs: Sequence[ClientSignature],
    num_classes: int,
    delta: float = 0.2,
    eps: float = 1.0,
    weight_bounds: Optional[Tuple[float, float]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Weighted class-wise data dissimilarity.

    Args:
        sigs: Client signatures
        num_classes: Total class count C
        delta: Weight normalization half-width, in (0, 1)
        eps: Offset inside the logarithms
        weight_bounds: Raw-weight range to normalize with; computed from sigs when omitted

    Returns:
        (V in degrees, V′ as an N×N×C tensor in degrees)
    """
    if not 0.0 < delta < 1.0:
        raise InvalidArgumentError(f"delta must be in (0, 1), got {delta}")
    n = len(sigs)
    bounds = weight_bounds if weight_bounds is not None else raw_weight_bounds(sigs, eps)
    v = np.zeros((n, n))
    vprime = np.zeros((n, n, num_classes))
    for i in range(n):
        for j in range(i + 1, n):
            value, angles = pair_data_similarity(sigs[i], sigs[j], num_classes, delta, eps, bounds)
            v[i, j] = v[j, i] = value
            vprime[i, j] = vprime[j, i] = angles
    return v, vprime


def data_similarity_row(
    sig: ClientSignature,
    others: Sequence[ClientSignature],
    num_classes: int,
    delta: float,
    eps: float,
    weight_bounds: Tuple[float, float],
) -> Tuple[np.ndarray, np.ndarray]:
    """One client's V row and V′ rows against every other client"""
    values = np.zeros(len(others))
    angles = np.zeros((len(others), num_classes))
    for k, other in enumerate(others):
        values[k], angles[k] = pair_data_similarity(sig, other, num_classes, delta, eps, weight_bounds)
    return values, angles


# ----------------------------------------------------------------------
# Fusion
# ----------------------------------------------------------------------

def default_priority(n: int) -> np.ndarray:
    return np.arange(n, dtype=float)


def governor_matrix(priority: np.ndarray) -> np.ndarray:
    """Index of the client whose weight governs each pair (lowest priority value)"""
    prio = np.asarray(priority, dtype=float)
    idx = np.arange(prio.size)
    take_row = prio[:, None] <= prio[None, :]
    return np.where(take_row, idx[:, None], idx[None, :])


def idle_clients(gov: np.ndarray) -> np.ndarray:
    """Clients that govern no off-diagonal pair"""
    n = gov.shape[0]
    return np.setdiff1d(np.arange(n), gov[np.triu_indices(n, k=1)])


def _fused(vhat: np.ndarray, ghat: np.ndarray, w: np.ndarray, gov: np.ndarray) -> np.ndarray:
    weight = w[gov]
    a = weight * ghat + (1.0 - weight) * vhat
    np.fill_diagonal(a, 0.0)
    return a


@dataclass
class ProximityMatrix:
    """
    Fused client dissimilarity and the pieces it was built from.

    G and V are kept raw (degrees) together with their normalization bounds so
    rows for clients added later can be normalized on the same scale.
    """

    A: np.ndarray
    Ghat: np.ndarray
    Vhat: np.ndarray
    w: np.ndarray
    Vprime: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    g_bounds: Tuple[float, float] = (0.0, 0.0)
    v_bounds: Tuple[float, float] = (0.0, 0.0)
    weight_bounds: Tuple[float, float] = (1.0, 1.0)
    priority: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if self.priority.size == 0:
            self.priority = default_priority(self.A.shape[0])
        elif self.priority.size != self.A.shape[0]:
            raise InvalidArgumentError(f"priority has {self.priority.size} entries for {self.A.shape[0]} clients")

    @property
    def N(self) -> int:
        return int(self.A.shape[0])

    def refused(self, w: np.ndarray) -> "ProximityMatrix":
        """Same views fused with new weights"""
        weights = np.clip(np.asarray(w, dtype=float), 0.0, 1.0)
        a = _fused(self.Vhat, self.Ghat, weights, governor_matrix(self.priority))
        return replace(self, A=a, w=weights)

    def appended(
        self,
        g_row: np.ndarray,
        v_row: np.ndarray,
        vprime_rows: np.ndarray,
        w_init: float,
    ) -> "ProximityMatrix":
        """
        Add one client whose pairs it governs itself.

        Its raw rows are normalized with the existing bounds, so every existing
        entry of A stays bit-identical under the existing weights.
        """
        if self.G is None or self.V is None or self.Vprime is None:
            raise InvalidArgumentError("Appending requires the raw G, V and V′ views")
        n = self.N
        g = _grow(self.G, g_row)
        v = _grow(self.V, v_row)
        ghat = _grow(self.Ghat, normalize_with_bounds(g_row, *self.g_bounds))
        vhat = _grow(self.Vhat, normalize_with_bounds(v_row, *self.v_bounds))
        vprime = np.zeros((n + 1, n + 1, self.Vprime.shape[2]))
        vprime[:n, :n] = self.Vprime
        vprime[n, :n] = vprime_rows
        vprime[:n, n] = vprime_rows
        w = np.append(self.w, float(w_init))
        priority = np.append(self.priority, (self.priority.min() if n else 0.0) - 1.0)
        a = _fused(vhat, ghat, w, governor_matrix(priority))
        return replace(self, A=a, G=g, V=v, Ghat=ghat, Vhat=vhat, Vprime=vprime, w=w, priority=priority)

    def refreshed(
        self,
        i: int,
        g_row: np.ndarray,
        v_row: np.ndarray,
        vprime_rows: np.ndarray,
    ) -> "ProximityMatrix":
        """Replace client i's row and column (rows given over all N clients, entry i ignored)"""
        if self.G is None or self.V is None or self.Vprime is None:
            raise InvalidArgumentError("Refreshing requires the raw G, V and V′ views")
        g, v = self.G.copy(), self.V.copy()
        ghat, vhat, vprime = self.Ghat.copy(), self.Vhat.copy(), self.Vprime.copy()
        for target, row in ((g, g_row), (v, v_row)):
            target[i, :] = row
            target[:, i] = row
            target[i, i] = 0.0
        for target, row, bounds in ((ghat, g_row, self.g_bounds), (vhat, v_row, self.v_bounds)):
            normalized = normalize_with_bounds(row, *bounds)
            target[i, :] = normalized
            target[:, i] = normalized
            target[i, i] = 0.0
        vprime[i, :] = vprime_rows
        vprime[:, i] = vprime_rows
        vprime[i, i] = 0.0
        return replace(self, G=g, V=v, Ghat=ghat, Vhat=vhat, Vprime=vprime).refused(self.w)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "N": self.N,
            "w": [float(x) for x in self.w],
            "g_bounds": list(self.g_bounds),
            "v_bounds": list(self.v_bounds),
            "weight_bounds": list(self.weight_bounds),
        }


def _grow(matrix: np.ndarray, row: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = matrix
    out[n, :n] = row
    out[:n, n] = row
    return out


def fuse_proximity(
    Vhat: np.ndarray,
    Ghat: np.ndarray,
    w: np.ndarray,
    priority: Optional[np.ndarray] = None,
) -> ProximityMatrix:
    """
    Fuse normalized views: A_ij = w_g·Ĝ_ij + (1−w_g)·V̂_ij.

    g is the governing client of the pair: the lower index unless a priority
    vector says otherwise. A is symmetric with a zero diagonal.
    """
    vhat = np.asarray(Vhat, dtype=float)
    ghat = np.asarray(Ghat, dtype=float)
    weights = np.asarray(w, dtype=float)
    if vhat.shape != ghat.shape or vhat.ndim != 2 or vhat.shape[0] != vhat.shape[1]:
        raise InvalidArgumentError("Vhat and Ghat must be square matrices of the same shape")
    if weights.shape != (vhat.shape[0],):
        raise InvalidArgumentError(f"w must have {vhat.shape[0]} entries")
    if np.any(weights < 0) or np.any(weights > 1):
        raise InvalidArgumentError("w must lie in [0, 1]")
    prio = default_priority(vhat.shape[0]) if priority is None else np.asarray(priority, dtype=float)
    a = _fused(vhat, ghat, weights, governor_matrix(prio))
    return ProximityMatrix(A=a, Ghat=ghat, Vhat=vhat, w=weights.copy(), priority=prio.copy())


class FusionWeightLearner:
    """
    Learns per-client fusion weights by descending the row-softmax entropy of
    the fused matrix.

    "direct" updates w itself; "mlp" maps each client's [Ĝ_i, V̂_i] row to w_i
    through a one-hidden-layer tanh network with a sigmoid output.

    A client that governs no pair has a zero gradient, so under the direct
    learner its weight stays at init_w. With the default governance this is
    always the last client.
    """

    def __init__(
        self,
        lr: float = 1.0,
        iters: int = 500,
        init_w: float = 0.5,
        learner: str = "direct",
        hidden: int = 8,
        seed: int = 0,
    ):
        if learner not in FUSION_LEARNERS:
            raise InvalidArgumentError(f"Unknown fusion learner: {learner}")
        if iters < 0 or lr < 0:
            raise InvalidArgumentError("iters and lr must be non-negative")
        self.lr = lr
        self.iters = iters
        self.init_w = init_w
        self.learner = learner
        self.hidden = hidden
        self.seed = seed
        self.loss_history_: List[float] = []
        self.w_: Optional[np.ndarray] = None

    @staticmethod
    def weight_gradient(vhat: np.ndarray, ghat: np.ndarray, w: np.ndarray, gov: np.ndarray) -> Tuple[float, np.ndarray]:
        """Entropy loss and its gradient with respect to every w_g"""
        a = _fused(vhat, ghat, w, gov)
        m = row_softmax_entropy_grad(a)
        n = a.shape[0]
        iu, ju = np.triu_indices(n, k=1)
        contrib = (m[iu, ju] + m[ju, iu]) * (ghat[iu, ju] - vhat[iu, ju])
        grad = np.bincount(gov[iu, ju], weights=contrib, minlength=n)
        return row_softmax_entropy(a), grad

    def fit(
        self,
        Vhat: np.ndarray,
        Ghat: np.ndarray,
        priority: Optional[np.ndarray] = None,
        w0: Optional[np.ndarray] = None,
        trainable: Optional[Sequence[int]] = None,
    ) -> np.ndarray:
        """
        Learn w.

        Args:
            Vhat: Normalized data view
            Ghat: Normalized gradient view
            priority: Pair governance order (lower index governs by default)
            w0: Starting weights; init_w everywhere when omitted
            trainable: Indices allowed to change; all when omitted (direct learner only)

        Returns:
            Weights in [0, 1]^N
        """
        vhat = np.asarray(Vhat, dtype=float)
        ghat = np.asarray(Ghat, dtype=float)
        if vhat.shape != ghat.shape:
            raise InvalidArgumentError("Vhat and Ghat must have the same shape")
        n = vhat.shape[0]
        gov = governor_matrix(default_priority(n) if priority is None else priority)
        self.loss_history_ = []
        idle = idle_clients(gov)
        if idle.size:
            logger.debug(f"Clients {idle.tolist()} govern no pair; their weights keep the initial value")

        if self.learner == "mlp" and trainable is None:
            w = self._fit_mlp(vhat, ghat, gov)
        else:
            w = np.full(n, float(self.init_w)) if w0 is None else np.array(w0, dtype=float)
            w = np.clip(w, 0.0, 1.0)
            mask = np.ones(n, dtype=bool) if trainable is None else np.isin(np.arange(n), trainable)
            for _ in range(self.iters):
                loss, grad = self.weight_gradient(vhat, ghat, w, gov)
                self.loss_history_.append(loss)
                w = np.where(mask, np.clip(w - self.lr * grad, 0.0, 1.0), w)
            self.loss_history_.append(row_softmax_entropy(_fused(vhat, ghat, w, gov)))
        self.w_ = w
        return w

    def _fit_mlp(self, vhat: np.ndarray, ghat: np.ndarray, gov: np.ndarray) -> np.ndarray:
        n = vhat.shape[0]
        x = np.hstack([ghat, vhat])
        rng = derive_rng(self.seed, "fusion-mlp")
        bound = 1.0 / np.sqrt(x.shape[1])
        u = rng.uniform(-bound, bound, size=(x.shape[1], self.hidden))
        b = np.zeros(self.hidden)
        v = rng.uniform(-1.0 / np.sqrt(self.hidden), 1.0 / np.sqrt(self.hidden), size=self.hidden)
        c = 0.0

        def weights() -> Tuple[np.ndarray, np.ndarray]:
            h = np.tanh(x @ u + b)
            return 1.0 / (1.0 + np.exp(-(h @ v + c))), h

        for _ in range(self.iters):
            w, h = weights()
            loss, grad_w = self.weight_gradient(vhat, ghat, w, gov)
            self.loss_history_.append(loss)
            dz = grad_w * w * (1.0 - w)
            dv = h.T @ dz
            dc = float(dz.sum())
            dpre = np.outer(dz, v) * (1.0 - h * h)
            u -= self.lr * (x.T @ dpre)
            b -= self.lr * dpre.sum(axis=0)
            v -= self.lr * dv
            c -= self.lr * dc
        w, _ = weights()
        self.loss_history_.append(row_softmax_entropy(_fused(vhat, ghat, w, gov)))
        return np.clip(w, 0.0, 1.0)


def learn_fusion_weights(
    Vhat: np.ndarray,
    Ghat: np.ndarray,
    lr: float = 1.0,
    iters: int = 500,
    init_w: float = 0.5,
    learner: str = "direct",
    seed: int = 0,
) -> np.ndarray:
    """Learn fusion weights; see FusionWeightLearner"""
    return FusionWeightLearner(lr=lr, iters=iters, init_w=init_w, learner=learner, seed=seed).fit(Vhat, Ghat)


def build_proximity(
    sigs: Sequence[ClientSignature],
    num_classes: int,
    delta: float = 0.2,
    eps: float = 1.0,
    view: str = "fused",
    lr: float = 1.0,
    iters: int = 500,
    init_w: float = 0.5,
    learner: str = "direct",
    hidden: int = 8,
    seed: int = 0,
) -> ProximityMatrix:
    """
    Full similarity pipeline over a cohort of signatures.

    view selects the fused matrix, or a single view (data: w ≡ 0, gradient: w ≡ 1).
    """
    if view not in VIEWS:
        raise InvalidArgumentError(f"Unknown similarity view: {view}")
    g = gradient_similarity_matrix(sigs)
    weight_bounds = raw_weight_bounds(sigs, eps)
    v, vprime = data_similarity_matrix(sigs, num_classes, delta, eps, weight_bounds)
    ghat = minmax_normalize(g, exclude_diagonal=True)
    vhat = minmax_normalize(v, exclude_diagonal=True)

    n = len(sigs)
    if view == "data":
        w = np.zeros(n)
    elif view == "gradient":
        w = np.ones(n)
    else:
        fitter = FusionWeightLearner(lr=lr, iters=iters, init_w=init_w, learner=learner, hidden=hidden, seed=seed)
        w = fitter.fit(vhat, ghat)
        logger.info(
            f"Fusion weights learned: mean w={w.mean():.3f}, entropy "
            f"{fitter.loss_history_[0]:.4f} -> {fitter.loss_history_[-1]:.4f}"
        )

    fused = fuse_proximity(vhat, ghat, w)
    return replace(
        fused,
        Vprime=vprime,
        G=g,
        V=v,
        g_bounds=minmax_bounds(g, exclude_diagonal=True),
        v_bounds=minmax_bounds(v, exclude_diagonal=True),
        weight_bounds=weight_bounds,
    )
