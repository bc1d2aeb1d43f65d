"""GPR-style GNN with manual forward/backward.

Architecture: a single linear featurizer followed by full-batch
normalization (no nonlinearity), K-hop propagation H^(k) = Ã^k H^(0),
aggregation Z = Σ_k γ_k H^(k) with trainable per-hop weights γ, and a
linear classifier.

The hop cache stores the propagated *pre-affine* normalized features
(basis B_k = Ã^k X̂) together with the propagated all-ones column
(o_k = Ã^k 1). Because the normalization affine map is per-column linear,

    H^(k) = scale ⊙ B_k + o_k · shiftᵀ,

so representations for *any* scale/shift are reconstructable without new
propagate calls — norm-affine test-time adaptation reuses the cache, and
an entire adaptation run costs exactly K propagate applications.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .graph import Dataset, PropagationOperator
from .io import read_checkpoint_arrays, write_checkpoint_arrays

__all__ = [
    "GprModel",
    "HopCache",
    "SoftPrediction",
    "init_model",
    "featurize_hops",
    "aggregate",
    "aggregate_affine",
    "classify",
    "softmax",
    "predict",
    "evaluate",
    "backward_ce",
    "gamma_grad_from_dz",
    "affine_grad_from_dz",
    "save_checkpoint",
    "load_checkpoint",
]

BN_EPS = 1e-5

#: Checkpoint parameter order; shapes are functions of dims (D, H, C, K).
_FIELD_ORDER = (
    "W1",
    "b1",
    "scale",
    "shift",
    "running_mean",
    "running_var",
    "gamma",
    "W_cls",
    "b_cls",
)


@dataclass
class GprModel:
    """Model parameters. ``gamma`` has length K+1 (hops 0..K)."""

    W1: np.ndarray  # D×H
    b1: np.ndarray  # H
    scale: np.ndarray  # H (norm affine)
    shift: np.ndarray  # H (norm affine)
    running_mean: np.ndarray  # H (stored feature statistics)
    running_var: np.ndarray  # H
    gamma: np.ndarray  # K+1
    W_cls: np.ndarray  # H×C
    b_cls: np.ndarray  # C
    freeze_stats: bool = False  # use stored statistics instead of recomputing

    def __post_init__(self) -> None:
        d, h = self.W1.shape
        h2, c = self.W_cls.shape
        if h2 != h:
            raise ValueError("W1 and W_cls disagree on hidden width")
        for name in ("b1", "scale", "shift", "running_mean", "running_var"):
            if getattr(self, name).shape != (h,):
                raise ValueError(f"{name} must have shape ({h},)")
        if self.b_cls.shape != (c,):
            raise ValueError(f"b_cls must have shape ({c},)")
        if self.gamma.ndim != 1 or self.gamma.shape[0] < 1:
            raise ValueError("gamma must be a nonempty vector")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(D, H, C, K)."""
        return (
            self.W1.shape[0],
            self.W1.shape[1],
            self.W_cls.shape[1],
            self.gamma.shape[0] - 1,
        )

    @property
    def num_hops(self) -> int:
        return self.gamma.shape[0] - 1

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in _FIELD_ORDER]

    def copy(self) -> "GprModel":
        return GprModel(
            *(getattr(self, name).copy() for name in _FIELD_ORDER),
            freeze_stats=self.freeze_stats,
        )


@dataclass
class SoftPrediction:
    """Row-stochastic class probabilities."""

    probs: np.ndarray  # N×C

    def __post_init__(self) -> None:
        if self.probs.ndim != 2:
            raise ValueError("probs must be N×C")
        row_sums = self.probs.sum(axis=1)
        if not np.all(np.abs(row_sums - 1.0) <= 1e-6):
            raise ValueError("prediction rows must sum to 1 within 1e-6")
        if self.probs.min() < 0 or self.probs.max() > 1 + 1e-12:
            raise ValueError("probabilities must lie in [0, 1]")

    @property
    def hard(self) -> np.ndarray:
        """Argmax labels; ties break toward the lowest class index."""
        return self.probs.argmax(axis=1)


@dataclass
class HopCache:
    """Hop representations factored through the normalization affine."""

    basis: np.ndarray  # (K+1)×N×H, hops of the pre-affine normalized features
    ones_hops: np.ndarray  # (K+1)×N, hops of the all-ones column
    xhat: np.ndarray  # N×H, normalized pre-affine features (hop 0 basis)
    used_mean: np.ndarray  # H, statistics used by the normalization
    used_std: np.ndarray  # H, √(var + eps)
    theta_fingerprint: str  # hash of (W1, b1, statistics, graph layout)
    affine_scale: np.ndarray = field(repr=False, default=None)
    affine_shift: np.ndarray = field(repr=False, default=None)
    hops: np.ndarray = field(repr=False, default=None)  # (K+1)×N×H materialized

    @property
    def num_hops(self) -> int:
        return self.basis.shape[0] - 1

    def materialize(self, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
        """Post-affine hop stack for the given norm affine; cached per affine."""
        if (
            self.hops is None
            or not np.array_equal(self.affine_scale, scale)
            or not np.array_equal(self.affine_shift, shift)
        ):
            self.hops = self.basis * scale[None, None, :] + np.einsum(
                "kn,h->knh", self.ones_hops, shift
            )
            self.affine_scale = scale.copy()
            self.affine_shift = shift.copy()
        return self.hops

    def is_fresh(self, model: GprModel, graph) -> bool:
        return self.theta_fingerprint == _theta_fingerprint(model, graph)


class StaleCacheError(RuntimeError):
    """The hop cache was built under different featurizer parameters."""


def _theta_fingerprint(model: GprModel, graph) -> str:
    hasher = hashlib.sha256()
    hasher.update(np.ascontiguousarray(model.W1).tobytes())
    hasher.update(np.ascontiguousarray(model.b1).tobytes())
    hasher.update(b"frozen" if model.freeze_stats else b"batch")
    if model.freeze_stats:
        hasher.update(np.ascontiguousarray(model.running_mean).tobytes())
        hasher.update(np.ascontiguousarray(model.running_var).tobytes())
    hasher.update(np.ascontiguousarray(graph.row_offsets).tobytes())
    hasher.update(np.ascontiguousarray(graph.neighbor_ids).tobytes())
    return hasher.hexdigest()


def init_model(
    dim: int, hidden: int, num_classes: int, num_hops: int, seed: int, alpha: float = 0.1
) -> GprModel:
    """Glorot-uniform linear layers, identity norm affine, PPR-initialized γ.

    γ_k = α(1−α)^k is the standard generalized-PageRank initialization.
    """
    rng = np.random.default_rng(seed)
    limit1 = np.sqrt(6.0 / (dim + hidden))
    limit2 = np.sqrt(6.0 / (hidden + num_classes))
    gamma = alpha * (1.0 - alpha) ** np.arange(num_hops + 1, dtype=np.float64)
    return GprModel(
        W1=rng.uniform(-limit1, limit1, size=(dim, hidden)),
        b1=np.zeros(hidden),
        scale=np.ones(hidden),
        shift=np.zeros(hidden),
        running_mean=np.zeros(hidden),
        running_var=np.ones(hidden),
        gamma=gamma,
        W_cls=rng.uniform(-limit2, limit2, size=(hidden, num_classes)),
        b_cls=np.zeros(num_classes),
    )


def featurize_hops(
    model: GprModel, dataset: Dataset, op: PropagationOperator
) -> HopCache:
    """Build the hop cache with exactly K propagate applications.

    Normalization statistics are computed over all nodes of the current
    graph (full-batch transductive) and stored on the model, unless
    ``model.freeze_stats`` keeps the stored source statistics.
    """
    if dataset.features.shape[1] != model.W1.shape[0]:
        raise ValueError("feature dimension does not match the model")
    pre = dataset.features @ model.W1 + model.b1[None, :]
    if model.freeze_stats:
        mean, var = model.running_mean, model.running_var
    else:
        mean = pre.mean(axis=0)
        var = pre.var(axis=0)
        model.running_mean = mean.copy()
        model.running_var = var.copy()
    std = np.sqrt(var + BN_EPS)
    xhat = (pre - mean[None, :]) / std[None, :]

    n, h = xhat.shape
    k = model.num_hops
    # Propagate the normalized features and the all-ones column together so
    # the whole cache costs exactly K propagate calls.
    augmented = np.concatenate([xhat, np.ones((n, 1))], axis=1)
    stack = np.empty((k + 1, n, h + 1))
    stack[0] = augmented
    for step in range(1, k + 1):
        stack[step] = op.apply(stack[step - 1])
    cache = HopCache(
        basis=np.ascontiguousarray(stack[:, :, :h]),
        ones_hops=np.ascontiguousarray(stack[:, :, h]),
        xhat=xhat,
        used_mean=mean.copy(),
        used_std=std,
        theta_fingerprint=_theta_fingerprint(model, dataset.graph),
    )
    cache.materialize(model.scale, model.shift)
    return cache


def aggregate(cache: HopCache, gamma: np.ndarray) -> np.ndarray:
    """Z = Σ_k γ_k H^(k) for the cache's current affine materialization."""
    if gamma.shape[0] != cache.basis.shape[0]:
        raise ValueError("gamma length must equal K+1")
    if cache.hops is None:
        raise StaleCacheError("cache has no materialized hops")
    return np.tensordot(gamma, cache.hops, axes=1)


def aggregate_affine(
    cache: HopCache, gamma: np.ndarray, scale: np.ndarray, shift: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z for an arbitrary norm affine, plus the γ-combined basis pieces.

    Returns (Z, S_B, t_o) where S_B = Σ γ_k B_k and t_o = Σ γ_k o_k, so
    Z = scale ⊙ S_B + t_o · shiftᵀ. Used by norm-affine adaptation.
    """
    if gamma.shape[0] != cache.basis.shape[0]:
        raise ValueError("gamma length must equal K+1")
    s_b = np.tensordot(gamma, cache.basis, axes=1)
    t_o = cache.ones_hops.T @ gamma
    return s_b * scale[None, :] + t_o[:, None] * shift[None, :], s_b, t_o


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax, stabilized by row-max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def classify(Z: np.ndarray, model: GprModel) -> tuple[np.ndarray, SoftPrediction]:
    """Linear classifier logits and their softmax prediction."""
    if Z.shape[1] != model.W_cls.shape[0]:
        raise ValueError("representation width does not match the classifier")
    logits = Z @ model.W_cls + model.b_cls[None, :]
    return logits, SoftPrediction(softmax(logits))


def predict(
    model: GprModel, dataset: Dataset, op: PropagationOperator | None = None
) -> SoftPrediction:
    """Full forward pass on a dataset (builds a fresh hop cache)."""
    if op is None:
        op = PropagationOperator(dataset.graph, "sym")
    cache = featurize_hops(model, dataset, op)
    _, prediction = classify(aggregate(cache, model.gamma), model)
    return prediction


def prediction_accuracy(
    prediction: SoftPrediction, labels: np.ndarray, mask: np.ndarray | None = None
) -> float:
    """Argmax accuracy of an existing prediction over masked (or all) nodes."""
    hard = prediction.hard
    if mask is not None:
        hard, labels = hard[mask], labels[mask]
    if labels.size == 0:
        raise ValueError("cannot evaluate on an empty mask")
    return float(np.mean(hard == labels))


def evaluate(
    model: GprModel,
    dataset: Dataset,
    mask: np.ndarray | None = None,
    op: PropagationOperator | None = None,
) -> float:
    """Argmax accuracy over masked (or all) nodes; ties go to the lowest class."""
    return prediction_accuracy(predict(model, dataset, op), dataset.labels, mask)


def gamma_grad_from_dz(cache: HopCache, dZ: np.ndarray) -> np.ndarray:
    """∇_γ of any loss given ∂L/∂Z: component k is ⟨H^(k), ∂L/∂Z⟩."""
    if cache.hops is None:
        raise StaleCacheError("cache has no materialized hops")
    return np.tensordot(cache.hops, dZ, axes=([1, 2], [0, 1]))


def affine_grad_from_dz(
    s_b: np.ndarray, t_o: np.ndarray, dZ: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(∂L/∂scale, ∂L/∂shift) given ∂L/∂Z, for Z = scale⊙S_B + t_o·shiftᵀ."""
    return (s_b * dZ).sum(axis=0), t_o @ dZ


def backward_ce(
    model: GprModel,
    dataset: Dataset,
    cache: HopCache,
    mask: np.ndarray,
    op: PropagationOperator,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over masked nodes and its parameter gradients.

    Returns the pure CE loss (no regularization) and gradients for W1, b1,
    scale, shift, gamma, W_cls, b_cls. Raises StaleCacheError if the cache
    was built under different featurizer parameters.
    """
    if not cache.is_fresh(model, dataset.graph):
        raise StaleCacheError("hop cache is stale for the current parameters")
    hops = cache.materialize(model.scale, model.shift)
    Z = np.tensordot(model.gamma, hops, axes=1)
    logits = Z @ model.W_cls + model.b_cls[None, :]
    probs = softmax(logits)

    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("empty training mask")
    m = rows.size
    labels = dataset.labels[rows]
    # Stable log-softmax just on the masked rows.
    shifted = logits[rows] - logits[rows].max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(m), labels].mean())

    dlogits = np.zeros_like(logits)
    dlogits[rows] = probs[rows]
    dlogits[rows, labels] -= 1.0
    dlogits[rows] /= m

    grad_W_cls = Z.T @ dlogits
    grad_b_cls = dlogits.sum(axis=0)
    dZ = dlogits @ model.W_cls.T

    grad_gamma = np.tensordot(hops, dZ, axes=([1, 2], [0, 1]))

    # ∂L/∂H^(0) via Horner: G = Σ_k γ_k (Ãᵀ)^k dZ.
    k = model.num_hops
    G = model.gamma[k] * dZ
    for step in range(k - 1, -1, -1):
        G = op.apply(G, transpose=True) + model.gamma[step] * dZ

    grad_scale = (cache.xhat * G).sum(axis=0)
    grad_shift = G.sum(axis=0)
    d_xhat = G * model.scale[None, :]

    if model.freeze_stats:
        d_pre = d_xhat / cache.used_std[None, :]
    else:
        mean_d = d_xhat.mean(axis=0)
        mean_dx = (d_xhat * cache.xhat).mean(axis=0)
        d_pre = (
            d_xhat - mean_d[None, :] - cache.xhat * mean_dx[None, :]
        ) / cache.used_std[None, :]

    grad_W1 = dataset.features.T @ d_pre
    grad_b1 = d_pre.sum(axis=0)

    grads = {
        "W1": grad_W1,
        "b1": grad_b1,
        "scale": grad_scale,
        "shift": grad_shift,
        "gamma": grad_gamma,
        "W_cls": grad_W_cls,
        "b_cls": grad_b_cls,
    }
    return loss, grads


def _checkpoint_shapes(dims: tuple[int, int, int, int]) -> list[tuple]:
    d, h, c, k = dims
    return [
        (d, h),  # W1
        (h,),  # b1
        (h,),  # scale
        (h,),  # shift
        (h,),  # running_mean
        (h,),  # running_var
        (k + 1,),  # gamma
        (h, c),  # W_cls
        (c,),  # b_cls
    ]


def save_checkpoint(model: GprModel, path) -> None:
    write_checkpoint_arrays(path, model.dims, model.arrays())


def load_checkpoint(path) -> GprModel:
    dims, arrays = read_checkpoint_arrays(path, _checkpoint_shapes)
    return GprModel(*(a.astype(np.float64) for a in arrays))
