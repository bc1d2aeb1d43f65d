"""Source-graph training: full-batch gradient descent with early stopping.

Plain gradient descent (no momentum) on mean cross-entropy plus L2 weight
decay on W1 and W_cls only. A halve-on-increase safeguard rejects any step
that raises the training objective and retries at half the learning rate,
so the recorded loss history is non-increasing. Early stopping restores
the best-validation-accuracy checkpoint.

After restoring, the hop-weight vector is gauge-normalized: logits are
invariant under γ → γ/c, W_cls → c·W_cls, and cross-entropy training
drifts γ to large norms (the bilinear dynamics approximately conserve
‖W_cls‖² − ‖γ‖²). Rescaling γ back to its initialization norm — an exact
function-preserving reparameterization — keeps later γ-space adaptation
steps at a predictable scale instead of one dependent on how long
pretraining happened to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Dataset, PropagationOperator
from .model import GprModel, backward_ce, featurize_hops, init_model

__all__ = ["TrainConfig", "TrainDivergedError", "train_source", "pretrain_on"]

#: Parameters receiving L2 weight decay.
_DECAYED = ("W1", "W_cls")
_PARAM_NAMES = ("W1", "b1", "scale", "shift", "gamma", "W_cls", "b_cls")


@dataclass(frozen=True)
class TrainConfig:
    """Declared training defaults; every field is overridable via config."""

    learning_rate: float = 0.05
    epochs: int = 500
    weight_decay: float = 5e-4
    patience: int = 50
    seed: int = 0
    hidden: int = 32
    num_hops: int = 9
    gamma_alpha: float = 0.1
    prop_mode: str = "sym"
    gauge_normalize: bool = True

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


class TrainDivergedError(RuntimeError):
    """Training loss became non-finite."""


def _objective(ce: float, model: GprModel, weight_decay: float) -> float:
    reg = sum(float((getattr(model, n) ** 2).sum()) for n in _DECAYED)
    return ce + 0.5 * weight_decay * reg


def _val_accuracy(probs_hard: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("empty validation mask")
    return float(np.mean(probs_hard[rows] == labels[rows]))


def gauge_normalize(model: GprModel, target_norm: float) -> None:
    """Rescale (γ, W_cls) so ‖γ‖ = target_norm; logits are unchanged."""
    current = float(np.linalg.norm(model.gamma))
    if current == 0.0 or target_norm <= 0.0:
        return
    factor = current / target_norm
    model.gamma /= factor
    model.W_cls *= factor


def train_source(
    model: GprModel,
    dataset: Dataset,
    config: TrainConfig,
    op: PropagationOperator | None = None,
) -> tuple[GprModel, list[tuple[int, float, float]]]:
    """Train in place; returns (model, history of (epoch, train_loss, val_acc)).

    Requires ``train`` and ``val`` masks on the dataset. Deterministic for
    a fixed config and dataset.
    """
    if "train" not in dataset.masks or "val" not in dataset.masks:
        raise ValueError("train_source requires 'train' and 'val' masks")
    if op is None:
        op = PropagationOperator(dataset.graph, config.prop_mode)
    train_mask = dataset.masks["train"]
    val_mask = dataset.masks["val"]
    labels = dataset.labels

    gamma_init_norm = float(np.linalg.norm(model.gamma))
    lr = config.learning_rate
    history: list[tuple[int, float, float]] = []
    best_val = -1.0
    best_state: list[np.ndarray] | None = None
    epochs_since_best = 0
    prev_objective = np.inf
    prev_state: list[np.ndarray] | None = None

    for epoch in range(config.epochs):
        cache = featurize_hops(model, dataset, op)
        ce, grads = backward_ce(model, dataset, cache, train_mask, op)
        objective = _objective(ce, model, config.weight_decay)
        if not np.isfinite(objective):
            raise TrainDivergedError(
                f"training objective became non-finite at epoch {epoch}"
            )

        if objective > prev_objective and prev_state is not None:
            # Reject the step that produced this higher objective; halve the
            # rate and continue from the previous parameters.
            for name, value in zip(_PARAM_NAMES, prev_state):
                setattr(model, name, value.copy())
            lr *= 0.5
            history.append((epoch, prev_objective, history[-1][2]))
            epochs_since_best += 1
            if epochs_since_best > config.patience:
                break
            continue

        # Accepted: record metrics at the current parameters, then step.
        hard = _predict_hard(model, cache)
        val_acc = _val_accuracy(hard, labels, val_mask)
        history.append((epoch, objective, val_acc))
        if val_acc > best_val:
            best_val = val_acc
            best_state = [getattr(model, n).copy() for n in _PARAM_NAMES]
            epochs_since_best = 0
        else:
            epochs_since_best += 1

        prev_state = [getattr(model, n).copy() for n in _PARAM_NAMES]
        prev_objective = objective

        for name in _PARAM_NAMES:
            grad = grads[name]
            if name in _DECAYED:
                grad = grad + config.weight_decay * getattr(model, name)
            setattr(model, name, getattr(model, name) - lr * grad)

        if epochs_since_best > config.patience:
            break

    if best_state is not None:
        for name, value in zip(_PARAM_NAMES, best_state):
            setattr(model, name, value.copy())
    if config.gauge_normalize:
        gauge_normalize(model, gamma_init_norm)
    # Refresh stored statistics for the restored parameters.
    featurize_hops(model, dataset, op)
    return model, history


def _predict_hard(model: GprModel, cache) -> np.ndarray:
    from .model import aggregate, classify

    _, prediction = classify(aggregate(cache, model.gamma), model)
    return prediction.hard


def pretrain_on(
    dataset: Dataset, config: TrainConfig
) -> tuple[GprModel, list[tuple[int, float, float]]]:
    """Initialize a model for ``dataset`` and train it."""
    model = init_model(
        dim=dataset.num_features,
        hidden=config.hidden,
        num_classes=dataset.num_classes,
        num_hops=config.num_hops,
        seed=config.seed,
        alpha=config.gamma_alpha,
    )
    return train_source(model, dataset, config)
