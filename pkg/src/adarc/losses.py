"""Surrogate losses over representations and soft predictions.

The prediction-informed clustering (PIC) loss is the ratio
σ²_intra/σ² of soft-prediction-weighted intra-class variance to total
variance; the decomposition σ² = σ²_intra + σ²_inter holds exactly. It is
invariant to scaling and translation of the representations, so it cannot
be gamed by shrinking or shifting them.

All gradients treat the soft prediction Ŷ as a constant (no gradient flows
through the prediction branch). For the PIC loss this constant-centroid
gradient equals the full gradient: the centroid paths vanish identically,
which is exactly what the finite-difference oracle tests certify.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    GprModel,
    HopCache,
    SoftPrediction,
    aggregate,
    classify,
    gamma_grad_from_dz,
    softmax,
)

__all__ = [
    "LOSS_KINDS",
    "PicBreakdown",
    "DegenerateRepresentationError",
    "pic_loss",
    "pic_grad_z",
    "pic_grad_logits",
    "diff_loss",
    "diff_grad_z",
    "entropy_from_logits",
    "entropy_grad_logits",
    "pseudo_from_logits",
    "pseudo_grad_logits",
    "loss_and_grad_z",
    "surrogate_loss_and_grad_gamma",
]

LOSS_KINDS = ("pic", "entropy", "pseudo", "diff")


class DegenerateRepresentationError(ValueError):
    """Total variance too small for variance-ratio losses."""


@dataclass(frozen=True)
class PicBreakdown:
    """PIC loss value with its variance decomposition."""

    loss: float
    sigma_intra_sq: float
    sigma_inter_sq: float
    sigma_sq: float
    centroids: np.ndarray  # C×H; rows of skipped (empty) classes are zero
    global_centroid: np.ndarray  # H
    class_weights: np.ndarray  # C, Σ_i Ŷ_ic


def _as_probs(prediction: SoftPrediction | np.ndarray) -> np.ndarray:
    return prediction.probs if isinstance(prediction, SoftPrediction) else prediction


def _variance_terms(Z: np.ndarray, probs: np.ndarray) -> PicBreakdown:
    n, h = Z.shape
    weights = probs.sum(axis=0)  # C
    occupied = weights > 0.0
    centroids = np.zeros((probs.shape[1], h))
    if occupied.any():
        centroids[occupied] = (probs.T[occupied] @ Z) / weights[occupied, None]
    global_centroid = Z.mean(axis=0)

    diff_global = Z - global_centroid[None, :]
    sigma_sq = float((diff_global * diff_global).sum())

    # Direct difference forms: numerically stable under translation, and
    # arithmetically independent of each other so the decomposition identity
    # σ² = σ²_intra + σ²_inter is a genuine check rather than a tautology.
    sigma_intra_sq = 0.0
    sigma_inter_sq = 0.0
    for c in np.flatnonzero(occupied):
        diff_c = Z - centroids[c][None, :]
        sigma_intra_sq += float(probs[:, c] @ (diff_c * diff_c).sum(axis=1))
        cent_diff = centroids[c] - global_centroid
        sigma_inter_sq += float(weights[c] * (cent_diff @ cent_diff))

    eps = 1e-12 * n * h
    if sigma_sq < eps:
        raise DegenerateRepresentationError(
            f"total variance {sigma_sq:.3e} below degeneracy threshold {eps:.3e}"
        )
    return PicBreakdown(
        # The ratio is clamped to its mathematical range to absorb last-ulp
        # rounding; the sigma fields stay as computed.
        loss=min(max(sigma_intra_sq / sigma_sq, 0.0), 1.0),
        sigma_intra_sq=sigma_intra_sq,
        sigma_inter_sq=sigma_inter_sq,
        sigma_sq=sigma_sq,
        centroids=centroids,
        global_centroid=global_centroid,
        class_weights=weights,
    )


def pic_loss(Z: np.ndarray, prediction: SoftPrediction | np.ndarray) -> PicBreakdown:
    """σ²_intra/σ² with the full variance breakdown.

    Classes with zero prediction mass are skipped (they contribute nothing
    to either variance). Requires rows of ``prediction`` to sum to 1.
    """
    return _variance_terms(np.asarray(Z, dtype=np.float64), _as_probs(prediction))


def pic_grad_z(Z: np.ndarray, prediction: SoftPrediction | np.ndarray) -> np.ndarray:
    """Analytic ∂L_PIC/∂Z (Ŷ constant; centroid paths vanish identically)."""
    Z = np.asarray(Z, dtype=np.float64)
    probs = _as_probs(prediction)
    terms = _variance_terms(Z, probs)
    # ∂σ²_intra/∂z_i = 2 Σ_c Ŷ_ic (z_i − μ_c) = 2(z_i·Σ_cŶ_ic − Σ_c Ŷ_ic μ_c)
    intra_part = Z * probs.sum(axis=1)[:, None] - probs @ terms.centroids
    total_part = Z - terms.global_centroid[None, :]
    return (2.0 / terms.sigma_sq) * (intra_part - terms.loss * total_part)


def pic_grad_logits(Z: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """∂L_PIC/∂logits for Ŷ = softmax(logits), with Z held fixed.

    The prediction-side gradient: ∂L/∂Ŷ_ic = ‖z_i − μ_c‖²/σ² (the centroid
    paths vanish), chained through the softmax Jacobian. Its Frobenius norm
    is bounded by 2σ²_intra/σ² ≤ 2: with d_ic = ‖z_i − μ_c‖²/σ² each row
    satisfies ‖g_i‖₂ ≤ Σ_c Ŷ_ic|d_ic − d̄_i| ≤ 2d̄_i, and Σ_i d̄_i is
    exactly σ²_intra/σ².
    """
    Z = np.asarray(Z, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    terms = _variance_terms(Z, probs)
    row_sq = (Z * Z).sum(axis=1)
    cent_sq = (terms.centroids * terms.centroids).sum(axis=1)
    d = row_sq[:, None] - 2.0 * (Z @ terms.centroids.T) + cent_sq[None, :]
    np.maximum(d, 0.0, out=d)
    d /= terms.sigma_sq
    d_bar = (probs * d).sum(axis=1, keepdims=True)
    return probs * (d - d_bar)


def diff_loss(Z: np.ndarray, prediction: SoftPrediction | np.ndarray) -> float:
    """Difference-form objective σ²_intra − σ²_inter (unbounded ablation)."""
    terms = _variance_terms(np.asarray(Z, dtype=np.float64), _as_probs(prediction))
    return terms.sigma_intra_sq - terms.sigma_inter_sq


def diff_grad_z(Z: np.ndarray, prediction: SoftPrediction | np.ndarray) -> np.ndarray:
    """Analytic ∂(σ²_intra − σ²_inter)/∂Z with Ŷ constant."""
    Z = np.asarray(Z, dtype=np.float64)
    probs = _as_probs(prediction)
    terms = _variance_terms(Z, probs)
    row_mass = probs.sum(axis=1)[:, None]
    weighted_cent = probs @ terms.centroids
    # ∂σ²_intra/∂z_i = 2 Σ_c Ŷ_ic (z_i − μ_c);
    # ∂σ²_inter/∂z_i = 2 Σ_c Ŷ_ic (μ_c − μ_*) through the centroid paths.
    d_intra = 2.0 * (Z * row_mass - weighted_cent)
    d_inter = 2.0 * (weighted_cent - row_mass * terms.global_centroid[None, :])
    return d_intra - d_inter


def entropy_from_logits(logits: np.ndarray) -> float:
    """Mean per-row softmax entropy."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    return float(-(probs * log_probs).sum(axis=1).mean())


def entropy_grad_logits(logits: np.ndarray) -> np.ndarray:
    """∂(mean entropy)/∂logits = −P ⊙ (log P + H_row) / N."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    row_entropy = -(probs * log_probs).sum(axis=1, keepdims=True)
    return -probs * (log_probs + row_entropy) / n


def pseudo_from_logits(
    logits: np.ndarray, prediction: SoftPrediction | np.ndarray
) -> float:
    """Mean cross-entropy against argmax(Ŷ) pseudo-labels (no threshold)."""
    hard = _as_probs(prediction).argmax(axis=1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(logits.shape[0]), hard].mean())


def pseudo_grad_logits(
    logits: np.ndarray, prediction: SoftPrediction | np.ndarray
) -> np.ndarray:
    """∂(pseudo-label CE)/∂logits = (P − onehot(argmax Ŷ)) / N."""
    hard = _as_probs(prediction).argmax(axis=1)
    n = logits.shape[0]
    grad = softmax(logits)
    grad[np.arange(n), hard] -= 1.0
    return grad / n


def loss_and_grad_z(
    kind: str,
    Z: np.ndarray,
    prediction: SoftPrediction | np.ndarray,
    model: GprModel,
) -> tuple[float, np.ndarray]:
    """Loss value and ∂L/∂Z for any surrogate kind.

    ``pic`` and ``diff`` act on Z directly; ``entropy`` and ``pseudo`` act
    on classifier logits, chained back through the linear classifier.
    """
    if kind == "pic":
        return pic_loss(Z, prediction).loss, pic_grad_z(Z, prediction)
    if kind == "diff":
        return diff_loss(Z, prediction), diff_grad_z(Z, prediction)
    if kind in ("entropy", "pseudo"):
        logits = Z @ model.W_cls + model.b_cls[None, :]
        if kind == "entropy":
            loss = entropy_from_logits(logits)
            dlogits = entropy_grad_logits(logits)
        else:
            loss = pseudo_from_logits(logits, prediction)
            dlogits = pseudo_grad_logits(logits, prediction)
        return loss, dlogits @ model.W_cls.T
    raise ValueError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")


def surrogate_loss_and_grad_gamma(
    kind: str,
    model: GprModel,
    cache: HopCache,
    prediction: SoftPrediction | np.ndarray,
) -> tuple[float, np.ndarray]:
    """Loss at Z = aggregate(cache, γ) and its analytic γ-gradient."""
    cache.materialize(model.scale, model.shift)
    Z = aggregate(cache, model.gamma)
    loss, dZ = loss_and_grad_z(kind, Z, prediction, model)
    return loss, gamma_grad_from_dz(cache, dZ)
