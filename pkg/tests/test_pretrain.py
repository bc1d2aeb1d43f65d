"""Source training: improvement, early stopping, gauge, determinism."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from adarc import (
    PropagationOperator,
    TrainConfig,
    TrainDivergedError,
    evaluate,
    init_model,
    predict,
    pretrain_on,
    train_source,
)
from adarc.pretrain import gauge_normalize

from conftest import TINY_TRAIN


def ppr_norm(alpha: float, num_hops: int) -> float:
    gamma = alpha * (1 - alpha) ** np.arange(num_hops + 1)
    return float(np.linalg.norm(gamma))


def test_training_beats_initialization(tiny_source, tiny_model):
    fresh = init_model(
        dim=tiny_source.num_features,
        hidden=TINY_TRAIN.hidden,
        num_classes=tiny_source.num_classes,
        num_hops=TINY_TRAIN.num_hops,
        seed=TINY_TRAIN.seed,
    )
    test_mask = ~(tiny_source.masks["train"] | tiny_source.masks["val"])
    before = evaluate(fresh, tiny_source, test_mask)
    after = evaluate(tiny_model, tiny_source, test_mask)
    assert after > max(before, 0.75), (before, after)


def test_history_shape_and_objective_monotone(tiny_source):
    config = replace(TINY_TRAIN, epochs=40, patience=40)
    _, history = pretrain_on(tiny_source, config)
    assert history, "history must be nonempty"
    epochs, objectives, val_accs = zip(*history)
    assert list(epochs) == list(range(len(history)))
    diffs = np.diff(objectives)
    assert np.all(diffs <= 1e-12), "halve-on-increase keeps the objective non-increasing"
    assert all(0.0 <= v <= 1.0 for v in val_accs)


def test_early_stopping_restores_best_val(tiny_source):
    config = replace(TINY_TRAIN, epochs=400, patience=10)
    model, history = pretrain_on(tiny_source, config)
    assert len(history) < 400, "patience should truncate the run"
    val = evaluate(model, tiny_source, tiny_source.masks["val"])
    best_in_history = max(v for _, _, v in history)
    assert val == pytest.approx(best_in_history, abs=1e-12)


def test_gauge_normalization_preserves_predictions(tiny_source):
    config = replace(TINY_TRAIN, gauge_normalize=False)
    raw, _ = pretrain_on(tiny_source, config)
    expected_norm = ppr_norm(config.gamma_alpha, config.num_hops)
    assert np.linalg.norm(raw.gamma) != pytest.approx(expected_norm, rel=1e-6), (
        "training should drift the gamma norm; otherwise this test is vacuous"
    )
    before = predict(raw, tiny_source, PropagationOperator(tiny_source.graph))
    gauged = raw.copy()
    gauge_normalize(gauged, expected_norm)
    assert np.linalg.norm(gauged.gamma) == pytest.approx(expected_norm, rel=1e-12)
    after = predict(gauged, tiny_source, PropagationOperator(tiny_source.graph))
    np.testing.assert_allclose(after.probs, before.probs, atol=1e-10)


def test_pretrain_applies_gauge_by_default(tiny_model):
    expected_norm = ppr_norm(TINY_TRAIN.gamma_alpha, TINY_TRAIN.num_hops)
    assert np.linalg.norm(tiny_model.gamma) == pytest.approx(expected_norm, rel=1e-12)


def test_pretraining_is_deterministic(tiny_source):
    config = replace(TINY_TRAIN, epochs=30, patience=30)
    a, hist_a = pretrain_on(tiny_source, config)
    b, hist_b = pretrain_on(tiny_source, config)
    assert hist_a == hist_b
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)


def test_train_source_requires_masks(tiny_target):
    model = init_model(
        dim=tiny_target.num_features,
        hidden=8,
        num_classes=2,
        num_hops=3,
        seed=0,
    )
    with pytest.raises((ValueError, KeyError)):
        train_source(model, tiny_target, replace(TINY_TRAIN, epochs=2))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_diverges_at_absurd_learning_rate(tiny_source):
    # large enough that the squared-parameter regularizer overflows before
    # the halve-on-increase safeguard can pull the step size back down
    config = replace(TINY_TRAIN, learning_rate=1e160, epochs=30, patience=30)
    with pytest.raises(TrainDivergedError):
        pretrain_on(tiny_source, config)


def test_moderately_large_rate_is_rescued_by_halving(tiny_source):
    # a merely-too-big rate must not diverge: rejected steps halve the rate
    config = replace(TINY_TRAIN, learning_rate=20.0, epochs=60, patience=10)
    model, history = pretrain_on(tiny_source, config)
    objectives = [obj for _, obj, _ in history]
    assert np.all(np.diff(objectives) <= 1e-12)
    assert np.all(np.isfinite(objectives))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(patience=-1)
    with pytest.raises(ValueError):
        TrainConfig(weight_decay=-1e-4)