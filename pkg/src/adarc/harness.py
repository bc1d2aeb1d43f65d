"""Experiment harness: scenario presets, sweeps, gap decomposition, benchmarks.

A scenario ties together CSBM generation, source pretraining, and one or
more adaptation methods evaluated on the target graph. Seeds are expanded
deterministically: scenario seed ``s`` draws the source graph with ``2s``,
the target graph with ``2s+1``, the train/val split with ``s+777``, and
model initialization with ``s+1``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import (
    BACKEND,
    csr_scaled_matmul_numba,
    csr_scaled_matmul_numpy,
)
from .adapt import AdaptConfig, adapt
from .csbm import (
    PRESET_D,
    PRESET_N,
    PRESETS,
    attach_split_masks,
    generate,
    preset_params,
)
from .graph import Dataset, PropagationOperator
from .losses import LOSS_KINDS, loss_and_grad_z
from .model import (
    GprModel,
    aggregate,
    classify,
    featurize_hops,
    gamma_grad_from_dz,
    init_model,
    prediction_accuracy,
    softmax,
)
from .pretrain import TrainConfig, pretrain_on
from .tta import BaseTtaKind, base_predict

__all__ = [
    "METHOD_NAMES",
    "SWEEP_AXES",
    "ScenarioSpec",
    "ExperimentReport",
    "GapDecomposition",
    "scenario_seeds",
    "build_scenario_datasets",
    "run_scenario",
    "sweep",
    "fit_linear_head",
    "decompose_gap",
    "bench",
]

METHOD_NAMES = ("erm", "tent", "t3a", "erm+adarc", "tent+adarc", "t3a+adarc")
SWEEP_AXES = ("shift_level", "lr_epochs", "hops_K", "loss_kind")
_DEGREE_PRESETS = ("high2low", "low2high")


@dataclass(frozen=True)
class ScenarioSpec:
    """A named source→target shift scenario."""

    preset: str
    attribute_shift: bool = False
    n: int = PRESET_N
    dim: int = PRESET_D
    source_h: float | None = None
    source_d: float | None = None

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(
                f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}"
            )

    @property
    def scenario_id(self) -> str:
        parts = [self.preset]
        if self.attribute_shift:
            parts.append("attr")
        if self.source_h is not None:
            parts.append(f"source_h={self.source_h:g}")
        if self.source_d is not None:
            parts.append(f"source_d={self.source_d:g}")
        return "+".join(parts)


@dataclass(frozen=True)
class ExperimentReport:
    """Per-seed accuracies for each method, with summary statistics."""

    scenario: str
    seeds: tuple[int, ...]
    methods: tuple[str, ...]
    per_seed: dict[str, tuple[float, ...]]
    mean: dict[str, float]
    sd: dict[str, float]
    config: dict
    wall_seconds: dict[str, float] = field(default_factory=dict)

    def as_dict(self, include_timing: bool = False) -> dict:
        out = {
            "scenario": self.scenario,
            "seeds": list(self.seeds),
            "methods": list(self.methods),
            "per_seed": {m: list(v) for m, v in self.per_seed.items()},
            "mean": dict(self.mean),
            "sd": dict(self.sd),
            "config": self.config,
        }
        if include_timing:
            out["wall_seconds"] = dict(self.wall_seconds)
        return out


def scenario_seeds(seed: int) -> dict[str, int]:
    """Derived seeds for one scenario run."""
    return {
        "source_graph": 2 * seed,
        "target_graph": 2 * seed + 1,
        "split": seed + 777,
        "model": seed + 1,
    }


def _parse_method(name: str) -> tuple[str, bool]:
    if name not in METHOD_NAMES:
        raise ValueError(f"unknown method {name!r}; choose from {METHOD_NAMES}")
    if name.endswith("+adarc"):
        return name[: -len("+adarc")], True
    return name, False


def build_scenario_datasets(
    spec: ScenarioSpec, seed: int
) -> tuple[Dataset, Dataset]:
    """(source with train/val masks, target) for one scenario seed."""
    derived = scenario_seeds(seed)
    source_params = preset_params(
        spec.preset,
        "source",
        seed=derived["source_graph"],
        attribute_shift=spec.attribute_shift,
        n=spec.n,
        dim=spec.dim,
        override_d=spec.source_d,
        override_h=spec.source_h,
    )
    target_params = preset_params(
        spec.preset,
        "target",
        seed=derived["target_graph"],
        attribute_shift=spec.attribute_shift,
        n=spec.n,
        dim=spec.dim,
    )
    if (
        spec.attribute_shift
        and source_params.avg_degree == target_params.avg_degree
        and source_params.homophily == target_params.homophily
    ):
        # Structure-equal scenario: the only moving factor is the attribute
        # shift, so hold the graph draw fixed (paired design). Source and
        # target then share adjacency, labels, and feature noise; the target
        # differs by exactly the attribute translation.
        target_params = replace(target_params, seed=source_params.seed)
    source = attach_split_masks(generate(source_params), seed=derived["split"])
    target = generate(target_params)
    return source, target


def _config_echo(
    spec: ScenarioSpec,
    methods: tuple[str, ...],
    seeds: tuple[int, ...],
    train_config: TrainConfig,
    adapt_config: AdaptConfig,
) -> dict:
    from dataclasses import asdict

    return {
        "scenario": asdict(spec),
        "methods": list(methods),
        "seeds": list(seeds),
        "train": asdict(train_config),
        "adapt": asdict(adapt_config),
    }


def run_scenario(
    spec: ScenarioSpec | str,
    methods: tuple[str, ...] = ("erm", "erm+adarc"),
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    train_config: TrainConfig | None = None,
    adapt_config: AdaptConfig | None = None,
    scenario_id: str | None = None,
) -> ExperimentReport:
    """Generate, pretrain, and evaluate every method on the target graph.

    Target accuracy is measured over all target nodes. One pretrained model
    per seed is shared by all methods.
    """
    if isinstance(spec, str):
        spec = ScenarioSpec(preset=spec)
    if not methods:
        raise ValueError("methods must be nonempty")
    if not seeds:
        raise ValueError("seeds must be nonempty")
    for name in methods:
        _parse_method(name)
    train_config = train_config or TrainConfig()
    adapt_config = adapt_config or AdaptConfig()

    accs: dict[str, list[float]] = {m: [] for m in methods}
    wall: dict[str, float] = {"pretrain": 0.0}
    wall.update({m: 0.0 for m in methods})

    for seed in seeds:
        source, target = build_scenario_datasets(spec, seed)
        seed_train = replace(train_config, seed=scenario_seeds(seed)["model"])

        t0 = time.perf_counter()
        model, _history = pretrain_on(source, seed_train)
        wall["pretrain"] += time.perf_counter() - t0

        op = PropagationOperator(target.graph, seed_train.prop_mode)
        plain_model = None
        plain_cache = None
        for name in methods:
            base, use_adarc = _parse_method(name)
            kind = BaseTtaKind(variant=base)
            t0 = time.perf_counter()
            if use_adarc:
                result = adapt(
                    model, target, op, replace(adapt_config, base=kind)
                )
                prediction = result.prediction
            else:
                if plain_cache is None:
                    plain_model = model.copy()
                    plain_cache = featurize_hops(plain_model, target, op)
                prediction = base_predict(kind, plain_model, plain_cache, target)
            wall[name] += time.perf_counter() - t0
            accs[name].append(prediction_accuracy(prediction, target.labels))

    per_seed = {m: tuple(v) for m, v in accs.items()}
    mean = {m: float(np.mean(v)) for m, v in per_seed.items()}
    sd = {
        m: (float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
        for m, v in per_seed.items()
    }
    return ExperimentReport(
        scenario=scenario_id or spec.scenario_id,
        seeds=tuple(seeds),
        methods=tuple(methods),
        per_seed=per_seed,
        mean=mean,
        sd=sd,
        config=_config_echo(spec, tuple(methods), tuple(seeds), train_config, adapt_config),
        wall_seconds=wall,
    )


def _apply_axis(
    axis: str,
    value,
    spec: ScenarioSpec,
    train_config: TrainConfig,
    adapt_config: AdaptConfig,
) -> tuple[ScenarioSpec, TrainConfig, AdaptConfig, str]:
    if axis == "shift_level":
        level = float(value)
        if spec.preset in _DEGREE_PRESETS:
            return replace(spec, source_d=level), train_config, adapt_config, f"source_d={level:g}"
        return replace(spec, source_h=level), train_config, adapt_config, f"source_h={level:g}"
    if axis == "lr_epochs":
        lr, epochs = value
        new = replace(adapt_config, learning_rate=float(lr), epochs=int(epochs))
        return spec, train_config, new, f"lr={float(lr):g},T={int(epochs)}"
    if axis == "hops_K":
        k = int(value)
        return spec, replace(train_config, num_hops=k), adapt_config, f"K={k}"
    if axis == "loss_kind":
        kind = str(value)
        if kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {kind!r}")
        return spec, train_config, replace(adapt_config, loss=kind), f"loss={kind}"
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def sweep(
    axis: str,
    grid,
    spec: ScenarioSpec | str,
    methods: tuple[str, ...] = ("erm", "erm+adarc"),
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    train_config: TrainConfig | None = None,
    adapt_config: AdaptConfig | None = None,
) -> list[ExperimentReport]:
    """One ``run_scenario`` report per grid value along the chosen axis.

    ``shift_level`` varies the source homophily (for homophily presets) or
    source degree (for degree presets) with the target fixed; ``lr_epochs``
    takes (learning-rate, epochs) pairs; ``hops_K`` re-pretrains with a
    different hop count; ``loss_kind`` switches the surrogate.
    """
    if isinstance(spec, str):
        spec = ScenarioSpec(preset=spec)
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be nonempty")
    train_config = train_config or TrainConfig()
    adapt_config = adapt_config or AdaptConfig()
    reports = []
    for value in grid:
        spec_v, train_v, adapt_v, tag = _apply_axis(
            axis, value, spec, train_config, adapt_config
        )
        reports.append(
            run_scenario(
                spec_v,
                methods,
                seeds,
                train_v,
                adapt_v,
                scenario_id=f"{spec.scenario_id}[{tag}]",
            )
        )
    return reports


@dataclass(frozen=True)
class GapDecomposition:
    """Source→target accuracy gap split at the best frozen-featurizer head."""

    delta_f: float
    delta_g: float
    acc_source: float
    sup_g_acc: float
    acc_target: float
    fit_iterations: int
    fit_grad_norm: float
    fit_converged: bool

    def as_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


def fit_linear_head(
    Z: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    learning_rate: float = 1.0,
    max_iterations: int = 5000,
    tolerance: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Multinomial logistic regression on frozen representations.

    Plain gradient descent on the mean cross-entropy, run until the gradient
    norm falls below ``tolerance`` or ``max_iterations`` is reached. A step
    that increases the objective is rejected and the rate halved.
    Returns (W, b, iterations_used, final_gradient_norm).
    """
    n, width = Z.shape
    W = np.zeros((width, num_classes))
    b = np.zeros(num_classes)
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), labels] = 1.0

    def ce_and_grad(W, b):
        logits = Z @ W + b[None, :]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        ce = float(-np.mean((shifted - log_norm)[np.arange(n), labels]))
        probs = softmax(logits)
        g = (probs - onehot) / n
        return ce, Z.T @ g, g.sum(axis=0)

    lr = learning_rate
    ce, dW, db = ce_and_grad(W, b)
    grad_norm = float(np.sqrt((dW**2).sum() + (db**2).sum()))
    iterations = 0
    for _ in range(max_iterations):
        if grad_norm < tolerance:
            break
        new_W = W - lr * dW
        new_b = b - lr * db
        new_ce, new_dW, new_db = ce_and_grad(new_W, new_b)
        iterations += 1
        if new_ce > ce:
            lr *= 0.5
            continue
        W, b, ce, dW, db = new_W, new_b, new_ce, new_dW, new_db
        grad_norm = float(np.sqrt((dW**2).sum() + (db**2).sum()))
    return W, b, iterations, grad_norm


def decompose_gap(
    model: GprModel,
    source: Dataset,
    target: Dataset,
    prop_mode: str = "sym",
) -> GapDecomposition:
    """Split the source→target accuracy drop into featurizer and head parts.

    All accuracies are measured over every node of their graph — the setting
    is transductive, and keeping both sides on the same footing stops the
    train/test composition of the source split from leaking into the split.
    ``sup_g_acc`` refits a linear head on the frozen target representations
    with target labels — an evaluation-only diagnostic giving the best the
    featurizer allows. Δ_f = acc_source − sup_g_acc and
    Δ_g = sup_g_acc − acc_target.
    """
    source_model = model.copy()
    source_op = PropagationOperator(source.graph, prop_mode)
    source_cache = featurize_hops(source_model, source, source_op)
    _, source_pred = classify(aggregate(source_cache, source_model.gamma), source_model)
    acc_source = prediction_accuracy(source_pred, source.labels)

    target_model = model.copy()
    target_op = PropagationOperator(target.graph, prop_mode)
    target_cache = featurize_hops(target_model, target, target_op)
    Z_t = aggregate(target_cache, target_model.gamma)
    _, target_pred = classify(Z_t, target_model)
    acc_target = prediction_accuracy(target_pred, target.labels)

    W, b, iterations, grad_norm = fit_linear_head(
        Z_t, target.labels, target.num_classes
    )
    refit_hard = np.argmax(Z_t @ W + b[None, :], axis=1)
    sup_g_acc = float(np.mean(refit_hard == target.labels))

    return GapDecomposition(
        delta_f=acc_source - sup_g_acc,
        delta_g=sup_g_acc - acc_target,
        acc_source=acc_source,
        sup_g_acc=sup_g_acc,
        acc_target=acc_target,
        fit_iterations=iterations,
        fit_grad_norm=grad_norm,
        fit_converged=bool(grad_norm < 1e-6),
    )


def _median_seconds(fn, repetitions: int) -> float:
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench(
    spec: ScenarioSpec | str = "homo2hetero",
    seed: int = 0,
    repetitions: int = 20,
    train_config: TrainConfig | None = None,
) -> dict:
    """Median wall-clock timings for the adaptation pipeline stages.

    Measures initial inference (cold cache build + classify), the four
    per-epoch stages (forward, loss, backward, update), the cached-versus-
    cold forward comparison, and the CSR kernel backends.
    """
    if isinstance(spec, str):
        spec = ScenarioSpec(preset=spec)
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    train_config = train_config or TrainConfig()
    _, target = build_scenario_datasets(spec, seed)
    model = init_model(
        dim=target.num_features,
        hidden=train_config.hidden,
        num_classes=target.num_classes,
        num_hops=train_config.num_hops,
        seed=scenario_seeds(seed)["model"],
        alpha=train_config.gamma_alpha,
    )
    op = PropagationOperator(target.graph, train_config.prop_mode)

    def initial_inference():
        m = model.copy()
        cache = featurize_hops(m, target, op)
        classify(aggregate(cache, m.gamma), m)

    t_initial = _median_seconds(initial_inference, repetitions)

    work = model.copy()
    cache = featurize_hops(work, target, op)
    kind = BaseTtaKind(variant="erm")
    prediction = base_predict(kind, work, cache, target)
    Z = aggregate(cache, work.gamma)
    _, dZ = loss_and_grad_z("pic", Z, prediction, work)
    grad = gamma_grad_from_dz(cache, dZ)

    t_forward = _median_seconds(
        lambda: base_predict(kind, work, cache, target), repetitions
    )
    t_loss = _median_seconds(
        lambda: loss_and_grad_z("pic", Z, prediction, work), repetitions
    )
    t_backward = _median_seconds(
        lambda: gamma_grad_from_dz(cache, dZ), repetitions
    )

    def update():
        work.gamma[:] = work.gamma - 0.0 * grad

    t_update = _median_seconds(update, repetitions)

    def forward_cold():
        m = model.copy()
        c = featurize_hops(m, target, op)
        classify(aggregate(c, m.gamma), m)

    def forward_cached():
        base_predict(kind, work, cache, target)

    t_cold = _median_seconds(forward_cold, repetitions)
    t_cached = _median_seconds(forward_cached, repetitions)

    dense = np.ascontiguousarray(cache.basis[0])
    graph = target.graph
    ones = np.ones(graph.num_nodes)
    kernel_times = {}
    kernel_times["numpy"] = _median_seconds(
        lambda: csr_scaled_matmul_numpy(
            graph.row_offsets, graph.neighbor_ids, ones, ones, dense
        ),
        repetitions,
    )
    if csr_scaled_matmul_numba is not None:
        csr_scaled_matmul_numba(
            graph.row_offsets, graph.neighbor_ids, ones, ones, dense
        )  # compile outside the timed region
        kernel_times["numba"] = _median_seconds(
            lambda: csr_scaled_matmul_numba(
                graph.row_offsets, graph.neighbor_ids, ones, ones, dense
            ),
            repetitions,
        )

    stages = {
        "forward": t_forward,
        "loss": t_loss,
        "backward": t_backward,
        "update": t_update,
    }
    per_epoch = float(sum(stages.values()))
    return {
        "scenario": spec.scenario_id,
        "seed": seed,
        "repetitions": repetitions,
        "backend": BACKEND,
        "initial_inference_seconds": t_initial,
        "per_epoch_seconds": per_epoch,
        "per_epoch_over_initial": per_epoch / t_initial if t_initial > 0 else 0.0,
        "stage_seconds": stages,
        "cheapest_stage": min(stages, key=stages.get),
        "forward_cold_seconds": t_cold,
        "forward_cached_seconds": t_cached,
        "cold_over_cached": t_cold / t_cached if t_cached > 0 else 0.0,
        "kernel_seconds": kernel_times,
    }
