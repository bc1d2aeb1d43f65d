"""Contextual stochastic block model generation and shift injection.

Two balanced classes of N/2 nodes each; class ``+`` has feature center
``+mu + delta_mu``, class ``−`` has ``−mu + delta_mu`` (the attribute shift
translates both centers), features drawn from N(center, I). Same-class
pairs connect independently with probability p = 2dh/N, cross-class with
q = 2d(1−h)/N, so the expected average degree is d and the expected edge
homophily is h.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import Dataset, Graph, build_graph

__all__ = [
    "CsbmParams",
    "PRESETS",
    "edge_probs",
    "generate",
    "drop_homophilic_edges",
    "preset_params",
    "attach_split_masks",
]

#: Default desk-scale constants for the scenario presets.
PRESET_N = 5000
PRESET_D = 2000
#: Class-center entry magnitude for presets (‖mu‖ = 0.03·√D ≈ 1.342).
PRESET_MU_ENTRY = 0.03
#: Attribute-shift entry magnitude for presets (‖Δmu‖ = 0.02·√D ≈ 0.894).
PRESET_DELTA_MU_ENTRY = 0.02


@dataclass(frozen=True)
class CsbmParams:
    """Parameters of one CSBM draw."""

    n: int
    dim: int
    mu: np.ndarray
    delta_mu: np.ndarray
    avg_degree: float
    homophily: float
    seed: int

    def __post_init__(self) -> None:
        if self.n <= 0 or self.n % 2 != 0:
            raise ValueError(f"n must be positive and even, got {self.n}")
        if self.avg_degree < 0:
            raise ValueError("avg_degree must be >= 0")
        if not 0.0 <= self.homophily <= 1.0:
            raise ValueError("homophily must lie in [0, 1]")
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        dmu = np.asarray(self.delta_mu, dtype=np.float64).reshape(-1)
        if mu.shape[0] != self.dim or dmu.shape[0] != self.dim:
            raise ValueError("mu / delta_mu length must equal dim")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "delta_mu", dmu)
        edge_probs(self)  # validate feasibility eagerly


def edge_probs(params: CsbmParams) -> tuple[float, float]:
    """Within-class and cross-class edge probabilities (p, q).

    Inverts d = N(p+q)/2 and h = p/(p+q): p = 2dh/N, q = 2d(1−h)/N.
    """
    p = 2.0 * params.avg_degree * params.homophily / params.n
    q = 2.0 * params.avg_degree * (1.0 - params.homophily) / params.n
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError(
            f"infeasible edge probabilities p={p:.6g}, q={q:.6g} "
            f"(need both in [0, 1]; reduce avg_degree or increase n)"
        )
    return p, q


def _sample_within_pairs(rng: np.random.Generator, m: int, p: float) -> np.ndarray:
    """Uniformly sample Binomial(m·(m−1)/2, p) distinct index pairs within a block."""
    total = m * (m - 1) // 2
    count = int(rng.binomial(total, p)) if total > 0 and p > 0 else 0
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    flat = rng.choice(total, size=count, replace=False)
    # Decode flat index t into (i, j), i < j, under the ordering
    # t = i*m - i(i+1)/2 + (j - i - 1).
    i = (
        m
        - 2
        - np.floor(np.sqrt(4.0 * m * (m - 1) - 8.0 * flat - 7.0) / 2.0 - 0.5)
    ).astype(np.int64)
    # Float sqrt can land one row off; fix up exactly in integer arithmetic.
    base = i * m - i * (i + 1) // 2
    too_high = base > flat
    i[too_high] -= 1
    base = i * m - i * (i + 1) // 2
    too_low = flat - base >= (m - 1 - i)
    i[too_low] += 1
    base = i * m - i * (i + 1) // 2
    j = flat - base + i + 1
    return np.column_stack([i, j])


def _sample_cross_pairs(
    rng: np.random.Generator, m_a: int, m_b: int, q: float
) -> np.ndarray:
    """Uniformly sample Binomial(m_a·m_b, q) distinct cross-block pairs."""
    total = m_a * m_b
    count = int(rng.binomial(total, q)) if total > 0 and q > 0 else 0
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    flat = rng.choice(total, size=count, replace=False)
    return np.column_stack(np.divmod(flat, m_b))


def generate(params: CsbmParams) -> Dataset:
    """Draw one CSBM dataset; deterministic in ``params.seed``.

    The first N/2 block is class 0 and the rest class 1, then a seeded
    permutation relabels node ids so structure statistics are
    position-independent. Features are rounded through f32 so in-memory
    datasets match their on-disk representation bit-exactly.
    """
    p, q = edge_probs(params)
    rng = np.random.default_rng(params.seed)
    half = params.n // 2

    within_a = _sample_within_pairs(rng, half, p)
    within_b = _sample_within_pairs(rng, half, p) + half
    cross = _sample_cross_pairs(rng, half, half, q)
    cross[:, 1] += half
    block_edges = np.concatenate([within_a, within_b, cross], axis=0)

    block_labels = np.repeat(np.array([0, 1], dtype=np.int64), half)
    centers = np.where(
        block_labels[:, None] == 0, params.mu[None, :], -params.mu[None, :]
    )
    block_features = (
        centers + params.delta_mu[None, :] + rng.standard_normal((params.n, params.dim))
    )

    perm = rng.permutation(params.n)
    labels = np.empty(params.n, dtype=np.int64)
    labels[perm] = block_labels
    features = np.empty_like(block_features)
    features[perm] = block_features
    edges = perm[block_edges] if block_edges.size else block_edges

    graph = build_graph(edges, params.n)
    features = features.astype(np.float32).astype(np.float64)
    return Dataset(graph, features, labels, num_classes=2)


def drop_homophilic_edges(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Remove ⌊fraction × (#same-label edges)⌋ same-label edges uniformly."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    edges = dataset.graph.edge_list()
    labels = dataset.labels
    same = labels[edges[:, 0]] == labels[edges[:, 1]]
    homophilic = np.flatnonzero(same)
    n_drop = int(np.floor(fraction * homophilic.size))
    rng = np.random.default_rng(seed)
    drop = rng.choice(homophilic, size=n_drop, replace=False) if n_drop else []
    keep = np.ones(edges.shape[0], dtype=bool)
    keep[drop] = False
    graph = build_graph(edges[keep], dataset.num_nodes)
    return Dataset(
        graph,
        dataset.features,
        dataset.labels,
        dataset.num_classes,
        dict(dataset.masks),
    )


def _preset_vectors(dim: int) -> tuple[np.ndarray, np.ndarray]:
    mu = np.full(dim, PRESET_MU_ENTRY)
    delta_mu = np.full(dim, PRESET_DELTA_MU_ENTRY)
    return mu, delta_mu


#: Scenario presets: (source (d, h), target (d, h)).
PRESETS: dict[str, dict[str, tuple[float, float]]] = {
    "homo2hetero": {"source": (5.0, 0.8), "target": (5.0, 0.2)},
    "hetero2homo": {"source": (5.0, 0.2), "target": (5.0, 0.8)},
    "high2low": {"source": (10.0, 0.8), "target": (2.0, 0.8)},
    "low2high": {"source": (2.0, 0.8), "target": (10.0, 0.8)},
}


def preset_params(
    preset: str,
    role: str,
    seed: int,
    attribute_shift: bool = False,
    n: int = PRESET_N,
    dim: int = PRESET_D,
    override_d: float | None = None,
    override_h: float | None = None,
) -> CsbmParams:
    """CsbmParams for a named scenario preset.

    ``role`` is ``source`` or ``target``. The attribute shift (Δmu added to
    both centers) applies to the target only. ``override_d`` / ``override_h``
    replace the preset's degree/homophily for sweep protocols.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    if role not in ("source", "target"):
        raise ValueError(f"role must be 'source' or 'target', got {role!r}")
    d, h = PRESETS[preset][role]
    if override_d is not None:
        d = override_d
    if override_h is not None:
        h = override_h
    mu, delta_mu = _preset_vectors(dim)
    if role != "target" or not attribute_shift:
        delta_mu = np.zeros(dim)
    return CsbmParams(
        n=n, dim=dim, mu=mu, delta_mu=delta_mu, avg_degree=d, homophily=h, seed=seed
    )


def attach_split_masks(
    dataset: Dataset, seed: int, train_fraction: float = 0.6, val_fraction: float = 0.2
) -> Dataset:
    """Attach a seeded train/val split; the remainder is the test set."""
    n = dataset.num_nodes
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    n_val = int(round(val_fraction * n))
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    train[order[:n_train]] = True
    val[order[n_train : n_train + n_val]] = True
    return replace(dataset, masks={"train": train, "val": val})
