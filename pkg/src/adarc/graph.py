"""Sparse graph storage, structural statistics, and hop propagation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

__all__ = [
    "Graph",
    "Dataset",
    "PropagationOperator",
    "build_graph",
    "node_homophily",
    "propagate",
]


@dataclass(frozen=True)
class Graph:
    """Undirected graph in CSR form: sorted, deduplicated, self-loop-free."""

    num_nodes: int
    row_offsets: np.ndarray  # int64, length N+1
    neighbor_ids: np.ndarray  # int64, length row_offsets[-1]
    symmetric: bool = True

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return int(self.row_offsets[-1]) // 2

    def neighbors(self, node: int) -> np.ndarray:
        return self.neighbor_ids[self.row_offsets[node] : self.row_offsets[node + 1]]

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an E×2 array with u < v, lexicographically sorted."""
        row_ids = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = row_ids < self.neighbor_ids
        return np.column_stack([row_ids[keep], self.neighbor_ids[keep]])


@dataclass
class Dataset:
    """A graph with node features, labels, and optional train/val masks."""

    graph: Graph
    features: np.ndarray  # N×D
    labels: np.ndarray  # int64, length N, values in [0, C)
    num_classes: int
    masks: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = self.graph.num_nodes
        if self.features.shape[0] != n:
            raise ValueError(
                f"feature rows {self.features.shape[0]} != num_nodes {n}"
            )
        if self.labels.shape[0] != n:
            raise ValueError(f"label count {self.labels.shape[0]} != num_nodes {n}")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise ValueError("label value out of range")
        for name, mask in self.masks.items():
            if mask.shape[0] != n:
                raise ValueError(f"mask {name!r} length {mask.shape[0]} != {n}")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


class PropagationOperator:
    """One application of the normalized adjacency Ã.

    ``mode="row"`` applies D⁻¹A (each nonzero row sums to 1); ``mode="sym"``
    applies D^{-1/2} A D^{-1/2} (a symmetric operator). Degree-0 rows map to
    zero. Every application increments ``calls`` — the caching-discipline
    counter asserted by the adaptation loop.
    """

    def __init__(self, graph: Graph, mode: str = "sym"):
        if mode not in ("row", "sym"):
            raise ValueError(f"mode must be 'row' or 'sym', got {mode!r}")
        self.graph = graph
        self.mode = mode
        self.calls = 0
        deg = graph.degrees.astype(np.float64)
        with np.errstate(divide="ignore"):
            inv = np.where(deg > 0, 1.0 / deg, 0.0)
            inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
        ones = np.ones_like(deg)
        if mode == "row":
            self._in_scale, self._out_scale = ones, inv
        else:
            self._in_scale, self._out_scale = inv_sqrt, inv_sqrt

    def apply(self, dense: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Ã·H (or Ãᵀ·H with ``transpose``); counts one propagate call."""
        if dense.shape[0] != self.graph.num_nodes:
            raise ValueError(
                f"row count {dense.shape[0]} != num_nodes {self.graph.num_nodes}"
            )
        self.calls += 1
        in_s, out_s = self._in_scale, self._out_scale
        if transpose:
            in_s, out_s = out_s, in_s
        squeeze = dense.ndim == 1
        if squeeze:
            dense = dense[:, None]
        out = _kernels.csr_scaled_matmul(
            self.graph.row_offsets,
            self.graph.neighbor_ids,
            in_s,
            out_s,
            np.asarray(dense, dtype=np.float64),
        )
        return out[:, 0] if squeeze else out


def propagate(op: PropagationOperator, dense: np.ndarray) -> np.ndarray:
    """Functional alias for ``op.apply`` (one hop of Ã)."""
    return op.apply(dense)


def build_graph(edges: np.ndarray | list, num_nodes: int) -> Graph:
    """Build a symmetrized, deduplicated, self-loop-free CSR graph.

    ``edges`` is an E×2 array (or list of pairs) of undirected edges; the
    layout is deterministic for a given input ordering.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= num_nodes:
            raise ValueError("edge endpoint out of range")
        edges = edges[edges[:, 0] != edges[:, 1]]
    if edges.size:
        both = np.concatenate([edges, edges[:, ::-1]], axis=0)
        # Unique (source, target) keys come back sorted — CSR order for free.
        keys = np.unique(both[:, 0] * num_nodes + both[:, 1])
        sources = keys // num_nodes
        row_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.add.at(row_offsets, sources + 1, 1)
        np.cumsum(row_offsets, out=row_offsets)
        neighbor_ids = np.ascontiguousarray(keys % num_nodes)
    else:
        row_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        neighbor_ids = np.zeros(0, dtype=np.int64)
    return Graph(num_nodes, row_offsets, neighbor_ids)


def node_homophily(
    graph: Graph, labels: np.ndarray
) -> tuple[np.ndarray, float]:
    """Per-node fraction of same-label neighbors, and its mean.

    Degree-0 nodes carry NaN (undefined) and are excluded from the mean;
    the mean of an edgeless graph is NaN.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != graph.num_nodes:
        raise ValueError("labels length != num_nodes")
    deg = graph.degrees.astype(np.float64)
    counts = _kernels.homophily_counts(
        graph.row_offsets, graph.neighbor_ids, labels
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        per_node = np.where(deg > 0, counts / deg, np.nan)
    positive = deg > 0
    mean = float(per_node[positive].mean()) if positive.any() else float("nan")
    return per_node, mean
