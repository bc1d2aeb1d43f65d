"""On-disk formats: dataset directories, model checkpoints, reports.

Dataset directory
-----------------
``edges.csv``     two integer columns, one undirected edge per line
``features.bin``  magic ``ADRC``, u32 version=1, u32 N, u32 D, then N·D
                  little-endian f32 values, row-major
``labels.csv``    one integer per line
``masks.csv``     optional; header ``train,val``, rows of 0/1

Checkpoint
----------
``ADRCM`` magic, u32 version=1, u32 dims (D, H, C, K), then the parameter
arrays as little-endian f32 in declared field order (see ``model``).

All writers produce byte-identical files for identical inputs; readers
round-trip f32 payloads bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .graph import Dataset, build_graph

__all__ = [
    "FEATURES_MAGIC",
    "CHECKPOINT_MAGIC",
    "FormatError",
    "read_dataset",
    "write_dataset",
    "read_checkpoint_arrays",
    "write_checkpoint_arrays",
    "report_text",
    "write_json_report",
    "write_csv",
]

FEATURES_MAGIC = b"ADRC"
CHECKPOINT_MAGIC = b"ADRCM"


class FormatError(ValueError):
    """A file does not conform to its declared on-disk format."""


def write_dataset(dataset: Dataset, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    edges = dataset.graph.edge_list()
    lines = [f"{u},{v}\n" for u, v in edges]
    (directory / "edges.csv").write_text("".join(lines))

    n, d = dataset.features.shape
    payload = np.ascontiguousarray(dataset.features, dtype="<f4").tobytes()
    header = FEATURES_MAGIC + struct.pack("<III", 1, n, d)
    (directory / "features.bin").write_bytes(header + payload)

    (directory / "labels.csv").write_text(
        "".join(f"{int(y)}\n" for y in dataset.labels)
    )

    if dataset.masks:
        train = dataset.masks.get("train", np.zeros(n, dtype=bool))
        val = dataset.masks.get("val", np.zeros(n, dtype=bool))
        rows = [
            f"{int(t)},{int(v)}\n" for t, v in zip(train.astype(int), val.astype(int))
        ]
        (directory / "masks.csv").write_text("train,val\n" + "".join(rows))


def read_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)

    raw = (directory / "features.bin").read_bytes()
    if raw[:4] != FEATURES_MAGIC:
        raise FormatError(f"features.bin: bad magic {raw[:4]!r}")
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != 1:
        raise FormatError(f"features.bin: unsupported version {version}")
    expected = 16 + 4 * n * d
    if len(raw) != expected:
        raise FormatError(
            f"features.bin: expected {expected} bytes, found {len(raw)}"
        )
    features = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, d).copy()

    labels = np.loadtxt(directory / "labels.csv", dtype=np.int64, ndmin=1)
    if labels.shape[0] != n:
        raise FormatError("labels.csv row count does not match features.bin")

    edges_path = directory / "edges.csv"
    text = edges_path.read_text().strip()
    if text:
        edges = np.loadtxt(edges_path, dtype=np.int64, delimiter=",", ndmin=2)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
    graph = build_graph(edges, n)

    masks: dict[str, np.ndarray] = {}
    masks_path = directory / "masks.csv"
    if masks_path.exists():
        table = np.loadtxt(
            masks_path, dtype=np.int64, delimiter=",", skiprows=1, ndmin=2
        )
        if table.shape != (n, 2):
            raise FormatError("masks.csv shape does not match node count")
        masks = {"train": table[:, 0].astype(bool), "val": table[:, 1].astype(bool)}

    num_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(graph, features.astype(np.float64), labels, num_classes, masks)


def write_checkpoint_arrays(
    path: str | Path, dims: tuple[int, int, int, int], arrays: list[np.ndarray]
) -> None:
    """Write ``ADRCM`` checkpoint: dims (D,H,C,K) then f32 arrays in order."""
    blob = CHECKPOINT_MAGIC + struct.pack("<I", 1) + struct.pack("<IIII", *dims)
    for arr in arrays:
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(blob)


def read_checkpoint_arrays(
    path: str | Path, shapes: callable
) -> tuple[tuple[int, int, int, int], list[np.ndarray]]:
    """Read an ``ADRCM`` checkpoint.

    ``shapes`` maps dims (D,H,C,K) to the list of expected array shapes in
    declared field order.
    """
    raw = Path(path).read_bytes()
    if raw[:5] != CHECKPOINT_MAGIC:
        raise FormatError(f"checkpoint: bad magic {raw[:5]!r}")
    (version,) = struct.unpack("<I", raw[5:9])
    if version != 1:
        raise FormatError(f"checkpoint: unsupported version {version}")
    dims = struct.unpack("<IIII", raw[9:25])
    offset = 25
    arrays = []
    for shape in shapes(dims):
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(raw):
            raise FormatError("checkpoint: truncated parameter payload")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        arrays.append(arr.reshape(shape).copy())
        offset += nbytes
    if offset != len(raw):
        raise FormatError("checkpoint: trailing bytes after parameters")
    return dims, arrays


def _canonical(obj):
    """Make a report JSON-serializable with deterministic float text."""
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def report_text(report: dict) -> str:
    """Deterministic JSON serialization (sorted keys, repr floats)."""
    return json.dumps(_canonical(report), indent=2, sort_keys=True) + "\n"


def write_json_report(path: str | Path, report: dict) -> None:
    """Serialize a report deterministically (sorted keys, repr floats)."""
    Path(path).write_text(report_text(report))


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Write a small CSV with deterministic ``repr``-style float formatting."""

    def fmt(value) -> str:
        if isinstance(value, (float, np.floating)):
            return format(float(value), ".17g")
        return str(value)

    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")
