"""Low-level CSR kernels with a numba fast path and a pure-numpy fallback.

The active backend is chosen once at import time from the ``ADARC_KERNELS``
environment variable:

* ``auto`` (default) — use numba when it imports cleanly, else numpy;
* ``numba`` — require numba, raise if unavailable;
* ``numpy`` — force the pure-numpy implementations.

Both backends implement the same contract and agree to floating-point
round-off; they are exposed side by side so benchmarks can compare them
regardless of which one is active.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "csr_scaled_matmul",
    "csr_scaled_matmul_numba",
    "csr_scaled_matmul_numpy",
    "homophily_counts",
    "homophily_counts_numba",
    "homophily_counts_numpy",
]


def _segment_sums(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Row-wise sums of ``values`` grouped by CSR ``indptr`` segments.

    Implemented with a prepended-zero cumulative sum so empty segments
    yield exact zero rows (``np.add.reduceat`` mishandles them).
    """
    if values.ndim == 1:
        values = values[:, None]
    csum = np.zeros((values.shape[0] + 1, values.shape[1]), dtype=values.dtype)
    np.cumsum(values, axis=0, out=csum[1:])
    return csum[indptr[1:]] - csum[indptr[:-1]]


def csr_scaled_matmul_numpy(
    indptr: np.ndarray,
    indices: np.ndarray,
    in_scale: np.ndarray,
    out_scale: np.ndarray,
    dense: np.ndarray,
) -> np.ndarray:
    """Compute ``diag(out_scale) @ A @ diag(in_scale) @ dense`` for a binary CSR adjacency."""
    gathered = dense * in_scale[:, None]
    out = _segment_sums(gathered[indices], indptr)
    out *= out_scale[:, None]
    return out


def homophily_counts_numpy(
    indptr: np.ndarray, indices: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Number of same-label neighbors per node."""
    row_ids = np.repeat(
        np.arange(labels.shape[0]), np.diff(indptr).astype(np.int64)
    )
    same = (labels[row_ids] == labels[indices]).astype(np.float64)
    return _segment_sums(same, indptr)[:, 0]


_requested = os.environ.get("ADARC_KERNELS", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"ADARC_KERNELS must be one of auto|numba|numpy, got {_requested!r}"
    )

_numba_err: Exception | None = None
csr_scaled_matmul_numba = None
homophily_counts_numba = None

if _requested in ("auto", "numba"):
    try:
        from numba import njit

        @njit(cache=True)
        def _csr_scaled_matmul_jit(indptr, indices, in_scale, out_scale, dense):
            n, f = dense.shape[0], dense.shape[1]
            out = np.zeros((indptr.shape[0] - 1, f), dtype=dense.dtype)
            for i in range(indptr.shape[0] - 1):
                acc = np.zeros(f, dtype=dense.dtype)
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    s = in_scale[j]
                    for c in range(f):
                        acc[c] += s * dense[j, c]
                o = out_scale[i]
                for c in range(f):
                    out[i, c] = o * acc[c]
            return out

        @njit(cache=True)
        def _homophily_counts_jit(indptr, indices, labels):
            n = indptr.shape[0] - 1
            out = np.zeros(n, dtype=np.float64)
            for i in range(n):
                cnt = 0.0
                for e in range(indptr[i], indptr[i + 1]):
                    if labels[indices[e]] == labels[i]:
                        cnt += 1.0
                out[i] = cnt
            return out

        def csr_scaled_matmul_numba(indptr, indices, in_scale, out_scale, dense):
            return _csr_scaled_matmul_jit(
                indptr, indices, in_scale, out_scale, np.ascontiguousarray(dense)
            )

        def homophily_counts_numba(indptr, indices, labels):
            return _homophily_counts_jit(indptr, indices, labels)

    except Exception as exc:  # pragma: no cover - exercised only without numba
        _numba_err = exc
        if _requested == "numba":
            raise ImportError(
                "ADARC_KERNELS=numba but numba is unavailable"
            ) from exc

if _requested == "numpy" or csr_scaled_matmul_numba is None:
    BACKEND = "numpy"
    csr_scaled_matmul = csr_scaled_matmul_numpy
    homophily_counts = homophily_counts_numpy
else:
    BACKEND = "numba"
    csr_scaled_matmul = csr_scaled_matmul_numba
    homophily_counts = homophily_counts_numba
