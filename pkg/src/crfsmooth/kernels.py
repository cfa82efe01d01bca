"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The one kernel that dominates runtime is the sparse aggregation step of the
GCN forward/backward pass: multiplying the normalized adjacency (stored in
CSR form) by a dense node-state matrix. It runs twice per forward pass, and
the smoother calls the forward pass tens of times per prediction, so it is
worth compiling.

Set ``CRFSMOOTH_NO_NUMBA=1`` in the environment to force the pure-numpy
path (also taken automatically when numba is not importable). Both paths
are deterministic; ``benchmarks/kernel_bench.py`` compares them.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_requested() -> bool:
    flag = os.environ.get("CRFSMOOTH_NO_NUMBA", "").strip().lower()
    return flag not in {"1", "true", "yes", "on"}


def spmm_numpy(indptr: np.ndarray, indices: np.ndarray, weights: np.ndarray,
               dense: np.ndarray) -> np.ndarray:
    """CSR sparse @ dense via segmented reduction.

    Every row must be non-empty (guaranteed here: the normalized adjacency
    carries self-loops), otherwise reduceat segments would misalign.
    """
    contrib = weights[:, None] * dense[indices]
    return np.add.reduceat(contrib, indptr[:-1], axis=0)


spmm_numba = None

if _numba_requested():
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        njit = None
    if njit is not None:

        @njit(cache=True, nogil=True)
        def _spmm_csr(indptr, indices, weights, dense):
            n = indptr.shape[0] - 1
            k = dense.shape[1]
            out = np.zeros((n, k), dtype=dense.dtype)
            for i in range(n):
                for p in range(indptr[i], indptr[i + 1]):
                    j = indices[p]
                    w = weights[p]
                    for c in range(k):
                        out[i, c] += w * dense[j, c]
            return out

        spmm_numba = _spmm_csr


NUMBA_ENABLED = spmm_numba is not None

spmm = spmm_numba if NUMBA_ENABLED else spmm_numpy


def warmup() -> None:
    """Trigger JIT compilation on a tiny input so timed code paths are warm."""
    indptr = np.array([0, 1], dtype=np.int64)
    indices = np.array([0], dtype=np.int64)
    weights = np.array([1.0])
    spmm(indptr, indices, weights, np.ones((1, 1)))
