"""Hot inner-loop kernels: piecewise channel max-pooling and its scatter backward.

Two implementations are kept in lockstep: a numba-jitted one and a pure
numpy one.  Set MASKFER_NO_NUMBA=1 to force the numpy path (also used
automatically if numba is unavailable).  Both paths produce identical
results; `benchmarks/kernel_bench.py` compares their speed.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("MASKFER_NO_NUMBA", "0") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

__all__ = ["piece_max", "piece_max_dropped", "scatter_add_at", "USE_NUMBA"]


def _piece_max_np(values, offsets, sizes):
    B = values.shape[0]
    L = offsets.shape[0]
    out = np.empty((B, L), dtype=values.dtype)
    arg = np.empty((B, L), dtype=np.int64)
    for j in range(L):
        piece = values[:, offsets[j]:offsets[j] + sizes[j]]
        local = np.argmax(piece, axis=1)
        arg[:, j] = local + offsets[j]
        out[:, j] = piece[np.arange(B), local]
    return out, arg


def _piece_max_dropped_np(values, offsets, sizes, keep):
    B = values.shape[0]
    L = offsets.shape[0]
    out = np.empty((B, L), dtype=values.dtype)
    arg = np.empty((B, L), dtype=np.int64)
    for j in range(L):
        sl = slice(offsets[j], offsets[j] + sizes[j])
        piece = np.where(keep[sl] != 0, values[:, sl], -np.inf)
        local = np.argmax(piece, axis=1)
        arg[:, j] = local + offsets[j]
        out[:, j] = piece[np.arange(B), local]
    return out, arg


def _scatter_add_at_np(grad_out, arg, grad_in):
    B, L = grad_in.shape
    rows = np.repeat(np.arange(B), L)
    np.add.at(grad_out, (rows, arg.ravel()), grad_in.ravel())


if USE_NUMBA:

    @njit(cache=True)
    def _piece_max_nb(values, offsets, sizes):
        B = values.shape[0]
        L = offsets.shape[0]
        out = np.empty((B, L), dtype=values.dtype)
        arg = np.empty((B, L), dtype=np.int64)
        for i in range(B):
            for j in range(L):
                start = offsets[j]
                best = values[i, start]
                best_c = start
                for c in range(start + 1, start + sizes[j]):
                    if values[i, c] > best:
                        best = values[i, c]
                        best_c = c
                out[i, j] = best
                arg[i, j] = best_c
        return out, arg

    @njit(cache=True)
    def _piece_max_dropped_nb(values, offsets, sizes, keep):
        B = values.shape[0]
        L = offsets.shape[0]
        out = np.empty((B, L), dtype=values.dtype)
        arg = np.empty((B, L), dtype=np.int64)
        for i in range(B):
            for j in range(L):
                best = -np.inf
                best_c = -1
                for c in range(offsets[j], offsets[j] + sizes[j]):
                    if keep[c] != 0 and values[i, c] > best:
                        best = values[i, c]
                        best_c = c
                out[i, j] = best
                arg[i, j] = best_c
        return out, arg

    @njit(cache=True)
    def _scatter_add_at_nb(grad_out, arg, grad_in):
        B, L = grad_in.shape
        for i in range(B):
            for j in range(L):
                grad_out[i, arg[i, j]] += grad_in[i, j]


def piece_max(values, offsets, sizes):
    """Row-wise max per contiguous channel piece; lowest index wins ties.

    Returns (maxima B x L, winning channel index B x L).
    """
    if USE_NUMBA:
        return _piece_max_nb(values, offsets, sizes)
    return _piece_max_np(values, offsets, sizes)


def piece_max_dropped(values, offsets, sizes, keep):
    """Like piece_max but only over channels with keep != 0."""
    if USE_NUMBA:
        return _piece_max_dropped_nb(values, offsets, sizes, keep)
    return _piece_max_dropped_np(values, offsets, sizes, keep)


def scatter_add_at(grad_out, arg, grad_in):
    """Accumulate grad_in[i, j] into grad_out[i, arg[i, j]] in place."""
    if USE_NUMBA:
        _scatter_add_at_nb(grad_out, arg, grad_in)
    else:
        _scatter_add_at_np(grad_out, arg, grad_in)
