"""Hot inner kernels for edge-space arrays.

Compiled with numba when it is importable; otherwise the matching
pure-numpy implementations run (identical semantics, slower). Every
scatter accumulates strictly in edge order, so results are deterministic
either way. No fastmath: IEEE semantics are required by the conservation
diagnostics.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _np_all_finite(x):
    return bool(np.isfinite(x).all())


def _np_relu_fwd(x):
    return np.maximum(x, 0.0)


def _np_relu_bwd(x, g):
    return np.where(x >= 0.0, g, 0.0)


def _np_leaky_fwd(x, slope):
    return np.where(x >= 0.0, x, slope * x)


def _np_leaky_bwd(x, g, slope):
    return np.where(x >= 0.0, g, slope * g)


def _np_elu_fwd(x):
    return np.where(x >= 0.0, x, np.expm1(np.minimum(x, 0.0)))


def _np_elu_bwd(x, g):
    return np.where(x >= 0.0, g, np.exp(np.minimum(x, 0.0)) * g)


def _np_gather_rows(x, idx):
    return x[idx]


def _np_scatter_rows(g, idx, num_rows):
    out = np.zeros((num_rows, g.shape[1]))
    if len(idx) == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    boundaries = np.concatenate([[0], np.nonzero(np.diff(sorted_idx))[0] + 1])
    out[sorted_idx[boundaries]] = np.add.reduceat(g[order], boundaries, axis=0)
    return out


def _np_gather_pair_sum(a, b, src, tgt):
    return a[src] + b[tgt]


def _np_segment_gather_weighted(x, src, w, targets, num_segments):
    out = np.zeros((num_segments, x.shape[1]))
    if len(src):
        np.add.at(out, targets, x[src] * w[:, None])
    return out


def _np_segment_gather_weighted_bwd(g, x, src, w, targets, num_rows):
    g_rows = g[targets]
    gx = _np_scatter_rows(g_rows * w[:, None], src, num_rows)
    gw = np.einsum("ij,ij->i", x[src], g_rows)
    return gx, gw


if HAVE_NUMBA:

    @njit(cache=True)
    def all_finite(x):
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                if not np.isfinite(x[i, j]):
                    return False
        return True

    @njit(cache=True)
    def relu_fwd(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                out[i, j] = v if v > 0.0 else 0.0
        return out

    @njit(cache=True)
    def relu_bwd(x, g):
        out = np.empty_like(g)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                out[i, j] = g[i, j] if x[i, j] >= 0.0 else 0.0
        return out

    @njit(cache=True)
    def leaky_fwd(x, slope):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                out[i, j] = v if v >= 0.0 else slope * v
        return out

    @njit(cache=True)
    def leaky_bwd(x, g, slope):
        out = np.empty_like(g)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                out[i, j] = g[i, j] if x[i, j] >= 0.0 else slope * g[i, j]
        return out

    @njit(cache=True)
    def elu_fwd(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                out[i, j] = v if v >= 0.0 else np.expm1(v)
        return out

    @njit(cache=True)
    def elu_bwd(x, g):
        out = np.empty_like(g)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                out[i, j] = g[i, j] if v >= 0.0 else np.exp(v) * g[i, j]
        return out

    @njit(cache=True)
    def gather_rows(x, idx):
        out = np.empty((idx.shape[0], x.shape[1]))
        for e in range(idx.shape[0]):
            row = idx[e]
            for j in range(x.shape[1]):
                out[e, j] = x[row, j]
        return out

    @njit(cache=True)
    def scatter_rows(g, idx, num_rows):
        out = np.zeros((num_rows, g.shape[1]))
        for e in range(idx.shape[0]):
            row = idx[e]
            for j in range(g.shape[1]):
                out[row, j] += g[e, j]
        return out

    @njit(cache=True)
    def gather_pair_sum(a, b, src, tgt):
        out = np.empty((src.shape[0], a.shape[1]))
        for e in range(src.shape[0]):
            u = src[e]
            v = tgt[e]
            for j in range(a.shape[1]):
                out[e, j] = a[u, j] + b[v, j]
        return out

    @njit(cache=True)
    def segment_gather_weighted(x, src, w, targets, num_segments):
        out = np.zeros((num_segments, x.shape[1]))
        for e in range(src.shape[0]):
            u = src[e]
            v = targets[e]
            we = w[e]
            for j in range(x.shape[1]):
                out[v, j] += we * x[u, j]
        return out

    @njit(cache=True)
    def segment_gather_weighted_bwd(g, x, src, w, targets, num_rows):
        gx = np.zeros((num_rows, x.shape[1]))
        gw = np.empty(src.shape[0])
        for e in range(src.shape[0]):
            u = src[e]
            v = targets[e]
            we = w[e]
            acc = 0.0
            for j in range(x.shape[1]):
                gv = g[v, j]
                gx[u, j] += we * gv
                acc += x[u, j] * gv
            gw[e] = acc
        return gx, gw

else:  # pragma: no cover - exercised only without numba
    all_finite = _np_all_finite
    relu_fwd = _np_relu_fwd
    relu_bwd = _np_relu_bwd
    leaky_fwd = _np_leaky_fwd
    leaky_bwd = _np_leaky_bwd
    elu_fwd = _np_elu_fwd
    elu_bwd = _np_elu_bwd
    gather_rows = _np_gather_rows
    scatter_rows = _np_scatter_rows
    gather_pair_sum = _np_gather_pair_sum
    segment_gather_weighted = _np_segment_gather_weighted
    segment_gather_weighted_bwd = _np_segment_gather_weighted_bwd
