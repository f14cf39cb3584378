"""Minimal reverse-mode differentiation engine for sparse-graph attention nets.

Everything is dense 64-bit, two-dimensional, and recorded on an explicit
Tape. The op set is deliberately small: dense matmul/transpose/add, row
gather with scatter-add adjoint, per-segment softmax and weighted sums for
neighborhood aggregation, positively homogeneous activations, and a
numerically stabilized masked cross-entropy. A central finite-difference
oracle is included for gradient checking.

Determinism: scatter accumulation follows edge order, segment reductions
are sequential per segment, and no op introduces randomness, so identical
inputs give bit-identical forwards and gradients.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import _kernels as k


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf entries."""


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # fast path: a finite sum proves all entries finite; a non-finite sum
    # is either a real NaN/Inf entry or (rarely) overflow of the sum of
    # finite values, so confirm with the exact elementwise check
    with np.errstate(over="ignore", invalid="ignore"):
        total = float(arr.sum())
    if not math.isfinite(total) and not k.all_finite(arr):
        raise NonFiniteError(f"{op} produced non-finite entries")


class Tensor:
    """A dense (rows, cols) float64 matrix, optionally recorded on a tape.

    A tensor constructed directly (``Tensor(data)``) is detached: it can
    participate in ops but receives no gradient. Use ``Tape.leaf`` for
    parameters.
    """

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None):
        self.data = _as_matrix(data)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        tag = "detached" if self.node_id is None else f"node {self.node_id}"
        return f"Tensor(shape={self.shape}, {tag})"


class SegmentIndex:
    """Edges grouped contiguously by target node (in-neighbor CSR).

    ``targets[e]`` is the target of edge ``e``; ``offsets`` has length
    ``num_segments + 1`` and ``offsets[v]:offsets[v+1]`` is the edge range
    whose target is ``v``.
    """

    __slots__ = ("targets", "offsets", "num_segments")

    def __init__(self, targets, offsets):
        self.targets = np.asarray(targets, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.num_segments = len(self.offsets) - 1
        if self.num_segments < 0:
            raise ValueError("offsets must have at least one entry")
        if self.offsets[0] != 0 or np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must be non-decreasing and start at 0")
        if self.offsets[-1] != len(self.targets):
            raise ValueError("last offset must equal the edge count")
        expected = np.repeat(np.arange(self.num_segments), np.diff(self.offsets))
        if not np.array_equal(expected, self.targets):
            raise ValueError("edges with the same target must be contiguous")

    @classmethod
    def from_targets(cls, targets, num_segments: int) -> "SegmentIndex":
        """Build from a sorted-by-target edge->target array."""
        targets = np.asarray(targets, dtype=np.int64)
        counts = np.bincount(targets, minlength=num_segments)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return cls(targets, offsets)

    @property
    def num_edges(self) -> int:
        return len(self.targets)

    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)


class _Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Append-only record of operations; consumed by a single backward()."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._grads: dict[int, np.ndarray] | None = None
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    def leaf(self, data) -> Tensor:
        """Record a parameter or input; it will receive a gradient."""
        value = _as_matrix(data)
        _check_finite(value, "leaf")
        node_id = len(self._nodes)
        self._nodes.append(_Node("leaf", (), None))
        return Tensor(value, tape=self, node_id=node_id)

    def _record(self, op: str, value: np.ndarray, inputs: Sequence[Tensor],
                backward: Callable) -> Tensor:
        if self._consumed:
            raise RuntimeError("tape already consumed by backward()")
        _check_finite(value, op)
        ids = tuple(t.node_id for t in inputs)
        node_id = len(self._nodes)
        self._nodes.append(_Node(op, ids, backward))
        return Tensor(value, tape=self, node_id=node_id)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from a recorded scalar; returns the gradient store.

        Gradients accumulate additively per node. The tape is single-use:
        a second backward() raises.
        """
        if loss.tape is not self or loss.node_id is None:
            raise ValueError("loss is not recorded on this tape")
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be scalar (1x1), got {loss.shape}")
        if self._consumed:
            raise RuntimeError("tape already consumed by backward()")
        self._consumed = True

        grads: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1))}
        for node_id in range(loss.node_id, -1, -1):
            g = grads.get(node_id)
            if g is None:
                continue
            node = self._nodes[node_id]
            if node.backward is None:
                continue
            for inp_id, contrib in zip(node.inputs, node.backward(g)):
                if inp_id is None or contrib is None:
                    continue
                acc = grads.get(inp_id)
                if acc is None:
                    grads[inp_id] = contrib
                else:
                    acc += contrib
        self._grads = grads
        return grads

    def grad(self, tensor: Tensor) -> np.ndarray | None:
        """Gradient of the last backward() w.r.t. a recorded tensor."""
        if self._grads is None:
            raise RuntimeError("backward() has not been run")
        if tensor.node_id is None:
            return None
        return self._grads.get(tensor.node_id)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("inputs recorded on different tapes")
    return tape


def _emit(op: str, value: np.ndarray, inputs: Sequence[Tensor],
          backward: Callable) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        _check_finite(value, op)
        return Tensor(value)
    return tape._record(op, value, inputs, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; adjoints dA = G @ B^T, dB = A^T @ G."""
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    value = ad @ bd

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _emit("matmul", value, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    value = np.ascontiguousarray(a.data.T)

    def backward(g):
        return (np.ascontiguousarray(g.T),)

    return _emit("transpose", value, (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    value = a.data + b.data

    def backward(g):
        return g, g

    return _emit("add", value, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    value = a.data * c

    def backward(g):
        return (g * c,)

    return _emit("scale", value, (a,), backward)


def mul_const(a: Tensor, mask) -> Tensor:
    """Elementwise product with a constant array (dropout masks etc.)."""
    mask = _as_matrix(mask)
    if mask.shape != a.shape:
        raise ValueError(f"mul_const shape mismatch: {a.shape} vs {mask.shape}")
    value = a.data * mask

    def backward(g):
        return (g * mask,)

    return _emit("mul_const", value, (a,), backward)


def _scatter_add_rows(num_rows: int, idx: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Sum `rows` into an (num_rows, d) zero matrix at positions idx.

    Duplicate indices accumulate in edge order, which fixes the
    floating-point accumulation order.
    """
    return k.scatter_rows(np.ascontiguousarray(rows), idx, num_rows)


def _check_index(idx, n: int) -> np.ndarray:
    idx = np.ascontiguousarray(np.asarray(idx, dtype=np.int64))
    if idx.ndim != 1:
        raise ValueError("index array must be one-dimensional")
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather index out of range for {n} rows")
    return idx


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows x[idx[e], :]; adjoint scatter-adds back into x."""
    idx = _check_index(idx, x.shape[0])
    n = x.shape[0]
    value = k.gather_rows(x.data, idx)

    def backward(g):
        return (k.scatter_rows(g, idx, n),)

    return _emit("gather_rows", value, (x,), backward)


def gather_pair_sum(a: Tensor, b: Tensor, src, tgt) -> Tensor:
    """Fused a[src[e], :] + b[tgt[e], :]; adjoints scatter-add into both.

    Equivalent to add(gather_rows(a, src), gather_rows(b, tgt)) without
    materializing the two gathered operands.
    """
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column mismatch: {a.shape} vs {b.shape}")
    src = _check_index(src, a.shape[0])
    tgt = _check_index(tgt, b.shape[0])
    if len(src) != len(tgt):
        raise ValueError("src and tgt must have equal length")
    na, nb = a.shape[0], b.shape[0]
    value = k.gather_pair_sum(a.data, b.data, src, tgt)

    def backward(g):
        return k.scatter_rows(g, src, na), k.scatter_rows(g, tgt, nb)

    return _emit("gather_pair_sum", value, (a, b), backward)


def segment_softmax(scores: Tensor, seg: SegmentIndex) -> Tensor:
    """Softmax within each target's edge segment of an (E, 1) score column.

    Stabilized by subtracting the per-segment maximum (the softmax is
    shift-invariant, so values are unchanged). Every segment must be
    non-empty: an empty segment means some node appears as a target with
    no in-edges, which the caller must resolve (e.g. with self-loops).
    """
    if scores.shape != (seg.num_edges, 1):
        raise ValueError(f"expected scores of shape ({seg.num_edges}, 1), got {scores.shape}")
    sizes = seg.sizes()
    if np.any(sizes == 0):
        missing = int(np.nonzero(sizes == 0)[0][0])
        raise ValueError(f"empty segment for target node {missing} (no in-edges)")
    starts = seg.offsets[:-1]
    s = scores.data[:, 0]
    seg_max = np.maximum.reduceat(s, starts)
    shifted = np.exp(s - np.repeat(seg_max, sizes))
    denom = np.add.reduceat(shifted, starts)
    alpha = shifted / np.repeat(denom, sizes)
    value = alpha.reshape(-1, 1)

    def backward(g):
        gv = g[:, 0]
        weighted = np.add.reduceat(alpha * gv, starts)
        out = alpha * (gv - np.repeat(weighted, sizes))
        return (out.reshape(-1, 1),)

    return _emit("segment_softmax", value, (scores,), backward)


def segment_weighted_sum(values: Tensor, weights: Tensor, seg: SegmentIndex) -> Tensor:
    """Per-target weighted sum of edge rows: out[v] = sum_e w_e * values[e].

    Targets with no in-edges get zero rows.
    """
    e = seg.num_edges
    if values.shape[0] != e or weights.shape != (e, 1):
        raise ValueError(
            f"expected {e} edge rows and ({e}, 1) weights, got {values.shape} and {weights.shape}")
    vd, wd = values.data, weights.data
    weighted = vd * wd
    out = np.zeros((seg.num_segments, vd.shape[1]))
    nonempty = seg.sizes() > 0
    if nonempty.any():
        starts = seg.offsets[:-1][nonempty]
        out[nonempty] = np.add.reduceat(weighted, starts, axis=0) if len(weighted) else 0.0
    targets = seg.targets

    def backward(g):
        g_rows = g[targets]
        g_values = g_rows * wd
        g_weights = np.sum(g_rows * vd, axis=1, keepdims=True)
        return g_values, g_weights

    return _emit("segment_weighted_sum", out, (values, weights), backward)


def segment_gather_weighted_sum(x: Tensor, src, weights: Tensor,
                                seg: SegmentIndex) -> Tensor:
    """Fused out[v] = sum over edges e targeting v of w_e * x[src[e], :].

    Equivalent to segment_weighted_sum(gather_rows(x, src), weights, seg)
    without materializing the gathered edge rows.
    """
    e = seg.num_edges
    src = _check_index(src, x.shape[0])
    if len(src) != e or weights.shape != (e, 1):
        raise ValueError(
            f"expected {e} sources and ({e}, 1) weights, got {len(src)} and {weights.shape}")
    n = x.shape[0]
    xd = x.data
    w1 = np.ascontiguousarray(weights.data[:, 0])
    targets = seg.targets
    value = k.segment_gather_weighted(xd, src, w1, targets, seg.num_segments)

    def backward(g):
        gx, gw = k.segment_gather_weighted_bwd(g, xd, src, w1, targets, n)
        return gx, gw.reshape(-1, 1)

    return _emit("segment_gather_weighted_sum", value, (x, weights), backward)


_ACTIVATIONS = ("relu", "leaky_relu", "elu")


def activation(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    """Elementwise relu / leaky_relu(slope) / elu.

    The subgradient at 0 is taken from the positive branch (derivative 1)
    for all three kinds, so diagnostics are reproducible at kink points.
    """
    if kind not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}")
    xd = x.data
    if kind == "relu":
        value = k.relu_fwd(xd)

        def backward(g):
            return (k.relu_bwd(xd, g),)

    elif kind == "leaky_relu":
        if not 0.0 < slope < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
        value = k.leaky_fwd(xd, slope)

        def backward(g):
            return (k.leaky_bwd(xd, g, slope),)

    else:
        value = k.elu_fwd(xd)

        def backward(g):
            return (k.elu_bwd(xd, g),)

    return _emit(kind, value, (x,), backward)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Stack tensors side by side along columns."""
    if not tensors:
        raise ValueError("concat_cols needs at least one tensor")
    rows = tensors[0].shape[0]
    if any(t.shape[0] != rows for t in tensors):
        raise ValueError("concat_cols row counts differ")
    widths = [t.shape[1] for t in tensors]
    value = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=1))

    return _emit("concat_cols", value, tuple(tensors), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Column slice x[:, start:stop]; adjoint pads zeros outside the slice."""
    if not 0 <= start <= stop <= x.shape[1]:
        raise ValueError(f"slice [{start}:{stop}] out of range for width {x.shape[1]}")
    value = np.ascontiguousarray(x.data[:, start:stop])
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _emit("slice_cols", value, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries as a (1, 1) scalar."""
    value = np.array([[x.data.sum()]])
    shape = x.shape

    def backward(g):
        return (np.full(shape, g[0, 0]),)

    return _emit("sum_all", value, (x,), backward)


def masked_cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean softmax cross-entropy over masked rows, via log-sum-exp.

    labels holds a class index per row; mask is a boolean row selector.
    """
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    n, c = logits.shape
    if labels.shape != (n,) or mask.shape != (n,):
        raise ValueError("labels and mask must have one entry per row")
    if not mask.any():
        raise ValueError("mask selects no rows")
    if labels[mask].min() < 0 or labels[mask].max() >= c:
        raise ValueError("label index out of range")
    rows = np.nonzero(mask)[0]
    z = logits.data[rows]
    y = labels[rows]
    m = z.max(axis=1, keepdims=True)
    shifted = np.exp(z - m)
    denom = shifted.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(denom[:, 0])
    picked = z[np.arange(len(rows)), y]
    value = np.array([[np.mean(lse - picked)]])
    shape = logits.shape

    def backward(g):
        soft = shifted / denom
        soft[np.arange(len(rows)), y] -= 1.0
        out = np.zeros(shape)
        out[rows] = soft * (g[0, 0] / len(rows))
        return (out,)

    return _emit("masked_cross_entropy", value, (logits,), backward)


def finite_diff_grad(f: Callable[[list[np.ndarray]], float], params: Sequence[np.ndarray],
                     eps: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of a scalar function of ndarray params.

    The independent oracle for backward(): (f(w+eps) - f(w-eps)) / (2 eps)
    per coordinate, never touching the tape.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    work = [np.array(p, dtype=np.float64) for p in params]
    grads = []
    for k, p in enumerate(work):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f(work))
            flat[i] = orig - eps
            f_minus = float(f(work))
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError("objective returned a non-finite value")
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic: Sequence[np.ndarray], reference: Sequence[np.ndarray]) -> float:
    """Worst entry deviation normalized by the overall gradient scale."""
    worst = 0.0
    for a, r in zip(analytic, reference):
        denom = max(1.0, np.abs(a).max(initial=0.0), np.abs(r).max(initial=0.0))
        worst = max(worst, np.abs(a - r).max(initial=0.0) / denom)
    return worst
