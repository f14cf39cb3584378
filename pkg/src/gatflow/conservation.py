"""Gradient-flow conservation diagnostics.

For positively homogeneous activations, each hidden neuron's parameters
obey an exact pointwise identity between parameter/gradient scalar
products of its incoming weights, its attention entry, and its outgoing
weights; integrating it along gradient flow conserves the quantity

    c(l, i) = |W^l[i,:]|^2 - a^l[i]^2 - |W^{l+1}[:,i]|^2

(per neuron, with Ws/Wt terms added on both sides when weights are not
shared, and every term summed over heads). This module evaluates the
identity residual (delta), the conserved quantity, its layer-level and
telescoped forms, and the trainability statistics built on them: relative
gradient norms and parameter-change fractions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import GatNetwork, ParamKey

Gradients = dict[ParamKey, np.ndarray]


def _check_layer(net: GatNetwork, layer: int) -> None:
    if not 1 <= layer <= net.config.depth - 1:
        raise ValueError(f"layer must be in [1, {net.config.depth - 1}], got {layer}")


def _check_grads(net: GatNetwork, grads: Gradients) -> None:
    missing = [k for k in net.params if k not in grads]
    if missing:
        raise ValueError(f"missing gradients for {missing[:3]}")


def delta_terms(net: GatNetwork, grads: Gradients, layer: int, neuron: int) -> list[float]:
    """The signed scalar-product terms whose sum is the identity residual."""
    _check_layer(net, layer)
    _check_grads(net, grads)
    if not 0 <= neuron < net.config.head_out_dim(layer):
        raise ValueError(f"neuron {neuron} out of range")
    terms = []
    for k in range(net.config.heads):
        for kind in net.feature_kinds():
            w_in = net.params[(kind, layer, k)][neuron, :]
            g_in = grads[(kind, layer, k)][neuron, :]
            terms.append(float(w_in @ g_in))
            w_out = net.params[(kind, layer + 1, k)][:, neuron]
            g_out = grads[(kind, layer + 1, k)][:, neuron]
            terms.append(-float(w_out @ g_out))
        a = net.params[("a", layer, k)][neuron, 0]
        ga = grads[("a", layer, k)][neuron, 0]
        terms.append(-float(a * ga))
    return terms


def delta(net: GatNetwork, grads: Gradients, layer: int, neuron: int) -> float:
    """Pointwise gradient-identity residual for one neuron (zero in exact
    arithmetic for relu/leaky_relu networks, whatever the optimizer)."""
    return float(sum(delta_terms(net, grads, layer, neuron)))


def relative_delta(net: GatNetwork, grads: Gradients, layer: int, neuron: int) -> float:
    """|delta| normalized by 1 + the largest constituent magnitude."""
    terms = delta_terms(net, grads, layer, neuron)
    scale = max(abs(t) for t in terms) if terms else 0.0
    return abs(sum(terms)) / (1.0 + scale)


def delta_layer(net: GatNetwork, grads: Gradients, layer: int) -> float:
    """Layer-summed residual (full <a^l, grad a^l> form)."""
    return float(sum(delta(net, grads, layer, i)
                     for i in range(net.config.head_out_dim(layer))))


def max_relative_delta(net: GatNetwork, grads: Gradients) -> float:
    """Worst relative residual over all hidden neurons; 0 for depth-1 nets."""
    worst = 0.0
    for layer in range(1, net.config.depth):
        for i in range(net.config.head_out_dim(layer)):
            worst = max(worst, relative_delta(net, grads, layer, i))
    return worst


def c_value(net: GatNetwork, layer: int, neuron: int) -> float:
    """The conserved quantity for one neuron; 0 means balanced."""
    _check_layer(net, layer)
    if not 0 <= neuron < net.config.head_out_dim(layer):
        raise ValueError(f"neuron {neuron} out of range")
    total = 0.0
    for k in range(net.config.heads):
        for kind in net.feature_kinds():
            total += float(np.sum(net.params[(kind, layer, k)][neuron, :] ** 2))
            total -= float(np.sum(net.params[(kind, layer + 1, k)][:, neuron] ** 2))
        total -= float(net.params[("a", layer, k)][neuron, 0] ** 2)
    return total


def c_array(net: GatNetwork, layer: int) -> np.ndarray:
    return np.array([c_value(net, layer, i)
                     for i in range(net.config.head_out_dim(layer))])


def max_abs_c(net: GatNetwork) -> float:
    if net.config.depth == 1:
        return 0.0
    return max(float(np.max(np.abs(c_array(net, layer))))
               for layer in range(1, net.config.depth))


def telescoped_residual(net: GatNetwork, grads: Gradients) -> float:
    """Residual of the first-to-last telescoped identity:
    <W^1, grad W^1> - sum_l <a^l, grad a^l> - <W^L, grad W^L>.

    Vacuous (0) for single-layer networks. It equals the signed sum of the
    per-neuron residuals over all hidden layers.
    """
    depth = net.config.depth
    if depth == 1:
        return 0.0
    _check_grads(net, grads)
    total = 0.0
    for k in range(net.config.heads):
        for kind in net.feature_kinds():
            total += float(np.sum(net.params[(kind, 1, k)] * grads[(kind, 1, k)]))
            total -= float(np.sum(net.params[(kind, depth, k)] * grads[(kind, depth, k)]))
        for layer in range(1, depth):
            total -= float(np.sum(net.params[("a", layer, k)] * grads[("a", layer, k)]))
    return total


def layer_quantity(net: GatNetwork, layer: int) -> float:
    """Layer-level conserved quantity |W^l|_F^2 - |a^l|^2 - |W^{l+1}|_F^2."""
    _check_layer(net, layer)
    total = 0.0
    for k in range(net.config.heads):
        for kind in net.feature_kinds():
            total += float(np.sum(net.params[(kind, layer, k)] ** 2))
            total -= float(np.sum(net.params[(kind, layer + 1, k)] ** 2))
        total -= float(np.sum(net.params[("a", layer, k)] ** 2))
    return total


def layer_law_drift(net_t0: GatNetwork, net_t1: GatNetwork, layer: int) -> float:
    """Finite-step violation of the layer-level law between two snapshots;
    shrinks quadratically as the learning rate goes to zero."""
    if net_t0.config != net_t1.config:
        raise ValueError("snapshots come from different architectures")
    return layer_quantity(net_t1, layer) - layer_quantity(net_t0, layer)


def relative_grad_norms(net: GatNetwork, grads: Gradients) -> list[tuple[float, float | None]]:
    """Per layer: (|grad W|_F / |W|_F, |grad a| / |a|), heads pooled.

    The attention entry is None when |a^l| = 0 (balanced nets at epoch 0).
    A zero feature-weight norm is an error.
    """
    _check_grads(net, grads)
    out = []
    for layer in range(1, net.config.depth + 1):
        w_num = w_den = a_num = a_den = 0.0
        for k in range(net.config.heads):
            for kind in net.feature_kinds():
                w_num += float(np.sum(grads[(kind, layer, k)] ** 2))
                w_den += float(np.sum(net.params[(kind, layer, k)] ** 2))
            a_num += float(np.sum(grads[("a", layer, k)] ** 2))
            a_den += float(np.sum(net.params[("a", layer, k)] ** 2))
        if w_den == 0.0:
            raise ValueError(f"zero feature-weight norm at layer {layer}")
        a_ratio = None if a_den == 0.0 else float(np.sqrt(a_num / a_den))
        out.append((float(np.sqrt(w_num / w_den)), a_ratio))
    return out


@dataclass
class LayerChangeStats:
    feature_change_fraction: float    # significant params with relative change > threshold
    attention_change_fraction: float  # params with absolute change > threshold
    feature_zero_fraction: float      # params bitwise unchanged
    attention_zero_fraction: float


def param_change_stats(init_net: GatNetwork, best_net: GatNetwork,
                       sig_threshold: float = 1e-4,
                       change_threshold: float = 0.5) -> list[LayerChangeStats]:
    """Per-layer change statistics of trained (best) vs initial parameters.

    Feature weights use relative change |(w* - w0)/w*| among significant
    params (|w*| >= sig_threshold); attention uses absolute change
    |a* - a0|. Zero-change fractions count bitwise-unchanged entries with
    no significance filter.
    """
    if init_net.config != best_net.config:
        raise ValueError("parameter snapshots come from different architectures")
    stats = []
    for layer in range(1, init_net.config.depth + 1):
        w0_parts, w1_parts, a0_parts, a1_parts = [], [], [], []
        for k in range(init_net.config.heads):
            for kind in init_net.feature_kinds():
                w0_parts.append(init_net.params[(kind, layer, k)].ravel())
                w1_parts.append(best_net.params[(kind, layer, k)].ravel())
            a0_parts.append(init_net.params[("a", layer, k)].ravel())
            a1_parts.append(best_net.params[("a", layer, k)].ravel())
        w0, w1 = np.concatenate(w0_parts), np.concatenate(w1_parts)
        a0, a1 = np.concatenate(a0_parts), np.concatenate(a1_parts)
        sig = np.abs(w1) >= sig_threshold
        if sig.any():
            rel = np.abs((w1[sig] - w0[sig]) / w1[sig])
            feature_frac = float(np.mean(rel > change_threshold))
        else:
            feature_frac = 0.0
        attention_frac = float(np.mean(np.abs(a1 - a0) > change_threshold)) if a1.size else 0.0
        stats.append(LayerChangeStats(
            feature_change_fraction=feature_frac,
            attention_change_fraction=attention_frac,
            feature_zero_fraction=float(np.mean(w1 == w0)),
            attention_zero_fraction=float(np.mean(a1 == a0)) if a1.size else 0.0,
        ))
    return stats


@dataclass
class DiagnosticsRecord:
    """Everything the conservation laws say about one training epoch."""

    epoch: int
    delta_values: list[np.ndarray]        # per hidden layer, per neuron (signed)
    delta_abs_max: list[float]            # per hidden layer
    delta_abs_mean: list[float]
    delta_rel_max: float                  # network-wide, scale-free
    c_values: list[np.ndarray]            # per hidden layer, per neuron
    layer_drift: list[float]              # per hidden layer, one optimizer step
    rel_grad_w: list[float]               # per layer 1..L
    rel_grad_a: list[float | None]
    change_stats: list[LayerChangeStats]  # per layer, current vs epoch-0 params

    def __post_init__(self):
        for s in self.change_stats:
            for value in (s.feature_change_fraction, s.attention_change_fraction,
                          s.feature_zero_fraction, s.attention_zero_fraction):
                if not 0.0 <= value <= 1.0:
                    raise ValueError("change fractions must lie in [0, 1]")


def diagnostics_snapshot(epoch: int, net: GatNetwork, grads: Gradients,
                         init_net: GatNetwork, prev_net: GatNetwork | None = None,
                         sig_threshold: float = 1e-4,
                         change_threshold: float = 0.5) -> DiagnosticsRecord:
    """Assemble a DiagnosticsRecord from one (parameters, gradients) snapshot."""
    depth = net.config.depth
    deltas, c_vals, drifts = [], [], []
    rel_max = 0.0
    for layer in range(1, depth):
        row = np.array([delta(net, grads, layer, i)
                        for i in range(net.config.head_out_dim(layer))])
        deltas.append(row)
        c_vals.append(c_array(net, layer))
        drifts.append(layer_law_drift(prev_net, net, layer) if prev_net is not None else 0.0)
        for i in range(net.config.head_out_dim(layer)):
            rel_max = max(rel_max, relative_delta(net, grads, layer, i))
    norms = relative_grad_norms(net, grads)
    return DiagnosticsRecord(
        epoch=epoch,
        delta_values=deltas,
        delta_abs_max=[float(np.max(np.abs(d))) if d.size else 0.0 for d in deltas],
        delta_abs_mean=[float(np.mean(np.abs(d))) if d.size else 0.0 for d in deltas],
        delta_rel_max=rel_max,
        c_values=c_vals,
        layer_drift=drifts,
        rel_grad_w=[w for w, _ in norms],
        rel_grad_a=[a for _, a in norms],
        change_stats=param_change_stats(init_net, net, sig_threshold, change_threshold),
    )


def write_diagnostics_csv(records: list[DiagnosticsRecord], path) -> None:
    """Long-format CSV: epoch, layer, metric, neuron (-1 for aggregates), value."""

    def fmt(x) -> str:
        return "nan" if x is None else f"{x:.17g}"

    with open(path, "w") as fh:
        fh.write("epoch,layer,metric,neuron,value\n")
        for rec in records:
            for idx, row in enumerate(rec.delta_values):
                layer = idx + 1
                for neuron, value in enumerate(row):
                    fh.write(f"{rec.epoch},{layer},delta,{neuron},{fmt(value)}\n")
                for neuron, value in enumerate(rec.c_values[idx]):
                    fh.write(f"{rec.epoch},{layer},c,{neuron},{fmt(value)}\n")
                fh.write(f"{rec.epoch},{layer},delta_abs_max,-1,{fmt(rec.delta_abs_max[idx])}\n")
                fh.write(f"{rec.epoch},{layer},delta_abs_mean,-1,{fmt(rec.delta_abs_mean[idx])}\n")
                fh.write(f"{rec.epoch},{layer},layer_drift,-1,{fmt(rec.layer_drift[idx])}\n")
            fh.write(f"{rec.epoch},-1,delta_rel_max,-1,{fmt(rec.delta_rel_max)}\n")
            for idx in range(len(rec.rel_grad_w)):
                layer = idx + 1
                fh.write(f"{rec.epoch},{layer},rel_grad_w,-1,{fmt(rec.rel_grad_w[idx])}\n")
                fh.write(f"{rec.epoch},{layer},rel_grad_a,-1,{fmt(rec.rel_grad_a[idx])}\n")
                stats = rec.change_stats[idx]
                fh.write(f"{rec.epoch},{layer},feature_change_fraction,-1,"
                         f"{fmt(stats.feature_change_fraction)}\n")
                fh.write(f"{rec.epoch},{layer},attention_change_fraction,-1,"
                         f"{fmt(stats.attention_change_fraction)}\n")
                fh.write(f"{rec.epoch},{layer},feature_zero_fraction,-1,"
                         f"{fmt(stats.feature_zero_fraction)}\n")
                fh.write(f"{rec.epoch},{layer},attention_zero_fraction,-1,"
                         f"{fmt(stats.attention_zero_fraction)}\n")
