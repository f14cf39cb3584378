"""GAT/GCN network construction, tape-recorded forward pass, and the
per-neuron rescale map.

Layer rule, per head: edge score e_uv = a^T LeakyReLU(Ws h_u + Wt h_v)
(Ws = Wt = W under weight sharing), attention = per-target softmax of the
scores, output row v = sum_u attention_uv * (Ws h_u), then the layer
activation. The gcn_mean variant skips attention entirely and aggregates
with fixed 1/|N(v)| weights.

Multi-head layout: with concatenation, hidden layers are split into
independent per-head towers (head k of layer l reads head k's slice of the
previous concatenated output; layer 1 reads the full input) and the final
layer maps each head's slice to the full class dimension, averaging the
heads. With averaging, every head is full width and head outputs are
averaged at every layer. Both layouts keep the per-neuron rescale
invariance that the conservation diagnostics rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graphs import Dataset, Graph, add_self_loops

ACTIVATIONS = ("relu", "leaky_relu", "elu")
VARIANTS = ("gatv2", "gcn_mean")
HEAD_AGGS = ("concat", "average")

ParamKey = tuple[str, int, int]  # (kind, layer, head), kind in W/Ws/Wt/a


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of a GAT/GCN stack; widths run n_0 (features) .. n_L (classes)."""

    widths: tuple[int, ...]
    heads: int = 1
    head_agg: str = "concat"
    activation: str = "relu"
    attn_slope: float = 0.2
    weight_sharing: bool = True
    variant: str = "gatv2"
    final_activation: bool = False
    self_loops: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be positive")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.head_agg not in HEAD_AGGS:
            raise ValueError(f"unknown head aggregation {self.head_agg!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 < self.attn_slope < 1.0:
            raise ValueError("attn_slope must be in (0, 1)")
        if self.heads > 1 and self.head_agg == "concat":
            for w in self.widths[1:-1]:
                if w % self.heads:
                    raise ValueError(
                        f"hidden width {w} not divisible by {self.heads} heads")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def head_in_dim(self, layer: int) -> int:
        if layer == 1 or self.head_agg == "average":
            return self.widths[layer - 1]
        return self.widths[layer - 1] // self.heads

    def head_out_dim(self, layer: int) -> int:
        if layer == self.depth or self.head_agg == "average":
            return self.widths[layer]
        return self.widths[layer] // self.heads

    def head_shape(self, layer: int) -> tuple[int, int]:
        return self.head_out_dim(layer), self.head_in_dim(layer)

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths), "heads": self.heads,
            "head_agg": self.head_agg, "activation": self.activation,
            "attn_slope": self.attn_slope, "weight_sharing": self.weight_sharing,
            "variant": self.variant, "final_activation": self.final_activation,
            "self_loops": self.self_loops,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**{**d, "widths": tuple(d["widths"])})


class GatNetwork:
    """Per-layer, per-head parameter arrays plus the architecture config.

    Keys are (kind, layer, head) with kind "W" under weight sharing,
    "Ws"/"Wt" otherwise, and "a" for the attention vector. Layers are
    1-indexed; heads 0-indexed. The gcn_mean variant keeps its attention
    vectors allocated at zero but excludes them from optimization.
    """

    def __init__(self, config: NetworkConfig, params: dict[ParamKey, np.ndarray]):
        self.config = config
        self.params = params
        self._validate_shapes()

    def _validate_shapes(self):
        cfg = self.config
        for l in range(1, cfg.depth + 1):
            shape = cfg.head_shape(l)
            for k in range(cfg.heads):
                for kind in self.feature_kinds():
                    if self.params[(kind, l, k)].shape != shape:
                        raise ValueError(
                            f"{kind}^{l} head {k}: expected {shape}, "
                            f"got {self.params[(kind, l, k)].shape}")
                if self.params[("a", l, k)].shape != (shape[0], 1):
                    raise ValueError(f"a^{l} head {k}: expected ({shape[0]}, 1)")

    @classmethod
    def zeros(cls, config: NetworkConfig) -> "GatNetwork":
        params: dict[ParamKey, np.ndarray] = {}
        kinds = ("W",) if config.weight_sharing else ("Ws", "Wt")
        for l in range(1, config.depth + 1):
            out, inp = config.head_shape(l)
            for k in range(config.heads):
                for kind in kinds:
                    params[(kind, l, k)] = np.zeros((out, inp))
                params[("a", l, k)] = np.zeros((out, 1))
        return cls(config, params)

    def feature_kinds(self) -> tuple[str, ...]:
        return ("W",) if self.config.weight_sharing else ("Ws", "Wt")

    def w_src(self, layer: int, head: int = 0) -> np.ndarray:
        kind = "W" if self.config.weight_sharing else "Ws"
        return self.params[(kind, layer, head)]

    def w_tgt(self, layer: int, head: int = 0) -> np.ndarray:
        kind = "W" if self.config.weight_sharing else "Wt"
        return self.params[(kind, layer, head)]

    def a(self, layer: int, head: int = 0) -> np.ndarray:
        return self.params[("a", layer, head)]

    def clone(self) -> "GatNetwork":
        return GatNetwork(self.config, {k: v.copy() for k, v in self.params.items()})

    def trainable_keys(self) -> list[ParamKey]:
        if self.config.variant == "gcn_mean":
            return [k for k in self.params if k[0] != "a"]
        return list(self.params)

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def to_json(self) -> str:
        payload = {
            "config": self.config.to_dict(),
            "params": {f"{kind}.{l}.{k}": arr.tolist()
                       for (kind, l, k), arr in self.params.items()},
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "GatNetwork":
        payload = json.loads(text)
        config = NetworkConfig.from_dict(payload["config"])
        params = {}
        for name, values in payload["params"].items():
            kind, l, k = name.split(".")
            params[(kind, int(l), int(k))] = np.asarray(values, dtype=np.float64)
        return cls(config, params)


class ForwardResult(NamedTuple):
    logits: Tensor
    tape: Tape
    handles: dict[ParamKey, Tensor]


def prepare_graph(graph: Graph, config: NetworkConfig) -> Graph:
    """Apply the network's self-loop policy to a dataset graph."""
    return add_self_loops(graph) if config.self_loops else graph


def _mean_alpha(graph: Graph) -> Tensor:
    sizes = graph.seg.sizes()
    if np.any(sizes == 0):
        missing = int(np.nonzero(sizes == 0)[0][0])
        raise ValueError(f"empty segment for target node {missing} (no in-edges)")
    return Tensor((1.0 / np.repeat(sizes, sizes)).reshape(-1, 1))


def _combine_heads(outputs: list[Tensor], how: str) -> Tensor:
    if len(outputs) == 1:
        return outputs[0]
    if how == "concat":
        return ad.concat_cols(outputs)
    acc = outputs[0]
    for t in outputs[1:]:
        acc = ad.add(acc, t)
    return ad.scale(acc, 1.0 / len(outputs))


def layer_forward(net: GatNetwork, handles: dict[ParamKey, Tensor], layer: int,
                  h: Tensor, graph: Graph, mean_alpha: Tensor | None = None) -> Tensor:
    """One GAT/GCN layer on the tape; h is the (n, n_{l-1}) input."""
    cfg = net.config
    is_last = layer == cfg.depth
    tower = cfg.heads > 1 and cfg.head_agg == "concat" and layer > 1
    slice_width = cfg.widths[layer - 1] // cfg.heads if tower else 0
    if cfg.variant == "gcn_mean" and mean_alpha is None:
        mean_alpha = _mean_alpha(graph)

    outputs = []
    for k in range(cfg.heads):
        h_k = ad.slice_cols(h, k * slice_width, (k + 1) * slice_width) if tower else h
        kind_s = "W" if cfg.weight_sharing else "Ws"
        hs = ad.matmul(h_k, ad.transpose(handles[(kind_s, layer, k)]))
        if cfg.variant == "gatv2":
            if cfg.weight_sharing:
                ht = hs
            else:
                ht = ad.matmul(h_k, ad.transpose(handles[("Wt", layer, k)]))
            pre = ad.gather_pair_sum(hs, ht, graph.src, graph.tgt)
            z = ad.activation(pre, "leaky_relu", slope=cfg.attn_slope)
            scores = ad.matmul(z, handles[("a", layer, k)])
            alpha = ad.segment_softmax(scores, graph.seg)
        else:
            alpha = mean_alpha
        agg = ad.segment_gather_weighted_sum(hs, graph.src, alpha, graph.seg)
        if not is_last or cfg.final_activation:
            agg = ad.activation(agg, cfg.activation)
        outputs.append(agg)

    how = "average" if is_last else cfg.head_agg
    return _combine_heads(outputs, how)


def forward(net: GatNetwork, dataset: Dataset, *, graph: Graph | None = None,
            dropout: float = 0.0, rng: np.random.Generator | None = None) -> ForwardResult:
    """Run the full stack on one fresh tape; logits are pre-softmax.

    Dropout (training only) zeroes entries of each layer's input with the
    usual 1/(1-p) rescale; pass the run's generator for reproducibility.
    """
    cfg = net.config
    if dataset.num_features != cfg.widths[0]:
        raise ValueError(
            f"dataset has {dataset.num_features} features, network expects {cfg.widths[0]}")
    if graph is None:
        graph = prepare_graph(dataset.graph, cfg)
    mean_alpha = _mean_alpha(graph) if cfg.variant == "gcn_mean" else None

    tape = Tape()
    handles = {key: tape.leaf(value) for key, value in net.params.items()}
    h: Tensor = Tensor(dataset.features)
    for layer in range(1, cfg.depth + 1):
        if dropout > 0.0:
            if rng is None:
                raise ValueError("dropout requires a random generator")
            keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = ad.mul_const(h, keep)
        h = layer_forward(net, handles, layer, h, graph, mean_alpha)
    return ForwardResult(h, tape, handles)


def collect_gradients(result: ForwardResult) -> dict[ParamKey, np.ndarray]:
    """Per-parameter gradients after tape.backward; unused params get zeros."""
    grads = {}
    for key, handle in result.handles.items():
        g = result.tape.grad(handle)
        grads[key] = np.zeros_like(handle.data) if g is None else g
    return grads


def rescale_neuron(net: GatNetwork, layer: int, neuron: int, lam: float) -> GatNetwork:
    """Scale neuron `neuron`'s incoming rows by lam and its outgoing columns
    plus attention entry by 1/lam, across all heads.

    With a positively homogeneous activation this leaves the loss unchanged
    for any lam > 0; it is the invariance behind the conservation law.
    """
    cfg = net.config
    if not 1 <= layer <= cfg.depth - 1:
        raise ValueError(f"layer must be in [1, {cfg.depth - 1}], got {layer}")
    if lam <= 0:
        raise ValueError(f"scale factor must be positive, got {lam}")
    out_dim = cfg.head_out_dim(layer)
    if not 0 <= neuron < out_dim:
        raise ValueError(f"neuron {neuron} out of range for per-head width {out_dim}")
    scaled = net.clone()
    for k in range(cfg.heads):
        for kind in scaled.feature_kinds():
            scaled.params[(kind, layer, k)][neuron, :] *= lam
            scaled.params[(kind, layer + 1, k)][:, neuron] /= lam
        scaled.params[("a", layer, k)][neuron, 0] /= lam
    return scaled
