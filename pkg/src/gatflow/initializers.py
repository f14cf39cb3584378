"""Parameter initialization schemes, including the balancing procedure.

Schemes:
  xavier           fan-based uniform for feature and attention weights
  xavier_zero_attn xavier features, zero attention
  bal_xavier       xavier features, then balanced (zero attention)
  bal_llortho      looks-linear orthogonal blocks, then balanced
  identity         identity hidden layers, xavier ends, balanced to norm 1
  ll_identity      looks-linear identity hidden blocks, balanced to norm^2 2

Balancing rescales rows/columns so that for every neuron the squared norm
of incoming weights equals the squared norm of outgoing weights (attention
zeroed), making the conserved per-neuron quantity exactly zero at
initialization. Balanced nets keep every rescaled row/column's direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import GatNetwork, NetworkConfig

SCHEMES = ("xavier", "xavier_zero_attn", "bal_xavier", "bal_llortho",
           "identity", "ll_identity")


@dataclass(frozen=True)
class InitSpec:
    scheme: str = "xavier"
    beta: float = 2.0   # first-layer squared row norm used by balancing
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "beta": self.beta, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "InitSpec":
        return cls(**d)


def _xavier_fill(arr: np.ndarray, rng: np.random.Generator) -> None:
    fan_out, fan_in = arr.shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    arr[:] = rng.uniform(-bound, bound, size=arr.shape)


def xavier(config: NetworkConfig, seed: int, zero_attention: bool = False) -> GatNetwork:
    """Fan-based uniform init, U(-sqrt(6/(fan_in+fan_out)), +...).

    The attention vector is treated as an (n_l, 1) matrix, so its entries
    have variance 2/(1 + n_l). With zero_attention the vectors are exactly 0.
    """
    rng = np.random.default_rng(seed)
    net = GatNetwork.zeros(config)
    for key, arr in net.params.items():
        if key[0] == "a":
            if not zero_attention and config.variant != "gcn_mean":
                _xavier_fill(arr, rng)
        else:
            _xavier_fill(arr, rng)
    return net


def balance(net: GatNetwork, beta: float = 2.0) -> GatNetwork:
    """Rescale a copy so every neuron's conserved quantity is exactly zero.

    Steps: zero all attention vectors; rescale first-layer rows to norm
    sqrt(beta); then walk l = 1..L-1 rescaling each column of layer l+1 to
    the (current) norm of the matching row of layer l. Heads are balanced
    independently, which also balances the head-summed quantity.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    out = net.clone()
    cfg = out.config
    kinds = out.feature_kinds()
    for key in out.params:
        if key[0] == "a":
            out.params[key][:] = 0.0
    for k in range(cfg.heads):
        for kind in kinds:
            w1 = out.params[(kind, 1, k)]
            norms = np.linalg.norm(w1, axis=1)
            if np.any(norms <= 1e-12):
                raise ValueError("degenerate draw: first-layer row with ~zero norm")
            w1 *= (np.sqrt(beta) / norms)[:, None]
        for layer in range(1, cfg.depth):
            # incoming norm of neuron i at layer `layer`, summed over Ws/Wt
            row_sq = np.zeros(cfg.head_out_dim(layer))
            for kind in kinds:
                row_sq += np.sum(out.params[(kind, layer, k)] ** 2, axis=1)
            target = np.sqrt(row_sq / len(kinds))
            for kind in kinds:
                w_next = out.params[(kind, layer + 1, k)]
                col_norms = np.linalg.norm(w_next, axis=0)
                if np.any(col_norms <= 1e-12):
                    raise ValueError(
                        f"degenerate draw: zero-norm column in layer {layer + 1}")
                w_next *= (target / col_norms)[None, :]
    return out


def _orthonormal_rows(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormalize a seeded Gaussian draw; requires rows <= cols."""
    if rows > cols:
        raise ValueError(f"cannot draw {rows} orthonormal rows of length {cols}")
    g = rng.standard_normal((cols, rows))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))[None, :]
    return np.ascontiguousarray(q.T)


def _check_ll_feasible(config: NetworkConfig) -> None:
    for k_layer in range(1, config.depth + 1):
        out, inp = config.head_shape(k_layer)
        if k_layer < config.depth and out % 2:
            raise ValueError(f"looks-linear init needs even width at layer {k_layer}")
        if k_layer > 1 and inp % 2:
            raise ValueError(f"looks-linear init needs even width into layer {k_layer}")
    first_out, first_in = config.head_shape(1)
    if config.depth == 1:
        return
    if first_out // 2 > first_in:
        raise ValueError("first layer too wide for orthonormal rows")
    for k_layer in range(2, config.depth):
        out, inp = config.head_shape(k_layer)
        if out // 2 > inp // 2:
            raise ValueError(f"layer {k_layer} too wide for orthonormal rows")
    last_out, last_in = config.head_shape(config.depth)
    if last_out > last_in // 2:
        raise ValueError("output layer too wide for orthonormal rows")


def _ll_block(u: np.ndarray) -> np.ndarray:
    return np.block([[u, -u], [-u, u]])


def _fill_ll_structure(net: GatNetwork, sub) -> None:
    """Set feature weights to the mirrored looks-linear layout.

    sub(rows, cols) supplies each orthonormal-rowed submatrix: the first
    layer stacks [U; -U], hidden layers use [[U, -U], [-U, U]], and the
    last layer places [U, -U] side by side.
    """
    cfg = net.config
    for k in range(cfg.heads):
        for kind in net.feature_kinds():
            if cfg.depth == 1:
                out, inp = cfg.head_shape(1)
                u = sub(out, inp, 1, k)
                net.params[(kind, 1, k)][:] = u
                continue
            out, inp = cfg.head_shape(1)
            u1 = sub(out // 2, inp, 1, k)
            net.params[(kind, 1, k)][:] = np.concatenate([u1, -u1], axis=0)
            for layer in range(2, cfg.depth):
                out, inp = cfg.head_shape(layer)
                u = sub(out // 2, inp // 2, layer, k)
                net.params[(kind, layer, k)][:] = _ll_block(u)
            out, inp = cfg.head_shape(cfg.depth)
            ul = sub(out, inp // 2, cfg.depth, k)
            net.params[(kind, cfg.depth, k)][:] = np.concatenate([ul, -ul], axis=1)
        for layer in range(1, cfg.depth + 1):
            net.params[("a", layer, k)][:] = 0.0


def ll_structure(config: NetworkConfig, seed: int) -> GatNetwork:
    """The raw (unbalanced) looks-linear orthogonal construction."""
    _check_ll_feasible(config)
    rng = np.random.default_rng(seed)
    net = GatNetwork.zeros(config)
    _fill_ll_structure(net, lambda r, c, layer, k: _orthonormal_rows(r, c, rng))
    return net


def ll_orthogonal(config: NetworkConfig, seed: int) -> GatNetwork:
    """Looks-linear orthogonal blocks followed by balancing with beta = 2."""
    return balance(ll_structure(config, seed), beta=2.0)


def identity_variants(config: NetworkConfig, kind: str, seed: int) -> GatNetwork:
    """Identity (or looks-linear identity) hidden layers, Xavier first/last
    layers, then balanced: norm 1 ends for identity, norm^2 2 for ll_identity."""
    if kind not in ("identity", "ll_identity"):
        raise ValueError(f"unknown identity variant {kind!r}")
    rng = np.random.default_rng(seed)
    net = GatNetwork.zeros(config)
    cfg = config
    for k in range(cfg.heads):
        for fk in net.feature_kinds():
            for layer in (1, cfg.depth):
                _xavier_fill(net.params[(fk, layer, k)], rng)
            for layer in range(2, cfg.depth):
                out, inp = cfg.head_shape(layer)
                if kind == "identity":
                    if out != inp:
                        raise ValueError(
                            f"identity init needs square hidden layers, got {out}x{inp}")
                    net.params[(fk, layer, k)][:] = np.eye(out)
                else:
                    if out % 2 or inp % 2 or out != inp:
                        raise ValueError(
                            f"ll_identity init needs square even hidden layers, got {out}x{inp}")
                    net.params[(fk, layer, k)][:] = _ll_block(np.eye(out // 2))
    return balance(net, beta=1.0 if kind == "identity" else 2.0)


def initialize(config: NetworkConfig, spec: InitSpec) -> GatNetwork:
    """Build a network per the requested scheme."""
    if spec.scheme == "xavier":
        return xavier(config, spec.seed)
    if spec.scheme == "xavier_zero_attn":
        return xavier(config, spec.seed, zero_attention=True)
    if spec.scheme == "bal_xavier":
        return balance(xavier(config, spec.seed), beta=spec.beta)
    if spec.scheme == "bal_llortho":
        return ll_orthogonal(config, spec.seed)
    return identity_variants(config, spec.scheme, spec.seed)
