"""Full-batch training with gradient descent and Adam, best-validation
selection, and conservation-diagnostic snapshotting.

One run: forward on the train mask -> masked cross-entropy -> backward ->
optimizer step, until max_epochs or the training loss reaches the
convergence threshold. Validation/test labels are only ever read for
accuracy; the loss is computed strictly on the train mask. Runs are
deterministic given their seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError
from .conservation import DiagnosticsRecord, diagnostics_snapshot
from .graphs import Dataset
from .initializers import InitSpec, initialize
from .network import (GatNetwork, NetworkConfig, ParamKey, collect_gradients,
                      forward, prepare_graph)

Params = dict[ParamKey, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "gd"          # gd | adam
    lr: float = 0.1
    max_epochs: int = 5000
    converge_loss: float = 1e-4
    weight_decay: float = 0.0
    dropout: float = 0.0
    diag_every: int = 25
    seed: int = 0
    sig_threshold: float = 1e-4
    change_threshold: float = 0.5

    def __post_init__(self):
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_epochs < 1 or self.diag_every < 1:
            raise ValueError("max_epochs and diag_every must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "optimizer", "lr", "max_epochs", "converge_loss", "weight_decay",
            "dropout", "diag_every", "seed", "sig_threshold", "change_threshold")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def masked_cross_entropy(logits: ad.Tensor, labels, mask) -> ad.Tensor:
    """Mean cross-entropy over masked nodes, recorded on the logits' tape."""
    return ad.masked_cross_entropy(logits, labels, mask)


def _check_grads_finite(grads: Params) -> None:
    for key, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {key}")


def gd_step(params: Params, grads: Params, lr: float,
            weight_decay: float = 0.0) -> Params:
    """w <- w - lr * (grad + weight_decay * w); returns new arrays."""
    _check_grads_finite(grads)
    return {key: w - lr * (grads[key] + weight_decay * w)
            for key, w in params.items()}


@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: Params) -> "AdamState":
        return cls(m={k: np.zeros_like(w) for k, w in params.items()},
                   v={k: np.zeros_like(w) for k, w in params.items()})


def adam_step(params: Params, grads: Params, state: AdamState, lr: float,
              weight_decay: float = 0.0) -> tuple[Params, AdamState]:
    """Bias-corrected Adam update; mutates and returns the moment state."""
    _check_grads_finite(grads)
    state.step += 1
    t = state.step
    out: Params = {}
    for key, w in params.items():
        g = grads[key] + weight_decay * w
        state.m[key] = state.beta1 * state.m[key] + (1 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1 - state.beta2) * g * g
        m_hat = state.m[key] / (1 - state.beta1 ** t)
        v_hat = state.v[key] / (1 - state.beta2 ** t)
        out[key] = w - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out, state


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of masked nodes whose argmax logit (lowest index on ties)
    matches the label."""
    if not mask.any():
        return float("nan")
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = -1.0
    best_test_acc: float = 0.0
    best_train_acc: float = 0.0
    best_params: GatNetwork | None = None
    init_params: GatNetwork | None = None
    final_params: GatNetwork | None = None
    diagnostics: list[DiagnosticsRecord] = field(default_factory=list)
    converged: bool = False
    diverged_epoch: int | None = None
    epochs_run: int = 0
    wall_time_sec: float = 0.0

    def write_history_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,train_acc,val_acc,test_acc\n")
            for e in range(len(self.train_loss)):
                fh.write(f"{e + 1},{self.train_loss[e]:.17g},{self.train_acc[e]:.17g},"
                         f"{self.val_acc[e]:.17g},{self.test_acc[e]:.17g}\n")

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_val_acc": self.best_val_acc,
            "best_test_acc": self.best_test_acc,
            "best_train_acc": self.best_train_acc,
            "converged": self.converged,
            "diverged_epoch": self.diverged_epoch,
            "epochs_run": self.epochs_run,
            "wall_time_sec": self.wall_time_sec,
        }


def train(dataset: Dataset, net_config: NetworkConfig, init_spec: InitSpec,
          cfg: TrainConfig) -> TrainHistory:
    """Run one seeded full-batch training; see module docstring for the loop."""
    net = initialize(net_config, init_spec)
    graph = prepare_graph(dataset.graph, net_config)
    rng = np.random.default_rng(cfg.seed)
    trainable = net.trainable_keys()

    history = TrainHistory(init_params=net.clone())
    adam_state = AdamState.init({k: net.params[k] for k in trainable}) \
        if cfg.optimizer == "adam" else None
    prev_net: GatNetwork | None = None
    start = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        try:
            # overflow surfaces as NonFiniteError and is recorded below
            with np.errstate(over="ignore", invalid="ignore"):
                result = forward(net, dataset, graph=graph,
                                 dropout=cfg.dropout, rng=rng)
                loss = masked_cross_entropy(result.logits, dataset.labels,
                                            dataset.train_mask)
                loss_value = float(loss.data[0, 0])
                if cfg.dropout > 0.0:
                    eval_logits = forward(net, dataset, graph=graph).logits.data
                else:
                    eval_logits = result.logits.data
        except NonFiniteError:
            history.diverged_epoch = epoch
            break

        history.train_loss.append(loss_value)
        history.train_acc.append(accuracy(eval_logits, dataset.labels, dataset.train_mask))
        history.val_acc.append(accuracy(eval_logits, dataset.labels, dataset.val_mask))
        history.test_acc.append(accuracy(eval_logits, dataset.labels, dataset.test_mask))
        history.epochs_run = epoch

        if history.val_acc[-1] > history.best_val_acc:
            history.best_val_acc = history.val_acc[-1]
            history.best_test_acc = history.test_acc[-1]
            history.best_train_acc = history.train_acc[-1]
            history.best_epoch = epoch
            history.best_params = net.clone()

        result.tape.backward(loss)
        grads = collect_gradients(result)

        if epoch == 1 or epoch % cfg.diag_every == 0:
            history.diagnostics.append(diagnostics_snapshot(
                epoch, net, grads, history.init_params, prev_net,
                cfg.sig_threshold, cfg.change_threshold))

        if loss_value <= cfg.converge_loss:
            history.converged = True
            break

        prev_net = net.clone()
        step_params = {k: net.params[k] for k in trainable}
        step_grads = {k: grads[k] for k in trainable}
        try:
            if cfg.optimizer == "gd":
                updated = gd_step(step_params, step_grads, cfg.lr, cfg.weight_decay)
            else:
                updated, adam_state = adam_step(step_params, step_grads, adam_state,
                                                cfg.lr, cfg.weight_decay)
        except NonFiniteError:
            history.diverged_epoch = epoch
            break
        for key in trainable:
            net.params[key] = updated[key]

    history.wall_time_sec = time.perf_counter() - start
    history.final_params = net.clone()
    if history.best_params is None:
        history.best_params = net.clone()
    return history
