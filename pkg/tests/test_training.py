import numpy as np
import pytest
from _oracles import ring_dataset

from gatflow import autodiff as ad
from gatflow import graphs
from gatflow.initializers import InitSpec
from gatflow.network import NetworkConfig
from gatflow.training import (AdamState, TrainConfig, accuracy, adam_step, gd_step,
                              masked_cross_entropy, train)


def quadratic(target):
    def grad(params):
        return {k: w - target[k] for k, w in params.items()}
    return grad


# ---------------------------------------------------------------- loss

def test_masked_cross_entropy_uniform_logits_is_log_c():
    logits = ad.Tensor(np.zeros((5, 4)))
    loss = masked_cross_entropy(logits, np.zeros(5, dtype=int), np.ones(5, dtype=bool))
    assert abs(loss.data[0, 0] - np.log(4.0)) < 1e-12


def test_masked_cross_entropy_two_node_hand_example():
    # node 0: logits [1, -1], label 0 -> ln(1 + e^-2)
    # node 1: logits [0, 2],  label 1 -> ln(1 + e^-2)
    logits = ad.Tensor([[1.0, -1.0], [0.0, 2.0]])
    loss = masked_cross_entropy(logits, np.array([0, 1]), np.ones(2, dtype=bool))
    assert abs(loss.data[0, 0] - np.log(1 + np.exp(-2.0))) < 1e-12


# ---------------------------------------------------------------- optimizer steps

def test_gd_step_zero_lr_is_identity():
    params = {"w": np.array([[1.0, -2.0]])}
    grads = {"w": np.array([[5.0, 5.0]])}
    out = gd_step(params, grads, lr=0.0)
    assert np.array_equal(out["w"], params["w"])


def test_gd_step_arithmetic():
    out = gd_step({"w": np.array([[1.0]])}, {"w": np.array([[0.5]])}, lr=0.1)
    assert np.allclose(out["w"], 0.95)


def test_gd_step_weight_decay():
    out = gd_step({"w": np.array([[2.0]])}, {"w": np.array([[0.0]])},
                  lr=0.1, weight_decay=0.5)
    assert np.allclose(out["w"], 2.0 - 0.1 * 0.5 * 2.0)


def test_gd_step_rejects_nonfinite_gradients():
    with pytest.raises(ad.NonFiniteError):
        gd_step({"w": np.array([[1.0]])}, {"w": np.array([[np.nan]])}, lr=0.1)


def test_gd_converges_on_quadratic():
    target = {"w": np.array([[3.0, -1.0], [0.5, 2.0]])}
    params = {"w": np.zeros((2, 2))}
    grad = quadratic(target)
    losses = []
    for _ in range(100):
        losses.append(0.5 * float(np.sum((params["w"] - target["w"]) ** 2)))
        params = gd_step(params, grad(params), lr=0.2)
    assert np.allclose(params["w"], target["w"], atol=1e-8)
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))  # monotone


def test_adam_first_step_size_is_lr():
    params = {"w": np.array([[1.0, -1.0]])}
    grads = {"w": np.array([[0.3, -0.7]])}
    state = AdamState.init(params)
    out, state = adam_step(params, grads, state, lr=0.01)
    assert state.step == 1
    moved = out["w"] - params["w"]
    assert np.allclose(moved, [[-0.01, 0.01]], atol=1e-6)


def test_adam_fixed_point_with_zero_gradients():
    params = {"w": np.array([[1.0, 2.0]])}
    state = AdamState.init(params)
    for _ in range(10):
        params, state = adam_step(params, {"w": np.zeros((1, 2))}, state, lr=0.1)
    assert np.array_equal(params["w"], [[1.0, 2.0]])


def test_adam_converges_on_quadratic():
    target = {"w": np.array([[3.0, -1.0]])}
    params = {"w": np.zeros((1, 2))}
    state = AdamState.init(params)
    grad = quadratic(target)
    for _ in range(500):
        params, state = adam_step(params, grad(params), state, lr=0.05)
    assert np.allclose(params["w"], target["w"], atol=1e-3)


# ---------------------------------------------------------------- accuracy

def test_accuracy_ties_break_to_lowest_class():
    logits = np.zeros((2, 3))
    labels = np.array([0, 1])
    mask = np.ones(2, dtype=bool)
    assert accuracy(logits, labels, mask) == 0.5  # both predict class 0


# ---------------------------------------------------------------- train loop

def small_train_setup(max_epochs=200, lr=0.1, **net_kwargs):
    ds = graphs.gen_sbm([5, 5], p_in=1.0, p_out=0.0, feat_dim=4, seed=0)
    net_config = NetworkConfig(widths=(4, 8, 2), **net_kwargs)
    init_spec = InitSpec(scheme="bal_llortho", seed=1)
    cfg = TrainConfig(optimizer="gd", lr=lr, max_epochs=max_epochs, seed=2)
    return ds, net_config, init_spec, cfg


def test_two_clique_sbm_reaches_full_train_accuracy():
    ds, net_config, init_spec, cfg = small_train_setup()
    history = train(ds, net_config, init_spec, cfg)
    assert max(history.train_acc) == 1.0
    assert history.epochs_run <= 200


def test_wider_sbm_two_layer_reaches_full_train_accuracy():
    ds = graphs.gen_sbm([30, 30], p_in=0.5, p_out=0.05, feat_dim=8, seed=3)
    history = train(ds, NetworkConfig(widths=(8, 16, 2)),
                    InitSpec(scheme="bal_llortho", seed=4),
                    TrainConfig(optimizer="gd", lr=0.1, max_epochs=300, seed=5))
    assert max(history.train_acc) == 1.0


def test_train_is_deterministic():
    ds, net_config, init_spec, cfg = small_train_setup(max_epochs=40)
    a = train(ds, net_config, init_spec, cfg)
    b = train(ds, net_config, init_spec, cfg)
    assert a.train_loss == b.train_loss
    assert a.val_acc == b.val_acc
    assert a.best_epoch == b.best_epoch
    for key in a.best_params.params:
        assert np.array_equal(a.best_params.params[key], b.best_params.params[key])


def test_train_loss_ignores_non_train_labels():
    ds, net_config, init_spec, cfg = small_train_setup(max_epochs=30)
    scrambled_labels = ds.labels.copy()
    scrambled_labels[~ds.train_mask] = 1 - scrambled_labels[~ds.train_mask]
    scrambled = graphs.Dataset(ds.graph, ds.features, scrambled_labels,
                               ds.train_mask, ds.val_mask, ds.test_mask)
    a = train(ds, net_config, init_spec, cfg)
    b = train(scrambled, net_config, init_spec, cfg)
    assert a.train_loss == b.train_loss  # loss path never saw val/test labels


def test_best_epoch_is_earliest_maximum():
    ds, net_config, init_spec, cfg = small_train_setup(max_epochs=60)
    history = train(ds, net_config, init_spec, cfg)
    val = history.val_acc
    first_best = 1 + min(i for i, v in enumerate(val) if v == max(val))
    assert history.best_epoch == first_best


def test_convergence_flag_set_when_loss_reaches_threshold():
    ds, net_config, init_spec, _ = small_train_setup()
    cfg = TrainConfig(optimizer="gd", lr=0.2, max_epochs=3000,
                      converge_loss=1e-4, seed=2)
    history = train(ds, net_config, init_spec, cfg)
    assert history.converged
    assert history.train_loss[-1] <= 1e-4
    assert history.epochs_run < 3000


def test_divergence_recorded_and_aborts():
    ds, net_config, init_spec, _ = small_train_setup()
    cfg = TrainConfig(optimizer="gd", lr=1e150, max_epochs=50, seed=2)
    history = train(ds, net_config, init_spec, cfg)
    assert history.diverged_epoch is not None
    assert history.epochs_run < 50


def test_adam_trains_the_two_clique_sbm():
    ds, net_config, init_spec, _ = small_train_setup()
    cfg = TrainConfig(optimizer="adam", lr=0.01, max_epochs=200, seed=2)
    history = train(ds, net_config, init_spec, cfg)
    assert max(history.train_acc) == 1.0


def test_dropout_run_is_deterministic_and_trains():
    ds, net_config, init_spec, _ = small_train_setup()
    cfg = TrainConfig(optimizer="gd", lr=0.1, max_epochs=60, dropout=0.3, seed=9)
    a = train(ds, net_config, init_spec, cfg)
    b = train(ds, net_config, init_spec, cfg)
    assert a.train_loss == b.train_loss
    assert max(a.train_acc) > 0.5


def test_diagnostics_snapshot_cadence():
    ds, net_config, init_spec, _ = small_train_setup()
    cfg = TrainConfig(optimizer="gd", lr=0.05, max_epochs=50, diag_every=10,
                      converge_loss=0.0, seed=2)
    history = train(ds, net_config, init_spec, cfg)
    epochs = [rec.epoch for rec in history.diagnostics]
    assert epochs == [1, 10, 20, 30, 40, 50]


def test_history_csv_and_summary(tmp_path):
    ds, net_config, init_spec, cfg = small_train_setup(max_epochs=20)
    history = train(ds, net_config, init_spec, cfg)
    path = tmp_path / "history.csv"
    history.write_history_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_acc,test_acc"
    assert len(lines) == 1 + history.epochs_run
    summary = history.summary()
    assert summary["best_epoch"] == history.best_epoch
    assert 0.0 <= summary["best_val_acc"] <= 1.0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="sgd_momentum")
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)
