import numpy as np
import pytest
from _oracles import random_net, ring_dataset

from gatflow import autodiff as ad
from gatflow import conservation as law
from gatflow.initializers import InitSpec, balance, initialize, xavier
from gatflow.network import GatNetwork, NetworkConfig, collect_gradients, forward
from gatflow.training import gd_step


def gradients_at(net, ds):
    result = forward(net, ds)
    loss = ad.masked_cross_entropy(result.logits, ds.labels, ds.train_mask)
    result.tape.backward(loss)
    return collect_gradients(result), float(loss.data[0, 0])


# ---------------------------------------------------------------- delta identity

@pytest.mark.parametrize("sharing", [True, False])
@pytest.mark.parametrize("variant", ["gatv2", "gcn_mean"])
def test_delta_vanishes_for_relu_networks(sharing, variant):
    ds = ring_dataset(n=8, d=5, classes=3, seed=0)
    cfg = NetworkConfig(widths=(5, 8, 8, 3), weight_sharing=sharing,
                        variant=variant, activation="relu")
    net = random_net(cfg, seed=1)
    grads, _ = gradients_at(net, ds)
    assert law.max_relative_delta(net, grads) < 1e-9


@pytest.mark.parametrize("heads,agg", [(2, "concat"), (3, "average")])
def test_delta_vanishes_multihead(heads, agg):
    ds = ring_dataset(n=8, d=6, classes=2, seed=2)
    cfg = NetworkConfig(widths=(6, 8, 8, 2), heads=heads, head_agg=agg,
                        activation="leaky_relu")
    net = random_net(cfg, seed=3)
    grads, _ = gradients_at(net, ds)
    assert law.max_relative_delta(net, grads) < 1e-9


def test_delta_zero_for_zero_gradients():
    net = random_net(NetworkConfig(widths=(4, 6, 2)), seed=4)
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    assert law.delta(net, grads, 1, 0) == 0.0


def test_delta_nonzero_with_elu():
    ds = ring_dataset(n=8, d=5, classes=3, seed=5)
    cfg = NetworkConfig(widths=(5, 8, 8, 3), activation="elu")
    net = random_net(cfg, seed=6)
    grads, _ = gradients_at(net, ds)
    assert law.max_relative_delta(net, grads) > 1e-6


def test_delta_validates_arguments():
    net = random_net(NetworkConfig(widths=(4, 6, 2)), seed=7)
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    with pytest.raises(ValueError, match="layer"):
        law.delta(net, grads, 2, 0)
    with pytest.raises(ValueError, match="neuron"):
        law.delta(net, grads, 1, 6)
    with pytest.raises(ValueError, match="missing"):
        law.delta(net, {}, 1, 0)


def test_delta_layer_sums_neurons():
    ds = ring_dataset(n=6, d=4, seed=8)
    net = random_net(NetworkConfig(widths=(4, 5, 2)), seed=9)
    grads, _ = gradients_at(net, ds)
    total = sum(law.delta(net, grads, 1, i) for i in range(5))
    assert abs(law.delta_layer(net, grads, 1) - total) < 1e-15


# ---------------------------------------------------------------- c values

def test_c_hand_built_norms():
    # |W^1[0,:]|^2 = 4, a^1[0]^2 = 1, |W^2[:,0]|^2 = 3  ->  c = 4 - 1 - 3 = 0
    cfg = NetworkConfig(widths=(3, 2, 2))
    net = GatNetwork.zeros(cfg)
    net.params[("W", 1, 0)][0, :] = [2.0, 0.0, 0.0]
    net.params[("a", 1, 0)][0, 0] = 1.0
    net.params[("W", 2, 0)][:, 0] = [np.sqrt(3.0), 0.0]
    assert abs(law.c_value(net, 1, 0)) < 1e-15


def test_c_matches_independent_norm_computation():
    from _oracles import random_net as rn
    cfg = NetworkConfig(widths=(6, 4, 4, 3), heads=2, head_agg="average",
                        weight_sharing=False)
    net = rn(cfg, seed=10)
    for layer in (1, 2):
        for i in range(cfg.head_out_dim(layer)):
            expected = 0.0
            for k in range(2):
                for kind in ("Ws", "Wt"):
                    expected += np.sum(net.params[(kind, layer, k)][i, :] ** 2)
                    expected -= np.sum(net.params[(kind, layer + 1, k)][:, i] ** 2)
                expected -= net.params[("a", layer, k)][i, 0] ** 2
            assert abs(law.c_value(net, layer, i) - expected) < 1e-12


def test_balanced_init_c_is_zero():
    cfg = NetworkConfig(widths=(10, 8, 8, 3))
    net = balance(xavier(cfg, seed=11), beta=2.0)
    assert law.max_abs_c(net) < 1e-12


def test_xavier_deep_wide_materially_unbalanced():
    cfg = NetworkConfig(widths=(1433,) + (64,) * 9 + (7,))
    net = xavier(cfg, seed=12)
    all_c = np.concatenate([law.c_array(net, layer) for layer in range(1, 10)])
    assert float(np.mean(np.abs(all_c))) > 0.1


# ---------------------------------------------------------------- telescoped identity

def test_telescoped_residual_vanishes():
    ds = ring_dataset(n=8, d=5, classes=3, seed=13)
    for variant in ("gatv2", "gcn_mean"):
        cfg = NetworkConfig(widths=(5, 8, 8, 3), variant=variant)
        net = random_net(cfg, seed=14)
        grads, _ = gradients_at(net, ds)
        assert abs(law.telescoped_residual(net, grads)) < 1e-8


def test_telescoped_residual_single_layer_vacuous():
    net = random_net(NetworkConfig(widths=(4, 2)), seed=15)
    grads = {k: np.ones_like(v) for k, v in net.params.items()}
    assert law.telescoped_residual(net, grads) == 0.0


def test_telescoped_residual_equals_summed_deltas():
    ds = ring_dataset(n=7, d=4, classes=2, seed=16)
    cfg = NetworkConfig(widths=(4, 6, 6, 2), weight_sharing=False)
    net = random_net(cfg, seed=17)
    grads, _ = gradients_at(net, ds)
    summed = sum(law.delta(net, grads, layer, i)
                 for layer in (1, 2) for i in range(6))
    assert abs(law.telescoped_residual(net, grads) - summed) < 1e-10


# ---------------------------------------------------------------- layer law drift

def test_drift_zero_for_zero_gradient_step():
    net = random_net(NetworkConfig(widths=(4, 6, 6, 2)), seed=18)
    zero = {k: np.zeros_like(v) for k, v in net.params.items()}
    stepped = GatNetwork(net.config, gd_step(net.params, zero, lr=0.5))
    assert law.layer_law_drift(net, stepped, 1) == 0.0


def test_single_step_drift_scales_quadratically_with_lr():
    ds = ring_dataset(n=8, d=5, classes=3, seed=19)
    cfg = NetworkConfig(widths=(5, 8, 8, 3))
    net = random_net(cfg, seed=20)
    grads, _ = gradients_at(net, ds)

    def drift_at(lr):
        stepped = GatNetwork(cfg, gd_step(net.params, grads, lr))
        return max(abs(law.layer_law_drift(net, stepped, layer)) for layer in (1, 2))

    ratio = drift_at(0.2) / drift_at(0.1)
    assert 3.0 <= ratio <= 5.0


# ---------------------------------------------------------------- gradient norms

def test_relative_grad_norms_ratio_one_and_zero():
    net = random_net(NetworkConfig(widths=(4, 6, 2)), seed=21)
    same = {k: v.copy() for k, v in net.params.items()}
    for (w_ratio, a_ratio) in law.relative_grad_norms(net, same):
        assert abs(w_ratio - 1.0) < 1e-12
        assert abs(a_ratio - 1.0) < 1e-12
    zero = {k: np.zeros_like(v) for k, v in net.params.items()}
    for (w_ratio, a_ratio) in law.relative_grad_norms(net, zero):
        assert w_ratio == 0.0 and a_ratio == 0.0


def test_relative_grad_norms_none_for_zero_attention():
    net = initialize(NetworkConfig(widths=(4, 6, 2)), InitSpec("bal_xavier", seed=0))
    grads = {k: np.ones_like(v) for k, v in net.params.items()}
    for (_w, a_ratio) in law.relative_grad_norms(net, grads):
        assert a_ratio is None


def test_relative_grad_norms_zero_weight_norm_is_error():
    net = GatNetwork.zeros(NetworkConfig(widths=(3, 2)))
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    with pytest.raises(ValueError, match="zero feature-weight norm"):
        law.relative_grad_norms(net, grads)


# ---------------------------------------------------------------- change stats

def test_change_stats_identical_params():
    net = random_net(NetworkConfig(widths=(4, 6, 2)), seed=22)
    for s in law.param_change_stats(net, net.clone()):
        assert s.feature_change_fraction == 0.0
        assert s.attention_change_fraction == 0.0
        assert s.feature_zero_fraction == 1.0
        assert s.attention_zero_fraction == 1.0


def test_change_stats_doubled_params_threshold_strictness():
    net = random_net(NetworkConfig(widths=(4, 6, 2)), seed=23, scale=1.0)
    doubled = net.clone()
    for key in doubled.params:
        doubled.params[key] *= 2.0
    # relative change |(2w - w)/2w| = 0.5 exactly: strict > at 0.5 gives 0
    at_half = law.param_change_stats(net, doubled, change_threshold=0.5)
    at_04 = law.param_change_stats(net, doubled, change_threshold=0.4)
    for s in at_half:
        assert s.feature_change_fraction == 0.0
        assert s.feature_zero_fraction == 0.0
    for s in at_04:
        assert s.feature_change_fraction == 1.0


def test_change_stats_significance_filter():
    cfg = NetworkConfig(widths=(2, 2, 2))
    init = GatNetwork.zeros(cfg)
    best = GatNetwork.zeros(cfg)
    # significant changed (1 -> 3), significant unchanged (2 -> 2),
    # insignificant but hugely changed in relative terms (5e-5 -> 1e-5)
    init.params[("W", 1, 0)][:] = [[1.0, 2.0], [0.0, 5e-5]]
    best.params[("W", 1, 0)][:] = [[3.0, 2.0], [0.0, 1e-5]]
    init.params[("W", 2, 0)][:] = np.eye(2)
    best.params[("W", 2, 0)][:] = np.eye(2)
    stats = law.param_change_stats(init, best, change_threshold=0.5)
    # significant entries at layer 1 are 3.0 and 2.0; only the first changed
    assert stats[0].feature_change_fraction == pytest.approx(0.5)
    assert stats[1].feature_change_fraction == 0.0


def test_diagnostics_record_and_csv(tmp_path):
    ds = ring_dataset(n=6, d=4, seed=24)
    net = random_net(NetworkConfig(widths=(4, 5, 2)), seed=25)
    grads, _ = gradients_at(net, ds)
    rec = law.diagnostics_snapshot(7, net, grads, net.clone())
    assert rec.epoch == 7
    assert len(rec.delta_values) == 1 and rec.delta_values[0].shape == (5,)
    assert len(rec.rel_grad_w) == 2
    path = tmp_path / "diagnostics.csv"
    law.write_diagnostics_csv([rec], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,layer,metric,neuron,value"
    assert any(",delta," in line for line in lines)
    assert any(",c," in line for line in lines)
    assert any("rel_grad_w" in line for line in lines)
