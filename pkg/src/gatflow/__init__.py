"""Graph attention networks with exact gradients, balanced initialization,
and gradient-flow conservation diagnostics."""

from .autodiff import (NonFiniteError, SegmentIndex, Tape, Tensor,
                       finite_diff_grad, masked_cross_entropy)
from .conservation import (DiagnosticsRecord, c_value, delta, layer_law_drift,
                           max_abs_c, max_relative_delta, param_change_stats,
                           relative_grad_norms, telescoped_residual)
from .graphs import (Dataset, Graph, add_self_loops, build_graph, gen_sbm,
                     karate_fixture, load_dataset, save_dataset)
from .initializers import (InitSpec, balance, identity_variants, initialize,
                           ll_orthogonal, ll_structure, xavier)
from .network import (GatNetwork, NetworkConfig, collect_gradients, forward,
                      layer_forward, prepare_graph, rescale_neuron)
from .training import TrainConfig, TrainHistory, accuracy, adam_step, gd_step, train

__version__ = "0.1.0"

__all__ = [
    "DiagnosticsRecord", "Dataset", "GatNetwork", "Graph", "InitSpec",
    "NetworkConfig", "NonFiniteError", "SegmentIndex", "Tape", "Tensor",
    "TrainConfig", "TrainHistory", "accuracy", "add_self_loops", "adam_step",
    "balance", "build_graph", "c_value", "collect_gradients", "delta",
    "finite_diff_grad", "forward", "gd_step", "gen_sbm", "identity_variants",
    "initialize", "karate_fixture", "layer_forward", "layer_law_drift",
    "ll_orthogonal", "ll_structure", "load_dataset", "masked_cross_entropy",
    "max_abs_c", "max_relative_delta", "param_change_stats", "prepare_graph",
    "relative_grad_norms", "rescale_neuron", "save_dataset",
    "telescoped_residual", "train", "xavier",
]
