"""Experiment runner: train / verify / gradcheck / init-inspect / gen.

Configuration is one JSON document (dataset, network, init, train,
output_dir, runs); any leaf can be overridden on the command line with
dotted flags such as --train.lr=0.05. Exit codes: 0 ok, 1 runtime
failure, 2 bad config, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import conservation as law
from .graphs import Dataset, gen_sbm, karate_fixture, load_dataset
from .initializers import InitSpec, initialize
from .network import (GatNetwork, NetworkConfig, collect_gradients, forward,
                      prepare_graph, rescale_neuron)
from .training import TrainConfig, masked_cross_entropy, train

BALANCED_SCHEMES = ("bal_xavier", "bal_llortho", "identity", "ll_identity")

VERIFY_TOLERANCES = {
    "delta_rel_max": 1e-9,
    "c_abs_max": 1e-12,
    "telescoped_residual": 1e-8,
    "rescale_deviation": 1e-10,
}


class ConfigError(ValueError):
    """Bad or missing experiment configuration."""


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ------------------------------------------------------------------ config

def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply --a.b.c=value style overrides onto a nested config dict."""
    for item in overrides:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"cannot parse override {item!r} (use --path.to.key=value)")
        dotted, _, raw = item[2:].partition("=")
        node = config
        keys = dotted.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} crosses a non-object value")
        node[keys[-1]] = _coerce(raw)
    return config


def load_config(args, overrides) -> dict:
    config: dict = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            config = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
    apply_overrides(config, overrides)
    if args.seed is not None:
        config.setdefault("init", {})["seed"] = args.seed
        config.setdefault("train", {})["seed"] = args.seed
    return config


def parse_blocks(config: dict) -> tuple[NetworkConfig, InitSpec, TrainConfig]:
    try:
        network = NetworkConfig.from_dict(config["network"])
    except KeyError:
        raise ConfigError("config needs a 'network' block with 'widths'") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad network block: {exc}") from exc
    try:
        init = InitSpec.from_dict(config.get("init", {}))
        train_cfg = TrainConfig.from_dict(config.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad init/train block: {exc}") from exc
    return network, init, train_cfg


def resolve_dataset(config: dict) -> Dataset:
    name = config.get("dataset")
    if name is None:
        raise ConfigError("config needs a 'dataset' (builtin name or directory path)")
    if name == "karate":
        return karate_fixture()
    path = Path(name)
    if not path.is_dir():
        raise ConfigError(f"dataset directory not found: {path}")
    return load_dataset(path)


# ------------------------------------------------------------------ train

def _seeded(spec, seed: int):
    d = spec.to_dict()
    d["seed"] = seed
    return type(spec).from_dict(d)


def _run_single(payload) -> dict:
    dataset, network, init, train_cfg, run_dir, seed = payload
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    history = train(dataset, network, _seeded(init, seed), _seeded(train_cfg, seed))
    history.write_history_csv(run_dir / "history.csv")
    law.write_diagnostics_csv(history.diagnostics, run_dir / "diagnostics.csv")
    summary = dict(history.summary(), seed=seed)
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (run_dir / "checkpoint.json").write_text(history.best_params.to_json() + "\n")
    return summary


def mean_ci95(values) -> dict:
    """Mean with a Student-t 95% half-width; zero width for a single run."""
    from scipy import stats

    values = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(values))
    if len(values) < 2:
        return {"mean": mean, "ci95": 0.0, "n": len(values)}
    t = float(stats.t.ppf(0.975, len(values) - 1))
    half = t * float(np.std(values, ddof=1)) / np.sqrt(len(values))
    return {"mean": mean, "ci95": half, "n": len(values)}


def aggregate_summaries(summaries: list[dict]) -> dict:
    return {
        "runs": len(summaries),
        "test_acc": mean_ci95([s["best_test_acc"] for s in summaries]),
        "epochs_to_best": mean_ci95([s["best_epoch"] for s in summaries]),
        "converged_runs": int(sum(bool(s["converged"]) for s in summaries)),
    }


def cmd_train(config: dict, jobs: int = 1) -> int:
    dataset = resolve_dataset(config)
    network, init, train_cfg = parse_blocks(config)
    runs = int(config.get("runs", 1))
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    out_dir = Path(config.get("output_dir", "runs_out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    payloads = [(dataset, network, init, train_cfg,
                 str(out_dir / f"run_{r:03d}"), init.seed + r)
                for r in range(runs)]
    if jobs > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_run_single, payloads))
    else:
        summaries = [_run_single(p) for p in payloads]

    aggregate = aggregate_summaries(summaries)
    (out_dir / "aggregate.json").write_text(
        json.dumps(aggregate, indent=2, sort_keys=True) + "\n")
    print(f"{runs} run(s) -> {out_dir}")
    print(f"test acc {aggregate['test_acc']['mean']:.4f} "
          f"+/- {aggregate['test_acc']['ci95']:.4f}; "
          f"epochs to best {aggregate['epochs_to_best']['mean']:.1f} "
          f"+/- {aggregate['epochs_to_best']['ci95']:.1f}")
    return 0


# ------------------------------------------------------------------ verify

def run_verify(dataset: Dataset, network: NetworkConfig, init: InitSpec,
               grad_tamper=None) -> tuple[int, dict]:
    """One-shot law verification at a fresh initialization.

    Returns (exit_code, measurements). The delta/telescoping/rescale checks
    require a positively homogeneous activation and are skipped (with a
    warning) for elu; grad_tamper is a test hook that may corrupt the
    gradient store before the checks run.
    """
    net = initialize(network, init)
    graph = prepare_graph(dataset.graph, network)
    result = forward(net, dataset, graph=graph)
    loss = masked_cross_entropy(result.logits, dataset.labels, dataset.train_mask)
    base_loss = float(loss.data[0, 0])
    result.tape.backward(loss)
    grads = collect_gradients(result)
    if grad_tamper is not None:
        grad_tamper(grads)

    homogeneous = network.activation in ("relu", "leaky_relu")
    measured: dict[str, float | None] = {}
    failures = []

    if homogeneous:
        measured["delta_rel_max"] = law.max_relative_delta(net, grads)
        measured["telescoped_residual"] = abs(law.telescoped_residual(net, grads))
        rng = np.random.default_rng(init.seed)
        deviation = 0.0
        if network.depth > 1:
            for _ in range(5):
                layer = int(rng.integers(1, network.depth))
                neuron = int(rng.integers(0, network.head_out_dim(layer)))
                for lam in (0.5, 2.0, 10.0):
                    scaled = rescale_neuron(net, layer, neuron, lam)
                    res = forward(scaled, dataset, graph=graph)
                    other = float(masked_cross_entropy(
                        res.logits, dataset.labels, dataset.train_mask).data[0, 0])
                    deviation = max(deviation,
                                    abs(other - base_loss) / max(1.0, abs(base_loss)))
        measured["rescale_deviation"] = deviation
    else:
        print("warning: activation is not positively homogeneous; "
              "delta/telescoping/rescale checks skipped")
        measured["delta_rel_max"] = None
        measured["telescoped_residual"] = None
        measured["rescale_deviation"] = None

    if init.scheme in BALANCED_SCHEMES:
        measured["c_abs_max"] = law.max_abs_c(net)
    else:
        measured["c_abs_max"] = None

    for key, value in measured.items():
        tol = VERIFY_TOLERANCES[key]
        if value is None:
            print(f"{key}: skipped")
            continue
        ok = value < tol
        if not ok:
            failures.append(key)
        print(f"{key}: {_fmt(value)} (tolerance {tol:g}) {'ok' if ok else 'FAIL'}")
    return (3 if failures else 0), measured


def cmd_verify(config: dict, grad_tamper=None) -> int:
    dataset = resolve_dataset(config)
    network, init, _ = parse_blocks(config)
    code, _ = run_verify(dataset, network, init, grad_tamper=grad_tamper)
    return code


# ------------------------------------------------------------------ gradcheck

def run_gradcheck(network: NetworkConfig | None = None, seed: int = 0) -> tuple[int, float]:
    """Backward vs central finite differences on a small random instance."""
    rng = np.random.default_rng(seed)
    n, d = 6, 5
    if network is None:
        network = NetworkConfig(widths=(d, 8, 8, 3))
    edges = [(v, (v + 1) % n) for v in range(n)] + [((v + 1) % n, v) for v in range(n)]
    from .graphs import build_graph

    graph = build_graph(n, edges)
    labels = rng.integers(0, network.widths[-1], size=n)
    mask = np.ones(n, dtype=bool)
    dataset = Dataset(graph, rng.normal(size=(n, network.widths[0])), labels,
                      mask, np.zeros(n, dtype=bool), np.zeros(n, dtype=bool))
    net = initialize(network, InitSpec(scheme="xavier", seed=seed))

    result = forward(net, dataset)
    loss = masked_cross_entropy(result.logits, dataset.labels, mask)
    result.tape.backward(loss)
    grads = collect_gradients(result)
    keys = list(net.params)

    def objective(arrays):
        probe = GatNetwork(network, dict(zip(keys, arrays)))
        res = forward(probe, dataset)
        return float(masked_cross_entropy(res.logits, dataset.labels, mask).data[0, 0])

    reference = ad.finite_diff_grad(objective, [net.params[k] for k in keys])
    err = ad.max_relative_error([grads[k] for k in keys], reference)
    print(f"max relative gradient error: {_fmt(err)} (tolerance 1e-05)")
    return (0 if err < 1e-5 else 3), err


def cmd_gradcheck(config: dict) -> int:
    network = None
    if "network" in config:
        network, _, _ = parse_blocks(config)
    seed = config.get("init", {}).get("seed", 0)
    code, _ = run_gradcheck(network, seed=seed)
    return code


# ------------------------------------------------------------------ init-inspect

def cmd_init_inspect(config: dict) -> int:
    network, init, _ = parse_blocks(config)
    net = initialize(network, init)
    out_dir = Path(config.get("output_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "norms.csv"
    with open(path, "w") as fh:
        fh.write("layer,neuron,row_norm2,a_sq,col_norm2_next,c\n")
        for layer in range(1, network.depth + 1):
            for i in range(network.head_out_dim(layer)):
                row_sq = a_sq = 0.0
                for k in range(network.heads):
                    for kind in net.feature_kinds():
                        row_sq += float(np.sum(net.params[(kind, layer, k)][i, :] ** 2))
                    a_sq += float(net.params[("a", layer, k)][i, 0] ** 2)
                if layer < network.depth:
                    col_sq = sum(
                        float(np.sum(net.params[(kind, layer + 1, k)][:, i] ** 2))
                        for k in range(network.heads) for kind in net.feature_kinds())
                    c = law.c_value(net, layer, i)
                    fh.write(f"{layer},{i},{_fmt(row_sq)},{_fmt(a_sq)},"
                             f"{_fmt(col_sq)},{_fmt(c)}\n")
                else:
                    fh.write(f"{layer},{i},{_fmt(row_sq)},{_fmt(a_sq)},nan,nan\n")
    print(f"wrote {path}")
    return 0


# ------------------------------------------------------------------ gen

def cmd_gen(args) -> int:
    try:
        blocks = [int(tok) for tok in args.blocks.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse --blocks {args.blocks!r}") from None
    dataset = gen_sbm(blocks, args.p_in, args.p_out, args.feat_dim, args.seed)
    from .graphs import save_dataset

    save_dataset(dataset, args.out)
    print(f"wrote SBM dataset ({dataset.num_nodes} nodes, "
          f"{dataset.graph.num_edges} directed edges) -> {args.out}")
    return 0


# ------------------------------------------------------------------ entry

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatflow",
        description="GAT training, conservation-law verification, and diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--jobs", type=int, default=1, help="parallel runs")
        p.add_argument("--seed", type=int, default=None, help="override base seed")

    for name in ("train", "verify", "gradcheck", "init-inspect"):
        common(sub.add_parser(name))

    gen = sub.add_parser("gen", help="write a stochastic block model dataset")
    gen.add_argument("--blocks", required=True, help="comma-separated block sizes")
    gen.add_argument("--p-in", type=float, required=True)
    gen.add_argument("--p-out", type=float, required=True)
    gen.add_argument("--feat-dim", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, overrides = parser.parse_known_args(argv)
    try:
        if args.command == "gen":
            if overrides:
                raise ConfigError(f"unrecognized arguments: {overrides}")
            return cmd_gen(args)
        config = load_config(args, overrides)
        if args.command == "train":
            return cmd_train(config, jobs=args.jobs)
        if args.command == "verify":
            return cmd_verify(config)
        if args.command == "gradcheck":
            return cmd_gradcheck(config)
        return cmd_init_inspect(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
