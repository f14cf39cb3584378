"""Sparse directed graphs, node-classification datasets, loading, and
synthetic generation.

Graphs are stored in in-neighbor CSR form: edges sorted by (target, source)
with a SegmentIndex grouping the edge range of each target. Datasets bundle
a graph with dense features, integer labels, and disjoint train/val/test
masks, and are immutable after construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import SegmentIndex


class DatasetError(ValueError):
    """Malformed dataset files or inconsistent dataset contents."""


@dataclass(frozen=True)
class Graph:
    """Directed graph with edges grouped by target node."""

    num_nodes: int
    src: np.ndarray            # (E,) edge sources, CSR-by-target order
    seg: SegmentIndex          # targets + offsets over all nodes
    self_loops_added: bool = False

    @property
    def num_edges(self) -> int:
        return self.seg.num_edges

    @property
    def tgt(self) -> np.ndarray:
        return self.seg.targets

    def in_degrees(self) -> np.ndarray:
        return self.seg.sizes()

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.tgt.tolist()))


def build_graph(num_nodes: int, edges, self_loops_added: bool = False) -> Graph:
    """Validate and CSR-sort a (source, target) edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges):
        if edges.min() < 0 or edges.max() >= num_nodes:
            raise DatasetError(f"edge endpoint out of range for {num_nodes} nodes")
        order = np.lexsort((edges[:, 0], edges[:, 1]))
        edges = edges[order]
        dup = np.all(edges[1:] == edges[:-1], axis=1)
        if dup.any():
            u, v = edges[1:][dup][0]
            raise DatasetError(f"duplicate edge ({u}, {v})")
    seg = SegmentIndex.from_targets(edges[:, 1], num_nodes)
    return Graph(num_nodes, np.ascontiguousarray(edges[:, 0]), seg, self_loops_added)


def add_self_loops(graph: Graph) -> Graph:
    """Return a copy with (v, v) present for every node; idempotent."""
    existing = graph.edge_set()
    loops = [(v, v) for v in range(graph.num_nodes) if (v, v) not in existing]
    if not loops and graph.self_loops_added:
        return graph
    edges = np.concatenate([np.stack([graph.src, graph.tgt], axis=1),
                            np.asarray(loops, dtype=np.int64).reshape(-1, 2)])
    return build_graph(graph.num_nodes, edges, self_loops_added=True)


@dataclass(frozen=True)
class Dataset:
    graph: Graph
    features: np.ndarray       # (n, d) float64
    labels: np.ndarray         # (n,) int64 class indices
    train_mask: np.ndarray     # (n,) bool, pairwise disjoint with the others
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.shape[0] != n:
            raise DatasetError(f"feature rows ({self.features.shape[0]}) != num_nodes ({n})")
        if self.labels.shape != (n,):
            raise DatasetError("labels must have one entry per node")
        for name in ("train_mask", "val_mask", "test_mask"):
            if getattr(self, name).shape != (n,):
                raise DatasetError(f"{name} must have one entry per node")
        if (np.any(self.train_mask & self.val_mask) or np.any(self.train_mask & self.test_mask)
                or np.any(self.val_mask & self.test_mask)):
            raise DatasetError("train/val/test masks overlap")
        if self.labels.min(initial=0) < 0:
            raise DatasetError("negative class index")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def masks(self) -> dict[str, np.ndarray]:
        return {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    return path.read_text().splitlines()


def _parse_ids(path: Path, num_nodes: int) -> np.ndarray:
    ids = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            v = int(line)
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: expected a node id, got {line!r}") from None
        if not 0 <= v < num_nodes:
            raise DatasetError(f"{path}:{lineno}: node id {v} out of range")
        ids.append(v)
    return np.asarray(ids, dtype=np.int64)


def load_dataset(directory) -> Dataset:
    """Load the on-disk format: edges.tsv, features.csv, labels.txt,
    splits/{train,val,test}.txt.

    Duplicate edges are rejected; isolated nodes are permitted but dropped
    from the masks with a warning.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory not found: {directory}")

    feat_rows = []
    width = None
    for lineno, line in enumerate(_read_lines(directory / "features.csv"), start=1):
        if not line.strip():
            continue
        try:
            row = np.array([float(tok) for tok in line.split(",")])
        except ValueError:
            raise DatasetError(f"features.csv:{lineno}: malformed float row") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(f"features.csv:{lineno}: expected {width} columns, got {len(row)}")
        feat_rows.append(row)
    if not feat_rows:
        raise DatasetError("features.csv is empty")
    features = np.stack(feat_rows)
    n = len(features)

    edges = []
    for lineno, line in enumerate(_read_lines(directory / "edges.tsv"), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"edges.tsv:{lineno}: expected 'u<TAB>v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"edges.tsv:{lineno}: malformed node id") from None
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"edges.tsv:{lineno}: endpoint out of range for {n} nodes")
        edges.append((u, v))
    graph = build_graph(n, edges)

    labels = []
    for lineno, line in enumerate(_read_lines(directory / "labels.txt"), start=1):
        if not line.strip():
            continue
        try:
            labels.append(int(line))
        except ValueError:
            raise DatasetError(f"labels.txt:{lineno}: malformed class index") from None
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise DatasetError(f"labels.txt has {len(labels)} entries for {n} nodes")

    masks = {}
    for split in ("train", "val", "test"):
        ids = _parse_ids(directory / "splits" / f"{split}.txt", n)
        mask = np.zeros(n, dtype=bool)
        mask[ids] = True
        masks[split] = mask

    degree = np.bincount(graph.src, minlength=n) + graph.in_degrees()
    isolated = degree == 0
    if isolated.any():
        dropped = sum(int(np.sum(masks[s] & isolated)) for s in masks)
        warnings.warn(
            f"{int(isolated.sum())} isolated node(s); {dropped} removed from masks",
            stacklevel=2)
        for split in masks:
            masks[split] = masks[split] & ~isolated

    return Dataset(graph, features, labels, masks["train"], masks["val"], masks["test"])


def save_dataset(dataset: Dataset, directory) -> None:
    """Write the canonical on-disk form (edges CSR-sorted, splits sorted)."""
    directory = Path(directory)
    (directory / "splits").mkdir(parents=True, exist_ok=True)
    with open(directory / "edges.tsv", "w") as fh:
        for u, v in zip(dataset.graph.src, dataset.graph.tgt):
            fh.write(f"{u}\t{v}\n")
    with open(directory / "features.csv", "w") as fh:
        for row in dataset.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(directory / "labels.txt", "w") as fh:
        for label in dataset.labels:
            fh.write(f"{label}\n")
    for split, mask in dataset.masks().items():
        with open(directory / "splits" / f"{split}.txt", "w") as fh:
            for v in np.nonzero(mask)[0]:
                fh.write(f"{v}\n")


def gen_sbm(blocks, p_in: float, p_out: float, feat_dim: int, seed: int,
            shift: float = 1.0) -> Dataset:
    """Stochastic block model with block-id labels and shifted Gaussian features.

    Block b's features are unit-variance Gaussians with mean `shift` on
    coordinate b mod feat_dim. Nodes get a seeded random 60/20/20 split.
    """
    blocks = [int(b) for b in blocks]
    if any(b <= 0 for b in blocks):
        raise ValueError("every block must be non-empty")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ValueError("edge probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = sum(blocks)
    labels = np.repeat(np.arange(len(blocks)), blocks)

    iu, iv = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[iv], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    pairs = np.stack([iu[keep], iv[keep]], axis=1)
    edges = np.concatenate([pairs, pairs[:, ::-1]]) if len(pairs) else pairs
    graph = build_graph(n, edges)

    features = rng.standard_normal((n, feat_dim))
    features[np.arange(n), labels % feat_dim] += shift

    order = rng.permutation(n)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    train_mask = np.zeros(n, dtype=bool)
    val_mask = np.zeros(n, dtype=bool)
    test_mask = np.zeros(n, dtype=bool)
    train_mask[order[:n_train]] = True
    val_mask[order[n_train:n_train + n_val]] = True
    test_mask[order[n_train + n_val:]] = True

    return Dataset(graph, features, labels, train_mask, val_mask, test_mask)


def karate_fixture() -> Dataset:
    """Zachary karate club: 34 nodes, 156 directed edges, one-hot features,
    2-class faction labels.

    The split follows the sparse transductive convention: the 4
    lowest-indexed nodes of each faction are the train set; the remaining
    nodes alternate validation/test in index order.
    """
    import networkx as nx

    g = nx.karate_club_graph()
    n = g.number_of_nodes()
    edges = [(u, v) for u, v in g.edges()] + [(v, u) for u, v in g.edges()]
    graph = build_graph(n, edges)
    features = np.eye(n)
    labels = np.array([0 if g.nodes[v]["club"] == "Mr. Hi" else 1 for v in range(n)],
                      dtype=np.int64)
    train_mask = np.zeros(n, dtype=bool)
    for cls in (0, 1):
        train_mask[np.nonzero(labels == cls)[0][:4]] = True
    rest = np.nonzero(~train_mask)[0]
    val_mask = np.zeros(n, dtype=bool)
    test_mask = np.zeros(n, dtype=bool)
    val_mask[rest[::2]] = True
    test_mask[rest[1::2]] = True
    return Dataset(graph, features, labels, train_mask, val_mask, test_mask)
