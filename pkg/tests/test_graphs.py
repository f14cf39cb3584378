import numpy as np
import pytest

from gatflow import graphs


def write_toy_dataset(root, edges=((0, 1), (1, 2), (2, 0))):
    (root / "splits").mkdir(parents=True)
    (root / "edges.tsv").write_text("".join(f"{u}\t{v}\n" for u, v in edges))
    (root / "features.csv").write_text("1.0,0.0\n0.0,1.0\n1.0,1.0\n")
    (root / "labels.txt").write_text("0\n1\n0\n")
    (root / "splits" / "train.txt").write_text("0\n")
    (root / "splits" / "val.txt").write_text("1\n")
    (root / "splits" / "test.txt").write_text("2\n")


def test_load_toy_dataset(tmp_path):
    write_toy_dataset(tmp_path)
    ds = graphs.load_dataset(tmp_path)
    assert ds.num_nodes == 3
    assert ds.num_features == 2
    assert ds.num_classes == 2
    assert ds.graph.num_edges == 3
    assert ds.graph.edge_set() == {(0, 1), (1, 2), (2, 0)}


def test_duplicate_edge_rejected(tmp_path):
    write_toy_dataset(tmp_path, edges=((0, 1), (0, 1)))
    with pytest.raises(graphs.DatasetError, match=r"duplicate edge \(0, 1\)"):
        graphs.load_dataset(tmp_path)


def test_malformed_edge_line_reports_line_number(tmp_path):
    write_toy_dataset(tmp_path)
    (tmp_path / "edges.tsv").write_text("0\t1\nnot an edge\n")
    with pytest.raises(graphs.DatasetError, match="edges.tsv:2"):
        graphs.load_dataset(tmp_path)


def test_edge_endpoint_out_of_range(tmp_path):
    write_toy_dataset(tmp_path, edges=((0, 3),))
    with pytest.raises(graphs.DatasetError, match="out of range"):
        graphs.load_dataset(tmp_path)


def test_overlapping_masks_rejected(tmp_path):
    write_toy_dataset(tmp_path)
    (tmp_path / "splits" / "val.txt").write_text("0\n")
    with pytest.raises(graphs.DatasetError, match="overlap"):
        graphs.load_dataset(tmp_path)


def test_isolated_nodes_warn_and_leave_masks(tmp_path):
    write_toy_dataset(tmp_path, edges=((0, 1), (1, 0)))
    with pytest.warns(UserWarning, match="isolated"):
        ds = graphs.load_dataset(tmp_path)
    assert not ds.test_mask.any()  # node 2 was the only test node


def test_roundtrip_is_byte_identical(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    write_toy_dataset(src)
    first = tmp_path / "first"
    second = tmp_path / "second"
    graphs.save_dataset(graphs.load_dataset(src), first)
    graphs.save_dataset(graphs.load_dataset(first), second)
    for rel in ("edges.tsv", "features.csv", "labels.txt",
                "splits/train.txt", "splits/val.txt", "splits/test.txt"):
        assert (first / rel).read_bytes() == (second / rel).read_bytes()


def test_segment_index_lists_in_neighbors():
    g = graphs.build_graph(4, [(0, 2), (1, 2), (3, 2), (2, 0)])
    for v in range(4):
        lo, hi = g.seg.offsets[v], g.seg.offsets[v + 1]
        segment_sources = set(g.src[lo:hi].tolist())
        expected = {u for (u, t) in g.edge_set() if t == v}
        assert segment_sources == expected


def test_add_self_loops_from_empty():
    g = graphs.build_graph(2, [])
    looped = graphs.add_self_loops(g)
    assert looped.edge_set() == {(0, 0), (1, 1)}
    assert looped.self_loops_added


def test_add_self_loops_idempotent():
    g = graphs.add_self_loops(graphs.build_graph(3, [(0, 1)]))
    again = graphs.add_self_loops(g)
    assert again.edge_set() == g.edge_set()


def test_add_self_loops_karate_degrees():
    ds = graphs.karate_fixture()
    before = ds.graph.in_degrees()
    after = graphs.add_self_loops(ds.graph).in_degrees()
    assert np.array_equal(after, before + 1)


def test_karate_fixture_constants():
    ds = graphs.karate_fixture()
    assert ds.num_nodes == 34
    assert ds.graph.num_edges == 156
    assert int(np.sum(ds.graph.src == 0)) == 16  # node 0 degree
    assert ds.num_classes == 2
    edge_set = ds.graph.edge_set()
    assert all((v, u) in edge_set for (u, v) in edge_set)


def test_sbm_two_cliques():
    ds = graphs.gen_sbm([5, 5], p_in=1.0, p_out=0.0, feat_dim=4, seed=0)
    assert ds.num_nodes == 10
    edge_set = ds.graph.edge_set()
    for u in range(10):
        for v in range(10):
            if u == v:
                continue
            same = (u < 5) == (v < 5)
            assert ((u, v) in edge_set) == same


def test_sbm_label_uninformative_when_probs_equal():
    ds = graphs.gen_sbm([8, 8], p_in=0.4, p_out=0.4, feat_dim=2, seed=1)
    labels = ds.labels
    within = across = 0
    for u, v in ds.graph.edge_set():
        if labels[u] == labels[v]:
            within += 1
        else:
            across += 1
    # within-pairs: 2*C(8,2)*2 = 112 slots; across: 8*8*2 = 128 slots
    assert within + across == ds.graph.num_edges
    assert abs(within / 112 - across / 128) < 0.35  # same Bernoulli rate


def test_sbm_split_sizes_and_masks():
    ds = graphs.gen_sbm([10, 10, 10], p_in=0.5, p_out=0.1, feat_dim=3, seed=2)
    assert int(ds.train_mask.sum()) == 18
    assert int(ds.val_mask.sum()) == 6
    assert int(ds.test_mask.sum()) == 6
    assert np.all(ds.train_mask | ds.val_mask | ds.test_mask)


def test_sbm_empty_block_rejected():
    with pytest.raises(ValueError, match="block"):
        graphs.gen_sbm([5, 0], p_in=0.5, p_out=0.1, feat_dim=2, seed=0)


def test_sbm_deterministic():
    a = graphs.gen_sbm([6, 6], p_in=0.5, p_out=0.1, feat_dim=4, seed=9)
    b = graphs.gen_sbm([6, 6], p_in=0.5, p_out=0.1, feat_dim=4, seed=9)
    assert np.array_equal(a.features, b.features)
    assert a.graph.edge_set() == b.graph.edge_set()
    assert np.array_equal(a.train_mask, b.train_mask)
