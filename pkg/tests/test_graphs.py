import filecmp
import itertools
import json
import math

import networkx as nx_
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppgm import graphs as G
from ppgm.graphs import Graph, SyntheticConfig

from helpers import make_graph, random_graph

TRIANGLE = [(0, 1), (1, 2), (0, 2)]
PATH3 = [(0, 1), (1, 2)]


# --- normalized adjacency ---------------------------------------------------------

def test_normalized_adjacency_examples():
    assert np.array_equal(G.normalized_adjacency(make_graph(1, [])), [[1.0]])
    assert np.allclose(G.normalized_adjacency(make_graph(2, [(0, 1)])), 0.5, rtol=0, atol=1e-15)
    assert np.allclose(G.normalized_adjacency(make_graph(3, TRIANGLE)), 1 / 3, rtol=0, atol=1e-15)


def test_normalized_adjacency_isolated_rows():
    a = G.normalized_adjacency(make_graph(4, [(0, 1)]))
    assert np.array_equal(a[3], [0, 0, 0, 1.0])
    assert np.array_equal(a, a.T)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_normalized_adjacency_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    perm = rng.permutation(n)
    P = np.zeros((n, n))
    P[perm, np.arange(n)] = 1.0
    assert np.array_equal(G.normalized_adjacency(g.permute(perm)), P @ G.normalized_adjacency(g) @ P.T)


# --- graph invariants ----------------------------------------------------------------

@pytest.mark.parametrize("edges", [[(0, 3)], [(1, 1)], [(0, 1), (1, 0)]])
def test_graph_rejects_bad_edges(edges):
    with pytest.raises(G.DatasetError):
        Graph("x", 3, np.zeros((3, 8)), tuple(edges))


def test_graph_rejects_feature_row_mismatch():
    with pytest.raises(G.DatasetError):
        Graph("x", 3, np.zeros((2, 8)), ())


# --- exact GED -----------------------------------------------------------------------

def test_exact_ged_examples():
    tri = make_graph(3, TRIANGLE)
    assert G.exact_ged(tri, tri) == 0
    assert G.exact_ged(Graph("e", 0, np.zeros((0, 8)), ()), make_graph(1, [])) == 1
    assert G.exact_ged(tri, make_graph(3, PATH3)) == 1


def test_exact_ged_size_bound():
    with pytest.raises(ValueError, match=str(G.GED_MAX_NODES)):
        G.exact_ged(make_graph(9, []), make_graph(3, []))


def _networkx_ged(g1, g2):
    a, b = nx_.Graph(), nx_.Graph()
    a.add_nodes_from(range(g1.num_nodes))
    a.add_edges_from(g1.edges)
    b.add_nodes_from(range(g2.num_nodes))
    b.add_edges_from(g2.edges)
    return int(nx_.graph_edit_distance(a, b))


def _brute_ged(g1, g2):
    # independent oracle: map every node of the larger graph onto the smaller plus deletions
    if g1.num_nodes < g2.num_nodes:
        g1, g2 = g2, g1
    n1, n2 = g1.num_nodes, g2.num_nodes
    e1, e2 = set(g1.edges), set(g2.edges)
    best = math.inf
    for image in itertools.permutations(range(n1), n2):
        # node j of g2 corresponds to node image[j] of g1
        mapped = {tuple(sorted((image[u], image[v]))) for u, v in e2}
        best = min(best, len(mapped ^ e1))
    return best + (n1 - n2)


def test_exact_ged_matches_oracles():
    rng = np.random.default_rng(0)
    for k in range(200):
        g1 = random_graph(rng, int(rng.integers(1, 7)), p=float(rng.uniform(0.1, 0.8)))
        g2 = random_graph(rng, int(rng.integers(1, 7)), p=float(rng.uniform(0.1, 0.8)))
        ged = G.exact_ged(g1, g2)
        assert ged == _brute_ged(g1, g2), k
        if k < 25:
            assert ged == _networkx_ged(g1, g2), k


def test_exact_ged_is_a_metric():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a, b, c = (random_graph(rng, int(rng.integers(1, 7)), p=0.4) for _ in range(3))
        ab, bc, ac = G.exact_ged(a, b), G.exact_ged(b, c), G.exact_ged(a, c)
        assert ab == G.exact_ged(b, a)
        assert ac <= ab + bc


def test_exact_ged_handles_max_size():
    rng = np.random.default_rng(2)
    g = random_graph(rng, 8)
    assert G.exact_ged(g, g.permute(rng.permutation(8))) == 0


def test_ged_similarity():
    tri = make_graph(3, TRIANGLE)
    assert G.ged_similarity(tri, tri) == 1.0
    assert G.ged_similarity(tri, make_graph(3, PATH3)) == pytest.approx(math.exp(-2 / 6), rel=1e-15)
    # more edits at fixed sizes -> strictly smaller similarity
    full = make_graph(5, [(u, v) for u in range(5) for v in range(u + 1, 5)])
    sims = [G.ged_similarity(full, make_graph(5, [(u, v) for u in range(5) for v in range(u + 1, 5)][:k])) for k in (10, 7, 4, 0)]
    assert sims == sorted(sims, reverse=True) and len(set(sims)) == 4


# --- generator ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def default_dataset():
    return G.generate_synthetic_dataset(SyntheticConfig(), seed=7)


def test_generator_counts(default_dataset):
    ds = default_dataset
    assert {s: len(ds.pairs[s]) for s in G.SPLITS} == {"train": 500, "val": 100, "test": 100}
    assert sum(p.y for s in G.SPLITS for p in ds.pairs[s]) == 350
    bases = {}
    for g in ds.graphs.values():
        bases[g.base] = g.props["family"]
        assert 20 <= g.num_nodes <= 40
        assert g.features.shape == (g.num_nodes, 8)
        assert np.array_equal(g.features.sum(axis=1), np.ones(g.num_nodes))
    assert len(bases) == 60
    fams = list(bases.values())
    assert fams.count("er") == 30 and fams.count("pa") == 30


def test_generator_split_discipline(default_dataset):
    ds = default_dataset
    ids = {s: set(ds.split_graph_ids(s)) for s in G.SPLITS}
    bases = {s: {ds.graphs[g].base for g in ids[s]} for s in G.SPLITS}
    for a, b in itertools.combinations(G.SPLITS, 2):
        assert not ids[a] & ids[b]
        assert not bases[a] & bases[b]


def test_generator_pair_semantics(default_dataset):
    ds = default_dataset
    for p in ds.pairs["train"]:
        same = ds.graphs[p.g1].base == ds.graphs[p.g2].base
        assert same == (p.y == 1.0)


def test_generator_deterministic_files(tmp_path):
    cfg = SyntheticConfig(graphs=24, pairs=(40, 10, 10), min_nodes=6, max_nodes=12)
    G.write_dataset(G.generate_synthetic_dataset(cfg, seed=7), tmp_path / "a")
    G.write_dataset(G.generate_synthetic_dataset(cfg, seed=7), tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert sorted(cmp.common) == ["graphs.jsonl", "meta.json", "pairs.jsonl"]
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    G.write_dataset(G.generate_synthetic_dataset(cfg, seed=8), tmp_path / "c")
    assert filecmp.dircmp(tmp_path / "a", tmp_path / "c").diff_files


@pytest.mark.parametrize("kw", [{"min_nodes": 2}, {"perturb": 0.6}, {"perturb": -0.1}, {"task": "rank"},
                                {"task": "reg", "max_nodes": 9, "min_nodes": 4}])
def test_generator_rejects_bad_config(kw):
    with pytest.raises(ValueError):
        G.generate_synthetic_dataset(SyntheticConfig(**kw), seed=0)


def test_rewire_preserves_edge_count():
    rng = np.random.default_rng(3)
    edges = G._erdos_renyi(30, 0.15, rng)
    out = G.rewire(30, edges, 0.1, rng)
    assert len(out) == len(edges)
    assert len(set(edges) - set(out)) == round(0.1 * len(edges))


def test_regression_positive_pairs_more_similar(small_reg_dataset):
    ds = small_reg_dataset
    pos, neg = [], []
    for s in G.SPLITS:
        for p in ds.pairs[s]:
            same = ds.graphs[p.g1].base == ds.graphs[p.g2].base
            (pos if same else neg).append(p.y)
            assert 0.0 < p.y <= 1.0
            assert p.y == G.ged_similarity(ds.graphs[p.g1], ds.graphs[p.g2])
    assert np.mean(pos) > np.mean(neg)


# --- files -----------------------------------------------------------------------------

def test_dataset_round_trip(tmp_path, small_cls_dataset, small_reg_dataset):
    for name, ds in (("cls", small_cls_dataset), ("reg", small_reg_dataset)):
        G.write_dataset(ds, tmp_path / name)
        assert G.read_dataset(tmp_path / name) == ds


def _rewrite_line(path, index, fn):
    lines = path.read_text().splitlines()
    rec = json.loads(lines[index])
    fn(rec)
    lines[index] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")


def test_read_rejects_edge_out_of_range(tmp_path, small_cls_dataset):
    G.write_dataset(small_cls_dataset, tmp_path)

    def bad(rec):
        rec["edges"].append([0, rec["n"]])

    _rewrite_line(tmp_path / "graphs.jsonl", 4, bad)
    with pytest.raises(G.DatasetError, match=r"graphs\.jsonl:5:"):
        G.read_dataset(tmp_path)


def test_read_rejects_malformed_pair_and_task(tmp_path, small_cls_dataset):
    G.write_dataset(small_cls_dataset, tmp_path)
    (tmp_path / "pairs.jsonl").write_text((tmp_path / "pairs.jsonl").read_text() + "{not json\n")
    n = len((tmp_path / "pairs.jsonl").read_text().splitlines())
    with pytest.raises(G.DatasetError, match=rf"pairs\.jsonl:{n}:"):
        G.read_dataset(tmp_path)
    G.write_dataset(small_cls_dataset, tmp_path)
    meta = json.loads((tmp_path / "meta.json").read_text())
    meta["task"] = "ranking"
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(G.DatasetError, match="task"):
        G.read_dataset(tmp_path)


def test_empty_split_accepted_and_flagged(tmp_path, small_cls_dataset, caplog):
    G.write_dataset(small_cls_dataset, tmp_path)
    lines = [l for l in (tmp_path / "pairs.jsonl").read_text().splitlines() if json.loads(l)["split"] != "val"]
    (tmp_path / "pairs.jsonl").write_text("\n".join(lines) + "\n")
    ds = G.read_dataset(tmp_path)
    assert ds.summary()["empty_splits"] == ["val"]
    assert "empty" in caplog.text


def test_read_rejects_empty_graph(tmp_path, small_cls_dataset):
    G.write_dataset(small_cls_dataset, tmp_path)

    def empty(rec):
        rec.update(n=0, features=[], edges=[])

    _rewrite_line(tmp_path / "graphs.jsonl", 0, empty)
    with pytest.raises(G.DatasetError, match="graphs.jsonl:1:"):
        G.read_dataset(tmp_path)
