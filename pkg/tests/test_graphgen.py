import math
from collections import Counter

import networkx as nx
import numpy as np
import pytest

from utils.errors import InvalidArgument
from utils.graphgen import (
    DatasetSpec,
    GraphFamily,
    WeightedGraph,
    derive_seed,
    er_probability,
    generate_dataset,
    generate_graph,
    grid_shape,
    parse_family,
)


def test_er_probability():
    assert er_probability(8) == pytest.approx(3 / 8)
    assert er_probability(4) == 0.5
    assert er_probability(2) == 0.5
    assert er_probability(100) == pytest.approx(math.log2(100) / 100)


def test_grid_shape_is_near_square():
    assert grid_shape(12) == (3, 4)
    assert grid_shape(16) == (4, 4)
    assert grid_shape(20) == (4, 5)
    assert grid_shape(7) == (1, 7)


def test_same_seed_same_graph():
    spec = DatasetSpec(GraphFamily.ER, 12, 5, master_seed=42)
    assert generate_graph(spec, 3) == generate_graph(spec, 3)
    assert generate_dataset(spec) == generate_dataset(spec)
    assert generate_graph(spec, 3) != generate_graph(spec, 4)


def test_graph_depends_only_on_seed_and_index():
    small = DatasetSpec(GraphFamily.BA, 10, 3, master_seed=7)
    large = DatasetSpec(GraphFamily.BA, 10, 50, master_seed=7)
    assert generate_graph(small, 2) == generate_graph(large, 2)


def test_weights_and_source_in_range():
    for family in GraphFamily:
        for g in generate_dataset(DatasetSpec(family, 9, 40, master_seed=1)):
            assert 0 <= g.source < g.n
            for u, v, w in g.edges:
                assert 0 <= u < v < g.n
                assert 0.2 <= w <= 1.0
            assert list(g.edges) == sorted(g.edges)


def test_grid_degrees():
    for g in generate_dataset(DatasetSpec(GraphFamily.GRID, 12, 5, master_seed=3)):
        degrees = {d for _, d in g.to_networkx().degree()}
        assert degrees <= {2, 3, 4}
        assert len(g.edges) == 3 * 3 + 2 * 4


def test_prime_grid_is_a_path():
    g = generate_graph(DatasetSpec(GraphFamily.GRID, 7, 1, master_seed=0), 0)
    assert nx.is_isomorphic(g.to_networkx(), nx.path_graph(7))


def test_ba_edge_count_and_connectivity():
    for g in generate_dataset(DatasetSpec(GraphFamily.BA, 12, 10, master_seed=5)):
        assert len(g.edges) == (12 - 4) * 4
        assert nx.is_connected(g.to_networkx())


@pytest.mark.parametrize("n", [20, 40])
def test_ba_degrees_are_heavy_tailed(n):
    graphs = generate_dataset(DatasetSpec(GraphFamily.BA, n, 200, master_seed=n))
    heavy = 0
    for g in graphs:
        degrees = [d for _, d in g.to_networkx().degree()]
        heavy += max(degrees) > np.median(degrees)
    assert heavy >= 0.99 * len(graphs)


def test_ba_attachment_clamped_for_tiny_graphs():
    g = generate_graph(DatasetSpec(GraphFamily.BA, 3, 1, master_seed=0), 0)
    assert g.n == 3
    assert len(g.edges) >= 2


def test_invalid_dataset_spec():
    with pytest.raises(InvalidArgument):
        DatasetSpec(GraphFamily.ER, 10, 0, master_seed=0)
    with pytest.raises(InvalidArgument):
        DatasetSpec(GraphFamily.ER, 1, 10, master_seed=0)
    with pytest.raises(InvalidArgument):
        generate_graph(DatasetSpec(GraphFamily.ER, 10, 2, master_seed=0), 2)
    with pytest.raises(InvalidArgument):
        parse_family("hypercube")


def test_parse_family_is_case_insensitive():
    assert parse_family("grid") is GraphFamily.GRID
    assert parse_family(" Er ") is GraphFamily.ER


def test_weighted_graph_validation():
    with pytest.raises(InvalidArgument):
        WeightedGraph(3, ((1, 0, 0.5),), 0)
    with pytest.raises(InvalidArgument):
        WeightedGraph(3, ((0, 1, 0.1),), 0)
    with pytest.raises(InvalidArgument):
        WeightedGraph(3, ((0, 1, 0.5),), 3)


def test_relabel_keeps_structure():
    g = generate_graph(DatasetSpec(GraphFamily.ER, 8, 1, master_seed=11), 0)
    perm = list(reversed(range(8)))
    h = g.relabel(perm)
    assert h.source == perm[g.source]
    assert len(h.edges) == len(g.edges)
    assert sorted(w for *_, w in h.edges) == sorted(w for *_, w in g.edges)


def test_derive_seed():
    assert derive_seed(0, "train", "ER") == derive_seed(0, "train", "ER")
    assert derive_seed(0, "train", "ER") != derive_seed(0, "train", "BA")
    assert derive_seed(0, "train") != derive_seed(1, "train")
    assert 0 <= derive_seed(123, "x") < 2**64


@pytest.mark.slow
def test_er_edge_count_matches_binomial():
    stats = pytest.importorskip("scipy.stats")
    n, count = 16, 10_000
    p = er_probability(n)
    pairs = n * (n - 1) // 2
    spec = DatasetSpec(GraphFamily.ER, n, count, master_seed=2024)
    observed = Counter(len(generate_graph(spec, i).edges) for i in range(count))

    # merge tail bins until every expected count is at least 5
    ks = np.arange(pairs + 1)
    expected = stats.binom.pmf(ks, pairs, p) * count
    exp_bins, obs_bins = [], []
    acc_e, acc_o = 0.0, 0
    for k in ks:
        acc_e += expected[k]
        acc_o += observed.get(int(k), 0)
        if acc_e >= 5:
            exp_bins.append(acc_e)
            obs_bins.append(acc_o)
            acc_e, acc_o = 0.0, 0
    exp_bins[-1] += acc_e
    obs_bins[-1] += acc_o
    chi2 = sum((o - e) ** 2 / e for o, e in zip(obs_bins, exp_bins))
    p_value = stats.chi2.sf(chi2, len(exp_bins) - 1)
    assert p_value > 0.01


@pytest.mark.slow
def test_weights_exhaustive_range():
    for family in GraphFamily:
        for g in generate_dataset(DatasetSpec(family, 20, 2000, master_seed=9)):
            assert all(0.2 <= w <= 1.0 for *_, w in g.edges)
