import numpy as np
import pytest

from geohawkes.network import (
    InfluenceGraph,
    export_graph,
    forest_is_acyclic,
    mwsf,
    normalized_symmetric_weights,
    read_graph,
)


def graph_from_sym(pairs, n):
    w = np.zeros((n, n))
    for (u, v), wt in pairs.items():
        w[u, v] = wt
    return InfluenceGraph(weights=w)


def test_mwsf_hand_kruskal():
    g = graph_from_sym({(0, 1): 0.95, (0, 2): 0.92, (1, 2): 0.80}, 3)
    forest = mwsf(g, threshold=0.9)
    # weights normalize by 0.95: AB -> 1.0, AC -> 0.968, BC -> 0.842 (dropped)
    assert [(u, v) for u, v, _ in forest] == [(0, 1), (0, 2)]
    assert forest[0][2] == pytest.approx(1.0)
    assert forest[1][2] == pytest.approx(0.92 / 0.95)


def test_mwsf_threshold_one_empty():
    g = graph_from_sym({(0, 1): 0.95, (1, 2): 0.80}, 3)
    assert mwsf(g, threshold=1.0) == []


def test_mwsf_threshold_zero_recovers_mst():
    # unique-weight graph whose maximum spanning tree is known by hand
    g = graph_from_sym({(0, 1): 0.9, (1, 2): 0.8, (0, 2): 0.3, (2, 3): 0.7,
                        (1, 3): 0.2}, 4)
    forest = mwsf(g, threshold=0.0)
    assert [(u, v) for u, v, _ in forest] == [(0, 1), (1, 2), (2, 3)]


def test_mwsf_symmetrize_by_max_and_ignore_self_loops():
    w = np.array([[0.5, 0.2, 0.0], [0.9, 0.0, 0.0], [0.0, 0.0, 0.4]])
    g = InfluenceGraph(weights=w)
    sym = normalized_symmetric_weights(g)
    assert sym[0, 1] == pytest.approx(1.0)       # max(0.2, 0.9) normalized
    assert np.all(np.diag(sym) == 0.0)
    forest = mwsf(g, threshold=0.0)
    assert (0, 1) in [(u, v) for u, v, _ in forest]


def test_mwsf_monotone_restriction():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n = 8
        w = rng.uniform(0, 1, (n, n))
        g = InfluenceGraph(weights=w)
        f1 = mwsf(g, 0.2)
        f2 = mwsf(g, 0.6)
        expected = [e for e in f1 if e[2] > 0.6]
        assert f2 == expected
        assert forest_is_acyclic(f2, n)
        comps = n - len(f2)
        assert len(f2) <= n - 1 and comps >= 1


def test_mwsf_deterministic_tie_break():
    g = graph_from_sym({(0, 1): 0.5, (0, 2): 0.5, (1, 2): 0.5}, 3)
    forest = mwsf(g, 0.0)
    assert [(u, v) for u, v, _ in forest] == [(0, 1), (0, 2)]


def test_mwsf_threshold_domain():
    g = graph_from_sym({(0, 1): 0.5}, 2)
    with pytest.raises(ValueError):
        mwsf(g, -0.1)
    with pytest.raises(ValueError):
        mwsf(g, 1.5)


def test_export_empty_forest_header_only(tmp_path):
    p = tmp_path / "empty.csv"
    export_graph([], 3, p, fmt="csv")
    assert p.read_text().strip() == "src,dst,weight"


def test_export_csv_two_edges_six_decimals(tmp_path):
    p = tmp_path / "f.csv"
    export_graph([(0, 1, 0.5), (1, 2, 0.25)], 3, p, fmt="csv")
    lines = p.read_text().strip().splitlines()
    assert lines[1] == "0,1,0.500000"
    assert lines[2] == "1,2,0.250000"


def test_export_roundtrip_both_formats(tmp_path):
    edges = [(0, 1, 0.953125), (2, 3, 0.125), (1, 4, 0.333333)]
    for fmt in ("csv", "graphml"):
        p = tmp_path / f"f.{fmt}"
        export_graph(edges, 5, p, fmt=fmt)
        back = read_graph(p)
        assert [(u, v) for u, v, _ in back] == [(u, v) for u, v, _ in edges]
        assert np.allclose([w for _, _, w in back],
                           [w for _, _, w in edges], atol=5e-7)


def test_export_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        export_graph([], 1, tmp_path / "x.bin", fmt="bin")


def test_graph_validation():
    with pytest.raises(ValueError):
        InfluenceGraph(weights=np.array([[0.1, -0.2], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        InfluenceGraph(weights=np.zeros((2, 3)))
