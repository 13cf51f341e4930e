import math
import warnings

import numpy as np
import pytest

from geohawkes.core import HyperParams, ModelParams, Region, Trace, VenueSet
from geohawkes.inference import complete_log_likelihood
from geohawkes.metrics import (
    EmbeddingTable,
    assign_event_community,
    category_loss,
    community_report,
    location_loss,
    rel_err,
)

from conftest import all_assignments, make_instance


# -- rel_err -------------------------------------------------------------------

def test_rel_err_zero_when_equal():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert rel_err(m, m.copy()) == 0.0


def test_rel_err_hand_value():
    t = np.array([[1.0, 2.0], [4.0, 5.0]])
    e = np.array([[1.1, 1.8], [4.0, 5.0]])
    assert rel_err(t, e) == pytest.approx(0.05, rel=1e-12)


def test_rel_err_scale_covariant():
    rng = np.random.default_rng(0)
    t = rng.uniform(0.5, 2.0, (4, 4))
    e = t + rng.normal(0, 0.1, (4, 4))
    for c in (3.0, 0.01, -2.0):
        assert rel_err(c * t, c * e) == pytest.approx(rel_err(t, e), rel=1e-12)


def test_rel_err_excludes_small_entries_and_errors_when_empty():
    t = np.array([[0.0, 2.0]])
    e = np.array([[5.0, 1.0]])
    assert rel_err(t, e) == pytest.approx(0.5)   # only the 2.0 entry counts
    with pytest.raises(ValueError):
        rel_err(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        rel_err(np.ones((2, 2)), np.ones((3, 3)))


# -- community assignment --------------------------------------------------------

def test_assign_single_community_is_zero():
    trace, params, hyper = make_instance(M=1, seed=2)
    out = assign_event_community(params, hyper, trace)
    assert np.all(out == 0)


def test_assign_onehot_phi_dominates():
    trace, params, hyper = make_instance(I=2, N=6, M=3, seed=4)
    phi = np.zeros_like(params.phi)
    phi[:, 2] = 1.0
    params = ModelParams(params.mu, params.eta, params.A, params.theta,
                         params.pi, phi)
    out = assign_event_community(params, hyper, trace)
    assert np.all(out == 2)


def test_assign_matches_exact_posterior_argmax():
    # categories sharply identify communities, so the responsibility argmax
    # agrees with the exact per-event posterior computed by enumeration
    region = Region(10.0, 0.0, 1.0, 0.0, 1.0)
    venues = VenueSet(np.array([[0.2, 0.2], [0.8, 0.8]]), np.array([0, 1]))
    trace = Trace([1.0, 3.0, 5.0, 7.0], [0, 1, 1, 0], [0, 0, 1, 1],
                  venues, region, 2, 2, [0, 1, 1, 0])
    params = ModelParams(mu=[0.4, 0.4], eta=[1.0, 1.0],
                         A=np.full((2, 2), 0.2),
                         theta=[[0.9, 0.1], [0.1, 0.9]],
                         pi=[[0.6, 0.4], [0.4, 0.6]],
                         phi=[[0.6, 0.4], [0.4, 0.6]])
    hyper = HyperParams(nu=0.1, h=0.3, M=2)
    got = assign_event_community(params, hyper, trace)

    assigns = all_assignments(2, 4)
    lls = np.array([complete_log_likelihood(params, hyper, trace, g)
                    for g in assigns])
    w = np.exp(lls - lls.max())
    w /= w.sum()
    marginals = np.zeros((4, 2))
    for g_vec, p in zip(assigns, w):
        for n in range(4):
            marginals[n, g_vec[n]] += p
    assert np.array_equal(got, np.argmax(marginals, axis=1))


def test_assign_soft_rows_normalized():
    trace, params, hyper = make_instance(N=6, M=3, seed=12)
    resp = assign_event_community(params, hyper, trace, soft=True)
    assert resp.shape == (6, 3)
    assert np.allclose(resp.sum(axis=1), 1.0)
    hard = assign_event_community(params, hyper, trace)
    assert np.array_equal(hard, np.argmax(resp, axis=1))


# -- embeddings and category loss -------------------------------------------------

def _metrics_trace(cats_per_event, n_categories):
    n = len(cats_per_event)
    region = Region(float(n + 1), 0.0, 4.0, 0.0, 4.0)
    venue_xy = np.array([[1.0 + 0.5 * c, 1.0] for c in range(n_categories)])
    venues = VenueSet(venue_xy, np.arange(n_categories))
    return Trace(np.arange(1, n + 1, dtype=float), list(cats_per_event),
                 [0] * n, venues, region, 1, n_categories)


def test_embedding_table_load_save_roundtrip(tmp_path):
    table = EmbeddingTable(["a", "b"], np.array([[1.0, 0.0], [0.0, 2.0]]))
    p = tmp_path / "emb.txt"
    table.save(p)
    back = EmbeddingTable.load(p)
    assert back.labels == ["a", "b"]
    assert np.array_equal(back.vectors, table.vectors)
    assert "a" in back and back.get("zzz") is None


def test_embedding_table_validation(tmp_path):
    with pytest.raises(ValueError):
        EmbeddingTable(["a"], np.array([[0.0, 0.0]]))   # zero norm
    p = tmp_path / "bad.txt"
    p.write_text("a 1.0 2.0\nb 1.0\n")
    with pytest.raises(ValueError, match="inconsistent"):
        EmbeddingTable.load(p)
    p.write_text("a 1.0\nb xyz\n")
    with pytest.raises(ValueError, match="bad.txt:2"):
        EmbeddingTable.load(p)


def test_category_loss_zero_when_vectors_match_mean():
    emb = EmbeddingTable(["0", "1"], np.array([[1.0, 0.0], [0.0, 1.0]]))
    trace = _metrics_trace([0, 0, 0], 2)
    loss = category_loss(np.zeros(3, dtype=int), trace, emb, k_cat=1)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_category_loss_orthogonal_contributes_one():
    emb = EmbeddingTable(["0", "1"], np.array([[1.0, 0.0], [0.0, 1.0]]))
    # frequency data puts category 0 on top; the scored event has category 1
    freq_trace = _metrics_trace([0, 0, 1], 2)
    test_trace = _metrics_trace([1], 2)
    loss = category_loss(np.zeros(1, dtype=int), test_trace, emb, k_cat=1,
                         freq_assignments=np.zeros(3, dtype=int),
                         freq_trace=freq_trace, n_communities=1)
    assert loss == pytest.approx(1.0, rel=1e-12)


def test_category_loss_scale_invariant_embeddings():
    rng = np.random.default_rng(5)
    vecs = rng.normal(size=(3, 4))
    trace = _metrics_trace([0, 1, 2, 1], 3)
    assign = np.array([0, 0, 1, 1])
    # k_cat = 1: community means are single vectors, so rescaling any one
    # embedding leaves every cosine unchanged
    base = category_loss(assign, trace, EmbeddingTable(["0", "1", "2"], vecs),
                         k_cat=1, n_communities=2)
    scaled = category_loss(assign, trace,
                           EmbeddingTable(["0", "1", "2"], vecs * [[3.0], [0.5], [7.0]]),
                           k_cat=1, n_communities=2)
    assert scaled == pytest.approx(base, rel=1e-12)
    # k_cat > 1: a common rescale of all embeddings is still invariant
    base2 = category_loss(assign, trace, EmbeddingTable(["0", "1", "2"], vecs),
                          k_cat=2, n_communities=2)
    scaled2 = category_loss(assign, trace,
                            EmbeddingTable(["0", "1", "2"], 4.0 * vecs),
                            k_cat=2, n_communities=2)
    assert scaled2 == pytest.approx(base2, rel=1e-12)


def test_category_loss_drops_unknown_categories_with_warning():
    emb = EmbeddingTable(["0"], np.array([[1.0, 0.0]]))
    trace = _metrics_trace([0, 1], 2)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        loss = category_loss(np.zeros(2, dtype=int), trace, emb, k_cat=1)
    assert any("dropped" in str(w.message) for w in rec)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_category_loss_sum_variant():
    emb = EmbeddingTable(["0", "1"], np.array([[1.0, 0.0], [0.0, 1.0]]))
    freq_trace = _metrics_trace([0, 0, 1], 2)
    test_trace = _metrics_trace([1, 1], 2)
    kw = dict(freq_assignments=np.zeros(3, dtype=int), freq_trace=freq_trace,
              n_communities=1)
    mean = category_loss(np.zeros(2, dtype=int), test_trace, emb, 1, **kw)
    tot = category_loss(np.zeros(2, dtype=int), test_trace, emb, 1,
                        return_sum=True, **kw)
    assert tot == pytest.approx(2 * mean, rel=1e-12)


# -- location loss ---------------------------------------------------------------

def test_location_loss_hand_values():
    region = Region(10.0, 0.0, 4.0, 0.0, 4.0)
    venues = VenueSet(np.array([[0.0, 0.0], [2.0, 0.0]]), np.array([0, 0]))
    one = Trace([1.0, 2.0], [0, 0], [0, 0], venues, region, 1, 1)
    assert location_loss(np.zeros(2, dtype=int), one) == 0.0
    two = Trace([1.0, 2.0], [0, 1], [0, 0], venues, region, 1, 1)
    assert location_loss(np.zeros(2, dtype=int), two) == pytest.approx(1.0)


def test_location_loss_duplicate_at_centroid_never_increases():
    region = Region(10.0, 0.0, 4.0, 0.0, 4.0)
    venues = VenueSet(np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]]),
                      np.array([0, 0, 0]))
    base = Trace([1.0, 2.0], [0, 1], [0, 0], venues, region, 1, 1)
    with_dup = Trace([1.0, 2.0, 3.0], [0, 1, 2], [0, 0, 0], venues, region, 1, 1)
    l0 = location_loss(np.zeros(2, dtype=int), base)
    l1 = location_loss(np.zeros(3, dtype=int), with_dup)
    assert l1 <= l0


def test_location_loss_equals_wcss_over_n():
    rng = np.random.default_rng(8)
    trace, params, hyper = make_instance(I=2, N=20, M=3, L=8, seed=8)
    assign = rng.integers(0, 3, 20)
    wcss = 0.0
    for m in range(3):
        pts = trace.xy[assign == m]
        if len(pts):
            wcss += (((pts - pts.mean(axis=0)) ** 2).sum())
    assert location_loss(assign, trace) == pytest.approx(wcss / 20, rel=1e-12)


def test_community_report_shape():
    trace, params, hyper = make_instance(I=3, N=30, M=2, V=4, L=6, seed=6)
    from geohawkes.core import split_by_time
    train, test = split_by_time(trace, 0.8)
    labels = [str(c) for c in range(4)]
    emb = EmbeddingTable(labels, np.eye(4) + 0.1)
    rep = community_report(params, hyper, train, test, emb, k_cats=[1, 2],
                           category_labels=labels)
    d = rep.to_dict()
    assert set(d["category_losses"]) == {"1", "2"}
    assert d["location_loss"]["mean"] >= 0
    assert sum(d["community_sizes"]) == test.n_events
