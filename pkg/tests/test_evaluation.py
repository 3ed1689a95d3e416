import numpy as np
import pytest

import oracles

from vflreid.data import FeatureRecord
from vflreid.errors import DomainError, ProtocolError
from vflreid.evaluation import (
    EmbeddingSet,
    RankedResult,
    average_precision,
    cmc_top_k,
    distance,
    evaluate,
    mean_average_precision,
    rank_query,
)


def _result(first_ranks_matches, n=10):
    matches = np.zeros(n, dtype=bool)
    for r in first_ranks_matches:
        matches[r - 1] = True
    return RankedResult(0, np.arange(n), matches, np.arange(n, dtype=float))


def test_distance_examples(rng):
    x = rng.normal(size=5)
    assert distance(x, x, "euclidean") == 0
    assert distance(x, 2 * x, "cosine") == pytest.approx(0, abs=1e-15)
    assert distance([0, 0], [3, 4], "euclidean") == 5


def test_cosine_zero_vector():
    with pytest.raises(DomainError):
        distance([0, 0], [1, 0], "cosine")


def test_duplicate_in_other_camera_is_rank_one():
    q = FeatureRecord("a", [1.0, 2.0], "c0")
    g = EmbeddingSet(["a"], ["c1"], [[1.0, 2.0]])
    assert rank_query(q, g).first_match_rank == 1


def test_same_id_same_camera_gallery_is_protocol_error():
    q = FeatureRecord("a", [1.0, 2.0], "c0")
    g = EmbeddingSet(["a", "a"], ["c0", "c0"], [[1.0, 2.0], [3.0, 1.0]])
    with pytest.raises(ProtocolError):
        rank_query(q, g)


def test_no_cameras_means_plain_id_matching():
    q = FeatureRecord("a", [0.0, 0.0], None)
    g = EmbeddingSet(["a", "b"], [None, None], [[0.0, 0.0], [1.0, 0.0]])
    r = rank_query(q, g, "euclidean")
    assert r.order.tolist() == [0, 1] and r.matches.tolist() == [True, False]


def test_hand_built_gallery_order():
    q = FeatureRecord("a", [0.0, 0.0], "c0")
    g = EmbeddingSet(["b", "a", "c"], ["c1", "c1", "c1"], [[3.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
    r = rank_query(q, g, "euclidean")
    # distances 3, 1, 2
    assert r.order.tolist() == [1, 2, 0]
    assert r.matches.tolist() == [True, False, False]


def test_ties_broken_by_gallery_index():
    q = FeatureRecord("a", [0.0, 0.0], None)
    g = EmbeddingSet(["x", "y", "a"], [None] * 3, [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    assert rank_query(q, g, "euclidean").order.tolist() == [0, 1, 2]


def test_cmc_examples():
    assert cmc_top_k([_result([1]), _result([1, 4])], 1) == 1.0
    third = [_result([3]) for _ in range(4)]
    assert cmc_top_k(third, 1) == 0 and cmc_top_k(third, 5) == 1.0
    mixed = [_result([1]), _result([2]), _result([6]), _result([3])]
    assert cmc_top_k(mixed, 1) == 0.25
    assert cmc_top_k(mixed, 5) == 0.75


def test_average_precision_examples():
    assert average_precision(_result([1])) == 1.0
    assert average_precision(_result([2])) == 0.5
    assert average_precision(_result([1, 3])) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)
    with pytest.raises(ProtocolError):
        average_precision(_result([]))


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_rank_matches_brute_force_oracle(metric):
    rng = np.random.default_rng(99)
    for _ in range(100):
        n = int(rng.integers(1, 51))
        dim = int(rng.integers(1, 5))
        # small integer coordinates force plenty of exact ties
        G = rng.integers(-2, 3, size=(n, dim)).astype(float)
        if metric == "cosine":
            G[np.all(G == 0, axis=1), 0] = 1.0
        ids = [f"v{k}" for k in rng.integers(0, 4, size=n)]
        cams = [f"c{k}" for k in rng.integers(0, 3, size=n)]
        gallery = EmbeddingSet(ids, cams, G)
        rows = list(zip(ids, cams, G.tolist()))
        q_vec = rng.integers(-2, 3, size=dim).astype(float)
        if metric == "cosine" and not q_vec.any():
            q_vec[0] = 1.0
        q = FeatureRecord(f"v{rng.integers(0, 4)}", q_vec, f"c{rng.integers(0, 3)}")
        try:
            got = rank_query(q, gallery, metric)
        except ProtocolError:
            assert oracles.rank(q_vec.tolist(), q.id, q.camera, rows, metric)[0] == []
            continue
        order, matches = oracles.rank(q_vec.tolist(), q.id, q.camera, rows, metric)
        assert got.order.tolist() == order
        assert got.matches.tolist() == matches


def test_cmc_nondecreasing_in_k(rng):
    results = [_result(sorted(rng.choice(np.arange(1, 11), size=2, replace=False).tolist())) for _ in range(20)]
    curve = [cmc_top_k(results, k) for k in range(1, 11)]
    assert all(b >= a for a, b in zip(curve, curve[1:]))


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_scale_invariance(rng, metric):
    ids = [f"v{k}" for k in rng.integers(0, 5, size=40)]
    cams = [f"c{k}" for k in rng.integers(0, 3, size=40)]
    full = EmbeddingSet(ids, cams, rng.normal(size=(40, 6)))
    q, g = EmbeddingSet(ids[:10], cams[:10], full.vectors[:10]), EmbeddingSet(ids[10:], cams[10:], full.vectors[10:])
    for i in range(10):  # make sure every query has a cross-camera match
        g.ids[i] = q.ids[i]
        g.cameras[i] = "other"
    base = evaluate(q, g, metric)
    for s in (0.5, 4.0):  # powers of two keep every distance ratio exact
        scaled = evaluate(q.scaled(s), g.scaled(s), metric)
        assert (scaled.top1, scaled.top5, scaled.map) == (base.top1, base.top5, base.map)


def test_report_format():
    q = EmbeddingSet(["a", "b"], ["c0", "c0"], [[1.0, 0.0], [0.0, 1.0]])
    g = EmbeddingSet(["a", "b"], ["c1", "c1"], [[1.0, 0.1], [0.1, 1.0]])
    rep = evaluate(q, g)
    assert rep.record() == "top1=1.000000 top5=1.000000 map=1.000000 n_query=2 n_gallery=2 metric=cosine"
    assert "Top-1" in rep.table()


def test_map_requires_queries():
    with pytest.raises(ProtocolError):
        mean_average_precision([])
