import numpy as np
import pytest

from conftest import tiny_config
from lgur.data import generate_dataset
from lgur.model import LGUR
from lgur.retrieval import (EvaluationError, RetrievalIndex, build_index, chance_rank1, encode_queries,
                            evaluate, load_index, query, rank_gallery, rank_k, rank_k_from_similarity,
                            save_index)


def index_of(features, labels=None, ids=None):
    n = len(features)
    return RetrievalIndex(np.asarray(features, dtype=np.float32),
                          np.arange(n) if labels is None else np.asarray(labels),
                          np.arange(n) if ids is None else np.asarray(ids))


class TestQuery:
    def test_exact_match_ranks_first(self):
        index = index_of(np.eye(4))
        assert query(np.array([0.0, 0, 2, 0]), index)[0] == 2

    def test_sort_oracle_with_ties(self):
        sims = np.array([[0.5, -0.1, 0.9, 0.5]])
        ids = np.array([7, 3, 5, 2])
        order = ids[rank_gallery(sims, ids)[0]]
        # 0.9 -> id 5; tie at 0.5 -> ids 2 then 7; -0.1 -> id 3
        assert order.tolist() == [5, 2, 7, 3]

    def test_gallery_scale_invariance(self, rng):
        g = rng.normal(size=(10, 6))
        q = rng.normal(size=6)
        np.testing.assert_array_equal(query(q, index_of(g)), query(q, index_of(3 * g)))

    def test_empty_index(self):
        with pytest.raises(EvaluationError):
            query(np.ones(3), index_of(np.zeros((0, 3))))


class TestRankK:
    def test_perfect_features(self, rng):
        g = rng.normal(size=(8, 5))
        acc = rank_k(g, np.arange(8), index_of(g))
        assert acc == {1: 1.0, 5: 1.0, 10: 1.0}

    def test_random_features_monte_carlo(self):
        # one correct image among 100 -> Rank-1 about 1/100
        r = np.random.default_rng(0)
        gallery = r.normal(size=(100, 16))
        queries = r.normal(size=(1000, 16))
        labels = r.integers(0, 100, size=1000)
        acc = rank_k(queries, labels, index_of(gallery))
        assert abs(acc[1] - 0.01) < 0.02
        assert acc[1] <= acc[5] <= acc[10]

    def test_at_least_one_counts(self):
        sims = np.array([[0.9, 0.8, 0.1]])
        acc = rank_k_from_similarity(sims, [1], [0, 1, 1], ks=(1, 2))
        assert acc == {1: 0.0, 2: 1.0}

    def test_missing_identity(self):
        with pytest.raises(EvaluationError):
            rank_k_from_similarity(np.zeros((1, 2)), [5], [0, 1])

    def test_chance_estimate(self):
        labels = np.repeat(np.arange(20), 6)
        assert abs(chance_rank1(labels, labels) - 0.05) < 0.005


@pytest.fixture(scope="module")
def setup():
    cfg = tiny_config(**{"data.n_ids": 6, "data.n_test_ids": 2})
    return LGUR(cfg), generate_dataset(cfg.data)


class TestModelRetrieval:
    def test_one_pass_per_image_and_text(self, setup):
        model, ds = setup
        model.counters.clear()
        evaluate(model, ds)
        assert model.counters["image_passes"] == len(ds)
        assert model.counters["text_passes"] == len(ds)

    def test_index_independent_of_batching(self, setup):
        model, ds = setup
        a = build_index(model, ds.patches, ds.identities, batch_size=64).features
        b = build_index(model, ds.patches, ds.identities, batch_size=1).features
        c = build_index(model, ds.patches, ds.identities, batch_size=5).features
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_query_features_independent_of_gallery(self, setup):
        model, ds = setup
        q1 = encode_queries(model, ds.tokens, ds.lengths)
        build_index(model, ds.patches, ds.identities)
        q2 = encode_queries(model, ds.tokens, ds.lengths)
        np.testing.assert_array_equal(q1, q2)

    def test_metrics_fields(self, setup):
        model, ds = setup
        m = evaluate(model, ds)
        assert set(m) == {"rank1", "rank5", "rank10", "num_queries", "num_gallery"}
        assert 0 <= m["rank1"] <= m["rank5"] <= m["rank10"] <= 1

    def test_index_round_trip(self, setup, tmp_path):
        model, ds = setup
        index = build_index(model, ds.patches, ds.identities, ds.pair_ids)
        save_index(index, tmp_path / "i.bin")
        back = load_index(tmp_path / "i.bin")
        assert back.features.tobytes() == index.features.tobytes()
        np.testing.assert_array_equal(back.labels, index.labels)
        np.testing.assert_array_equal(back.image_ids, index.image_ids)
        assert back.n_prototypes == index.n_prototypes

    def test_index_rejects_unknown_version(self, tmp_path):
        save_index(index_of(np.eye(3)), tmp_path / "i.bin")
        blob = bytearray((tmp_path / "i.bin").read_bytes())
        blob[8] = 7
        (tmp_path / "i.bin").write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="version"):
            load_index(tmp_path / "i.bin")
