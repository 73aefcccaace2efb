import numpy as np
import pytest

from casebook.ann import FlatIndex, IndexConfig
from casebook.errors import IndexError_

from conftest import Rec, make_records, unit_vectors


def flat(dim=8, metric="cosine"):
    return IndexConfig(kind="flat", dimension=dim, metric=metric)


def exhaustive_oracle(ids, vectors, query, k, normalize=True):
    """Independent scoring oracle: full float64 scan, full sort."""
    q = np.asarray(query, dtype=np.float64)
    if normalize:
        q = q / np.linalg.norm(q)
    scores = vectors.astype(np.float64) @ q
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], scores[i]) for i in order[:k]]


class TestSearch:
    def test_identity_query_rank_one(self):
        vectors = unit_vectors(5, 8, seed=1)
        index = FlatIndex.build(make_records(vectors), flat())
        hits = index.search(vectors[3], 1)
        assert hits[0].chunk_id == "v3"
        assert hits[0].score == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_query_scores_zero(self):
        v = np.zeros(8, dtype=np.float32)
        v[0] = 1.0
        q = np.zeros(8)
        q[1] = 1.0
        index = FlatIndex.build([Rec("only", v)], flat())
        assert index.search(q, 1)[0].score == pytest.approx(0.0, abs=1e-6)

    def test_two_dimensional_hand_fixture(self):
        angles = [0.0, 0.4, 0.9, 2.0, 3.0]
        vectors = np.array(
            [[np.cos(a), np.sin(a)] for a in angles], dtype=np.float32
        )
        index = FlatIndex.build(make_records(vectors), IndexConfig(kind="flat", dimension=2))
        hits = index.search(np.array([1.0, 0.0]), 2)
        # cos distances to angle 0: [1.0, cos(0.4), cos(0.9), ...]
        assert [h.chunk_id for h in hits] == ["v0", "v1"]
        assert hits[1].score == pytest.approx(np.cos(0.4), abs=1e-6)

    def test_matches_oracle_on_random_corpus(self):
        vectors = unit_vectors(800, 16, seed=3)
        records = make_records(vectors)
        index = FlatIndex.build(records, flat(16))
        queries = unit_vectors(25, 16, seed=4)
        for q in queries:
            hits = index.search(q, 10)
            expected = exhaustive_oracle([r.chunk_id for r in records], vectors, q, 10)
            assert [h.chunk_id for h in hits] == [cid for cid, _ in expected]
            for hit, (_, score) in zip(hits, expected):
                assert hit.score == pytest.approx(score, abs=1e-6)

    def test_tie_break_by_chunk_id(self):
        v = unit_vectors(1, 8, seed=5)[0]
        index = FlatIndex.build([Rec("zz", v), Rec("aa", v.copy())], flat())
        hits = index.search(v, 2)
        assert [h.chunk_id for h in hits] == ["aa", "zz"]

    def test_fewer_than_k_returns_all(self):
        vectors = unit_vectors(3, 8, seed=6)
        index = FlatIndex.build(make_records(vectors), flat())
        assert len(index.search(vectors[0], 10)) == 3

    def test_k_zero_rejected(self):
        index = FlatIndex.build(make_records(unit_vectors(2, 8, seed=7)), flat())
        with pytest.raises(IndexError_):
            index.search(unit_vectors(1, 8, seed=8)[0], 0)

    def test_empty_index_empty_result(self):
        index = FlatIndex(flat())
        assert index.search(unit_vectors(1, 8, seed=9)[0], 5) == []

    def test_dot_metric_skips_normalization(self):
        v = np.array([2.0, 0, 0, 0, 0, 0, 0, 0], dtype=np.float32)
        index = FlatIndex.build([Rec("big", v)], flat(metric="dot"))
        assert index.search(np.array([1.0, 0, 0, 0, 0, 0, 0, 0]), 1)[0].score == pytest.approx(2.0)


class TestValidation:
    def test_dimension_mismatch(self):
        index = FlatIndex.build(make_records(unit_vectors(2, 8, seed=1)), flat())
        with pytest.raises(IndexError_, match="dimension"):
            index.search(np.ones(4), 1)

    def test_non_unit_vector_rejected_under_cosine(self):
        bad = np.full(8, 0.9, dtype=np.float32)
        with pytest.raises(IndexError_, match="unit-norm"):
            FlatIndex.build([Rec("bad", bad)], flat())

    def test_duplicate_id_rejected(self):
        vectors = unit_vectors(2, 8, seed=2)
        with pytest.raises(IndexError_, match="duplicate"):
            FlatIndex.build([Rec("x", vectors[0]), Rec("x", vectors[1])], flat())


class TestAdd:
    def test_add_to_empty_then_search(self):
        index = FlatIndex(flat())
        v = unit_vectors(1, 8, seed=3)
        index.add([Rec("one", v[0])])
        assert len(index) == 1
        assert index.search(v[0], 1)[0].chunk_id == "one"

    def test_build_union_equals_build_then_add(self):
        vectors = unit_vectors(60, 8, seed=4)
        records = make_records(vectors)
        whole = FlatIndex.build(records, flat())
        part = FlatIndex.build(records[:35], flat())
        part.add(records[35:])
        queries = unit_vectors(20, 8, seed=5)
        for q in queries:
            assert whole.search(q, 7) == part.search(q, 7)

    def test_add_duplicate_rejected(self):
        vectors = unit_vectors(2, 8, seed=6)
        index = FlatIndex.build([Rec("a", vectors[0])], flat())
        with pytest.raises(IndexError_, match="duplicate id 'a'"):
            index.add([Rec("a", vectors[1])])
