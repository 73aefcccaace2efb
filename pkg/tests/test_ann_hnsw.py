import dataclasses

import pytest

from casebook.ann import FlatIndex, HnswIndex, IndexConfig
from casebook.ann.base import HnswParams
from casebook.errors import IndexError_
from casebook.evaluation import gaussian_mixture

from conftest import Rec, make_records, unit_vectors


def hnsw_config(dim=16, **params):
    return IndexConfig(kind="hnsw", dimension=dim, hnsw=HnswParams(**params))


def mixture_records(n, dim, seed):
    vectors, _ = gaussian_mixture(n, dim, clusters=8, seed=seed)
    return make_records(vectors), vectors


class TestBuild:
    def test_seeded_build_is_deterministic(self):
        records, vectors = mixture_records(400, 16, seed=1)
        a = HnswIndex.build(records, hnsw_config(seed=5))
        b = HnswIndex.build(records, hnsw_config(seed=5))
        assert a.structure_equal(b)
        queries = unit_vectors(20, 16, seed=2)
        for q in queries:
            assert a.search(q, 10) == b.search(q, 10)

    def test_identity_rank_one(self):
        records, vectors = mixture_records(300, 16, seed=3)
        index = HnswIndex.build(records, hnsw_config())
        for row in (0, 57, 299):
            assert index.search(vectors[row], 1)[0].chunk_id == records[row].chunk_id

    def test_single_record(self):
        v = unit_vectors(1, 16, seed=4)
        index = HnswIndex.build([Rec("solo", v[0])], hnsw_config())
        hits = index.search(v[0], 5)
        assert [h.chunk_id for h in hits] == ["solo"]


class TestSearchQuality:
    def test_exhaustive_ef_matches_flat_exactly(self):
        records, _ = mixture_records(2000, 16, seed=5)
        flat = FlatIndex.build(records, IndexConfig(kind="flat", dimension=16))
        index = HnswIndex.build(records, hnsw_config(ef_search=2000))
        queries = unit_vectors(40, 16, seed=6)
        for q in queries:
            truth = {h.chunk_id for h in flat.search(q, 10)}
            got = {h.chunk_id for h in index.search(q, 10)}
            assert len(got & truth) / 10 == 1.0

    def test_recall_non_decreasing_in_ef_search(self):
        records, _ = mixture_records(1500, 16, seed=7)
        flat = FlatIndex.build(records, IndexConfig(kind="flat", dimension=16))
        index = HnswIndex.build(records, hnsw_config())
        queries = unit_vectors(30, 16, seed=8)
        truth = [{h.chunk_id for h in flat.search(q, 10)} for q in queries]
        previous = -1.0
        for ef in (10, 24, 48, 96, 1500):
            index.config = dataclasses.replace(
                index.config, hnsw=dataclasses.replace(index.config.hnsw, ef_search=ef)
            )
            recall = sum(
                len({h.chunk_id for h in index.search(q, 10)} & t) / 10
                for q, t in zip(queries, truth)
            ) / len(queries)
            assert recall >= previous
            previous = recall
        assert previous == 1.0

    def test_default_recall_reasonable_at_small_scale(self):
        records, _ = mixture_records(1000, 16, seed=9)
        flat = FlatIndex.build(records, IndexConfig(kind="flat", dimension=16))
        index = HnswIndex.build(records, hnsw_config())
        queries = unit_vectors(50, 16, seed=10)
        recall = sum(
            len(
                {h.chunk_id for h in index.search(q, 10)}
                & {h.chunk_id for h in flat.search(q, 10)}
            )
            / 10
            for q in queries
        ) / len(queries)
        assert recall >= 0.95

    def test_ef_search_raised_to_k(self):
        records, _ = mixture_records(300, 16, seed=11)
        index = HnswIndex.build(records, hnsw_config(ef_search=4))
        assert len(index.search(unit_vectors(1, 16, seed=12)[0], 20)) == 20


class TestAdd:
    def test_incremental_insert_searchable(self):
        records, vectors = mixture_records(500, 16, seed=13)
        index = HnswIndex.build(records[:400], hnsw_config())
        index.add(records[400:])
        assert len(index) == 500
        for row in (450, 499):
            assert index.search(vectors[row], 1)[0].chunk_id == records[row].chunk_id

    def test_duplicate_id_rejected(self):
        records, _ = mixture_records(10, 16, seed=14)
        index = HnswIndex.build(records, hnsw_config())
        with pytest.raises(IndexError_, match="duplicate"):
            index.add([records[3]])

    def test_empty_index_search(self):
        index = HnswIndex(hnsw_config())
        assert index.search(unit_vectors(1, 16, seed=15)[0], 3) == []

    def test_k_zero_rejected(self):
        records, _ = mixture_records(10, 16, seed=16)
        index = HnswIndex.build(records, hnsw_config())
        with pytest.raises(IndexError_):
            index.search(unit_vectors(1, 16, seed=17)[0], 0)


class TestStructure:
    def test_layer_zero_has_all_nodes_linked(self):
        records, _ = mixture_records(300, 16, seed=18)
        index = HnswIndex.build(records, hnsw_config())
        n = len(index)
        counts = index._cnt0[:n]
        assert counts.min() >= 1  # nobody is isolated at layer 0
        assert counts.max() <= 2 * index.config.hnsw.M

    def test_upper_layer_counts_bounded_by_m(self):
        records, _ = mixture_records(2000, 16, seed=19)
        index = HnswIndex.build(records, hnsw_config())
        n = len(index)
        for cnt in index._cnt_up:
            assert cnt[:n].max() <= index.config.hnsw.M

    def test_level_multiplier_distribution(self):
        # with p = 1/ln(M), P(level >= 1) = 1/M: check the observed share
        records, _ = mixture_records(4000, 16, seed=20)
        index = HnswIndex.build(records, hnsw_config())
        n = len(index)
        share = float((index._levels[:n] >= 1).mean())
        assert 0.02 <= share <= 0.12  # expected 1/16 = 0.0625
