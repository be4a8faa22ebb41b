import io

import numpy as np
import pytest

from reachcast.embedding import EmbeddingMatrix
from reachcast.errors import DimensionError, FormatError, ParameterError
from reachcast.features import (Dataset, all_pairs, build_dataset,
                                link_embedding, load_dataset, save_dataset)
from reachcast.reach import ReachMatrix


def embedding(n=4, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(vectors=rng.normal(size=(n, d)) * 0.2,
                           labels=[f"n{i}" for i in range(n)])


class TestLinkEmbedding:
    def test_concatenation_order(self):
        emb = EmbeddingMatrix(vectors=np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert link_embedding(emb, 0, 1).tolist() == [1.0, 2.0, 3.0, 4.0]
        assert link_embedding(emb, 1, 0).tolist() == [3.0, 4.0, 1.0, 2.0]

    def test_output_length_doubles_dimension(self):
        emb = embedding(n=3, d=128)
        assert link_embedding(emb, 0, 2).shape == (256,)

    def test_ordered_pair_asymmetry(self):
        emb = embedding()
        uv = link_embedding(emb, 0, 1)
        vu = link_embedding(emb, 1, 0)
        assert sorted(uv.tolist()) == sorted(vu.tolist())
        assert not np.array_equal(uv, vu)

    def test_errors(self):
        emb = embedding()
        with pytest.raises(ParameterError):
            link_embedding(emb, 1, 1)
        with pytest.raises(IndexError):
            link_embedding(emb, 0, 99)


class TestBuildDataset:
    def test_full_table_row_count(self):
        emb = embedding(n=3)
        labels = ReachMatrix.from_triples(3, [(0, 1, 0.5)])
        ds = build_dataset(emb, labels, 1.0, seed=0)
        assert len(ds) == 6
        assert ds.pairs.tolist() == [[0, 1], [0, 2], [1, 0], [1, 2], [2, 0], [2, 1]]
        assert ds.targets.tolist() == [0.5, 0.0, 0.0, 0.0, 0.0, 0.0]

    def test_paper_scale_row_count(self):
        emb = embedding(n=1005, d=2)
        labels = ReachMatrix.from_triples(1005, [])
        ds = build_dataset(emb, labels, 1.0, seed=0)
        assert len(ds) == 1_009_020

    def test_all_zero_labels(self):
        emb = embedding(n=3)
        ds = build_dataset(emb, ReachMatrix.from_triples(3, []), 1.0, seed=0)
        assert np.all(ds.targets == 0.0)

    def test_positive_rows_survive_subsampling(self):
        emb = embedding(n=12, seed=3)
        rng = np.random.default_rng(4)
        triples = [(u, v, float(rng.random()))
                   for u in range(12) for v in range(12)
                   if u != v and rng.random() < 0.2]
        labels = ReachMatrix.from_triples(12, triples)
        ds = build_dataset(emb, labels, zero_keep_fraction=0.25, seed=5)
        kept_positive = int((ds.targets > 0).sum())
        assert kept_positive == len([t for t in triples if t[2] > 0])
        assert len(ds) < 12 * 11  # most zero rows thinned out

    def test_destination_half_matches_matrix(self):
        emb = embedding(n=4)
        labels = ReachMatrix.from_triples(4, [(2, 0, 0.7)])
        ds = build_dataset(emb, labels, 1.0, seed=0)
        i = [k for k in range(len(ds)) if ds.pairs[k].tolist() == [2, 0]][0]
        row = ds.row(i)
        assert row.label == 0.7
        assert np.array_equal(row.vector, link_embedding(emb, 2, 0))

    def test_rebuild_is_identical(self):
        emb = embedding(n=10, seed=6)
        labels = ReachMatrix.from_triples(10, [(0, 1, 0.4), (3, 2, 0.9)])
        a = build_dataset(emb, labels, 0.5, seed=7)
        b = build_dataset(emb, labels, 0.5, seed=7)
        assert np.array_equal(a.pairs, b.pairs)
        assert np.array_equal(a.targets, b.targets)

    def test_node_count_mismatch(self):
        with pytest.raises(DimensionError):
            build_dataset(embedding(n=4), ReachMatrix.from_triples(5, []), 1.0, 0)

    def test_zero_keep_fraction_domain(self):
        emb = embedding(n=3)
        labels = ReachMatrix.from_triples(3, [])
        with pytest.raises(ParameterError):
            build_dataset(emb, labels, 0.0, seed=0)
        with pytest.raises(ParameterError):
            build_dataset(emb, labels, 1.0001, seed=0)


class TestDatasetType:
    def test_rejects_diagonal_rows(self):
        with pytest.raises(ParameterError):
            Dataset(np.array([[1, 1]]), np.array([0.5]),
                    dense_features=np.zeros((1, 4)))

    def test_rejects_bad_targets(self):
        with pytest.raises(ParameterError):
            Dataset(np.array([[0, 1]]), np.array([1.5]),
                    dense_features=np.zeros((1, 4)))

    def test_all_pairs_canonical(self):
        pairs = all_pairs(3)
        assert pairs.tolist() == [[0, 1], [0, 2], [1, 0], [1, 2], [2, 0], [2, 1]]


class TestDatasetFiles:
    def test_round_trip(self):
        emb = embedding(n=5, seed=8)
        labels = ReachMatrix.from_triples(5, [(0, 1, 0.25), (4, 2, 0.8)])
        ds = build_dataset(emb, labels, 1.0, seed=9)
        buf = io.StringIO()
        save_dataset(ds, buf)
        loaded = load_dataset(io.StringIO(buf.getvalue()))
        assert len(loaded) == len(ds)
        assert np.array_equal(loaded.targets, ds.targets)
        assert np.abs(loaded.features() - ds.features()).max() < 1e-7
        header = buf.getvalue().splitlines()[0]
        assert header == f"#reachcast-dataset v1 dim={ds.feature_dim} rows={len(ds)}"

    def test_malformed_rejected(self):
        with pytest.raises(FormatError):
            load_dataset(io.StringIO("bogus\n"))
        text = "#reachcast-dataset v1 dim=4 rows=1\nn0\tn1\t0.5\t1,2,3\n"
        with pytest.raises(FormatError):
            load_dataset(io.StringIO(text))
