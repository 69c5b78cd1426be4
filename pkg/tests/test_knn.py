import numpy as np
import pytest

from embclust.embeddings import EmbeddingSet
from embclust.errors import DegenerateInputError, FormatError
from embclust.knn import (KnnGraph, build_knn, cosine_similarity, inject_noise,
                          load_graph, save_graph)

from .conftest import random_unit_rows
from .oracles import knn_rows_oracle


class TestCosineSimilarity:
    def test_self_similarity(self):
        v = np.array([0.6, 0.8])
        assert cosine_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_antipodal(self):
        assert cosine_similarity([1.0, 0.0], [-1.0, 0.0]) == -1.0

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_exact_symmetry(self, rng):
        for _ in range(20):
            a = rng.standard_normal(8)
            b = rng.standard_normal(8)
            assert cosine_similarity(a, b) == cosine_similarity(b, a)


class TestBuildKnn:
    def test_identical_points_tie_break(self):
        rows = np.tile([1.0, 0.0], (3, 1))
        g = build_knn(EmbeddingSet(rows=rows, normalized=True), 2)
        assert np.array_equal(g.neighbors, [[0, 1], [1, 0], [2, 0]])
        assert np.allclose(g.sims, 1.0)

    def test_square_corner_directions(self):
        # four unit directions in 2d; neighbor order must match dot products
        rows = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        g = build_knn(EmbeddingSet(rows=rows, normalized=True), 3)
        sims = rows @ rows.T
        for i in range(4):
            expect = sorted((j for j in range(4) if j != i),
                            key=lambda j: (-sims[i, j], j))[:2]
            assert list(g.neighbors[i]) == [i] + expect

    def test_matches_full_sort_oracle(self, rng):
        rows = random_unit_rows(rng, 200, 16)
        g = build_knn(EmbeddingSet(rows=rows, normalized=True), 20)
        nb, sm = knn_rows_oracle(rows, 20)
        assert np.array_equal(g.neighbors, nb)
        assert np.allclose(g.sims, sm, atol=1e-12)

    def test_requires_normalized(self, rng):
        emb = EmbeddingSet(rows=rng.standard_normal((5, 3)))
        with pytest.raises(ValueError, match="normalized"):
            build_knn(emb, 2)

    def test_k_out_of_range(self, rng):
        emb = EmbeddingSet(rows=random_unit_rows(rng, 5, 3), normalized=True)
        with pytest.raises(ValueError, match="k must be"):
            build_knn(emb, 6)

    def test_rows_non_increasing(self, rng):
        rows = random_unit_rows(rng, 50, 8)
        g = build_knn(EmbeddingSet(rows=rows, normalized=True), 10)
        assert np.all(np.diff(g.sims, axis=1) <= 1e-12)


class TestInjectNoise:
    def _graph(self, rng, n=100, k=6):
        rows = random_unit_rows(rng, n, 8)
        return build_knn(EmbeddingSet(rows=rows, normalized=True), k)

    def test_ratio_zero_only_normalizes(self, rng):
        g = self._graph(rng)
        out = inject_noise(g, 0.0, seed=3)
        lo = g.sims.min(axis=1, keepdims=True)
        hi = g.sims.max(axis=1, keepdims=True)
        expected = (g.sims - lo) / (hi - lo)
        assert np.array_equal(out.neighbors, g.neighbors)
        assert np.allclose(out.sims, expected, atol=1e-15)

    def test_deterministic(self, rng):
        g = self._graph(rng)
        a = inject_noise(g, 1.0, seed=42)
        b = inject_noise(g, 1.0, seed=42)
        assert np.array_equal(a.neighbors, b.neighbors)
        assert np.array_equal(a.sims, b.sims)

    def test_exact_perturbation_count(self, rng):
        g = self._graph(rng, n=100, k=6)
        _, mask = inject_noise(g, 0.4, seed=9, return_mask=True)
        assert mask.sum() == int(np.floor(0.4 * 100 * 5))
        assert not mask[:, 0].any()

    def test_rows_sorted_and_in_unit_interval(self, rng):
        g = self._graph(rng)
        out = inject_noise(g, 0.5, seed=11)
        assert np.all(out.sims >= 0.0) and np.all(out.sims <= 1.0)
        assert np.all(np.diff(out.sims, axis=1) <= 1e-12)
        assert np.array_equal(out.neighbors[:, 0], np.arange(g.n))
        assert np.all(out.sims[:, 0] == 1.0)

    def test_rows_keep_same_neighbor_sets(self, rng):
        g = self._graph(rng)
        out = inject_noise(g, 0.7, seed=5)
        for i in range(g.n):
            assert set(out.neighbors[i].tolist()) == set(g.neighbors[i].tolist())

    def test_ratio_out_of_range(self, rng):
        g = self._graph(rng)
        with pytest.raises(ValueError):
            inject_noise(g, 1.5, seed=0)


class TestGraphIO:
    def test_round_trip(self, rng, tmp_path):
        rows = random_unit_rows(rng, 30, 8)
        # quantize similarities up front so the round trip is exact
        g = build_knn(EmbeddingSet(rows=rows, normalized=True), 5)
        g = KnnGraph(neighbors=g.neighbors,
                     sims=g.sims.astype(np.float32).astype(np.float64))
        path = tmp_path / "g.dckg"
        save_graph(g, path)
        back = load_graph(path)
        assert np.array_equal(back.neighbors, g.neighbors)
        assert np.array_equal(back.sims, g.sims)

    def test_bad_magic(self, rng, tmp_path):
        rows = random_unit_rows(rng, 5, 4)
        g = build_knn(EmbeddingSet(rows=rows, normalized=True), 2)
        path = tmp_path / "g.dckg"
        save_graph(g, path)
        data = bytearray(path.read_bytes())
        data[0] = 0
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            load_graph(path)

    def test_truncated(self, rng, tmp_path):
        rows = random_unit_rows(rng, 5, 4)
        g = build_knn(EmbeddingSet(rows=rows, normalized=True), 2)
        path = tmp_path / "g.dckg"
        save_graph(g, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="byte offset"):
            load_graph(path)


class TestGraphInvariants:
    def test_rejects_duplicate_neighbors(self):
        with pytest.raises(ValueError, match="duplicate"):
            KnnGraph(neighbors=np.array([[0, 1, 1], [1, 0, 2], [2, 0, 1]]),
                     sims=np.array([[1.0, 0.5, 0.5]] * 3))

    def test_rejects_missing_self(self):
        with pytest.raises(ValueError, match="itself"):
            KnnGraph(neighbors=np.array([[1, 0], [1, 0]]),
                     sims=np.array([[1.0, 0.5], [1.0, 0.5]]))
