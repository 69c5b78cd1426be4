import numpy as np
import pytest
from hypothesis import given, strategies as st

from embclust.embeddings import (EmbeddingSet, SyntheticSpec, generate_synthetic,
                                 l2_normalize, load, load_labels_text, save)
from embclust.errors import DegenerateInputError, FormatError


class TestSyntheticSpec:
    def test_rejects_small_dim(self):
        with pytest.raises(ValueError, match="dim"):
            SyntheticSpec(num_clusters=1, points_per_cluster=3, dim=1)

    def test_rejects_nonpositive_counts(self):
        with pytest.raises(ValueError):
            SyntheticSpec(num_clusters=0, points_per_cluster=3, dim=8)


class TestGenerateSynthetic:
    def test_zero_spread_collapses_to_center(self):
        spec = SyntheticSpec(num_clusters=1, points_per_cluster=3, dim=8,
                             intra_spread=0.0, seed=1)
        emb = generate_synthetic(spec)
        assert emb.count == 3
        assert np.array_equal(emb.rows[0], emb.rows[1])
        assert np.array_equal(emb.rows[0], emb.rows[2])
        assert np.allclose(np.linalg.norm(emb.rows, axis=1), 1.0)
        assert np.array_equal(emb.labels, [0, 0, 0])

    def test_deterministic_given_seed(self):
        spec = SyntheticSpec(num_clusters=2, points_per_cluster=5, dim=16,
                             intra_spread=0.1, seed=7)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        assert np.array_equal(a.rows, b.rows)
        assert np.array_equal(a.labels, b.labels)

    def test_nearest_centroid_recovers_labels(self):
        # oracle: assign every point to its nearest empirical centroid
        spec = SyntheticSpec(num_clusters=20, points_per_cluster=50, dim=64,
                             intra_spread=0.15, seed=7)
        emb = generate_synthetic(spec)
        assert emb.count == 1000
        centroids = np.vstack([
            emb.rows[emb.labels == c].mean(axis=0) for c in range(20)
        ])
        centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
        assigned = np.argmax(emb.rows @ centroids.T, axis=1)
        assert np.array_equal(assigned, emb.labels)


class TestL2Normalize:
    def test_three_four_five(self):
        emb = EmbeddingSet(rows=np.array([[3.0, 4.0]]))
        out = l2_normalize(emb)
        assert np.allclose(out.rows[0], [0.6, 0.8], atol=1e-15)
        assert out.normalized

    def test_idempotent(self, rng):
        rows = rng.standard_normal((20, 8))
        once = l2_normalize(EmbeddingSet(rows=rows))
        twice = l2_normalize(once)
        assert np.max(np.abs(twice.rows - once.rows)) < 1e-12

    def test_zero_row_names_index(self):
        rows = np.array([[1.0, 2.0], [0.0, 0.0], [3.0, 1.0]])
        with pytest.raises(DegenerateInputError, match="row 1"):
            l2_normalize(EmbeddingSet(rows=rows))

    def test_unit_norm_within_1e9(self, rng):
        out = l2_normalize(EmbeddingSet(rows=rng.standard_normal((50, 16))))
        assert np.max(np.abs(np.linalg.norm(out.rows, axis=1) - 1.0)) < 1e-9


class TestSaveLoad:
    def test_round_trip_exact(self, tmp_path):
        rows = np.array([[1.0, 2.5], [0.5, -3.0], [7.0, 0.125]])
        labels = np.array([0, 1, 1], dtype=np.int32)
        emb = EmbeddingSet(rows=rows, labels=labels)
        path = tmp_path / "e.dceb"
        save(emb, path)
        back = load(path)
        assert np.array_equal(back.rows, rows)
        assert np.array_equal(back.labels, labels)
        assert back.normalized == emb.normalized

    def test_round_trip_stable_after_first_quantization(self, tmp_path, rng):
        emb = l2_normalize(EmbeddingSet(rows=rng.standard_normal((10, 4))))
        path = tmp_path / "e.dceb"
        save(emb, path)
        first = load(path)
        save(first, path)
        second = load(path)
        assert np.array_equal(first.rows, second.rows)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dceb"
        emb = EmbeddingSet(rows=np.eye(3))
        save(emb, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            load(path)

    def test_truncated_rows(self, tmp_path):
        path = tmp_path / "short.dceb"
        emb = EmbeddingSet(rows=np.eye(10))
        save(emb, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 40])  # drop one row
        with pytest.raises(FormatError, match="byte offset"):
            load(path)

    @given(st.lists(st.lists(st.floats(width=32, allow_nan=False,
                                       allow_infinity=False, min_value=-1e6,
                                       max_value=1e6),
                             min_size=3, max_size=3),
                    min_size=1, max_size=8))
    def test_round_trip_any_f32_matrix(self, matrix):
        import tempfile
        rows = np.asarray(matrix, dtype=np.float64)
        emb = EmbeddingSet(rows=rows)
        with tempfile.TemporaryDirectory() as tmp:
            path = f"{tmp}/e.dceb"
            save(emb, path)
            assert np.array_equal(load(path).rows, rows)


class TestLabelsText:
    def test_reads_one_per_line(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("3\n1\n-1\n2\n")
        assert np.array_equal(load_labels_text(path), [3, 1, -1, 2])

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("1\nouch\n")
        with pytest.raises(FormatError, match="line 2"):
            load_labels_text(path)


class TestInvariants:
    def test_labels_length_checked(self):
        with pytest.raises(ValueError, match="labels"):
            EmbeddingSet(rows=np.eye(3), labels=np.array([1, 2]))

    def test_nonfinite_rejected(self):
        rows = np.eye(3)
        rows[1, 1] = np.nan
        with pytest.raises(ValueError, match="finite"):
            EmbeddingSet(rows=rows)

    def test_rows_are_immutable(self):
        emb = EmbeddingSet(rows=np.eye(3))
        with pytest.raises(ValueError):
            emb.rows[0, 0] = 5.0
