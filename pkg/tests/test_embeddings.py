#!/usr/bin/env python3
"""
Tests for embedding tables: binary and CSV IO, validation and the
clustered synthetic generator.

IMPORTANT: Use pytest-mock for all mocking needs, NOT unittest.mock!
"""

import numpy as np
import pytest

from src.embeddings import (
    EmbeddingTable,
    cluster_labels,
    load_embeddings,
    save_embeddings,
    synth_embeddings,
    table_checksum,
)
from src.errors import DataError, ShapeError


@pytest.fixture
def table():
    return EmbeddingTable(np.arange(12, dtype=np.float32).reshape(4, 3))


class TestEmbeddingIO:
    def test_binary_round_trip(self, table, tmp_path):
        path = save_embeddings(table, tmp_path / "emb.bin")
        loaded = load_embeddings(path, 4)
        np.testing.assert_array_equal(loaded.matrix, table.matrix)

    def test_csv_table(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("0.5,1.0\n-1.0,2.0\n", encoding="utf-8")
        loaded = load_embeddings(path, 2)
        assert loaded.dim == 2
        assert loaded.matrix[1, 0] == pytest.approx(-1.0)

    def test_row_count_mismatch(self, table, tmp_path):
        path = save_embeddings(table, tmp_path / "emb.bin")
        with pytest.raises(ShapeError):
            load_embeddings(path, 5)

    def test_truncated_payload(self, table, tmp_path):
        path = tmp_path / "emb.bin"
        save_embeddings(table, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ShapeError):
            load_embeddings(path, 4)

    def test_nan_row_is_named(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("0.5,1.0\nnan,2.0\n", encoding="utf-8")
        with pytest.raises(DataError) as exc_info:
            load_embeddings(path, 2)
        assert exc_info.value.row == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_embeddings(tmp_path / "missing.bin", 1)

    def test_one_dimensional_matrix_rejected(self):
        with pytest.raises(ShapeError):
            EmbeddingTable(np.zeros(3))


class TestChecksum:
    def test_changes_with_content(self, table):
        before = table_checksum(table)
        table.matrix[0, 0] += 1.0
        assert table_checksum(table) != before


class TestSynthEmbeddings:
    def test_shape_and_determinism(self):
        first = synth_embeddings(40, 6, 4, 0.1, seed=3)
        second = synth_embeddings(40, 6, 4, 0.1, seed=3)
        assert first.matrix.shape == (40, 6)
        np.testing.assert_array_equal(first.matrix, second.matrix)

    def test_different_seeds_differ(self):
        assert not np.array_equal(synth_embeddings(10, 4, 2, 0.1, 0).matrix, synth_embeddings(10, 4, 2, 0.1, 1).matrix)

    def test_clusters_are_tight(self):
        table = synth_embeddings(200, 16, 4, 0.01, seed=0)
        labels = cluster_labels(200, 4)
        same = table.matrix[labels == 0]
        other = table.matrix[labels == 1]
        within = np.linalg.norm(same - same.mean(axis=0), axis=1).mean()
        between = np.linalg.norm(same.mean(axis=0) - other.mean(axis=0))
        assert within < between

    def test_nearest_center_recovers_cluster(self):
        # zero noise leaves each cluster's rows equal to its center
        centers = synth_embeddings(100, 16, 4, 0.0, seed=5).matrix[:4]
        table = synth_embeddings(100, 16, 4, 0.01, seed=5)
        distances = ((table.matrix[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        np.testing.assert_array_equal(distances.argmin(axis=1), cluster_labels(100, 4))

    def test_zero_noise_collapses_clusters(self):
        table = synth_embeddings(8, 4, 2, 0.0, seed=0)
        np.testing.assert_array_equal(table.matrix[0], table.matrix[2])

    @pytest.mark.parametrize("args", [(0, 4, 2, 0.1), (4, 4, 5, 0.1), (4, 4, 2, -1.0)])
    def test_invalid_arguments(self, args):
        with pytest.raises(ValueError):
            synth_embeddings(*args, seed=0)


def test_cluster_labels_round_robin():
    assert cluster_labels(5, 2).tolist() == [0, 1, 0, 1, 0]
