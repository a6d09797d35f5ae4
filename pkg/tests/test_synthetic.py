#!/usr/bin/env python3
"""
Tests for the synthetic corpus generator.

IMPORTANT: Use pytest-mock for all mocking needs, NOT unittest.mock!
"""

import sys
from collections import Counter

import numpy as np
import pytest

from src.dataset import apply_kcore, build_sequences, load_interactions
from src.embeddings import cluster_labels, synth_embeddings
from src.synthetic import embeddings_for_dataset, generate_interactions, main, write_interactions


class TestGenerateInteractions:
    def test_lengths_and_users(self):
        records = generate_interactions(n_users=20, n_items=12, n_clusters=3, min_len=4, max_len=6, seed=0)
        per_user = Counter(r.user_id for r in records)
        assert len(per_user) == 20
        assert all(4 <= n <= 6 for n in per_user.values())

    def test_users_stay_in_one_cluster(self):
        records = generate_interactions(n_users=15, n_items=12, n_clusters=3, seed=1)
        labels = cluster_labels(12, 3)
        clusters = {}
        for r in records:
            clusters.setdefault(r.user_id, set()).add(int(labels[int(r.item_id[1:])]))
        assert all(len(c) == 1 for c in clusters.values())

    def test_timestamps_increase_per_user(self):
        records = generate_interactions(n_users=5, n_items=8, n_clusters=2, seed=2)
        by_user = {}
        for r in records:
            by_user.setdefault(r.user_id, []).append(r.timestamp)
        assert all(ts == sorted(ts) and len(set(ts)) == len(ts) for ts in by_user.values())

    def test_deterministic(self):
        assert generate_interactions(n_users=10, seed=3) == generate_interactions(n_users=10, seed=3)
        assert generate_interactions(n_users=10, seed=3) != generate_interactions(n_users=10, seed=4)

    @pytest.mark.parametrize(
        "kwargs",
        [{"n_users": 0}, {"n_items": 2, "n_clusters": 3}, {"min_len": 2}, {"min_len": 9, "max_len": 8}],
    )
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ValueError):
            generate_interactions(**kwargs)


def test_write_and_reload(tmp_path):
    records = generate_interactions(n_users=5, n_items=8, n_clusters=2, seed=0)
    path = write_interactions(records, tmp_path / "data" / "synthetic.csv")
    assert load_interactions(path) == records


def test_embeddings_follow_dense_item_order(tiny_dataset):
    table = embeddings_for_dataset(tiny_dataset, 16, 8, 2, 0.1, seed=0)
    full = synth_embeddings(16, 8, 2, 0.1, seed=0)
    assert table.num_items == tiny_dataset.num_items
    for raw_id, dense in tiny_dataset.item_index.items():
        np.testing.assert_array_equal(table.matrix[dense], full.matrix[int(raw_id[1:])])


def test_fixture_survives_five_core():
    dataset = build_sequences(apply_kcore(generate_interactions(seed=0), 5))
    assert dataset.num_users > 100
    assert dataset.num_items > 50


def test_main_writes_csv(tmp_path, monkeypatch):
    output = tmp_path / "out.csv"
    monkeypatch.setattr(sys, "argv", ["synthetic", "--users", "4", "--items", "8", "--output", str(output)])
    with pytest.raises(SystemExit) as exc_info:
        main()
    assert exc_info.value.code == 0
    assert len(load_interactions(output)) >= 4 * 8
