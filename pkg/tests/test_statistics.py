#!/usr/bin/env python3
"""
Tests for the statistics module.
IMPORTANT: Use pytest-mock for all mocking needs, NOT unittest.mock!
"""
import math

import pytest

from src.dataset import RawInteraction, apply_kcore, build_sequences
from src.statistics import (
    calculate_mean,
    calculate_std,
    compare_to_reference,
    dataset_statistics,
    is_non_increasing,
    moving_average,
    summarize_seeds,
)
from src.synthetic import generate_interactions


# Basic Statistical Functions Tests
def test_calculate_mean():
    """Test mean calculation with various inputs."""
    assert calculate_mean([1, 2, 3, 4, 5]) == 3.0
    assert calculate_mean([]) == 0
    assert calculate_mean([1]) == 1.0
    assert calculate_mean([-1, 1]) == 0.0


def test_calculate_std():
    """Sample standard deviation uses n - 1."""
    assert calculate_std([]) == 0.0
    assert calculate_std([4.0]) == 0.0
    assert calculate_std([1.0, 3.0]) == pytest.approx(math.sqrt(2.0))


@pytest.fixture
def small_dataset():
    records = []
    for user, length in (("a", 4), ("b", 5), ("c", 3)):
        for step in range(length):
            records.append(RawInteraction(user, f"i{step % 4}", step))
    return build_sequences(records)


def test_dataset_statistics(small_dataset):
    stats = dataset_statistics(small_dataset)
    assert stats["#User"] == 3
    assert stats["#Item"] == 4
    assert stats["#Interaction"] == 12
    assert stats["Sparsity"] == pytest.approx(0.0)
    assert stats["AvgLen"] == pytest.approx(4.0)


class TestCompareToReference:
    def test_within_two_percent(self):
        report = compare_to_reference({"#User": 101, "AvgLen": 8.0}, {"#User": 100, "AvgLen": 9.0})
        assert report["#User"]["within_tolerance"] is True
        assert report["AvgLen"]["within_tolerance"] is False
        assert report["AvgLen"]["relative_diff"] == pytest.approx(1 / 9)

    def test_zero_reference(self):
        report = compare_to_reference({"Sparsity": 0.0}, {"Sparsity": 0.0})
        assert report["Sparsity"]["within_tolerance"] is True

    def test_missing_statistic(self):
        with pytest.raises(KeyError):
            compare_to_reference({}, {"#Item": 5})


class TestSmoothing:
    def test_moving_average(self):
        assert moving_average([3.0, 1.0, 2.0, 6.0], window=2) == [3.0, 2.0, 1.5, 4.0]

    def test_window_one_is_identity(self):
        assert moving_average([1.0, 5.0], window=1) == [1.0, 5.0]

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            moving_average([1.0], window=0)

    def test_non_increasing(self):
        assert is_non_increasing([3.0, 2.0, 2.0, 1.0])
        assert not is_non_increasing([3.0, 3.5])
        assert is_non_increasing([3.0, 3.05], tolerance=0.1)
        assert is_non_increasing([])


class TestSummarizeSeeds:
    def test_groups_and_aggregates(self):
        rows = [
            {"schedule": "anneal", "seed": 0, "collision_rate": 0.1},
            {"schedule": "anneal", "seed": 1, "collision_rate": 0.3},
            {"schedule": "fixed_high", "seed": 0, "collision_rate": 0.5},
        ]
        summary = summarize_seeds(rows, ["schedule"], ["collision_rate"])
        assert [row["schedule"] for row in summary] == ["anneal", "fixed_high"]
        assert summary[0]["collision_rate_mean"] == pytest.approx(0.2)
        assert summary[0]["collision_rate_std"] == pytest.approx(math.sqrt(0.02))
        assert summary[0]["n_seeds"] == 2
        assert summary[1]["collision_rate_std"] == 0.0

    def test_empty(self):
        assert summarize_seeds([], ["schedule"], ["collision_rate"]) == []


def test_avg_len_is_mean_sequence_length():
    records = generate_interactions(n_users=50, n_items=30, n_clusters=3, min_len=4, max_len=12, seed=1)
    dataset = build_sequences(apply_kcore(records, 3))
    lengths = [len(seq) for seq in dataset.sequences]
    assert dataset_statistics(dataset)["AvgLen"] == pytest.approx(sum(lengths) / len(lengths))
