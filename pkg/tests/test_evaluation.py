#!/usr/bin/env python3
"""
Tests for ranking metrics and the identifier diagnostics.

IMPORTANT: Use pytest-mock for all mocking needs, NOT unittest.mock!
"""

import itertools
import json
import math

import numpy as np
import pytest
import torch

from src.dataset import split_examples
from src.evaluation import (
    MetricsRecord,
    collision_rate,
    full_rank_evaluate,
    identifier_evolution,
    metrics_from_rankings,
    ndcg_at_k,
    pca_components,
    rank_users,
    recall_at_k,
    usage_entropy,
    write_analysis_csv,
    write_ranked_outputs,
)
from src.recommender import GenerativeRecommender, VocabularyLayout, build_prefix_trie
from src.tokenizer import ItemIdentifier


class TestRankingMetrics:
    def test_recall(self):
        assert recall_at_k([3, 1, 2], 1, 1) == 0
        assert recall_at_k([3, 1, 2], 1, 2) == 1

    def test_ndcg_positions(self):
        assert ndcg_at_k([7, 8, 9], 7, 3) == pytest.approx(1.0)
        assert ndcg_at_k([7, 8, 9], 9, 3) == pytest.approx(0.5)
        assert ndcg_at_k([7, 8, 9], 9, 2) == 0.0

    def test_randomized_rankings_match_position_scan(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            ranked = rng.permutation(40)[: rng.integers(1, 31)].tolist()
            target = int(rng.integers(0, 40))
            k = int(rng.integers(1, 26))
            hit, gain = 0, 0.0
            for position in range(min(k, len(ranked))):
                if ranked[position] == target:
                    hit, gain = 1, math.log(2) / math.log(position + 2)
            assert recall_at_k(ranked, target, k) == hit
            assert ndcg_at_k(ranked, target, k) == pytest.approx(gain)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            recall_at_k([1], 1, 0)
        with pytest.raises(ValueError):
            ndcg_at_k([1], 1, 0)

    def test_metrics_from_rankings(self):
        record = metrics_from_rankings([[1, 2, 3], [4, 5, 6]], [2, 9], ks=[1, 3])
        assert record.recall == {1: 0.0, 3: 0.5}
        assert record.ndcg[3] == pytest.approx(0.5 / math.log2(3))
        assert record.num_users == 2

    def test_metrics_length_mismatch(self):
        with pytest.raises(ValueError):
            metrics_from_rankings([[1]], [1, 2])
        with pytest.raises(ValueError):
            metrics_from_rankings([], [])

    def test_record_columns(self):
        record = MetricsRecord(recall={10: 0.2, 5: 0.1}, ndcg={10: 0.08, 5: 0.05}, extra={"collision_rate": 0.0})
        assert list(record.as_row()) == ["Recall@5", "Recall@10", "NDCG@5", "NDCG@10"]
        assert record.to_dict()["collision_rate"] == 0.0
        assert record.to_dict()["split"] == "test"


class TestFullRankEvaluation:
    @pytest.fixture
    def model_and_trie(self, tiny_dataset, tiny_recommender_config):
        torch.manual_seed(0)
        codes = list(itertools.product(range(4), range(4)))[:tiny_dataset.num_items]
        identifiers = [ItemIdentifier(tuple(c), 0) for c in codes]
        layout = VocabularyLayout(2, 4, 1)
        model = GenerativeRecommender(tiny_recommender_config, layout).eval()
        return model, build_prefix_trie(identifiers, layout), identifiers

    def test_metrics_in_range(self, tiny_dataset, model_and_trie):
        model, trie, identifiers = model_and_trie
        record = full_rank_evaluate(model, trie, identifiers, tiny_dataset, "test", ks=[5, 10], beam_size=10,
                                    max_len=5)
        assert record.num_users == tiny_dataset.num_users
        for k in (5, 10):
            assert 0.0 <= record.ndcg[k] <= record.recall[k] <= 1.0
        assert record.recall[5] <= record.recall[10]

    def test_beam_smaller_than_k(self, tiny_dataset, model_and_trie):
        model, trie, identifiers = model_and_trie
        with pytest.raises(ValueError):
            full_rank_evaluate(model, trie, identifiers, tiny_dataset, ks=[5, 10], beam_size=5)

    def test_ranked_outputs(self, tiny_dataset, model_and_trie, tmp_path):
        model, trie, identifiers = model_and_trie
        examples = split_examples(tiny_dataset, "valid")[:3]
        rankings = rank_users(model, trie, identifiers, examples, beam_size=5, top_n=5, max_len=5)
        path = write_ranked_outputs(rankings, tmp_path / "ranked.jsonl")
        with open(path, encoding="utf-8") as f:
            lines = [json.loads(line) for line in f]
        assert [line["user"] for line in lines] == [user for user, _, _ in examples]
        assert all(len(line["items"]) == 5 == len(line["scores"]) for line in lines)


class TestIdentifierDiagnostics:
    def test_collision_rate_ignores_dedup(self):
        identifiers = [ItemIdentifier((0, 1), 0), ItemIdentifier((0, 1), 1), ItemIdentifier((2, 3), 0),
                       ItemIdentifier((1, 1), 0)]
        assert collision_rate(identifiers) == pytest.approx(0.25)

    def test_collision_rate_accepts_tuples(self):
        assert collision_rate([(1, 2), (1, 3)]) == 0.0

    def test_collision_rate_empty(self):
        with pytest.raises(ValueError):
            collision_rate([])

    def test_usage_entropy(self):
        identifiers = [(0, 0), (1, 0), (2, 0), (3, 0)]
        entropy = usage_entropy(identifiers, codebook_size=4, log_base="two")
        assert entropy == pytest.approx([2.0, 0.0])
        natural = usage_entropy(identifiers, codebook_size=4, log_base="natural")
        assert natural[0] == pytest.approx(math.log(4))

    def test_identifier_evolution(self):
        before = {0: ItemIdentifier((1, 2, 3)), 1: ItemIdentifier((1, 2, 3), 1), 2: ItemIdentifier((0, 0, 0)),
                  3: ItemIdentifier((5, 5, 5))}
        after = {0: ItemIdentifier((1, 2, 4)), 1: ItemIdentifier((1, 2, 3), 1), 2: ItemIdentifier((0, 1, 1)),
                 3: ItemIdentifier((5, 5, 5))}
        report = identifier_evolution(before, after)
        assert report.layer_change_rate == pytest.approx([0.0, 0.25, 0.5])
        assert report.pattern_distribution == {(): 0.5, (1, 2): 0.25, (2,): 0.25}
        assert report.changed_at_most_one_layer() == pytest.approx(0.75)

    def test_identifier_evolution_mismatched_items(self):
        with pytest.raises(ValueError):
            identifier_evolution({0: ItemIdentifier((1,))}, {1: ItemIdentifier((1,))})


class TestPCA:
    def test_line_projects_onto_first_axis(self):
        codebook = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        coordinates, eigenvalues = pca_components(codebook)
        assert coordinates.shape == (3, 2)
        np.testing.assert_allclose(coordinates[:, 1], 0.0, atol=1e-12)
        np.testing.assert_allclose(coordinates[:, 0], [-math.sqrt(2), 0.0, math.sqrt(2)], atol=1e-12)
        assert eigenvalues[0] > eigenvalues[1]

    def test_accepts_tensor_and_sorts_eigenvalues(self):
        coordinates, eigenvalues = pca_components(torch.randn(16, 5))
        assert coordinates.shape == (16, 2)
        assert np.all(np.diff(eigenvalues) <= 1e-12)

    def test_one_dimensional_codewords_are_padded(self):
        coordinates, _ = pca_components(np.array([[0.0], [1.0]]))
        assert coordinates.shape == (2, 2)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            pca_components(np.zeros(3))


def test_write_analysis_csv(tmp_path):
    path = write_analysis_csv([{"level": 0, "change_rate": 0.1}], tmp_path / "a" / "rates.csv")
    with open(path, encoding="utf-8") as f:
        assert f.read().splitlines() == ["level,change_rate", "0,0.1"]
