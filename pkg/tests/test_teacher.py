#!/usr/bin/env python3
"""
Tests for the SASRec-style collaborative teacher.

IMPORTANT: Use pytest-mock for all mocking needs, NOT unittest.mock!
"""

import pytest
import torch

from src.errors import TrainingError
from src.teacher import (
    TeacherConfig,
    TeacherModel,
    _sample_negatives,
    _shifted_batch,
    evaluate_teacher,
    export_item_embeddings,
    load_teacher,
    save_teacher,
    train_teacher,
)


@pytest.fixture
def model(tiny_teacher_config):
    torch.manual_seed(0)
    return TeacherModel(12, tiny_teacher_config).eval()


class TestTeacherModel:
    def test_padding_positions_are_zero(self, model):
        items = _shifted_batch([[3, 4]], 5)
        assert items.tolist() == [[0, 0, 0, 4, 5]]
        hidden = model(items)
        assert hidden.shape == (1, 5, 8)
        assert torch.count_nonzero(hidden[0, :3]) == 0

    def test_attention_is_causal(self, model):
        first = torch.tensor([[1, 2, 3, 4, 5]])
        second = torch.tensor([[1, 2, 3, 4, 9]])
        torch.testing.assert_close(model(first)[:, :4], model(second)[:, :4])

    def test_score_all_covers_real_items(self, model):
        scores = model.score_all(torch.tensor([[1, 2, 3, 4, 5]]))
        assert scores.shape == (1, 12)

    def test_negatives_never_hit_positives(self):
        generator = torch.Generator().manual_seed(0)
        positives = torch.randint(1, 6, (200,), generator=generator)
        negatives = _sample_negatives(positives, 5, generator)
        assert not torch.any(negatives == positives)
        assert negatives.min() >= 1 and negatives.max() <= 5

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TeacherConfig(dim=8, num_heads=3)
        with pytest.raises(ValueError):
            TeacherConfig(epochs=0)


class TestTraining:
    def test_train_and_export(self, tiny_dataset, tiny_teacher_config):
        model = train_teacher(tiny_dataset, tiny_teacher_config, seed=0)
        assert 1 <= len(model.history) <= tiny_teacher_config.epochs
        assert not model.training
        table = export_item_embeddings(model)
        assert table.matrix.shape == (tiny_dataset.num_items, tiny_teacher_config.dim)
        recall = evaluate_teacher(model, tiny_dataset, "test", k=10)
        assert 0.0 <= recall <= 1.0

    def test_training_is_seeded(self, tiny_dataset, tiny_teacher_config):
        first = export_item_embeddings(train_teacher(tiny_dataset, tiny_teacher_config, seed=1))
        second = export_item_embeddings(train_teacher(tiny_dataset, tiny_teacher_config, seed=1))
        assert first.matrix.tobytes() == second.matrix.tobytes()

    def test_nan_loss_raises(self, tiny_dataset, tiny_teacher_config, mocker):
        mocker.patch(
            "src.teacher.F.binary_cross_entropy_with_logits",
            return_value=torch.tensor(float("nan"), requires_grad=True),
        )
        with pytest.raises(TrainingError):
            train_teacher(tiny_dataset, tiny_teacher_config, seed=0)

    def test_checkpoint_round_trip(self, tiny_dataset, tiny_teacher_config, tmp_path):
        model = train_teacher(tiny_dataset, tiny_teacher_config, seed=0)
        path = save_teacher(model, tmp_path / "teacher.pt")
        loaded = load_teacher(path)
        assert loaded.history == model.history
        assert export_item_embeddings(loaded).matrix.tobytes() == export_item_embeddings(model).matrix.tobytes()
