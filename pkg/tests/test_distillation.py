#!/usr/bin/env python3
"""
Tests for the collaborative distillation losses and pooling helpers.

IMPORTANT: Use pytest-mock for all mocking needs, NOT unittest.mock!
"""

import math

import pytest
import torch

from src.distillation import (
    DistillationConfig,
    DistillationHeads,
    infonce,
    make_projector,
    pool_decoder,
    pool_encoder,
    project,
    recommender_distill_loss,
    symmetric_kl,
    tokenizer_distill_loss,
)
from src.errors import NumericError, ShapeError
from src.tokenizer import RQTokenizer


class TestPooling:
    def test_encoder_mean_ignores_masked_positions(self):
        states = torch.tensor([[[1.0, 1.0], [3.0, 5.0], [100.0, 100.0]]])
        mask = torch.tensor([[True, True, False]])
        torch.testing.assert_close(pool_encoder(states, mask), torch.tensor([[2.0, 3.0]]))

    def test_encoder_shape_mismatch(self):
        with pytest.raises(ShapeError):
            pool_encoder(torch.zeros(2, 3, 4), torch.ones(2, 4, dtype=torch.bool))

    def test_decoder_takes_first_position(self):
        hidden = torch.arange(12.0).reshape(2, 3, 2)
        torch.testing.assert_close(pool_decoder(hidden), hidden[:, 0])


class TestProjection:
    def test_project_dimensions(self):
        projector = make_projector(6, 3)
        assert project(projector, torch.randn(4, 6)).shape == (4, 3)

    def test_project_wrong_dim(self):
        with pytest.raises(ShapeError):
            project(make_projector(6, 3), torch.randn(4, 5))

    def test_heads(self):
        heads = DistillationHeads(model_dim=16, teacher_dim=8, tokenizer_dim=4)
        assert heads.encoder_to_tokenizer.out_features == 4
        assert heads.teacher_to_tokenizer.in_features == 8
        assert heads.decoder_to_teacher.out_features == 8


class TestSymmetricKL:
    def test_zero_for_identical(self):
        p = [torch.softmax(torch.randn(5, 4), -1) for _ in range(2)]
        assert symmetric_kl(p, p).item() == pytest.approx(0.0, abs=1e-7)

    def test_positive_and_symmetric(self):
        p = [torch.softmax(torch.randn(5, 4), -1)]
        q = [torch.softmax(torch.randn(5, 4), -1)]
        forward = symmetric_kl(p, q)
        assert forward.item() > 0
        torch.testing.assert_close(forward, symmetric_kl(q, p))

    def test_one_hot_inputs_stay_finite(self):
        p = [torch.tensor([[1.0, 0.0]])]
        q = [torch.tensor([[0.0, 1.0]])]
        assert torch.isfinite(symmetric_kl(p, q))

    def test_non_finite_raises(self):
        p = [torch.tensor([[float("nan"), 1.0]])]
        with pytest.raises(NumericError):
            symmetric_kl(p, p)


class TestTokenizerDistillation:
    def test_identical_inputs_give_zero(self, tiny_tokenizer_config):
        tokenizer = RQTokenizer(tiny_tokenizer_config)
        h = torch.randn(3, 8)
        assert tokenizer_distill_loss(h, h.clone(), tokenizer, tau=0.5).item() == pytest.approx(0.0, abs=1e-6)

    def test_gradient_reaches_both_inputs(self, tiny_tokenizer_config):
        tokenizer = RQTokenizer(tiny_tokenizer_config)
        h_enc = torch.randn(3, 8, requires_grad=True)
        h_tea = torch.randn(3, 8, requires_grad=True)
        tokenizer_distill_loss(h_enc, h_tea, tokenizer, tau=0.5).backward()
        assert h_enc.grad is not None and h_tea.grad is not None

    def test_shape_mismatch(self, tiny_tokenizer_config):
        tokenizer = RQTokenizer(tiny_tokenizer_config)
        with pytest.raises(ShapeError):
            tokenizer_distill_loss(torch.randn(3, 8), torch.randn(2, 8), tokenizer)


class TestInfoNCE:
    def test_aligned_pairs_near_zero(self):
        eye = torch.eye(4)
        assert infonce(eye, eye, tau_prime=0.07).item() < 1e-4

    def test_shuffled_pairs_are_penalized(self):
        eye = torch.eye(4)
        assert infonce(eye, eye.flip(0), tau_prime=0.07).item() > 1.0

    def test_single_pair_is_exactly_zero(self):
        assert infonce(torch.randn(1, 5), torch.randn(1, 5), tau_prime=0.07).item() == 0.0

    def test_invariant_to_positive_rescaling(self):
        generator = torch.Generator().manual_seed(0)
        queries = torch.randn(6, 5, dtype=torch.float64, generator=generator)
        keys = torch.randn(6, 5, dtype=torch.float64, generator=generator)
        scaled = queries.clone()
        scaled[2] *= 7.5
        torch.testing.assert_close(infonce(scaled, keys * 0.3), infonce(queries, keys))

    def test_orthogonal_pairs_closed_form(self):
        tau_prime = 0.07
        eye = torch.eye(2, dtype=torch.float64)
        expected = -math.log(math.exp(1 / tau_prime) / (math.exp(1 / tau_prime) + math.exp(0.0)))
        assert infonce(eye, eye, tau_prime).item() == pytest.approx(expected, abs=1e-8)

    def test_recommender_loss_closed_form(self):
        tau_prime, n = 0.07, 4
        eye = torch.eye(n, dtype=torch.float64)
        per_row = -math.log(math.exp(1 / tau_prime) / (math.exp(1 / tau_prime) + (n - 1)))
        assert recommender_distill_loss(eye, eye.clone(), tau_prime).item() == pytest.approx(2 * per_row, abs=1e-8)

    def test_batch_mismatch(self):
        with pytest.raises(ShapeError):
            infonce(torch.randn(3, 4), torch.randn(2, 4))

    def test_invalid_temperature(self):
        with pytest.raises(ValueError):
            infonce(torch.randn(3, 4), torch.randn(3, 4), tau_prime=0.0)

    def test_teacher_side_receives_no_gradient(self):
        queries = torch.randn(4, 6, requires_grad=True)
        teacher = torch.randn(4, 6, requires_grad=True)
        recommender_distill_loss(queries, teacher).backward()
        assert queries.grad is not None
        assert teacher.grad is None


def test_config_validation():
    with pytest.raises(ValueError):
        DistillationConfig(lambda_cd_t=-0.1)
    with pytest.raises(ValueError):
        DistillationConfig(tau_prime=0.0)
