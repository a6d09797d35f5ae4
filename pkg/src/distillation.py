#!/usr/bin/env python3
"""
Collaborative Distillation

Two alignment losses against a frozen teacher embedding table:
- tokenizer side: symmetric KL between the codeword assignment distributions
  of the pooled history representation and of the target item's teacher
  embedding
- recommender side: bidirectional in-batch InfoNCE between the decoder's
  pooled target-item state and the teacher's item embedding

The teacher table never receives gradients; callers pass detached rows.
"""

import logging
from dataclasses import dataclass
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from config import config
from src.errors import NumericError, ShapeError
from src.tokenizer import RQTokenizer

logger = logging.getLogger(__name__)


@dataclass
class DistillationConfig:
    lambda_cd_t: float = config.LAMBDA_CD_T
    lambda_cd_r: float = config.LAMBDA_CD_R
    tau_prime: float = config.TAU_PRIME
    kl_clamp: float = config.KL_CLAMP

    def __post_init__(self):
        if self.lambda_cd_t < 0 or self.lambda_cd_r < 0:
            raise ValueError(f"Distillation weights must be >= 0, got {self.lambda_cd_t}, {self.lambda_cd_r}")
        if self.tau_prime <= 0:
            raise ValueError(f"tau_prime must be > 0, got {self.tau_prime}")


def pool_encoder(states: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of encoder states over unmasked positions, (B, P, D) -> (B, D)."""
    if states.shape[:2] != mask.shape:
        raise ShapeError(f"States {tuple(states.shape)} and mask {tuple(mask.shape)} disagree")
    weights = mask.to(states.dtype).unsqueeze(-1)
    return (states * weights).sum(dim=1) / weights.sum(dim=1).clamp_min(1.0)


def pool_decoder(hidden: torch.Tensor) -> torch.Tensor:
    """Decoder state at the first output position."""
    return hidden[:, 0]


def make_projector(in_dim: int, out_dim: int) -> nn.Linear:
    return nn.Linear(in_dim, out_dim)


def project(projector: nn.Linear, h: torch.Tensor) -> torch.Tensor:
    if h.shape[-1] != projector.in_features:
        raise ShapeError(f"Projector expects dim {projector.in_features}, got {h.shape[-1]}")
    return projector(h)


class DistillationHeads(nn.Module):
    """One affine projector per distillation site."""

    def __init__(self, model_dim: int, teacher_dim: int, tokenizer_dim: int):
        super().__init__()
        self.encoder_to_tokenizer = make_projector(model_dim, tokenizer_dim)
        self.teacher_to_tokenizer = make_projector(teacher_dim, tokenizer_dim)
        self.decoder_to_teacher = make_projector(model_dim, teacher_dim)


def _kl(p: torch.Tensor, q: torch.Tensor, clamp: float) -> torch.Tensor:
    p, q = p.clamp_min(clamp), q.clamp_min(clamp)
    return (p * (p.log() - q.log())).sum(-1)


def symmetric_kl(
    p_levels: List[torch.Tensor],
    q_levels: List[torch.Tensor],
    clamp: float = config.KL_CLAMP,
) -> torch.Tensor:
    """sum_l KL(p_l || q_l) + KL(q_l || p_l), averaged over the batch."""
    total = p_levels[0].new_zeros(p_levels[0].shape[0])
    for p, q in zip(p_levels, q_levels):
        if not (torch.isfinite(p).all() and torch.isfinite(q).all()):
            raise NumericError("Non-finite assignment distribution in distillation")
        total = total + _kl(p, q, clamp) + _kl(q, p, clamp)
    return total.mean()


def tokenizer_distill_loss(
    h_enc: torch.Tensor,
    h_tea: torch.Tensor,
    tokenizer: RQTokenizer,
    tau: float = config.TAU_MIN,
    clamp: float = config.KL_CLAMP,
) -> torch.Tensor:
    """
    Symmetric KL between the tokenizer's soft assignments of two vectors
    already projected to the tokenizer input dim.
    """
    if h_enc.shape != h_tea.shape:
        raise ShapeError(f"Distillation inputs differ: {tuple(h_enc.shape)} vs {tuple(h_tea.shape)}")
    p_enc = tokenizer.quantize(h_enc, tau=tau, mode="soft").probs
    p_tea = tokenizer.quantize(h_tea, tau=tau, mode="soft").probs
    return symmetric_kl(p_enc, p_tea, clamp)


def infonce(queries: torch.Tensor, keys: torch.Tensor, tau_prime: float = config.TAU_PRIME) -> torch.Tensor:
    """In-batch InfoNCE with cosine similarity; row i of keys is the positive for query i."""
    if queries.shape[0] != keys.shape[0] or queries.shape[0] < 1:
        raise ShapeError(f"InfoNCE needs equal non-empty batches, got {queries.shape[0]} and {keys.shape[0]}")
    if tau_prime <= 0:
        raise ValueError(f"tau_prime must be > 0, got {tau_prime}")
    logits = F.normalize(queries, dim=-1) @ F.normalize(keys, dim=-1).T / tau_prime
    labels = torch.arange(queries.shape[0], device=queries.device)
    return F.cross_entropy(logits, labels)


def recommender_distill_loss(
    decoder_pooled: torch.Tensor,
    teacher_items: torch.Tensor,
    tau_prime: float = config.TAU_PRIME,
) -> torch.Tensor:
    """InfoNCE in both directions; teacher vectors are detached."""
    teacher_items = teacher_items.detach()
    return infonce(decoder_pooled, teacher_items, tau_prime) + infonce(teacher_items, decoder_pooled, tau_prime)
