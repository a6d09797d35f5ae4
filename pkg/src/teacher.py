#!/usr/bin/env python3
"""
Collaborative Teacher (SASRec)

A small self-attentive sequential recommender trained on item ids with
binary cross-entropy over one sampled negative per positive. Its item
embedding table is exported once and stays frozen as the collaborative
prior for distillation.

Item ids inside the model are shifted by one; id 0 is padding.
"""

import copy
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from config import config
from src.dataset import SequenceDataset, split_examples, truncate_pad
from src.embeddings import EmbeddingTable
from src.errors import EmptyDatasetError, TrainingError
from src.evaluation import recall_at_k
from src.utils import set_seed

logger = logging.getLogger(__name__)


@dataclass
class TeacherConfig:
    dim: int = config.TEACHER_DIM
    num_blocks: int = config.TEACHER_BLOCKS
    num_heads: int = config.TEACHER_HEADS
    dropout: float = config.TEACHER_DROPOUT
    max_len: int = config.MAX_SEQ_LEN
    lr: float = config.TEACHER_LR
    batch_size: int = config.TEACHER_BATCH
    epochs: int = config.TEACHER_EPOCHS
    patience: int = config.TEACHER_PATIENCE
    eval_k: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.dim % self.num_heads:
            raise ValueError(f"dim ({self.dim}) must be divisible by num_heads ({self.num_heads})")


class TeacherModel(nn.Module):
    def __init__(self, num_items: int, teacher_config: TeacherConfig):
        super().__init__()
        self.num_items = num_items
        self.config = teacher_config
        cfg = teacher_config
        self.item_embedding = nn.Embedding(num_items + 1, cfg.dim, padding_idx=0)
        self.positions = nn.Embedding(cfg.max_len, cfg.dim)
        self.dropout = nn.Dropout(cfg.dropout)
        block = nn.TransformerEncoderLayer(
            cfg.dim, cfg.num_heads, cfg.dim, cfg.dropout, batch_first=True, norm_first=True
        )
        self.blocks = nn.TransformerEncoder(
            block, cfg.num_blocks, norm=nn.LayerNorm(cfg.dim), enable_nested_tensor=False
        )
        self.history: List[dict] = []

    def forward(self, items: torch.Tensor) -> torch.Tensor:
        """(B, T) shifted item ids -> (B, T) causal hidden states of width dim."""
        length = items.shape[1]
        timeline = (items > 0).unsqueeze(-1)
        x = self.item_embedding(items) * math.sqrt(self.config.dim)
        x = self.dropout(x + self.positions(torch.arange(length, device=items.device))) * timeline
        causal = torch.triu(torch.ones(length, length, dtype=torch.bool, device=items.device), diagonal=1)
        return self.blocks(x, mask=causal) * timeline

    def score_all(self, items: torch.Tensor) -> torch.Tensor:
        """Dot-product scores of every real item against the last hidden state, (B, num_items)."""
        hidden = self.forward(items)[:, -1]
        return hidden @ self.item_embedding.weight[1:].T


def _shifted_batch(histories: List[List[int]], max_len: int) -> torch.Tensor:
    padded = np.stack([truncate_pad(h, max_len, pad_index=-1)[0] for h in histories]) + 1
    return torch.from_numpy(padded)


def _training_tensors(dataset: SequenceDataset, max_len: int) -> Tuple[torch.Tensor, torch.Tensor]:
    inputs, targets = [], []
    for user in range(dataset.num_users):
        train = dataset.train_sequence(user)
        if len(train) < 2:
            continue
        inputs.append(train[:-1])
        targets.append(train[1:])
    if not inputs:
        raise EmptyDatasetError("No user has at least two training interactions")
    return _shifted_batch(inputs, max_len), _shifted_batch(targets, max_len)


def _sample_negatives(positives: torch.Tensor, num_items: int, generator: torch.Generator) -> torch.Tensor:
    """One uniform negative per positive, never equal to it."""
    negatives = torch.randint(1, num_items + 1, positives.shape, generator=generator)
    clash = negatives == positives
    negatives[clash] = negatives[clash] % num_items + 1
    return negatives


@torch.no_grad()
def evaluate_teacher(
    model: TeacherModel,
    dataset: SequenceDataset,
    split: str = "valid",
    k: int = 10,
    batch_size: int = 256,
) -> float:
    """Full-ranking Recall@k over the leave-one-out split."""
    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    examples = split_examples(dataset, split)
    hits = 0
    try:
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            items = _shifted_batch([history for _, history, _ in chunk], model.config.max_len).to(device)
            top = model.score_all(items).topk(min(k, model.num_items), dim=-1).indices.cpu().tolist()
            hits += sum(recall_at_k(ranked, target, k) for ranked, (_, _, target) in zip(top, chunk))
    finally:
        model.train(was_training)
    return hits / len(examples)


def train_teacher(
    dataset: SequenceDataset,
    teacher_config: Optional[TeacherConfig] = None,
    seed: int = config.SEED,
    device: Optional[torch.device] = None,
    show_progress: bool = False,
) -> TeacherModel:
    """
    Next-item training with causal attention and sampled-negative BCE,
    early-stopped on validation Recall@k. Returns the best-epoch model;
    per-epoch loss and recall are kept in `model.history`.

    Raises:
        TrainingError: the loss became NaN or infinite
    """
    cfg = teacher_config or TeacherConfig()
    generator = set_seed(seed)
    device = device or torch.device("cpu")
    model = TeacherModel(dataset.num_items, cfg).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.98))
    inputs, positives = _training_tensors(dataset, cfg.max_len)

    best_recall, best_state, stale = -1.0, None, 0
    for epoch in tqdm(range(1, cfg.epochs + 1), desc="teacher", disable=not show_progress):
        model.train()
        order = torch.randperm(inputs.shape[0], generator=generator)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            index = order[start:start + cfg.batch_size]
            seq, pos = inputs[index], positives[index]
            neg = _sample_negatives(pos, dataset.num_items, generator)
            seq, pos, neg = seq.to(device), pos.to(device), neg.to(device)

            hidden = model(seq)
            pos_logits = (hidden * model.item_embedding(pos)).sum(-1)
            neg_logits = (hidden * model.item_embedding(neg)).sum(-1)
            valid = pos > 0
            loss = F.binary_cross_entropy_with_logits(
                pos_logits[valid], torch.ones_like(pos_logits[valid])
            ) + F.binary_cross_entropy_with_logits(
                neg_logits[valid], torch.zeros_like(neg_logits[valid])
            )
            if not torch.isfinite(loss):
                logger.error(f"Teacher loss diverged at epoch {epoch}: {loss.item()}")
                raise TrainingError(f"Teacher loss is {loss.item()} at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
            n_batches += 1

        recall = evaluate_teacher(model, dataset, "valid", cfg.eval_k)
        model.history.append({"epoch": epoch, "loss": epoch_loss / n_batches, f"recall@{cfg.eval_k}": recall})
        logger.info(f"Teacher epoch {epoch}: loss={epoch_loss / n_batches:.4f} valid Recall@{cfg.eval_k}={recall:.4f}")

        if recall > best_recall:
            best_recall, best_state, stale = recall, copy.deepcopy(model.state_dict()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info(f"Teacher early stop at epoch {epoch}; best Recall@{cfg.eval_k}={best_recall:.4f}")
                break

    history = model.history
    model.load_state_dict(best_state)
    model.history = history
    model.eval()
    return model


def export_item_embeddings(model: TeacherModel) -> EmbeddingTable:
    """Frozen copy of the item table, row i = dense item i."""
    weights = model.item_embedding.weight[1:].detach().cpu().numpy().copy()
    return EmbeddingTable(weights)


def save_teacher(model: TeacherModel, path: Union[str, Path]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "num_items": model.num_items,
            "config": asdict(model.config),
            "state_dict": model.state_dict(),
            "history": model.history,
        },
        path,
    )
    logger.info(f"Teacher checkpoint saved to {path}")
    return str(path)


def load_teacher(path: Union[str, Path], map_location: str = "cpu") -> TeacherModel:
    checkpoint = torch.load(path, map_location=map_location)
    model = TeacherModel(checkpoint["num_items"], TeacherConfig(**checkpoint["config"]))
    model.load_state_dict(checkpoint["state_dict"])
    model.history = checkpoint.get("history", [])
    model.eval()
    return model
