#!/usr/bin/env python3
"""
Evaluation and Identifier Analysis

Full-ranking metrics for leave-one-out targets plus the identifier
diagnostics: collision rate, codeword usage entropy, identifier evolution
between two dumps, and 2-D PCA projections of a codebook.

All evaluation runs on hard identifiers.
"""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from config import config
from src.dataset import SequenceDataset, split_examples
from src.recommender import (
    GenerativeRecommender,
    PrefixTrie,
    constrained_beam_search,
    identifier_tensors,
    pad_histories,
)
from src.tokenizer import ItemIdentifier

logger = logging.getLogger(__name__)

Ranking = Tuple[int, List[int], List[float]]


def recall_at_k(ranked_items: Sequence[int], target: int, k: int) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return int(target in list(ranked_items)[:k])


def ndcg_at_k(ranked_items: Sequence[int], target: int, k: int) -> float:
    """1 / log2(rank + 1) for a single relevant target within the top k, else 0."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    top = list(ranked_items)[:k]
    if target not in top:
        return 0.0
    rank = top.index(target) + 1
    return 1.0 / math.log2(rank + 1)


@dataclass
class MetricsRecord:
    recall: Dict[int, float]
    ndcg: Dict[int, float]
    split: str = "test"
    epoch: Optional[int] = None
    num_users: int = 0
    extra: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> Dict[str, float]:
        """Recall@K columns then NDCG@K columns, K ascending."""
        row = {f"Recall@{k}": self.recall[k] for k in sorted(self.recall)}
        row.update({f"NDCG@{k}": self.ndcg[k] for k in sorted(self.ndcg)})
        return row

    def to_dict(self) -> dict:
        record = {"split": self.split, "epoch": self.epoch, "num_users": self.num_users}
        record.update(self.as_row())
        record.update(self.extra)
        return record


def metrics_from_rankings(
    rankings: Sequence[Sequence[int]],
    targets: Sequence[int],
    ks: Sequence[int] = tuple(config.TOP_KS),
    split: str = "test",
    epoch: Optional[int] = None,
) -> MetricsRecord:
    if len(rankings) != len(targets):
        raise ValueError(f"{len(rankings)} rankings for {len(targets)} targets")
    if not rankings:
        raise ValueError("Cannot compute metrics over zero users")
    n = len(rankings)
    recall = {k: sum(recall_at_k(r, t, k) for r, t in zip(rankings, targets)) / n for k in ks}
    ndcg = {k: sum(ndcg_at_k(r, t, k) for r, t in zip(rankings, targets)) / n for k in ks}
    return MetricsRecord(recall=recall, ndcg=ndcg, split=split, epoch=epoch, num_users=n)


def rank_users(
    model: GenerativeRecommender,
    trie: PrefixTrie,
    identifiers: Sequence[ItemIdentifier],
    examples: Sequence[Tuple[int, List[int], int]],
    beam_size: int = config.BEAM_SIZE,
    top_n: int = max(config.TOP_KS),
    batch_size: int = 64,
    max_len: int = config.MAX_SEQ_LEN,
) -> List[Ranking]:
    """Beam-decode a ranked item list for every (user, history, target) example."""
    device = next(model.parameters()).device
    codes, dedup = identifier_tensors(identifiers, device=device)
    rankings: List[Ranking] = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        items, mask = pad_histories([history for _, history, _ in chunk], max_len, device=device)
        results = constrained_beam_search(
            model, codes[items], dedup[items], mask, trie, beam_size=beam_size, top_n=top_n
        )
        for (user, _, _), ranked in zip(chunk, results):
            rankings.append((user, [item for item, _ in ranked], [score for _, score in ranked]))
    return rankings


def full_rank_evaluate(
    model: GenerativeRecommender,
    trie: PrefixTrie,
    identifiers: Sequence[ItemIdentifier],
    dataset: SequenceDataset,
    split: str = "test",
    ks: Sequence[int] = tuple(config.TOP_KS),
    beam_size: int = config.BEAM_SIZE,
    epoch: Optional[int] = None,
    max_len: int = config.MAX_SEQ_LEN,
) -> MetricsRecord:
    """Decode every user's split target over all valid identifiers and average the metrics."""
    if beam_size < max(ks):
        raise ValueError(f"beam_size ({beam_size}) must be >= max K ({max(ks)})")
    examples = split_examples(dataset, split)
    rankings = rank_users(model, trie, identifiers, examples, beam_size, max(ks), max_len=max_len)
    record = metrics_from_rankings(
        [items for _, items, _ in rankings], [target for _, _, target in examples], ks, split, epoch
    )
    logger.info(f"{split} metrics: " + ", ".join(f"{k}={v:.4f}" for k, v in record.as_row().items()))
    return record


def write_ranked_outputs(rankings: Sequence[Ranking], path: Union[str, Path]) -> str:
    """One JSON object per user: {"user", "items", "scores"}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for user, items, scores in rankings:
            f.write(json.dumps({"user": user, "items": items, "scores": scores}) + "\n")
    return str(path)


def _code_tuples(identifiers) -> List[Tuple[int, ...]]:
    tuples = []
    for ident in identifiers:
        tuples.append(tuple(ident.codes) if isinstance(ident, ItemIdentifier) else tuple(ident))
    return tuples


def collision_rate(identifiers) -> float:
    """One minus unique code tuples (dedup excluded) over item count."""
    tuples = _code_tuples(identifiers)
    if not tuples:
        raise ValueError("collision_rate needs at least one identifier")
    return 1.0 - len(set(tuples)) / len(tuples)


def usage_entropy(
    identifiers,
    codebook_size: int = config.CODEBOOK_SIZE,
    log_base: str = config.ENTROPY_LOG_BASE,
) -> List[float]:
    """Shannon entropy of the empirical codeword frequency at each level."""
    codes = np.asarray(_code_tuples(identifiers), dtype=np.int64)
    if codes.size == 0:
        raise ValueError("usage_entropy needs at least one identifier")
    entropies = []
    for level in range(codes.shape[1]):
        freq = np.bincount(codes[:, level], minlength=codebook_size) / codes.shape[0]
        nonzero = freq[freq > 0]
        h = float(-(nonzero * np.log(nonzero)).sum())
        entropies.append(h / math.log(2.0) if log_base == "two" else h)
    return entropies


@dataclass
class IdentifierEvolutionReport:
    layer_change_rate: List[float]
    pattern_distribution: Dict[Tuple[int, ...], float]
    num_items: int

    def changed_at_most_one_layer(self) -> float:
        return sum(frac for pattern, frac in self.pattern_distribution.items() if len(pattern) <= 1)


def identifier_evolution(
    before: Mapping[int, ItemIdentifier],
    after: Mapping[int, ItemIdentifier],
) -> IdentifierEvolutionReport:
    """
    Per-level change rate between two dumps and the distribution over the
    set of changed levels per item (the empty tuple means unchanged).
    """
    if set(before) != set(after):
        raise ValueError("Identifier dumps cover different item sets")
    if not before:
        raise ValueError("Identifier dumps are empty")
    items = sorted(before)
    num_levels = len(before[items[0]].codes)
    changes = np.zeros(num_levels, dtype=np.int64)
    patterns: Counter = Counter()
    for item in items:
        old, new = before[item].codes, after[item].codes
        changed = tuple(level for level in range(num_levels) if old[level] != new[level])
        for level in changed:
            changes[level] += 1
        patterns[changed] += 1
    n = len(items)
    return IdentifierEvolutionReport(
        layer_change_rate=(changes / n).tolist(),
        pattern_distribution={pattern: count / n for pattern, count in sorted(patterns.items())},
        num_items=n,
    )


def pca_components(codebook: Union[np.ndarray, torch.Tensor]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Top-2 principal-component coordinates of mean-centered codewords.

    Eigenvectors are sign-normalized so the largest-magnitude loading is
    positive. Returns (K x 2 coordinates, all eigenvalues descending).
    """
    if isinstance(codebook, torch.Tensor):
        codebook = codebook.detach().cpu().numpy()
    x = np.asarray(codebook, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"Codebook must be a non-empty 2-D array, got shape {x.shape}")
    centered = x - x.mean(axis=0, keepdims=True)
    covariance = centered.T @ centered / x.shape[0]
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]

    components = eigenvectors[:, :2]
    signs = np.sign(components[np.abs(components).argmax(axis=0), np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    components = components * signs
    coordinates = centered @ components
    if coordinates.shape[1] < 2:
        coordinates = np.hstack([coordinates, np.zeros((x.shape[0], 2 - coordinates.shape[1]))])
    return coordinates, np.clip(eigenvalues, 0.0, None)


def write_analysis_csv(rows: Sequence[dict], path: Union[str, Path]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows)).to_csv(path, index=False)
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return str(path)
