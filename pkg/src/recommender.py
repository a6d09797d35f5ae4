#!/usr/bin/env python3
"""
Generative Recommender

Encoder-decoder transformer over flattened item identifiers:
- shared token embedding table for inputs and output logits
- soft inputs: per-level assignment probabilities scattered into the
  level's block of the table (probability-weighted embedding)
- teacher-forced decoding with a causal mask
- prefix-trie constrained beam search over valid identifiers

Vocabulary layout: [PAD, BOS, level 0 block (K), ..., level L-1 block (K),
dedup block (reserve)].
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from config import config
from src.dataset import truncate_pad
from src.errors import CapacityError, ShapeError, UniquenessError
from src.tokenizer import ItemIdentifier

logger = logging.getLogger(__name__)

PAD_TOKEN = 0
BOS_TOKEN = 1
NUM_SPECIAL_TOKENS = 2


@dataclass(frozen=True)
class VocabularyLayout:
    num_levels: int
    codebook_size: int
    dedup_reserve: int

    @property
    def level_offsets(self) -> List[int]:
        return [NUM_SPECIAL_TOKENS + level * self.codebook_size for level in range(self.num_levels)]

    @property
    def dedup_offset(self) -> int:
        return NUM_SPECIAL_TOKENS + self.num_levels * self.codebook_size

    @property
    def size(self) -> int:
        return self.dedup_offset + self.dedup_reserve

    @property
    def identifier_length(self) -> int:
        return self.num_levels + 1

    def token_id(self, level: int, code: int) -> int:
        if not 0 <= level < self.num_levels:
            raise IndexError(f"Level {level} out of range [0, {self.num_levels})")
        return self.level_offsets[level] + code

    def dedup_token(self, dedup: int) -> int:
        if not 0 <= dedup < self.dedup_reserve:
            raise CapacityError(f"Dedup ordinal {dedup} exceeds the reserved block of {self.dedup_reserve}")
        return self.dedup_offset + dedup

    def identifier_tokens(self, identifier: ItemIdentifier) -> List[int]:
        tokens = [self.token_id(level, code) for level, code in enumerate(identifier.codes)]
        tokens.append(self.dedup_token(identifier.dedup))
        return tokens


@dataclass
class RecommenderConfig:
    d_model: int = config.D_MODEL
    num_heads: int = config.NUM_HEADS
    num_encoder_layers: int = config.NUM_ENCODER_LAYERS
    num_decoder_layers: int = config.NUM_DECODER_LAYERS
    ff_dim: int = config.FF_DIM
    dropout: float = config.DROPOUT
    max_history: int = config.MAX_SEQ_LEN

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads})")


class GenerativeRecommender(nn.Module):
    def __init__(self, recommender_config: RecommenderConfig, layout: VocabularyLayout):
        super().__init__()
        self.config = recommender_config
        self.layout = layout
        cfg = recommender_config
        self.token_embedding = nn.Embedding(layout.size, cfg.d_model)
        self.encoder_positions = nn.Embedding(cfg.max_history * layout.identifier_length, cfg.d_model)
        self.decoder_positions = nn.Embedding(layout.identifier_length, cfg.d_model)
        nn.init.normal_(self.token_embedding.weight, std=cfg.d_model ** -0.5)

        encoder_layer = nn.TransformerEncoderLayer(
            cfg.d_model, cfg.num_heads, cfg.ff_dim, cfg.dropout, batch_first=True
        )
        decoder_layer = nn.TransformerDecoderLayer(
            cfg.d_model, cfg.num_heads, cfg.ff_dim, cfg.dropout, batch_first=True
        )
        self.encoder = nn.TransformerEncoder(
            encoder_layer, cfg.num_encoder_layers, norm=nn.LayerNorm(cfg.d_model), enable_nested_tensor=False
        )
        self.decoder = nn.TransformerDecoder(
            decoder_layer, cfg.num_decoder_layers, norm=nn.LayerNorm(cfg.d_model)
        )

    @property
    def max_positions(self) -> int:
        return self.encoder_positions.num_embeddings

    def scatter_embed(self, probs: torch.Tensor, level: int) -> torch.Tensor:
        """
        Probability-weighted embedding over one level's codeword block.

        Equivalent to scattering the K probabilities into a zero |V| vector at
        the level's token ids and multiplying by the table; a one-hot
        distribution reproduces the plain row lookup.
        """
        if not 0 <= level < self.layout.num_levels:
            raise IndexError(f"Level {level} out of range [0, {self.layout.num_levels})")
        offset = self.layout.level_offsets[level]
        block = self.token_embedding.weight[offset:offset + self.layout.codebook_size]
        return probs @ block

    def embed_items(
        self,
        dedup: torch.Tensor,
        codes: Optional[torch.Tensor] = None,
        probs: Optional[Sequence[torch.Tensor]] = None,
    ) -> torch.Tensor:
        """
        Token embeddings of whole items, shape (..., L+1, D).

        Level tokens come from `probs` (soft, one (..., K) tensor per level)
        or `codes` (hard, (..., L)); the dedup token is always a hard lookup.
        """
        if (codes is None) == (probs is None):
            raise ValueError("Pass exactly one of codes or probs")
        if dedup.numel() and int(dedup.max()) >= self.layout.dedup_reserve:
            raise CapacityError(
                f"Dedup ordinal {int(dedup.max())} exceeds the reserved block of {self.layout.dedup_reserve}"
            )
        tokens = []
        for level in range(self.layout.num_levels):
            if probs is not None:
                tokens.append(self.scatter_embed(probs[level], level))
            else:
                tokens.append(self.token_embedding(codes[..., level] + self.layout.level_offsets[level]))
        tokens.append(self.token_embedding(dedup + self.layout.dedup_offset))
        return torch.stack(tokens, dim=-2)

    def encode_history(
        self, item_embeddings: torch.Tensor, item_mask: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Encode a (B, T, L+1, D) history.

        Returns encoder states (B, T*(L+1), D) and the token mask (True on
        real positions).
        """
        batch, length, per_item, dim = item_embeddings.shape
        n_positions = length * per_item
        if n_positions > self.max_positions:
            raise ShapeError(f"History of {n_positions} tokens exceeds the maximum of {self.max_positions}")
        tokens = item_embeddings.reshape(batch, n_positions, dim)
        positions = torch.arange(n_positions, device=tokens.device)
        token_mask = item_mask.bool().repeat_interleave(per_item, dim=1)
        # an all-padding row would make attention undefined; expose its last slot
        empty = ~token_mask.any(dim=1)
        if empty.any():
            token_mask = token_mask.clone()
            token_mask[empty, -1] = True
        states = self.encoder(tokens + self.encoder_positions(positions), src_key_padding_mask=~token_mask)
        return states, token_mask

    def target_inputs(
        self,
        codes: Optional[torch.Tensor] = None,
        probs: Optional[Sequence[torch.Tensor]] = None,
    ) -> torch.Tensor:
        """Decoder inputs [BOS, level 0, ..., level L-1] for teacher forcing, shape (B, L+1, D)."""
        if (codes is None) == (probs is None):
            raise ValueError("Pass exactly one of codes or probs")
        levels = []
        for level in range(self.layout.num_levels):
            if probs is not None:
                levels.append(self.scatter_embed(probs[level], level))
            else:
                levels.append(self.token_embedding(codes[:, level] + self.layout.level_offsets[level]))
        batch = levels[0].shape[0]
        bos = self.token_embedding.weight[BOS_TOKEN].expand(batch, -1)
        return torch.stack([bos, *levels], dim=1)

    def decode_teacher_forced(
        self,
        memory: torch.Tensor,
        memory_mask: torch.Tensor,
        decoder_inputs: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Causal decoding over `decoder_inputs` (B, T', D).

        Returns hidden states (B, T', D) and logits over the vocabulary
        (B, T', |V|), computed as inner products with the token table.
        """
        length = decoder_inputs.shape[1]
        if length > self.layout.identifier_length:
            raise ShapeError(
                f"Target of {length} tokens exceeds identifier length {self.layout.identifier_length}"
            )
        positions = torch.arange(length, device=decoder_inputs.device)
        causal = torch.triu(
            torch.ones(length, length, dtype=torch.bool, device=decoder_inputs.device), diagonal=1
        )
        hidden = self.decoder(
            decoder_inputs + self.decoder_positions(positions),
            memory,
            tgt_mask=causal,
            memory_key_padding_mask=~memory_mask,
        )
        logits = hidden @ self.token_embedding.weight.T
        return hidden, logits


def rec_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood summed over target tokens, averaged over the batch."""
    vocab = logits.shape[-1]
    total = F.cross_entropy(logits.reshape(-1, vocab), targets.reshape(-1), reduction="sum")
    return total / logits.shape[0]


class TrieNode:
    __slots__ = ("children", "item")

    def __init__(self):
        self.children: Dict[int, "TrieNode"] = {}
        self.item: Optional[int] = None


class PrefixTrie:
    """Token paths of every valid identifier; each leaf holds its item."""

    def __init__(self):
        self.root = TrieNode()
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def insert(self, tokens: Sequence[int], item: int) -> None:
        node = self.root
        for token in tokens:
            node = node.children.setdefault(int(token), TrieNode())
        if node.item is not None:
            raise UniquenessError(f"Items {node.item} and {item} share identifier {list(tokens)}")
        node.item = item
        self._size += 1

    def _walk(self, prefix: Sequence[int]) -> Optional[TrieNode]:
        node = self.root
        for token in prefix:
            node = node.children.get(int(token))
            if node is None:
                return None
        return node

    def next_tokens(self, prefix: Sequence[int]) -> List[int]:
        node = self._walk(prefix)
        return sorted(node.children) if node is not None else []

    def item_at(self, path: Sequence[int]) -> Optional[int]:
        node = self._walk(path)
        return node.item if node is not None else None

    def paths(self) -> Iterator[Tuple[Tuple[int, ...], int]]:
        stack = [(self.root, ())]
        while stack:
            node, prefix = stack.pop()
            if node.item is not None:
                yield prefix, node.item
            for token in sorted(node.children, reverse=True):
                stack.append((node.children[token], prefix + (token,)))


def build_prefix_trie(identifiers: Sequence[ItemIdentifier], layout: VocabularyLayout) -> PrefixTrie:
    trie = PrefixTrie()
    for item, identifier in enumerate(identifiers):
        trie.insert(layout.identifier_tokens(identifier), item)
    return trie


def pad_histories(
    histories: Sequence[Sequence[int]],
    max_len: int = config.MAX_SEQ_LEN,
    device=None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Left-padded (B, T) item indices and their mask.

    Padding slots index item 0 so they can gather from per-item tables; the
    mask (True on real items) keeps them out of attention.
    """
    padded = [truncate_pad(history, max_len) for history in histories]
    items = torch.from_numpy(np.stack([p[0] for p in padded])).clamp_min(0)
    mask = torch.from_numpy(np.stack([p[1] for p in padded]))
    return items.to(device), mask.to(device)


def identifier_tensors(identifiers: Sequence[ItemIdentifier], device=None) -> Tuple[torch.Tensor, torch.Tensor]:
    """(N, L) codes and (N,) dedup ordinals for a list of identifiers."""
    codes = torch.tensor([list(ident.codes) for ident in identifiers], dtype=torch.long, device=device)
    dedup = torch.tensor([ident.dedup for ident in identifiers], dtype=torch.long, device=device)
    return codes, dedup


@torch.no_grad()
def constrained_beam_search(
    model: GenerativeRecommender,
    history_codes: torch.Tensor,
    history_dedup: torch.Tensor,
    history_mask: torch.Tensor,
    trie: PrefixTrie,
    beam_size: int = config.BEAM_SIZE,
    top_n: int = 10,
) -> List[List[Tuple[int, float]]]:
    """
    Beam search restricted to trie paths, for a batch of hard-coded histories.

    Scores are summed token log-probabilities. Returns, per user, up to
    `top_n` (item, score) pairs sorted by score descending then item index;
    fewer when the trie holds fewer valid paths.
    """
    if len(trie) == 0:
        raise ValueError("Cannot search an empty trie")
    if beam_size < top_n:
        raise ValueError(f"beam_size ({beam_size}) must be >= top_n ({top_n})")
    was_training = model.training
    model.eval()
    try:
        memory, memory_mask = model.encode_history(
            model.embed_items(history_dedup, codes=history_codes), history_mask
        )
        batch = memory.shape[0]
        device = memory.device
        vocab = model.layout.size
        prefixes = torch.empty(batch, 1, 0, dtype=torch.long, device=device)
        scores = torch.zeros(batch, 1, device=device, dtype=memory.dtype)

        for _ in range(model.layout.identifier_length):
            n_beams, depth = prefixes.shape[1], prefixes.shape[2]
            bos = torch.full((batch * n_beams, 1), BOS_TOKEN, dtype=torch.long, device=device)
            decoder_ids = torch.cat([bos, prefixes.reshape(batch * n_beams, depth)], dim=1)
            _, logits = model.decode_teacher_forced(
                memory.repeat_interleave(n_beams, dim=0),
                memory_mask.repeat_interleave(n_beams, dim=0),
                model.token_embedding(decoder_ids),
            )
            log_probs = torch.log_softmax(logits[:, -1], dim=-1).reshape(batch, n_beams, vocab)

            allowed = torch.zeros(batch, n_beams, vocab, dtype=torch.bool, device=device)
            prefix_lists = prefixes.tolist()
            for b in range(batch):
                for j in range(n_beams):
                    if torch.isfinite(scores[b, j]):
                        allowed[b, j, trie.next_tokens(prefix_lists[b][j])] = True

            candidates = (scores.unsqueeze(-1) + log_probs).masked_fill(~allowed, float("-inf"))
            flat = candidates.reshape(batch, n_beams * vocab)
            order = torch.sort(flat, dim=1, descending=True, stable=True).indices[:, :beam_size]
            scores = flat.gather(1, order)
            beam_index = order // vocab
            token = order % vocab
            parents = prefixes.gather(1, beam_index.unsqueeze(-1).expand(-1, -1, depth))
            prefixes = torch.cat([parents, token.unsqueeze(-1)], dim=2)
    finally:
        model.train(was_training)

    results = []
    paths, final_scores = prefixes.tolist(), scores.tolist()
    for b in range(batch):
        ranked = [
            (trie.item_at(path), score)
            for path, score in zip(paths[b], final_scores[b])
            if score != float("-inf")
        ]
        ranked.sort(key=lambda pair: (-pair[1], pair[0]))
        results.append(ranked[:top_n])
    return results


@torch.no_grad()
def score_identifiers(
    model: GenerativeRecommender,
    history_codes: torch.Tensor,
    history_dedup: torch.Tensor,
    history_mask: torch.Tensor,
    trie: PrefixTrie,
) -> List[List[Tuple[int, float]]]:
    """Teacher-forced log-likelihood of every trie path, per user, best first."""
    was_training = model.training
    model.eval()
    try:
        memory, memory_mask = model.encode_history(
            model.embed_items(history_dedup, codes=history_codes), history_mask
        )
        all_paths = list(trie.paths())
        targets = torch.tensor([path for path, _ in all_paths], dtype=torch.long, device=memory.device)
        items = [item for _, item in all_paths]
        bos = torch.full((len(all_paths), 1), BOS_TOKEN, dtype=torch.long, device=memory.device)
        decoder_ids = torch.cat([bos, targets[:, :-1]], dim=1)

        results = []
        for b in range(memory.shape[0]):
            _, logits = model.decode_teacher_forced(
                memory[b:b + 1].expand(len(all_paths), -1, -1),
                memory_mask[b:b + 1].expand(len(all_paths), -1),
                model.token_embedding(decoder_ids),
            )
            token_scores = torch.log_softmax(logits, dim=-1).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
            totals = token_scores.sum(dim=-1).tolist()
            ranked = sorted(zip(items, totals), key=lambda pair: (-pair[1], pair[0]))
            results.append(ranked)
    finally:
        model.train(was_training)
    return results


def save_recommender(model: GenerativeRecommender, path: Union[str, Path], extra: Optional[dict] = None) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": asdict(model.config),
        "layout": asdict(model.layout),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)
    logger.info(f"Recommender checkpoint saved to {path}")
    return str(path)


def load_recommender(path: Union[str, Path], map_location: str = "cpu") -> Tuple[GenerativeRecommender, dict]:
    checkpoint = torch.load(path, map_location=map_location)
    model = GenerativeRecommender(
        RecommenderConfig(**checkpoint["config"]), VocabularyLayout(**checkpoint["layout"])
    )
    model.load_state_dict(checkpoint["state_dict"])
    return model, checkpoint
