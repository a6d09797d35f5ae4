#!/usr/bin/env python3
"""
Residual-Quantization Tokenizer

An RQ-VAE that turns an item's semantic embedding into L codeword indices.
Two assignment paths share the same distance computation:

- hard: nearest codeword per level, residual update v_{l+1} = v_l - e_l^{c_l},
  trained with reconstruction + commitment losses through a straight-through
  estimator (the staged baseline)
- soft: temperature-scaled softmax over negative squared distances, residual
  update v_{l+1} = v_l - E_p[e_l], differentiable end to end

Also provides the tokenizer-side losses, the linear temperature schedule,
hard identifier assignment with dedup tokens, checkpoints and identifier
dumps.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from config import config
from src.errors import CapacityError, ModeError, NumericError, ShapeError

logger = logging.getLogger(__name__)

MODES = ("soft", "hard")
LOG_BASES = ("natural", "two")


@dataclass
class TokenizerConfig:
    input_dim: int = config.SYNTH_DIM
    encoder_dims: List[int] = field(default_factory=lambda: list(config.ENCODER_DIMS))
    num_levels: int = config.NUM_LEVELS
    codebook_size: int = config.CODEBOOK_SIZE
    code_dim: int = config.CODE_DIM
    beta: float = config.BETA
    tau_max: float = config.TAU_MAX
    tau_min: float = config.TAU_MIN
    entropy_log_base: str = config.ENTROPY_LOG_BASE
    kmeans_init: bool = True
    kmeans_iters: int = 20

    def __post_init__(self):
        if self.num_levels < 1:
            raise ValueError(f"num_levels must be >= 1, got {self.num_levels}")
        if self.codebook_size < 2:
            raise ValueError(f"codebook_size must be >= 2, got {self.codebook_size}")
        if self.tau_min <= 0:
            raise ValueError(f"tau_min must be > 0, got {self.tau_min}")
        if self.tau_max < self.tau_min:
            raise ValueError(f"tau_max ({self.tau_max}) must be >= tau_min ({self.tau_min})")
        if self.entropy_log_base not in LOG_BASES:
            raise ValueError(f"entropy_log_base must be one of {LOG_BASES}, got {self.entropy_log_base}")


@dataclass(frozen=True)
class ItemIdentifier:
    """L hard codeword indices plus the dedup ordinal that makes the tuple unique."""

    codes: Tuple[int, ...]
    dedup: int = 0


@dataclass
class QuantizeOutput:
    latent: torch.Tensor
    residuals: List[torch.Tensor]
    quantized: torch.Tensor
    codes: torch.Tensor
    mode: str
    probs: Optional[List[torch.Tensor]] = None
    codewords: Optional[List[torch.Tensor]] = None


def _mlp(dims: Sequence[int]) -> nn.Sequential:
    layers: List[nn.Module] = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(nn.Linear(d_in, d_out))
        if i < len(dims) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _kmeans(x: torch.Tensor, k: int, iters: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Lloyd's k-means seeded from k distinct random points; empty clusters keep their center."""
    perm = torch.randperm(x.shape[0], generator=generator)[:k]
    centers = x[perm].clone()
    for _ in range(iters):
        dist = (x.pow(2).sum(-1, keepdim=True) + centers.pow(2).sum(-1) - 2 * x @ centers.T)
        assign = dist.argmin(-1)
        sums = torch.zeros_like(centers).index_add_(0, assign, x)
        counts = torch.bincount(assign, minlength=k).to(x.dtype).unsqueeze(-1)
        filled = counts.squeeze(-1) > 0
        centers[filled] = sums[filled] / counts[filled]
    return centers


class RQTokenizer(nn.Module):
    """MLP encoder, L residual codebooks, MLP decoder."""

    def __init__(self, tokenizer_config: TokenizerConfig):
        super().__init__()
        self.config = tokenizer_config
        cfg = tokenizer_config
        self.encoder = _mlp([cfg.input_dim, *cfg.encoder_dims, cfg.code_dim])
        self.decoder = _mlp([cfg.code_dim, *reversed(cfg.encoder_dims), cfg.input_dim])
        self.codebooks = nn.ModuleList(
            nn.Embedding(cfg.codebook_size, cfg.code_dim) for _ in range(cfg.num_levels)
        )
        for codebook in self.codebooks:
            nn.init.normal_(codebook.weight, mean=0.0, std=1.0 / math.sqrt(cfg.code_dim))

    @property
    def num_levels(self) -> int:
        return self.config.num_levels

    @property
    def codebook_size(self) -> int:
        return self.config.codebook_size

    def codebook(self, level: int) -> torch.Tensor:
        if not 0 <= level < self.num_levels:
            raise IndexError(f"Codebook level {level} out of range [0, {self.num_levels})")
        return self.codebooks[level].weight

    def encode(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.config.input_dim:
            raise ShapeError(f"Tokenizer expects input dim {self.config.input_dim}, got {z.shape[-1]}")
        return self.encoder(z)

    def decode(self, quantized: torch.Tensor) -> torch.Tensor:
        if quantized.shape[-1] != self.config.code_dim:
            raise ShapeError(f"Decoder expects dim {self.config.code_dim}, got {quantized.shape[-1]}")
        return self.decoder(quantized)

    def squared_distances(self, residual: torch.Tensor, level: int) -> torch.Tensor:
        """||v - e_k||^2 for every codeword of `level`, via ||v||^2 + ||e||^2 - 2 v.e clamped at 0."""
        codebook = self.codebook(level)
        dist = (
            residual.pow(2).sum(-1, keepdim=True)
            + codebook.pow(2).sum(-1)
            - 2 * residual @ codebook.T
        )
        return dist.clamp_min(0.0)

    def soft_assign(self, residual: torch.Tensor, level: int, tau: float) -> torch.Tensor:
        """Softmax over -distance / tau with max-logit subtraction."""
        if tau <= 0:
            raise ValueError(f"tau must be > 0, got {tau}")
        if not torch.isfinite(residual).all():
            raise NumericError(f"Non-finite residual at level {level}")
        logits = -self.squared_distances(residual, level) / tau
        logits = logits - logits.amax(dim=-1, keepdim=True)
        return torch.softmax(logits, dim=-1)

    def hard_assign(self, residual: torch.Tensor, level: int) -> torch.Tensor:
        # argmin returns the first minimal index, so ties go to the lowest codeword
        return self.squared_distances(residual, level).argmin(dim=-1)

    def quantize_latent(
        self,
        latent: torch.Tensor,
        tau: Optional[float] = None,
        mode: str = "soft",
        straight_through: bool = True,
    ) -> QuantizeOutput:
        if mode not in MODES:
            raise ModeError(f"Unknown quantization mode: {mode}")
        residual = latent
        residuals: List[torch.Tensor] = []
        quantized = torch.zeros_like(latent)

        if mode == "soft":
            tau = self.config.tau_min if tau is None else tau
            probs: List[torch.Tensor] = []
            for level in range(self.num_levels):
                p = self.soft_assign(residual, level, tau)
                expected = p @ self.codebook(level)
                residuals.append(residual)
                probs.append(p)
                quantized = quantized + expected
                residual = residual - expected
            codes = torch.stack([p.argmax(dim=-1) for p in probs], dim=-1)
            return QuantizeOutput(latent, residuals, quantized, codes, mode, probs=probs)

        codewords: List[torch.Tensor] = []
        code_list: List[torch.Tensor] = []
        for level in range(self.num_levels):
            c = self.hard_assign(residual, level)
            e = self.codebooks[level](c)
            residuals.append(residual)
            codewords.append(e)
            code_list.append(c)
            quantized = quantized + e
            # keep codeword gradients confined to the commitment term
            residual = residual - e.detach()
        if straight_through:
            quantized = latent + (quantized - latent).detach()
        codes = torch.stack(code_list, dim=-1)
        return QuantizeOutput(latent, residuals, quantized, codes, mode, codewords=codewords)

    def quantize(
        self,
        z: torch.Tensor,
        tau: Optional[float] = None,
        mode: str = "soft",
        straight_through: bool = True,
    ) -> QuantizeOutput:
        return self.quantize_latent(self.encode(z), tau=tau, mode=mode, straight_through=straight_through)

    def forward(self, z: torch.Tensor, tau: Optional[float] = None, mode: str = "soft"):
        out = self.quantize(z, tau=tau, mode=mode)
        return self.decode(out.quantized), out

    @torch.no_grad()
    def initialize_codebooks(self, z: torch.Tensor, generator: Optional[torch.Generator] = None) -> None:
        """k-means each level on the residuals of a warm-up batch."""
        residual = self.encode(z)
        for level in range(self.num_levels):
            if residual.shape[0] < self.codebook_size:
                logger.warning(
                    f"Warm-up batch of {residual.shape[0]} is smaller than K={self.codebook_size}; "
                    f"keeping normal initialization for level {level}"
                )
            else:
                centers = _kmeans(residual, self.codebook_size, self.config.kmeans_iters, generator)
                self.codebooks[level].weight.copy_(centers)
            residual = residual - self.codebooks[level](self.hard_assign(residual, level))


def recon_loss(z_hat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Squared error summed over features, averaged over the batch."""
    if z_hat.shape != z.shape:
        raise ShapeError(f"Reconstruction shape {tuple(z_hat.shape)} differs from target {tuple(z.shape)}")
    return (z_hat - z).pow(2).sum(-1).mean()


def quant_loss(
    residuals: Sequence[torch.Tensor],
    codewords: Optional[Sequence[torch.Tensor]],
    beta: float = config.BETA,
    mode: str = "hard",
) -> torch.Tensor:
    """
    sum_l ||sg(v_l) - e_l||^2 + beta * ||v_l - sg(e_l)||^2, averaged over the batch.

    Only defined for hard assignment; soft training has no quantization term.
    """
    if mode != "hard" or codewords is None:
        raise ModeError("quant_loss is only defined for hard assignment")
    total = residuals[0].new_zeros(())
    for v, e in zip(residuals, codewords):
        codebook_term = (v.detach() - e).pow(2).sum(-1).mean()
        commitment_term = (v - e.detach()).pow(2).sum(-1).mean()
        total = total + codebook_term + beta * commitment_term
    return total


def uniformity_loss(probs: Sequence[torch.Tensor], log_base: str = config.ENTROPY_LOG_BASE) -> torch.Tensor:
    """
    sum_l sum_k p_bar(k) log p_bar(k) over batch-averaged assignment probabilities.

    Bounded in [-L log K, 0]; 0 log 0 is taken as 0.
    """
    if log_base not in LOG_BASES:
        raise ValueError(f"log_base must be one of {LOG_BASES}, got {log_base}")
    total = probs[0].new_zeros(())
    for p in probs:
        if p.shape[0] < 1:
            raise ValueError("uniformity_loss needs a batch of at least one item")
        p_bar = p.mean(dim=0)
        total = total + torch.special.xlogy(p_bar, p_bar).sum()
    if log_base == "two":
        total = total / math.log(2.0)
    return total


def anneal_temperature(step: int, total_step: int, tau_max: float, tau_min: float) -> float:
    """Linear decay from tau_max at step 0 to tau_min at total_step."""
    if total_step < 1:
        raise ValueError(f"total_step must be >= 1, got {total_step}")
    if step < 0 or step > total_step:
        logger.warning(f"Annealing step {step} outside [0, {total_step}]; clamping")
        step = min(max(step, 0), total_step)
    return tau_max - (step / total_step) * (tau_max - tau_min)


@torch.no_grad()
def compute_codes(tokenizer: RQTokenizer, z: torch.Tensor, batch_size: int = 4096) -> torch.Tensor:
    """Hard codes (N, L) for every row of z."""
    was_training = tokenizer.training
    tokenizer.eval()
    try:
        chunks = [
            tokenizer.quantize(z[start:start + batch_size], mode="hard").codes
            for start in range(0, z.shape[0], batch_size)
        ]
    finally:
        tokenizer.train(was_training)
    return torch.cat(chunks, dim=0)


def assign_identifiers(
    tokenizer: RQTokenizer,
    z: Union[torch.Tensor, np.ndarray],
    dedup_reserve: Optional[int] = None,
) -> List[ItemIdentifier]:
    """
    Hard identifiers for every item, in dense item order.

    Items sharing an L-tuple get dedup ordinals 0, 1, 2, ... in item order.

    Raises:
        CapacityError: a dedup ordinal does not fit in `dedup_reserve`
    """
    if isinstance(z, np.ndarray):
        z = torch.from_numpy(z)
    param = next(tokenizer.parameters())
    codes = compute_codes(tokenizer, z.to(device=param.device, dtype=param.dtype)).cpu().tolist()

    seen: Dict[Tuple[int, ...], int] = {}
    identifiers = []
    for item, row in enumerate(codes):
        key = tuple(int(c) for c in row)
        dedup = seen.get(key, 0)
        seen[key] = dedup + 1
        if dedup_reserve is not None and dedup >= dedup_reserve:
            raise CapacityError(
                f"Item {item} needs dedup token {dedup} but only {dedup_reserve} are reserved"
            )
        identifiers.append(ItemIdentifier(key, dedup))
    return identifiers


def dedup_reserve(identifiers: Sequence[ItemIdentifier], safety_factor: int = config.DEDUP_SAFETY_FACTOR) -> int:
    """Reserved dedup block: largest collision group times the safety factor."""
    largest = max((ident.dedup for ident in identifiers), default=0) + 1
    return max(1, largest * safety_factor)


def save_tokenizer(tokenizer: RQTokenizer, path: Union[str, Path]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"config": asdict(tokenizer.config), "state_dict": tokenizer.state_dict()}, path)
    logger.info(f"Tokenizer checkpoint saved to {path}")
    return str(path)


def load_tokenizer(path: Union[str, Path], map_location: str = "cpu") -> RQTokenizer:
    checkpoint = torch.load(path, map_location=map_location)
    tokenizer = RQTokenizer(TokenizerConfig(**checkpoint["config"]))
    tokenizer.load_state_dict(checkpoint["state_dict"])
    return tokenizer


def write_identifier_dump(identifiers: Sequence[ItemIdentifier], path: Union[str, Path]) -> str:
    """One JSON object per line: {"item", "codes", "dedup"}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for item, ident in enumerate(identifiers):
            f.write(json.dumps({"item": item, "codes": list(ident.codes), "dedup": ident.dedup}) + "\n")
    logger.info(f"Wrote {len(identifiers)} identifiers to {path}")
    return str(path)


def read_identifier_dump(path: Union[str, Path]) -> Dict[int, ItemIdentifier]:
    dump: Dict[int, ItemIdentifier] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                dump[int(row["item"])] = ItemIdentifier(tuple(row["codes"]), int(row["dedup"]))
    return dump
