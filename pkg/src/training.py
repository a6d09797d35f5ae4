#!/usr/bin/env python3
"""
Training Pipeline

Stage 1 pretrains the tokenizer alone on semantic embeddings: reconstruction
plus uniformity regularization with the temperature annealed over every
stage-1 step (or, for the hard baseline, reconstruction plus the
quantization loss through a straight-through estimator).

Stage 2 trains the recommender end to end with the tokenizer: soft
identifiers are recomputed through the current tokenizer for every batch,
the temperature stays at tau_min, and the objective is
    rec + lambda_recon * recon + lambda_cd_t * cd_t + lambda_cd_r * cd_r
with separate AdamW learning rates for the backbone and the tokenizer.
Hard identifiers and the decoding trie are rebuilt before each validation.

Ablation rungs M0..M6 differ only in TrainingConfig flags.
"""

import copy
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Union

import numpy as np
import torch
from tqdm import tqdm

from config import config
from src.dataset import SequenceDataset, training_examples
from src.distillation import (
    DistillationConfig,
    DistillationHeads,
    pool_decoder,
    pool_encoder,
    recommender_distill_loss,
    tokenizer_distill_loss,
)
from src.embeddings import EmbeddingTable, table_checksum
from src.errors import ConfigError, TrainingError
from src.evaluation import MetricsRecord, collision_rate, full_rank_evaluate, usage_entropy
from src.recommender import (
    GenerativeRecommender,
    RecommenderConfig,
    VocabularyLayout,
    build_prefix_trie,
    identifier_tensors,
    pad_histories,
    rec_loss,
    save_recommender,
)
from src.report_utils import append_jsonl
from src.tokenizer import (
    RQTokenizer,
    TokenizerConfig,
    anneal_temperature,
    assign_identifiers,
    dedup_reserve,
    quant_loss,
    recon_loss,
    save_tokenizer,
    uniformity_loss,
    write_identifier_dump,
)
from src.utils import set_seed

logger = logging.getLogger(__name__)

ABLATION_RUNGS = ("M0", "M1", "M2", "M3", "M4", "M5", "M6")
TAU_SCHEDULES = ("anneal", "fixed_high", "fixed_low")
LAMBDA_CU_GRID = (0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


@dataclass
class TrainingConfig:
    identifier_mode: str = "soft"
    train_tokenizer_jointly: bool = True
    tau_schedule: str = "anneal"
    # stage 1
    pretrain_batch: int = config.PRETRAIN_BATCH
    pretrain_lr: float = config.PRETRAIN_LR
    pretrain_epochs: int = config.PRETRAIN_EPOCHS
    lambda_cu: float = config.LAMBDA_CU
    checkpoint_every: int = 10
    # stage 2
    joint_batch: int = config.JOINT_BATCH
    backbone_lr: float = config.BACKBONE_LR
    tokenizer_lr: float = config.TOKENIZER_LR
    weight_decay: float = config.WEIGHT_DECAY
    joint_epochs: int = config.JOINT_EPOCHS
    patience: int = config.PATIENCE
    lambda_recon: float = config.LAMBDA_RECON
    lambda_cd_t: float = config.LAMBDA_CD_T
    lambda_cd_r: float = config.LAMBDA_CD_R
    tau_prime: float = config.TAU_PRIME
    beam_size: int = config.BEAM_SIZE
    top_ks: List[int] = field(default_factory=lambda: list(config.TOP_KS))

    def __post_init__(self):
        if self.identifier_mode not in ("soft", "hard"):
            raise ConfigError(f"identifier_mode must be 'soft' or 'hard', got {self.identifier_mode!r}")
        if self.tau_schedule not in TAU_SCHEDULES:
            raise ConfigError(f"tau_schedule must be one of {TAU_SCHEDULES}, got {self.tau_schedule!r}")
        for name in ("lambda_cu", "lambda_recon", "lambda_cd_t", "lambda_cd_r", "weight_decay", "tokenizer_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("pretrain_lr", "backbone_lr", "tau_prime"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("pretrain_batch", "joint_batch", "pretrain_epochs", "joint_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.beam_size < max(self.top_ks):
            raise ConfigError(f"beam_size ({self.beam_size}) must be >= max top_ks ({max(self.top_ks)})")

    @property
    def soft(self) -> bool:
        return self.identifier_mode == "soft"

    @property
    def tokenizer_trainable(self) -> bool:
        return self.soft and self.train_tokenizer_jointly

    @property
    def distillation(self) -> DistillationConfig:
        return DistillationConfig(self.lambda_cd_t, self.lambda_cd_r, self.tau_prime)


def ablation_config(rung: str, base: Optional[TrainingConfig] = None) -> TrainingConfig:
    """
    M0 hard staged baseline; M1 soft identifiers, frozen tokenizer; M2 joint
    training; M3 adds uniformity; M4 adds tokenizer distillation; M5 adds
    recommender distillation; M6 adds both.
    """
    if rung not in ABLATION_RUNGS:
        raise ConfigError(f"Unknown ablation rung {rung!r}; expected one of {ABLATION_RUNGS}")
    base = base or TrainingConfig()
    lambda_cu = base.lambda_cu or config.LAMBDA_CU
    lambda_recon = base.lambda_recon or config.LAMBDA_RECON
    lambda_cd_t = base.lambda_cd_t or config.LAMBDA_CD_T
    lambda_cd_r = base.lambda_cd_r or config.LAMBDA_CD_R

    off = dict(lambda_cu=0.0, lambda_recon=0.0, lambda_cd_t=0.0, lambda_cd_r=0.0)
    if rung == "M0":
        return replace(base, identifier_mode="hard", train_tokenizer_jointly=False, tokenizer_lr=0.0, **off)
    if rung == "M1":
        return replace(base, identifier_mode="soft", train_tokenizer_jointly=False, tokenizer_lr=0.0,
                       tau_schedule="anneal", **off)
    joint = dict(identifier_mode="soft", train_tokenizer_jointly=True, tau_schedule="anneal",
                 lambda_recon=lambda_recon, lambda_cd_t=0.0, lambda_cd_r=0.0,
                 tokenizer_lr=base.tokenizer_lr or config.TOKENIZER_LR)
    if rung == "M2":
        return replace(base, lambda_cu=0.0, **joint)
    joint["lambda_cu"] = lambda_cu
    if rung == "M4":
        joint["lambda_cd_t"] = lambda_cd_t
    elif rung == "M5":
        joint["lambda_cd_r"] = lambda_cd_r
    elif rung == "M6":
        joint["lambda_cd_t"] = lambda_cd_t
        joint["lambda_cd_r"] = lambda_cd_r
    return replace(base, **joint)


def enabled_losses(cfg: TrainingConfig) -> Dict[str, FrozenSet[str]]:
    """The loss terms each stage optimizes under this configuration."""
    stage1 = {"recon"}
    if cfg.soft:
        if cfg.lambda_cu > 0:
            stage1.add("uniformity")
    else:
        stage1.add("quant")
    stage2 = {"rec"}
    if cfg.tokenizer_trainable and cfg.lambda_recon > 0:
        stage2.add("recon")
    if cfg.soft and cfg.lambda_cd_t > 0:
        stage2.add("cd_t")
    if cfg.lambda_cd_r > 0:
        stage2.add("cd_r")
    return {"stage1": frozenset(stage1), "stage2": frozenset(stage2)}


def expand_grid(grid: Dict[str, Any]) -> List[Dict[str, Any]]:
    """Cartesian product over list-valued entries; scalars are held fixed."""
    keys = sorted(grid)
    values = [grid[k] if isinstance(grid[k], (list, tuple)) else [grid[k]] for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def schedule_temperature(schedule: str, step: int, total_steps: int, tau_max: float, tau_min: float) -> float:
    """
    Temperature for a zero-based step out of total_steps.

    The anneal divides by total_steps - 1, so the last step (total_steps - 1)
    runs at exactly tau_min.
    """
    if schedule == "fixed_high":
        return tau_max
    if schedule == "fixed_low":
        return tau_min
    return anneal_temperature(step, max(total_steps - 1, 1), tau_max, tau_min)


def _as_tensor(table: EmbeddingTable, device) -> torch.Tensor:
    return torch.from_numpy(table.matrix.copy()).to(device)


@dataclass
class PretrainResult:
    tokenizer: RQTokenizer
    history: List[dict]
    checkpoint: Optional[str] = None


def pretrain_tokenizer(
    semantic: EmbeddingTable,
    tokenizer_config: Optional[TokenizerConfig] = None,
    training_config: Optional[TrainingConfig] = None,
    seed: int = config.SEED,
    run_dir: Optional[Union[str, Path]] = None,
    device: Optional[torch.device] = None,
    show_progress: bool = False,
) -> PretrainResult:
    """
    Stage 1. Soft mode minimizes recon + lambda_cu * uniformity under the
    configured temperature schedule; hard mode minimizes recon + quant.
    Collision rate and mean usage entropy are recorded per epoch.

    Raises:
        TrainingError: the loss became NaN or infinite
    """
    tcfg = training_config or TrainingConfig()
    kcfg = tokenizer_config or TokenizerConfig(input_dim=semantic.dim)
    if kcfg.input_dim != semantic.dim:
        kcfg = replace(kcfg, input_dim=semantic.dim)
    device = device or torch.device("cpu")
    generator = set_seed(seed)

    tokenizer = RQTokenizer(kcfg).to(device)
    z = _as_tensor(semantic, device)
    n_items = z.shape[0]
    if kcfg.kmeans_init:
        warmup = torch.randperm(n_items, generator=generator)[:tcfg.pretrain_batch]
        tokenizer.initialize_codebooks(z[warmup.to(device)], generator=generator)
    optimizer = torch.optim.Adam(tokenizer.parameters(), lr=tcfg.pretrain_lr)

    steps_per_epoch = math.ceil(n_items / tcfg.pretrain_batch)
    total_steps = steps_per_epoch * tcfg.pretrain_epochs
    step = 0
    history: List[dict] = []
    checkpoint = None
    stage_dir = Path(run_dir) / "stage1" if run_dir is not None else None

    for epoch in tqdm(range(1, tcfg.pretrain_epochs + 1), desc="stage1", disable=not show_progress):
        tokenizer.train()
        order = torch.randperm(n_items, generator=generator).to(device)
        sums = {"loss": 0.0, "recon": 0.0, "uniformity": 0.0, "quant": 0.0}
        tau = kcfg.tau_min
        for start in range(0, n_items, tcfg.pretrain_batch):
            zb = z[order[start:start + tcfg.pretrain_batch]]
            if tcfg.soft:
                tau = schedule_temperature(tcfg.tau_schedule, step, total_steps, kcfg.tau_max, kcfg.tau_min)
                z_hat, out = tokenizer(zb, tau=tau, mode="soft")
                recon = recon_loss(z_hat, zb)
                uniformity = uniformity_loss(out.probs, kcfg.entropy_log_base)
                loss = recon + tcfg.lambda_cu * uniformity
                sums["uniformity"] += uniformity.item()
            else:
                out = tokenizer.quantize(zb, mode="hard")
                recon = recon_loss(tokenizer.decode(out.quantized), zb)
                quant = quant_loss(out.residuals, out.codewords, kcfg.beta, mode="hard")
                loss = recon + quant
                sums["quant"] += quant.item()
            if not torch.isfinite(loss):
                logger.error(f"Stage-1 loss diverged at epoch {epoch}, step {step}, tau={tau}")
                raise TrainingError(f"Stage-1 loss is {loss.item()} at epoch {epoch} step {step} (tau={tau})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            sums["loss"] += loss.item()
            sums["recon"] += recon.item()
            step += 1

        identifiers = assign_identifiers(tokenizer, z)
        entropy = usage_entropy(identifiers, kcfg.codebook_size, kcfg.entropy_log_base)
        record = {key: value / steps_per_epoch for key, value in sums.items()}
        record.update(
            epoch=epoch,
            step=step,
            tau=tau,
            collision_rate=collision_rate(identifiers),
            entropy_mean=float(np.mean(entropy)),
        )
        history.append(record)
        logger.info(
            f"Stage-1 epoch {epoch}: loss={record['loss']:.4f} recon={record['recon']:.4f} "
            f"tau={tau:.5f} collision={record['collision_rate']:.4f}"
        )
        if stage_dir is not None and (epoch % tcfg.checkpoint_every == 0 or epoch == tcfg.pretrain_epochs):
            checkpoint = save_tokenizer(tokenizer, stage_dir / "tokenizer.pt")

    tokenizer.eval()
    return PretrainResult(tokenizer, history, checkpoint)


def snapshot_identifiers(
    tokenizer: RQTokenizer,
    semantic: EmbeddingTable,
    tag: str,
    run_dir: Union[str, Path],
    reserve: Optional[int] = None,
) -> str:
    """Write the current hard identifiers to {run_dir}/identifiers-{tag}.jsonl."""
    param = next(tokenizer.parameters())
    identifiers = assign_identifiers(tokenizer, _as_tensor(semantic, param.device), dedup_reserve=reserve)
    return write_identifier_dump(identifiers, Path(run_dir) / f"identifiers-{tag}.jsonl")


class JointTrainer:
    """Stage-2 state: recommender, tokenizer, distillation heads and the current hard identifiers."""

    def __init__(
        self,
        dataset: SequenceDataset,
        tokenizer: RQTokenizer,
        semantic: EmbeddingTable,
        teacher: Optional[EmbeddingTable] = None,
        recommender_config: Optional[RecommenderConfig] = None,
        training_config: Optional[TrainingConfig] = None,
        device: Optional[torch.device] = None,
    ):
        self.cfg = training_config or TrainingConfig()
        self.dataset = dataset
        self.device = device or torch.device("cpu")
        self.tokenizer = tokenizer.to(self.device)
        self.tau = tokenizer.config.tau_min
        self.z = _as_tensor(semantic, self.device)
        if self.z.shape[0] != dataset.num_items:
            raise ValueError(f"{self.z.shape[0]} semantic rows for {dataset.num_items} items")

        needs_teacher = self.cfg.lambda_cd_t > 0 or self.cfg.lambda_cd_r > 0
        if needs_teacher and teacher is None:
            raise ConfigError("Distillation weights are set but no teacher embeddings were given")
        self.teacher = _as_tensor(teacher, self.device) if teacher is not None else None
        self.teacher_checksum = table_checksum(teacher) if teacher is not None else None
        self._teacher_source = teacher

        self.identifiers = assign_identifiers(self.tokenizer, self.z)
        self.layout = VocabularyLayout(
            tokenizer.num_levels, tokenizer.codebook_size, dedup_reserve(self.identifiers)
        )
        rcfg = recommender_config or RecommenderConfig()
        self.model = GenerativeRecommender(rcfg, self.layout).to(self.device)
        self.heads = None
        if self.teacher is not None and needs_teacher:
            self.heads = DistillationHeads(rcfg.d_model, self.teacher.shape[1], tokenizer.config.input_dim).to(
                self.device
            )
        self._sync_identifier_tensors()
        self.trie = build_prefix_trie(self.identifiers, self.layout)

        backbone = list(self.model.parameters())
        if self.heads is not None:
            backbone += list(self.heads.parameters())
        groups = [{"params": backbone, "lr": self.cfg.backbone_lr, "name": "backbone"}]
        if self.cfg.tokenizer_trainable:
            groups.append({"params": list(self.tokenizer.parameters()), "lr": self.cfg.tokenizer_lr, "name": "tokenizer"})
        else:
            self.tokenizer.requires_grad_(False)
        self.optimizer = torch.optim.AdamW(groups, weight_decay=self.cfg.weight_decay)

    def _sync_identifier_tensors(self) -> None:
        self.codes, self.dedup = identifier_tensors(self.identifiers, device=self.device)

    def refresh_identifiers(self) -> int:
        """
        Re-assign hard identifiers and rebuild the trie from the current tokenizer.

        Returns the number of items carrying a non-zero dedup token.

        Raises:
            CapacityError: a collision group outgrew the reserved dedup block
        """
        self.identifiers = assign_identifiers(self.tokenizer, self.z, dedup_reserve=self.layout.dedup_reserve)
        self._sync_identifier_tensors()
        self.trie = build_prefix_trie(self.identifiers, self.layout)
        return sum(1 for ident in self.identifiers if ident.dedup > 0)

    def target_tokens(self, codes: torch.Tensor, dedup: torch.Tensor) -> torch.Tensor:
        offsets = torch.tensor(self.layout.level_offsets, device=codes.device)
        return torch.cat([codes + offsets, (dedup + self.layout.dedup_offset).unsqueeze(-1)], dim=-1)

    def batch_losses(self, histories: Sequence[Sequence[int]], targets: Sequence[int]) -> Dict[str, torch.Tensor]:
        """Every stage-2 loss term for one batch plus their weighted total."""
        cfg = self.cfg
        distill = cfg.distillation
        items, mask = pad_histories(histories, self.model.config.max_history, device=self.device)
        target_items = torch.as_tensor(list(targets), dtype=torch.long, device=self.device)
        hist_dedup, target_dedup = self.dedup[items], self.dedup[target_items]
        losses: Dict[str, torch.Tensor] = {}

        if cfg.soft:
            unique, inverse = torch.unique(torch.cat([items.reshape(-1), target_items]), return_inverse=True)
            hist_inv = inverse[:items.numel()].reshape(items.shape)
            target_inv = inverse[items.numel():]
            with torch.set_grad_enabled(cfg.tokenizer_trainable and torch.is_grad_enabled()):
                out = self.tokenizer.quantize(self.z[unique], tau=self.tau, mode="soft")
            item_embeddings = self.model.embed_items(hist_dedup, probs=[p[hist_inv] for p in out.probs])
            decoder_inputs = self.model.target_inputs(probs=[p[target_inv] for p in out.probs])
        else:
            item_embeddings = self.model.embed_items(hist_dedup, codes=self.codes[items])
            decoder_inputs = self.model.target_inputs(codes=self.codes[target_items])
        # labels are the hard identifiers in both modes
        labels = self.target_tokens(self.codes[target_items], target_dedup)

        memory, memory_mask = self.model.encode_history(item_embeddings, mask)
        hidden, logits = self.model.decode_teacher_forced(memory, memory_mask, decoder_inputs)
        losses["rec"] = rec_loss(logits, labels)
        total = losses["rec"]

        if cfg.tokenizer_trainable and cfg.lambda_recon > 0:
            losses["recon"] = recon_loss(self.tokenizer.decode(out.quantized), self.z[unique])
            total = total + cfg.lambda_recon * losses["recon"]
        if self.heads is not None:
            teacher_rows = self.teacher[target_items].detach()
            if cfg.soft and distill.lambda_cd_t > 0:
                h_enc = self.heads.encoder_to_tokenizer(pool_encoder(memory, memory_mask))
                h_tea = self.heads.teacher_to_tokenizer(teacher_rows)
                losses["cd_t"] = tokenizer_distill_loss(h_enc, h_tea, self.tokenizer, self.tau, distill.kl_clamp)
                total = total + distill.lambda_cd_t * losses["cd_t"]
            if distill.lambda_cd_r > 0:
                h_dec = self.heads.decoder_to_teacher(pool_decoder(hidden))
                losses["cd_r"] = recommender_distill_loss(h_dec, teacher_rows, distill.tau_prime)
                total = total + distill.lambda_cd_r * losses["cd_r"]
        losses["total"] = total
        return losses

    def train_step(self, histories: Sequence[Sequence[int]], targets: Sequence[int]) -> Dict[str, float]:
        self.model.train()
        if self.heads is not None:
            self.heads.train()
        if self.cfg.tokenizer_trainable:
            self.tokenizer.train()
        losses = self.batch_losses(histories, targets)
        if not torch.isfinite(losses["total"]):
            values = {k: v.item() for k, v in losses.items()}
            logger.error(f"Stage-2 loss diverged: {values}")
            raise TrainingError(f"Stage-2 loss is not finite: {values}")
        self.optimizer.zero_grad()
        losses["total"].backward()
        self.optimizer.step()
        return {k: v.item() for k, v in losses.items()}

    def train_epoch(self, generator: torch.Generator) -> Dict[str, float]:
        examples = training_examples(self.dataset)
        order = torch.randperm(len(examples), generator=generator).tolist()
        sums: Dict[str, float] = {}
        n_batches = 0
        for start in range(0, len(order), self.cfg.joint_batch):
            batch = [examples[i] for i in order[start:start + self.cfg.joint_batch]]
            values = self.train_step([h for _, h, _ in batch], [t for _, _, t in batch])
            for key, value in values.items():
                sums[key] = sums.get(key, 0.0) + value
            n_batches += 1
        return {key: value / max(n_batches, 1) for key, value in sums.items()}

    def evaluate(self, split: str = "valid", epoch: Optional[int] = None) -> MetricsRecord:
        return full_rank_evaluate(
            self.model,
            self.trie,
            self.identifiers,
            self.dataset,
            split=split,
            ks=self.cfg.top_ks,
            beam_size=self.cfg.beam_size,
            epoch=epoch,
            max_len=self.model.config.max_history,
        )

    def state(self) -> dict:
        return {
            "model": copy.deepcopy(self.model.state_dict()),
            "tokenizer": copy.deepcopy(self.tokenizer.state_dict()),
            "heads": copy.deepcopy(self.heads.state_dict()) if self.heads is not None else None,
            "identifiers": list(self.identifiers),
        }

    def load_state(self, state: dict) -> None:
        self.model.load_state_dict(state["model"])
        self.tokenizer.load_state_dict(state["tokenizer"])
        if self.heads is not None and state["heads"] is not None:
            self.heads.load_state_dict(state["heads"])
        self.identifiers = list(state["identifiers"])
        self._sync_identifier_tensors()
        self.trie = build_prefix_trie(self.identifiers, self.layout)

    def verify_teacher_frozen(self) -> None:
        if self._teacher_source is None:
            return
        if table_checksum(self._teacher_source) != self.teacher_checksum or not np.array_equal(
            self.teacher.detach().cpu().numpy(), self._teacher_source.matrix
        ):
            logger.error("Teacher embeddings changed during joint training")
            raise TrainingError("Teacher embeddings changed during joint training")


@dataclass
class JointResult:
    trainer: JointTrainer
    history: List[dict]
    best: Optional[MetricsRecord]
    checkpoint: Optional[str] = None


def joint_train(
    dataset: SequenceDataset,
    tokenizer: RQTokenizer,
    semantic: EmbeddingTable,
    teacher: Optional[EmbeddingTable] = None,
    recommender_config: Optional[RecommenderConfig] = None,
    training_config: Optional[TrainingConfig] = None,
    seed: int = config.SEED,
    run_dir: Optional[Union[str, Path]] = None,
    device: Optional[torch.device] = None,
    show_progress: bool = False,
) -> JointResult:
    """
    Stage 2 with validation Recall@max(K) every epoch and early stopping.

    The best epoch's parameters and identifiers are restored before
    returning. With a run directory, per-epoch records are appended to
    metrics.jsonl and the best state is saved under stage2/.

    Raises:
        TrainingError: NaN loss, or the teacher table changed
        CapacityError: re-assigned identifiers overflow the dedup block
    """
    cfg = training_config or TrainingConfig()
    generator = set_seed(seed)
    trainer = JointTrainer(dataset, tokenizer, semantic, teacher, recommender_config, cfg, device)
    metrics_path = Path(run_dir) / "metrics.jsonl" if run_dir is not None else None
    key = f"Recall@{max(cfg.top_ks)}"

    history: List[dict] = []
    best_value, best_state, best_record, stale = -1.0, None, None, 0
    for epoch in tqdm(range(1, cfg.joint_epochs + 1), desc="stage2", disable=not show_progress):
        losses = trainer.train_epoch(generator)
        rededuped = trainer.refresh_identifiers() if cfg.tokenizer_trainable else None
        record = trainer.evaluate("valid", epoch)
        entry = {"stage": "joint", "epoch": epoch, **{f"loss_{k}": v for k, v in losses.items()}}
        entry["collision_rate"] = collision_rate(trainer.identifiers)
        if rededuped is not None:
            entry["rededuped_items"] = rededuped
        entry.update(record.as_row())
        history.append(entry)
        if metrics_path is not None:
            append_jsonl(entry, metrics_path)
        logger.info(f"Stage-2 epoch {epoch}: loss={losses.get('total', float('nan')):.4f} valid {key}={entry[key]:.4f}")

        if entry[key] > best_value:
            best_value, best_state, best_record, stale = entry[key], trainer.state(), record, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info(f"Stage-2 early stop at epoch {epoch}; best {key}={best_value:.4f}")
                break

    trainer.verify_teacher_frozen()
    trainer.load_state(best_state)
    checkpoint = None
    if run_dir is not None:
        stage_dir = Path(run_dir) / "stage2"
        save_tokenizer(trainer.tokenizer, stage_dir / "tokenizer.pt")
        extra = {"heads": trainer.heads.state_dict()} if trainer.heads is not None else None
        checkpoint = save_recommender(trainer.model, stage_dir / "recommender.pt", extra=extra)
        write_identifier_dump(trainer.identifiers, stage_dir / "identifiers.jsonl")
    return JointResult(trainer, history, best_record, checkpoint)


def run_ablation(
    rung: str,
    dataset: SequenceDataset,
    semantic: EmbeddingTable,
    teacher: Optional[EmbeddingTable] = None,
    tokenizer_config: Optional[TokenizerConfig] = None,
    recommender_config: Optional[RecommenderConfig] = None,
    base: Optional[TrainingConfig] = None,
    seed: int = config.SEED,
    run_dir: Optional[Union[str, Path]] = None,
    device: Optional[torch.device] = None,
) -> MetricsRecord:
    """Both stages under the rung's flags, then test-split metrics."""
    cfg = ablation_config(rung, base)
    logger.info(f"Ablation {rung}: losses {dict((k, sorted(v)) for k, v in enabled_losses(cfg).items())}")
    rung_dir = Path(run_dir) / "ablation" / rung if run_dir is not None else None
    stage1 = pretrain_tokenizer(semantic, tokenizer_config, cfg, seed, rung_dir, device)
    result = joint_train(
        dataset, stage1.tokenizer, semantic, teacher, recommender_config, cfg, seed, rung_dir, device
    )
    record = result.trainer.evaluate("test")
    record.extra["collision_rate"] = collision_rate(result.trainer.identifiers)
    return record


def compare_tau_schedules(
    semantic: EmbeddingTable,
    tokenizer_config: Optional[TokenizerConfig] = None,
    training_config: Optional[TrainingConfig] = None,
    seeds: Sequence[int] = (config.SEED,),
    schedules: Sequence[str] = TAU_SCHEDULES,
    device: Optional[torch.device] = None,
) -> List[dict]:
    """Per-epoch collision rate of stage 1 under each temperature schedule."""
    base = training_config or TrainingConfig()
    rows = []
    for schedule in schedules:
        for seed in seeds:
            result = pretrain_tokenizer(
                semantic, tokenizer_config, replace(base, tau_schedule=schedule, identifier_mode="soft"),
                seed, device=device,
            )
            for record in result.history:
                rows.append({
                    "schedule": schedule,
                    "seed": seed,
                    "epoch": record["epoch"],
                    "step": record["step"],
                    "tau": record["tau"],
                    "collision_rate": record["collision_rate"],
                })
    return rows


def sweep_lambda_cu(
    semantic: EmbeddingTable,
    tokenizer_config: Optional[TokenizerConfig] = None,
    training_config: Optional[TrainingConfig] = None,
    grid: Sequence[float] = LAMBDA_CU_GRID,
    seeds: Sequence[int] = (config.SEED,),
    device: Optional[torch.device] = None,
) -> List[dict]:
    """Final collision rate and per-level usage entropy of stage 1 for each lambda_cu."""
    base = training_config or TrainingConfig()
    rows = []
    for lambda_cu in grid:
        for seed in seeds:
            result = pretrain_tokenizer(
                semantic, tokenizer_config, replace(base, lambda_cu=lambda_cu, identifier_mode="soft"),
                seed, device=device,
            )
            identifiers = assign_identifiers(result.tokenizer, _as_tensor(semantic, next(result.tokenizer.parameters()).device))
            kcfg = result.tokenizer.config
            entropy = usage_entropy(identifiers, kcfg.codebook_size, kcfg.entropy_log_base)
            row = {
                "lambda_cu": lambda_cu,
                "seed": seed,
                "collision_rate": collision_rate(identifiers),
                "entropy_mean": float(np.mean(entropy)),
            }
            row.update({f"entropy_level_{level}": h for level, h in enumerate(entropy)})
            rows.append(row)
    return rows
