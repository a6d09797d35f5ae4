#!/usr/bin/env python3
"""
Experiment configuration.

A JSON file maps onto nested dataclasses, one section per pipeline stage.
Unknown keys at any depth are rejected with their dotted name, and field
validation runs before any compute. Defaults come from config/config.py.

The training section may give lists for the learning rates and the
distillation weights; `training_runs()` enumerates their grid.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from config import config
from src.errors import ConfigError
from src.recommender import RecommenderConfig
from src.report_utils import config_hash
from src.teacher import TeacherConfig
from src.tokenizer import TokenizerConfig
from src.training import ABLATION_RUNGS, LAMBDA_CU_GRID, TAU_SCHEDULES, TrainingConfig, expand_grid
from src.utils import output_root

logger = logging.getLogger(__name__)

GRID_KEYS = ("backbone_lr", "tokenizer_lr", "lambda_cd_t", "lambda_cd_r")
SOURCES = ("file", "synthetic")


@dataclass
class DatasetSection:
    source: str = "synthetic"
    path: Optional[str] = None
    format: Optional[str] = None
    kcore: int = config.KCORE
    synth_users: int = config.SYNTH_USERS
    synth_items: int = config.SYNTH_CORPUS_ITEMS
    synth_clusters: int = config.SYNTH_CLUSTERS
    synth_min_len: int = config.SYNTH_MIN_LEN
    synth_max_len: int = config.SYNTH_MAX_LEN
    synth_stay_prob: float = config.SYNTH_STAY_PROB

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.source == "file" and not self.path:
            raise ValueError("path is required when source is 'file'")
        if self.kcore < 1:
            raise ValueError(f"kcore must be >= 1, got {self.kcore}")


@dataclass
class EmbeddingsSection:
    source: str = "synthetic"
    path: Optional[str] = None
    dim: int = config.SYNTH_DIM
    clusters: int = config.SYNTH_CLUSTERS
    noise: float = config.SYNTH_NOISE

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.source == "file" and not self.path:
            raise ValueError("path is required when source is 'file'")


@dataclass
class AnalysisSection:
    lambda_cu_grid: List[float] = field(default_factory=lambda: list(LAMBDA_CU_GRID))
    schedules: List[str] = field(default_factory=lambda: list(TAU_SCHEDULES))
    seeds: List[int] = field(default_factory=lambda: [config.SEED])

    def __post_init__(self):
        unknown = [s for s in self.schedules if s not in TAU_SCHEDULES]
        if unknown:
            raise ValueError(f"unknown schedules {unknown}; expected a subset of {TAU_SCHEDULES}")
        if not self.seeds:
            raise ValueError("seeds must not be empty")


@dataclass
class ExperimentConfig:
    run_name: str = "default"
    output_root: str = config.OUTPUT_ROOT
    seed: int = config.SEED
    device: Optional[str] = None
    ablation_rungs: List[str] = field(default_factory=lambda: list(ABLATION_RUNGS))
    dataset: DatasetSection = field(default_factory=DatasetSection)
    embeddings: EmbeddingsSection = field(default_factory=EmbeddingsSection)
    tokenizer: TokenizerConfig = field(default_factory=lambda: TokenizerConfig(input_dim=config.SYNTH_DIM))
    recommender: RecommenderConfig = field(default_factory=RecommenderConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    training_grid: Dict[str, List[Any]] = field(default_factory=dict)

    def __post_init__(self):
        unknown = [r for r in self.ablation_rungs if r not in ABLATION_RUNGS]
        if unknown:
            raise ValueError(f"unknown ablation rungs {unknown}")

    @property
    def run_dir(self) -> Path:
        return output_root(self.output_root) / self.run_name

    def training_runs(self) -> List[TrainingConfig]:
        """One TrainingConfig per combination of list-valued grid keys."""
        if not self.training_grid:
            return [self.training]
        return [dataclasses.replace(self.training, **combo) for combo in expand_grid(self.training_grid)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


SECTION_TYPES = {
    "dataset": DatasetSection,
    "embeddings": EmbeddingsSection,
    "tokenizer": TokenizerConfig,
    "recommender": RecommenderConfig,
    "teacher": TeacherConfig,
    "training": TrainingConfig,
    "analysis": AnalysisSection,
}


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration section '{prefix.rstrip('.') or '<root>'}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"Unknown configuration key '{prefix}{key}'")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration in '{prefix.rstrip('.') or '<root>'}': {e}") from e


def parse_experiment_config(data: dict, seed: Optional[int] = None) -> ExperimentConfig:
    """Validate a raw mapping into an ExperimentConfig; `seed` overrides the file's seed."""
    if not isinstance(data, dict):
        raise ConfigError("Experiment configuration must be a JSON object")
    known_top = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"training_grid"}
    for key in data:
        if key not in known_top:
            raise ConfigError(f"Unknown configuration key '{key}'")

    data = dict(data)
    sections = {}
    grid: Dict[str, List[Any]] = {}
    for name, cls in SECTION_TYPES.items():
        raw = data.pop(name, {})
        if name == "training" and isinstance(raw, dict):
            raw = dict(raw)
            for key in GRID_KEYS:
                if isinstance(raw.get(key), list):
                    if not raw[key]:
                        raise ConfigError(f"Grid key 'training.{key}' must list at least one value")
                    grid[key] = raw[key]
                    raw[key] = raw[key][0]
        if name == "tokenizer" and isinstance(raw, dict) and "input_dim" not in raw:
            raw = {**raw, "input_dim": sections["embeddings"].dim}
        sections[name] = _build(cls, raw, f"{name}.")

    if seed is not None:
        data["seed"] = seed
    try:
        experiment = ExperimentConfig(**data, **sections, training_grid=grid)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    # every grid combination must validate too
    experiment.training_runs()
    return experiment


def load_experiment_config(path: Union[str, Path], seed: Optional[int] = None) -> ExperimentConfig:
    """
    Read and validate an experiment file.

    Raises:
        FileNotFoundError: the file does not exist
        ConfigError: invalid JSON, unknown keys or invalid values
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    experiment = parse_experiment_config(data, seed)
    logger.info(f"Loaded experiment '{experiment.run_name}' from {path} (hash {experiment.hash()[:12]})")
    return experiment
