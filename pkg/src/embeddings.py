#!/usr/bin/env python3
"""
Semantic Embedding Tables

Per-item semantic embeddings consumed by the tokenizer, and the frozen
collaborative embeddings exported by the teacher, share this format.

Binary layout: little-endian header of two uint64 (items, dim) followed by
row-major float32 values. A header-less CSV with one row per item is also
accepted for tiny tables.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from src.errors import DataError, ShapeError

logger = logging.getLogger(__name__)

HEADER_DTYPE = np.dtype("<u8")
VALUE_DTYPE = np.dtype("<f4")


@dataclass
class EmbeddingTable:
    """Row i is the embedding of dense item i."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2:
            raise ShapeError(f"Embedding matrix must be 2-D, got shape {self.matrix.shape}")
        bad_rows = np.flatnonzero(~np.isfinite(self.matrix).all(axis=1))
        if bad_rows.size:
            raise DataError(f"Non-finite value in embedding row {bad_rows[0]}", row=int(bad_rows[0]))

    @property
    def num_items(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def table_checksum(table: EmbeddingTable) -> str:
    return hashlib.sha256(table.matrix.astype(VALUE_DTYPE).tobytes()).hexdigest()


def save_embeddings(table: EmbeddingTable, path: Union[str, Path]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".csv":
        pd.DataFrame(table.matrix).to_csv(path, header=False, index=False, float_format="%.9g")
    else:
        with open(path, "wb") as f:
            f.write(np.array([table.num_items, table.dim], dtype=HEADER_DTYPE).tobytes())
            f.write(table.matrix.astype(VALUE_DTYPE).tobytes(order="C"))
    logger.info(f"Saved {table.num_items}x{table.dim} embeddings to {path}")
    return str(path)


def load_embeddings(path: Union[str, Path], expected_items: int) -> EmbeddingTable:
    """
    Load an embedding table and check it covers exactly `expected_items` rows.

    Raises:
        ShapeError: row count differs from expected_items, or the binary
            payload does not match its header
        DataError: a row holds NaN or Inf; the message names the row
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Embedding file not found: {path}")

    if path.suffix.lower() == ".csv":
        matrix = pd.read_csv(path, header=None, dtype=np.float64).to_numpy()
    else:
        raw = path.read_bytes()
        if len(raw) < 2 * HEADER_DTYPE.itemsize:
            raise ShapeError(f"Embedding file too short for its header: {path}")
        n_items, dim = (int(v) for v in np.frombuffer(raw[:16], dtype=HEADER_DTYPE))
        values = np.frombuffer(raw[16:], dtype=VALUE_DTYPE)
        if values.size != n_items * dim:
            raise ShapeError(
                f"Header declares {n_items}x{dim} values but payload holds {values.size}: {path}"
            )
        matrix = values.reshape(n_items, dim)

    if matrix.shape[0] != expected_items:
        raise ShapeError(f"Expected {expected_items} embedding rows, found {matrix.shape[0]} in {path}")
    table = EmbeddingTable(matrix)
    logger.info(f"Loaded {table.num_items}x{table.dim} embeddings from {path}")
    return table


def cluster_labels(n_items: int, n_clusters: int) -> np.ndarray:
    return np.arange(n_items) % n_clusters


def synth_embeddings(
    n_items: int,
    dim: int,
    n_clusters: int,
    noise_scale: float,
    seed: int,
) -> EmbeddingTable:
    """
    Clustered synthetic embeddings.

    Draws `n_clusters` standard-normal centers, assigns items round-robin
    (item i belongs to cluster i % n_clusters) and adds isotropic Gaussian
    noise of scale `noise_scale`. Deterministic in `seed`.
    """
    if n_items < 1 or dim < 1 or n_clusters < 1:
        raise ValueError(f"n_items, dim and n_clusters must be positive, got {n_items}, {dim}, {n_clusters}")
    if n_clusters > n_items:
        raise ValueError(f"n_clusters ({n_clusters}) cannot exceed n_items ({n_items})")
    if noise_scale < 0:
        raise ValueError(f"noise_scale must be >= 0, got {noise_scale}")

    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_clusters, dim))
    noise = rng.standard_normal((n_items, dim))
    matrix = centers[cluster_labels(n_items, n_clusters)] + noise_scale * noise
    return EmbeddingTable(matrix.astype(np.float32))
