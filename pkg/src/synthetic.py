#!/usr/bin/env python3
"""
Synthetic Corpus Generator

Generates a reproducible clustered interaction corpus plus matching semantic
embeddings for tests and desk-scale runs.

Usage:
    python -m src.synthetic [--users N] [--items N] [--seed N] [--output PATH]

Each user sticks to one item cluster and mostly walks a fixed chain inside
it, so items have strong sequential co-occurrence. Item i belongs to cluster
i % n_clusters, the same round-robin used by the embedding generator, so the
semantic clusters line up with the collaborative ones.

By default the corpus is written to tests/data/synthetic.csv.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd

from config import config
from src.dataset import RawInteraction, SequenceDataset
from src.embeddings import EmbeddingTable, cluster_labels, synth_embeddings

logger = logging.getLogger(__name__)

BASE_TIMESTAMP = 1_600_000_000
DEFAULT_OUTPUT = str(Path(config.FIXTURE_DIR) / "synthetic.csv")


def generate_interactions(
    n_users: int = config.SYNTH_USERS,
    n_items: int = config.SYNTH_CORPUS_ITEMS,
    n_clusters: int = config.SYNTH_CLUSTERS,
    min_len: int = config.SYNTH_MIN_LEN,
    max_len: int = config.SYNTH_MAX_LEN,
    stay_prob: float = config.SYNTH_STAY_PROB,
    seed: int = config.SEED,
) -> List[RawInteraction]:
    """
    Clustered sequential interactions, deterministic in `seed`.

    With probability `stay_prob` a user moves to the next item of their
    cluster's chain; otherwise to a random item of the same cluster.
    """
    if n_users < 1 or n_items < n_clusters or n_clusters < 1:
        raise ValueError(f"Need n_users >= 1 and n_items >= n_clusters >= 1, got {n_users}, {n_items}, {n_clusters}")
    if not 3 <= min_len <= max_len:
        raise ValueError(f"Need 3 <= min_len <= max_len, got {min_len}, {max_len}")

    rng = np.random.default_rng(seed)
    labels = cluster_labels(n_items, n_clusters)
    members = [np.flatnonzero(labels == c) for c in range(n_clusters)]

    records = []
    for user in range(n_users):
        chain = members[rng.integers(n_clusters)]
        length = int(rng.integers(min_len, max_len + 1))
        position = int(rng.integers(len(chain)))
        for step in range(length):
            records.append(
                RawInteraction(f"u{user}", f"i{chain[position]}", BASE_TIMESTAMP + user * 1000 + step * 10)
            )
            if rng.random() < stay_prob:
                position = (position + 1) % len(chain)
            else:
                position = int(rng.integers(len(chain)))

    logger.info(f"Generated {len(records)} interactions for {n_users} users over {n_items} items")
    return records


def write_interactions(records: List[RawInteraction], path: Union[str, Path]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "user": [r.user_id for r in records],
            "item": [r.item_id for r in records],
            "timestamp": [r.timestamp for r in records],
        }
    )
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(records)} interactions to {path}")
    return str(path)


def embeddings_for_dataset(
    dataset: SequenceDataset,
    n_items: int = config.SYNTH_CORPUS_ITEMS,
    dim: int = config.SYNTH_DIM,
    n_clusters: int = config.SYNTH_CLUSTERS,
    noise_scale: float = config.SYNTH_NOISE,
    seed: int = config.SEED,
) -> EmbeddingTable:
    """
    Synthetic semantic embeddings ordered by the dataset's dense item index.

    Raw ids must be the generator's `i<n>` form; rows of items removed by
    k-core filtering are dropped.
    """
    full = synth_embeddings(n_items, dim, n_clusters, noise_scale, seed)
    by_dense = sorted(dataset.item_index.items(), key=lambda pair: pair[1])
    rows = [int(raw_id[1:]) for raw_id, _ in by_dense]
    return EmbeddingTable(full.matrix[rows])


def parse_arguments():
    parser = argparse.ArgumentParser(description="Generate a synthetic interaction corpus")
    parser.add_argument("--users", type=int, default=config.SYNTH_USERS, help="Number of users")
    parser.add_argument("--items", type=int, default=config.SYNTH_CORPUS_ITEMS, help="Number of items")
    parser.add_argument("--seed", type=int, default=config.SEED, help="Random seed")
    parser.add_argument("--output", default=DEFAULT_OUTPUT, help="Output CSV path")
    return parser.parse_args()


def main():
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    args = parse_arguments()
    try:
        records = generate_interactions(n_users=args.users, n_items=args.items, seed=args.seed)
        write_interactions(records, args.output)
    except (ValueError, OSError) as e:
        logger.error(f"Synthetic generation failed: {e}")
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
