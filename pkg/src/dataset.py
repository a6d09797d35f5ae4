#!/usr/bin/env python3
"""
Interaction Dataset Module

Turns raw time-stamped user-item interactions into leave-one-out sequence
datasets:
- CSV / JSON-lines ingestion with exact-duplicate removal
- Iterative k-core filtering
- Dense reindexing and leave-one-out splits
- Fixed-length truncation with left padding
- JSON persistence with explicit index maps

Everything here is a pure function over its inputs.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from config import config
from src.errors import DataParseError, EmptyDatasetError, SplitError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("user", "item", "timestamp")


@dataclass(frozen=True)
class RawInteraction:
    user_id: str
    item_id: str
    timestamp: int


@dataclass
class SequenceDataset:
    """
    Users' chronologically ordered item sequences plus their dense index maps.

    `sequences[u]` is the full ordered list of dense item ids for user u.
    The leave-one-out splits are derived from it: the last item is the test
    target, the second-to-last the validation target, the rest is train.
    """

    user_index: Dict[str, int]
    item_index: Dict[str, int]
    sequences: List[List[int]]
    interaction_count: int = field(default=0)

    @property
    def num_users(self) -> int:
        return len(self.user_index)

    @property
    def num_items(self) -> int:
        return len(self.item_index)

    def train_sequence(self, user: int) -> List[int]:
        return self.sequences[user][:-2]

    def valid_example(self, user: int) -> Tuple[List[int], int]:
        seq = self.sequences[user]
        return seq[:-2], seq[-2]

    def test_example(self, user: int) -> Tuple[List[int], int]:
        seq = self.sequences[user]
        return seq[:-1], seq[-1]

    @property
    def splits(self) -> Dict[str, list]:
        return {
            "train": [self.train_sequence(u) for u in range(self.num_users)],
            "valid": [self.valid_example(u) for u in range(self.num_users)],
            "test": [self.test_example(u) for u in range(self.num_users)],
        }


def _detect_format(path: Path) -> str:
    if path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        return "json-lines"
    return "csv"


def _to_interaction(row: dict, line: int) -> RawInteraction:
    for column in REQUIRED_COLUMNS:
        value = row.get(column)
        if value is None or pd.isna(value) or (isinstance(value, str) and value.strip() == ""):
            raise DataParseError(f"missing required field '{column}'", line=line)
    try:
        timestamp = int(str(row["timestamp"]).strip())
    except ValueError:
        raise DataParseError(f"timestamp is not an integer: {row['timestamp']!r}", line=line)
    return RawInteraction(str(row["user"]).strip(), str(row["item"]).strip(), timestamp)


def load_interactions(path: Union[str, Path], format: Optional[str] = None) -> List[RawInteraction]:
    """
    Read interactions from a CSV (`user,item,timestamp`) or JSON-lines file.

    Records are returned in file order with exact duplicate triples removed
    (first occurrence kept).

    Raises:
        DataParseError: a row is malformed; the message names its line number
        EmptyDatasetError: the file holds no interactions
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Interaction file not found: {path}")
    fmt = format or _detect_format(path)

    records: List[RawInteraction] = []
    if fmt == "csv":
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
        except pd.errors.EmptyDataError:
            raise EmptyDatasetError(f"Interaction file is empty: {path}")
        except pd.errors.ParserError as e:
            # pandas already names the offending line
            raise DataParseError(str(e))
        missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
        if missing:
            raise DataParseError(f"missing required columns {missing}", line=1)
        for position, row in enumerate(frame.to_dict(orient="records")):
            # header is line 1
            records.append(_to_interaction(row, line=position + 2))
    elif fmt == "json-lines":
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataParseError(f"invalid JSON: {e.msg}", line=line_no)
                if not isinstance(row, dict):
                    raise DataParseError("expected a JSON object", line=line_no)
                records.append(_to_interaction(row, line=line_no))
    else:
        raise ValueError(f"Unsupported interaction format: {fmt}")

    if not records:
        raise EmptyDatasetError(f"Interaction file holds no records: {path}")

    deduplicated = list(dict.fromkeys(records))
    dropped = len(records) - len(deduplicated)
    if dropped:
        logger.info(f"Removed {dropped} exact duplicate interactions from {path}")
    logger.info(f"Loaded {len(deduplicated)} interactions from {path}")
    return deduplicated


def apply_kcore(records: Iterable[RawInteraction], k: int = config.KCORE) -> List[RawInteraction]:
    """
    Iteratively drop users and items with fewer than k interactions.

    The result is the maximal subset in which every surviving user and item
    has at least k interactions; surviving records keep their input order.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    current = list(records)
    rounds = 0
    while True:
        user_counts = Counter(r.user_id for r in current)
        item_counts = Counter(r.item_id for r in current)
        kept = [
            r for r in current
            if user_counts[r.user_id] >= k and item_counts[r.item_id] >= k
        ]
        rounds += 1
        if len(kept) == len(current):
            break
        current = kept

    if not current:
        raise EmptyDatasetError(f"{k}-core filtering removed every interaction")
    logger.info(f"{k}-core reached a fixed point after {rounds} rounds: {len(current)} interactions")
    return current


def build_sequences(
    records: Iterable[RawInteraction],
    min_interactions: int = config.MIN_USER_INTERACTIONS,
) -> SequenceDataset:
    """
    Build per-user chronological sequences with dense ids.

    Users and items get dense ids in first-appearance order. Sorting by
    timestamp is stable, so equal timestamps keep input order.

    Raises:
        SplitError: a user has fewer than `min_interactions` interactions
    """
    records = list(records)
    if not records:
        raise EmptyDatasetError("Cannot build sequences from zero interactions")

    user_index: Dict[str, int] = {}
    item_index: Dict[str, int] = {}
    per_user: Dict[int, List[Tuple[int, int]]] = {}
    for record in records:
        uid = user_index.setdefault(record.user_id, len(user_index))
        iid = item_index.setdefault(record.item_id, len(item_index))
        per_user.setdefault(uid, []).append((record.timestamp, iid))

    reverse_users = {v: k for k, v in user_index.items()}
    sequences: List[List[int]] = []
    for uid in range(len(user_index)):
        events = sorted(per_user[uid], key=lambda event: event[0])
        if len(events) < min_interactions:
            user = reverse_users[uid]
            raise SplitError(
                f"User {user} has {len(events)} interactions; at least {min_interactions} are needed "
                f"for train/valid/test splits",
                user=user,
            )
        sequences.append([iid for _, iid in events])

    dataset = SequenceDataset(user_index, item_index, sequences, interaction_count=len(records))
    logger.info(
        f"Built {dataset.num_users} user sequences over {dataset.num_items} items "
        f"({dataset.interaction_count} interactions)"
    )
    return dataset


def truncate_pad(
    sequence: List[int],
    max_len: int = config.MAX_SEQ_LEN,
    pad_index: int = config.PAD_ITEM,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Keep the most recent `max_len` items and left-pad shorter sequences.

    Returns:
        (items, mask): int64 array of length max_len and a boolean mask that
        is True on real positions
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    recent = list(sequence)[-max_len:]
    n_pad = max_len - len(recent)
    items = np.array([pad_index] * n_pad + recent, dtype=np.int64)
    mask = np.zeros(max_len, dtype=bool)
    mask[n_pad:] = True
    return items, mask


def training_examples(dataset: SequenceDataset) -> List[Tuple[int, List[int], int]]:
    """Every next-item prefix of each user's train sequence as (user, history, target)."""
    examples = []
    for user in range(dataset.num_users):
        train = dataset.train_sequence(user)
        for t in range(1, len(train)):
            examples.append((user, train[:t], train[t]))
    return examples


def split_examples(dataset: SequenceDataset, split: str) -> List[Tuple[int, List[int], int]]:
    """The single leave-one-out example per user for 'valid' or 'test'."""
    if split == "valid":
        getter = dataset.valid_example
    elif split == "test":
        getter = dataset.test_example
    else:
        raise ValueError(f"Unknown split: {split}")
    return [(user, *getter(user)) for user in range(dataset.num_users)]


def save_dataset(dataset: SequenceDataset, path: Union[str, Path]) -> str:
    """Persist sequences, splits and both index maps as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "user_index": dataset.user_index,
        "item_index": dataset.item_index,
        "interaction_count": dataset.interaction_count,
        "sequences": dataset.sequences,
        "splits": {
            "valid_targets": [dataset.valid_example(u)[1] for u in range(dataset.num_users)],
            "test_targets": [dataset.test_example(u)[1] for u in range(dataset.num_users)],
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False)
    logger.info(f"Dataset saved to {path}")
    return str(path)


def load_dataset(path: Union[str, Path]) -> SequenceDataset:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    return SequenceDataset(
        user_index=payload["user_index"],
        item_index=payload["item_index"],
        sequences=payload["sequences"],
        interaction_count=payload.get("interaction_count", sum(len(s) for s in payload["sequences"])),
    )


def prepare_dataset(
    path: Union[str, Path],
    format: Optional[str] = None,
    k: int = config.KCORE,
) -> SequenceDataset:
    """load_interactions -> apply_kcore -> build_sequences."""
    return build_sequences(apply_kcore(load_interactions(path, format), k))
