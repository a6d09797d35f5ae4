#!/usr/bin/env python3
"""
Run Statistics Module

This module provides the statistics reported around training runs, including:
- Basic statistical calculations (mean, sample standard deviation)
- Dataset statistics (#User, #Item, #Interaction, Sparsity, AvgLen)
- Comparison of dataset statistics against reference values
- Moving-average smoothing of loss curves
- Seed-level summaries of repeated runs

The module works with SequenceDataset objects and the row dictionaries
produced by the training and analysis functions.
"""

import math
from typing import Any, Dict, List, Sequence

import pandas as pd

from src.dataset import SequenceDataset

DATASET_COLUMNS = ("#User", "#Item", "#Interaction", "Sparsity", "AvgLen")


def calculate_mean(data: Sequence[float]) -> float:
    """
    Calculate the arithmetic mean of a list of numbers.

    Returns:
        float: The mean value or 0 if the list is empty
    """
    if not data:
        return 0.0
    return sum(data) / len(data)


def calculate_std(data: Sequence[float]) -> float:
    """Sample standard deviation; 0 for fewer than two values."""
    if len(data) < 2:
        return 0.0
    mean = calculate_mean(data)
    return math.sqrt(sum((x - mean) ** 2 for x in data) / (len(data) - 1))


def dataset_statistics(dataset: SequenceDataset) -> Dict[str, float]:
    """
    Summary statistics of a prepared dataset.

    Sparsity is 1 - interactions / (users * items); AvgLen is the mean
    sequence length.
    """
    users, items = dataset.num_users, dataset.num_items
    interactions = sum(len(seq) for seq in dataset.sequences)
    return {
        "#User": users,
        "#Item": items,
        "#Interaction": interactions,
        "Sparsity": 1.0 - interactions / (users * items) if users and items else 0.0,
        "AvgLen": interactions / users if users else 0.0,
    }


def compare_to_reference(
    stats: Dict[str, float],
    reference: Dict[str, float],
    tolerance: float = 0.02,
) -> Dict[str, Dict[str, Any]]:
    """
    Relative difference of each reference statistic.

    Returns:
        dict: per statistic {"value", "reference", "relative_diff", "within_tolerance"}
    """
    report = {}
    for key, expected in reference.items():
        if key not in stats:
            raise KeyError(f"Statistic '{key}' missing from computed stats")
        value = stats[key]
        diff = abs(value - expected) / abs(expected) if expected else abs(value)
        report[key] = {
            "value": value,
            "reference": expected,
            "relative_diff": diff,
            "within_tolerance": diff <= tolerance,
        }
    return report


def moving_average(values: Sequence[float], window: int = 3) -> List[float]:
    """Trailing moving average; the first entries average over what is available."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    smoothed = []
    for i in range(len(values)):
        chunk = values[max(0, i - window + 1):i + 1]
        smoothed.append(sum(chunk) / len(chunk))
    return smoothed


def is_non_increasing(values: Sequence[float], tolerance: float = 0.0) -> bool:
    return all(b <= a + tolerance for a, b in zip(values, values[1:]))


def summarize_seeds(
    rows: Sequence[Dict[str, Any]],
    group_keys: Sequence[str],
    value_keys: Sequence[str],
) -> List[Dict[str, Any]]:
    """
    Mean and sample std of each value column over seeds, per group.

    Output rows carry the group keys plus `<value>_mean`, `<value>_std` and
    `n_seeds`.
    """
    if not rows:
        return []
    frame = pd.DataFrame(list(rows))
    grouped = frame.groupby(list(group_keys), sort=True)
    summary = []
    for key, group in grouped:
        key = key if isinstance(key, tuple) else (key,)
        row: Dict[str, Any] = dict(zip(group_keys, key))
        for column in value_keys:
            values = group[column].astype(float).tolist()
            row[f"{column}_mean"] = calculate_mean(values)
            row[f"{column}_std"] = calculate_std(values)
        row["n_seeds"] = len(group)
        summary.append(row)
    return summary
