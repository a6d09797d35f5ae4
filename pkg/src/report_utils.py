#!/usr/bin/env python3
"""
Report Utilities Module

This module provides utilities for run artifacts and JSON serialization.
It includes:
- Serializing numpy, torch, dataclass and Counter values to JSON-compatible form
- JSON and JSON-lines writers/readers for metrics and dumps
- Content hashing of files and configurations
- The per-run manifest that makes re-running a command a no-op
"""

import dataclasses
import datetime
import hashlib
import json
import logging
import os
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def make_json_serializable(obj):
    """
    Converts Python objects to JSON-serializable format.

    Handles special types like:
    - Counter and defaultdict objects
    - dataclasses and Path objects
    - numpy scalars/arrays and torch tensors
    - datetime objects
    - nested dictionaries, lists and tuples

    Args:
        obj: The object to convert

    Returns:
        object: JSON-serializable version of the object
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return make_json_serializable(dataclasses.asdict(obj))

    elif isinstance(obj, dict):
        if isinstance(obj, (defaultdict, Counter)):
            obj = dict(obj)
        return {str(k) if not isinstance(k, (str, int, float, bool)) else k: make_json_serializable(v)
                for k, v in obj.items()}

    elif isinstance(obj, (list, tuple)):
        return [make_json_serializable(item) for item in obj]

    elif isinstance(obj, torch.Tensor):
        return obj.detach().cpu().tolist()

    elif isinstance(obj, np.ndarray):
        return obj.tolist()

    elif isinstance(obj, np.generic):
        return obj.item()

    elif isinstance(obj, Path):
        return str(obj)

    elif isinstance(obj, datetime.datetime):
        return obj.isoformat()

    else:
        return obj


def save_report_to_file(report_data, output_path) -> bool:
    """
    Saves a JSON report to a file.

    Args:
        report_data (dict): The report data to save
        output_path (str): Path to save the JSON report

    Returns:
        bool: True if the save was successful, False otherwise
    """
    try:
        os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)
        with open(output_path, 'w', encoding='utf-8') as f:
            json.dump(make_json_serializable(report_data), f, indent=2, ensure_ascii=False)
        logger.info(f"Report saved to {output_path}")
        return True
    except (OSError, TypeError) as e:
        logger.error(f"Error saving report to {output_path}: {str(e)}")
        return False


def load_report_from_file(input_path):
    """
    Loads a report from a JSON file.

    Returns:
        dict: The loaded report data, or None if loading failed
    """
    try:
        with open(input_path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Error loading report from {input_path}: {str(e)}")
        return None


def append_jsonl(record: dict, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'a', encoding='utf-8') as f:
        f.write(json.dumps(make_json_serializable(record), sort_keys=True) + "\n")


def read_jsonl(path: Union[str, Path]) -> List[dict]:
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def config_hash(config_data) -> str:
    """sha256 over canonical (sorted-key, compact) JSON."""
    canonical = json.dumps(make_json_serializable(config_data), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def content_hash(path: Union[str, Path]) -> str:
    """
    Git-style blob hash of a file: sha1 over "blob <size>\\0" + content.
    Directories hash the sorted (relative path, blob hash) pairs of their files.
    """
    path = Path(path)
    if path.is_dir():
        digest = hashlib.sha1()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(f"{child.relative_to(path)}:{content_hash(child)}\n".encode("utf-8"))
        return digest.hexdigest()
    data = path.read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def load_manifest(run_dir: Union[str, Path]) -> Dict[str, dict]:
    manifest_path = Path(run_dir) / MANIFEST_NAME
    if not manifest_path.is_file():
        return {}
    return load_report_from_file(manifest_path) or {}


def manifest_entry(
    command: str,
    cfg_hash: str,
    inputs: Sequence[Union[str, Path]],
    outputs: Sequence[Union[str, Path]],
) -> dict:
    return {
        "command": command,
        "config_hash": cfg_hash,
        "inputs": {str(p): content_hash(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "completed_at": datetime.datetime.now().isoformat(),
    }


def is_up_to_date(
    run_dir: Union[str, Path],
    command: str,
    cfg_hash: str,
    inputs: Sequence[Union[str, Path]],
) -> bool:
    """True if the manifest holds a matching entry whose inputs are unchanged and outputs still exist."""
    entry = load_manifest(run_dir).get(command)
    if not entry or entry.get("config_hash") != cfg_hash:
        return False
    current_inputs = {str(p): content_hash(p) for p in inputs}
    if entry.get("inputs") != current_inputs:
        return False
    return all(Path(p).exists() for p in entry.get("outputs", []))


def record_manifest(run_dir: Union[str, Path], entry: dict) -> bool:
    manifest = load_manifest(run_dir)
    manifest[entry["command"]] = entry
    return save_report_to_file(manifest, Path(run_dir) / MANIFEST_NAME)


def create_run_summary(command: str, summary: Optional[dict] = None) -> str:
    """
    Creates a short text summary of a command's results for the terminal.

    Args:
        command (str): The command that ran
        summary (dict): Flat mapping of result names to values

    Returns:
        str: A text summary
    """
    lines = [f"=== unigrec {command} ==="]
    for key, value in (summary or {}).items():
        if isinstance(value, float):
            lines.append(f"- {key}: {value:.4f}")
        else:
            lines.append(f"- {key}: {value}")
    return "\n".join(lines)
