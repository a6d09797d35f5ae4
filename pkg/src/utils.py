import logging
import os
import random
import shutil
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from config import config

logger = logging.getLogger(__name__)


def backup_file(filepath: Union[str, Path], archive_dir: Union[str, Path] = "archives") -> str:
    """
    Copy a run artifact into the archive directory before it is overwritten.

    Args:
        filepath: Path to the file to back up
        archive_dir: Directory where backups are stored (created if missing)

    Returns:
        str: Full path to the created backup file

    Raises:
        FileNotFoundError: If the source file doesn't exist
    """
    source_path = Path(filepath).resolve()
    archive_path = Path(archive_dir).resolve()

    if not source_path.is_file():
        raise FileNotFoundError(f"Source file not found: {filepath}")

    archive_path.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    backup_path = archive_path / f"{source_path.name}.{timestamp}.bak"
    shutil.copy2(source_path, backup_path)
    logger.info(f"Backed up {source_path.name} to {backup_path}")
    return str(backup_path)


# utils.py - updated 19.10.2026

def set_seed(seed: int = config.SEED) -> torch.Generator:
    """
    Seed python, numpy and torch, and switch torch to deterministic kernels.

    Returns:
        torch.Generator: a CPU generator seeded with `seed` for data shuffling
    """
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    torch.use_deterministic_algorithms(True, warn_only=True)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def get_device(preferred: Optional[str] = None) -> torch.device:
    if preferred:
        return torch.device(preferred)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def output_root(default: Union[str, Path] = config.OUTPUT_ROOT) -> Path:
    """Run output root; the UNIGREC_OUT environment variable takes precedence."""
    return Path(os.environ.get(config.OUTPUT_ROOT_ENV) or default)
