"""
IMPORTANT: Use pytest-mock for all mocking needs, NOT unittest.mock!
"""
import os
import random

import numpy as np
import pytest
import torch

from src.utils import backup_file, get_device, output_root, set_seed


@pytest.fixture
def test_file(tmp_path):
    file_path = tmp_path / "metrics.jsonl"
    file_path.write_text('{"epoch": 1}\n')
    return str(file_path)


class TestBackupFile:
    def test_backup_with_default_archive(self, test_file, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        result = backup_file(test_file)

        assert os.path.exists(result)
        assert result.startswith(str(tmp_path / "archives"))
        assert result.endswith(".bak")

    def test_backup_with_custom_archive(self, test_file, tmp_path):
        custom_archive = tmp_path / "custom_archive"
        result = backup_file(test_file, str(custom_archive))

        assert os.path.exists(result)
        assert str(custom_archive) in result
        assert os.path.basename(result).startswith("metrics.jsonl.")

    def test_backup_keeps_content(self, test_file, tmp_path):
        result = backup_file(test_file, tmp_path / "archives")
        with open(result, encoding="utf-8") as f:
            assert f.read() == '{"epoch": 1}\n'

    def test_missing_source_file(self, tmp_path):
        non_existent = tmp_path / "nonexistent.txt"
        with pytest.raises(FileNotFoundError) as exc_info:
            backup_file(str(non_existent))
        assert "Source file not found" in str(exc_info.value)

    def test_creates_archive_dir(self, test_file, tmp_path):
        archive_dir = tmp_path / "new_archive"
        assert not archive_dir.exists()

        result = backup_file(test_file, str(archive_dir))

        assert archive_dir.exists()
        assert os.path.exists(result)


class TestSetSeed:
    def test_seeds_every_generator(self):
        set_seed(7)
        first = (random.random(), np.random.rand(), torch.rand(1).item())
        set_seed(7)
        second = (random.random(), np.random.rand(), torch.rand(1).item())
        assert first == second

    def test_returns_seeded_generator(self):
        a = torch.randperm(10, generator=set_seed(3))
        b = torch.randperm(10, generator=set_seed(3))
        assert torch.equal(a, b)


def test_get_device_prefers_explicit_choice():
    assert get_device("cpu") == torch.device("cpu")


def test_get_device_falls_back_to_cpu(mocker):
    mocker.patch("src.utils.torch.cuda.is_available", return_value=False)
    assert get_device() == torch.device("cpu")


class TestOutputRoot:
    def test_environment_wins(self, monkeypatch, tmp_path):
        monkeypatch.setenv("UNIGREC_OUT", str(tmp_path))
        assert output_root("runs") == tmp_path

    def test_default_without_environment(self, monkeypatch):
        monkeypatch.delenv("UNIGREC_OUT", raising=False)
        assert str(output_root("runs")) == "runs"
