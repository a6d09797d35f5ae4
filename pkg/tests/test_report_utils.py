#!/usr/bin/env python3
"""
Tests for the report utilities module.

These tests verify the functionality of the report_utils.py module, including:
- JSON serialization of numpy, torch and dataclass values
- Report and JSON-lines file handling
- Content and configuration hashing
- The run manifest and the terminal run summary

IMPORTANT: Use pytest-mock for all mocking needs, NOT unittest.mock!

"""

import datetime
import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from src.report_utils import (
    append_jsonl,
    config_hash,
    content_hash,
    create_run_summary,
    is_up_to_date,
    load_manifest,
    load_report_from_file,
    make_json_serializable,
    manifest_entry,
    read_jsonl,
    record_manifest,
    save_report_to_file,
)


@dataclass
class _Point:
    x: int
    y: float


class TestMakeJsonSerializable:
    def test_counter_and_defaultdict(self):
        data = {"counts": Counter({"a": 2}), "groups": defaultdict(list, {"b": [1]})}
        assert make_json_serializable(data) == {"counts": {"a": 2}, "groups": {"b": [1]}}

    def test_numpy_and_torch(self):
        data = {"array": np.arange(3), "scalar": np.float32(0.5), "tensor": torch.tensor([[1.0, 2.0]])}
        assert make_json_serializable(data) == {"array": [0, 1, 2], "scalar": 0.5, "tensor": [[1.0, 2.0]]}

    def test_dataclass_path_and_datetime(self):
        moment = datetime.datetime(2024, 1, 2, 3, 4, 5)
        result = make_json_serializable([_Point(1, 2.0), Path("runs/x"), moment])
        assert result == [{"x": 1, "y": 2.0}, "runs/x", "2024-01-02T03:04:05"]

    def test_tuple_keys_become_strings(self):
        assert make_json_serializable({(0, 2): 0.5}) == {"(0, 2)": 0.5}

    def test_result_is_json_dumpable(self):
        json.dumps(make_json_serializable({"a": np.int64(3), "b": (1, 2)}))


class TestReportFiles:
    def test_save_and_load(self, tmp_path):
        path = tmp_path / "nested" / "stats.json"
        assert save_report_to_file({"#User": 3, "AvgLen": np.float64(4.5)}, str(path))
        assert load_report_from_file(path) == {"#User": 3, "AvgLen": 4.5}

    def test_save_failure_returns_false(self, tmp_path, mocker):
        mocker.patch("builtins.open", side_effect=OSError("disk full"))
        assert save_report_to_file({"a": 1}, str(tmp_path / "x.json")) is False

    def test_load_missing_returns_none(self, tmp_path):
        assert load_report_from_file(tmp_path / "missing.json") is None

    def test_load_invalid_json_returns_none(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        assert load_report_from_file(path) is None

    def test_jsonl_append_and_read(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        append_jsonl({"epoch": 1, "Recall@10": np.float32(0.25)}, path)
        append_jsonl({"epoch": 2, "Recall@10": 0.5}, path)
        assert read_jsonl(path) == [{"Recall@10": 0.25, "epoch": 1}, {"Recall@10": 0.5, "epoch": 2}]


class TestHashing:
    def test_config_hash_ignores_key_order(self):
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_content_hash_matches_git_blob(self, tmp_path):
        path = tmp_path / "hello.txt"
        path.write_bytes(b"hello\n")
        assert content_hash(path) == "ce013625030ba8dba906f756967f9e9ca394464a"

    def test_directory_hash_tracks_files(self, tmp_path):
        (tmp_path / "d").mkdir()
        (tmp_path / "d" / "a.txt").write_text("1")
        before = content_hash(tmp_path / "d")
        (tmp_path / "d" / "a.txt").write_text("2")
        assert content_hash(tmp_path / "d") != before


class TestManifest:
    def test_up_to_date_after_record(self, tmp_path):
        source = tmp_path / "dataset.json"
        source.write_text("{}")
        output = tmp_path / "out.bin"
        output.write_bytes(b"x")
        record_manifest(tmp_path, manifest_entry("pretrain", "h1", [source], [output]))

        assert set(load_manifest(tmp_path)) == {"pretrain"}
        assert is_up_to_date(tmp_path, "pretrain", "h1", [source])
        assert not is_up_to_date(tmp_path, "pretrain", "h2", [source])
        assert not is_up_to_date(tmp_path, "joint", "h1", [source])

    def test_changed_input_invalidates(self, tmp_path):
        source = tmp_path / "dataset.json"
        source.write_text("{}")
        record_manifest(tmp_path, manifest_entry("pretrain", "h1", [source], []))
        source.write_text('{"changed": true}')
        assert not is_up_to_date(tmp_path, "pretrain", "h1", [source])

    def test_missing_output_invalidates(self, tmp_path):
        output = tmp_path / "out.bin"
        output.write_bytes(b"x")
        record_manifest(tmp_path, manifest_entry("eval", "h1", [], [output]))
        output.unlink()
        assert not is_up_to_date(tmp_path, "eval", "h1", [])

    def test_empty_run_dir(self, tmp_path):
        assert load_manifest(tmp_path) == {}


def test_create_run_summary():
    text = create_run_summary("eval", {"Recall@10": 0.123456, "users": 7})
    assert text.splitlines() == ["=== unigrec eval ===", "- Recall@10: 0.1235", "- users: 7"]
