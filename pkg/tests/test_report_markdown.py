"""
Tests for the report_markdown module which renders run results as markdown tables.

IMPORTANT: Use pytest-mock for all mocking needs, NOT unittest.mock!

"""

import json
import sys

import pytest

from src.report_markdown import (
    METRIC_COLUMNS,
    ablation_table,
    create_table,
    dataset_table,
    format_metric,
    main,
    process_report,
)


@pytest.fixture
def ablation_results():
    return {
        "M0": {"Recall@5": 0.1, "Recall@10": 0.2, "NDCG@5": 0.05, "NDCG@10": 0.08},
        "M2": {"Recall@5": 0.15, "Recall@10": 0.25, "NDCG@5": 0.07, "NDCG@10": 0.1},
    }


class TestFormatMetric:
    def test_float(self):
        assert format_metric(0.123456) == "0.1235"
        assert format_metric(0.5, digits=2) == "0.50"

    def test_int_gets_thousands_separator(self):
        assert format_metric(22363) == "22,363"

    def test_other(self):
        assert format_metric("M1") == "M1"


def test_create_table():
    table = create_table(["A", "B"], [["x", 1.0]])
    assert table.splitlines() == ["| A | B |", "| --- | --- |", "| x | 1.0000 |"]


class TestAblationTable:
    def test_rows_in_given_order(self, ablation_results):
        lines = ablation_table(ablation_results).splitlines()
        assert lines[0] == "| Variant | " + " | ".join(METRIC_COLUMNS) + " |"
        assert lines[2].startswith("| M0 | 0.1000 | 0.2000")
        assert lines[3].startswith("| M2 |")

    def test_missing_column(self):
        with pytest.raises(KeyError):
            ablation_table({"M0": {"Recall@5": 0.1}})


def test_dataset_table():
    table = dataset_table({"synthetic": {"#User": 200, "#Item": 100, "#Interaction": 2400,
                                         "Sparsity": 0.88, "AvgLen": 12.0}})
    assert "| synthetic | 200 | 100 | 2,400 | 0.8800 | 12.0000 |" in table


class TestProcessReport:
    def test_sections(self, ablation_results):
        report = {
            "run_name": "tiny",
            "dataset": {"tiny": {"#User": 3, "#Item": 4, "#Interaction": 12, "Sparsity": 0.0, "AvgLen": 4.0}},
            "ablation": ablation_results,
            "analysis": {"layer_change_rate": [0.1, 0.2], "usage_entropy": [1.0, 2.0]},
        }
        markdown = process_report(report)
        assert markdown.startswith("# Run Report: tiny")
        for heading in ("## Dataset", "## Ablation", "## Identifier Evolution", "## Codeword Usage Entropy"):
            assert heading in markdown
        assert "| 1.0000 | 2.0000 | 1.5000 |" in markdown

    def test_skips_absent_sections(self):
        markdown = process_report({})
        assert "unnamed" in markdown
        assert "## Ablation" not in markdown


class TestMain:
    def test_writes_markdown(self, tmp_path, monkeypatch, ablation_results):
        source = tmp_path / "ablation.json"
        source.write_text(json.dumps({"ablation": ablation_results}), encoding="utf-8")
        target = tmp_path / "out.md"
        monkeypatch.setattr(sys, "argv", ["report_markdown", str(source), str(target)])
        main()
        assert "## Ablation" in target.read_text(encoding="utf-8")

    def test_missing_input_exits(self, tmp_path, monkeypatch):
        monkeypatch.setattr(sys, "argv", ["report_markdown", str(tmp_path / "missing.json")])
        with pytest.raises(SystemExit) as exc_info:
            main()
        assert exc_info.value.code == 1

    def test_invalid_json_exits(self, tmp_path, monkeypatch):
        source = tmp_path / "bad.json"
        source.write_text("{", encoding="utf-8")
        monkeypatch.setattr(sys, "argv", ["report_markdown", str(source), str(tmp_path / "o.md")])
        with pytest.raises(SystemExit) as exc_info:
            main()
        assert exc_info.value.code == 2
