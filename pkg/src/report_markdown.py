#!/usr/bin/env python3
"""
report_markdown.py
Render run results (dataset statistics, ablation metrics, identifier
analysis) as markdown tables.

Usage:
    python -m src.report_markdown run_dir/ablation.json [output.md]
"""

import argparse
import json
import os
import sys
from datetime import datetime
from typing import Any, Dict, List, Mapping, Sequence

METRIC_COLUMNS = ["Recall@5", "Recall@10", "NDCG@5", "NDCG@10"]


def format_metric(value: Any, digits: int = 4) -> str:
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    if isinstance(value, int):
        return f"{value:,}"
    return str(value)


def create_table(headers: List[str], rows: List[List[Any]]) -> str:
    """Create a markdown table with given headers and rows."""
    table = "| " + " | ".join(headers) + " |\n"
    table += "| " + " | ".join(["---" for _ in headers]) + " |\n"
    for row in rows:
        table += "| " + " | ".join([format_metric(cell) for cell in row]) + " |\n"
    return table


def ablation_table(results: Mapping[str, Mapping[str, float]], columns: Sequence[str] = METRIC_COLUMNS) -> str:
    """One row per variant, in the order given, with the metric columns."""
    rows = []
    for variant, metrics in results.items():
        missing = [c for c in columns if c not in metrics]
        if missing:
            raise KeyError(f"Variant {variant} lacks columns {missing}")
        rows.append([variant] + [metrics[c] for c in columns])
    return create_table(["Variant"] + list(columns), rows)


def dataset_table(stats: Mapping[str, Mapping[str, float]]) -> str:
    """Dataset statistics, one row per dataset name."""
    columns = ["#User", "#Item", "#Interaction", "Sparsity", "AvgLen"]
    rows = [[name] + [values[c] for c in columns] for name, values in stats.items()]
    return create_table(["Dataset"] + columns, rows)


def process_report(report_data: Dict[str, Any]) -> str:
    """Convert a run report ({"dataset", "ablation", "analysis"}) to markdown."""
    markdown = f"# Run Report: {report_data.get('run_name', 'unnamed')}\n\n"
    markdown += f"*Generated on: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}*\n\n"

    if report_data.get("dataset"):
        markdown += "## Dataset\n\n" + dataset_table(report_data["dataset"]) + "\n"
    if report_data.get("ablation"):
        markdown += "## Ablation\n\n" + ablation_table(report_data["ablation"]) + "\n"
    analysis = report_data.get("analysis") or {}
    if analysis.get("layer_change_rate"):
        rates = analysis["layer_change_rate"]
        markdown += "## Identifier Evolution\n\n"
        markdown += create_table([f"Level {i}" for i in range(len(rates))], [rates]) + "\n"
    if analysis.get("usage_entropy"):
        entropy = analysis["usage_entropy"]
        markdown += "## Codeword Usage Entropy\n\n"
        markdown += create_table([f"Level {i}" for i in range(len(entropy))] + ["Mean"],
                                 [entropy + [sum(entropy) / len(entropy)]]) + "\n"
    return markdown


def main():
    parser = argparse.ArgumentParser(description='Convert a run report JSON to Markdown.')
    parser.add_argument('input_file', help='Path to the JSON report file')
    parser.add_argument('output_file', nargs='?', help='Path to save the markdown output (default: report.md)')
    args = parser.parse_args()
    output_file = args.output_file or 'report.md'

    if not os.path.isfile(args.input_file):
        print(f"Error: Input file '{args.input_file}' not found.", file=sys.stderr)
        sys.exit(1)
    try:
        with open(args.input_file, 'r', encoding='utf-8') as f:
            report_data = json.load(f)
        if not isinstance(report_data, dict):
            raise ValueError("Invalid report format: expected a JSON object")
        with open(output_file, 'w', encoding='utf-8') as f:
            f.write(process_report(report_data))
        print(f"Markdown report successfully written to '{output_file}'")
    except json.JSONDecodeError:
        print(f"Error: The file '{args.input_file}' is not a valid JSON file.", file=sys.stderr)
        sys.exit(2)
    except KeyError as e:
        print(f"Error: Missing required key in JSON data: {str(e)}", file=sys.stderr)
        sys.exit(4)
    except ValueError as e:
        print(f"Error: {str(e)}", file=sys.stderr)
        sys.exit(5)


if __name__ == '__main__':
    main()
