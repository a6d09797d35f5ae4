#!/usr/bin/env python3
"""
Command Line Interface Module

Single entry point for the pipeline. Each subcommand reads the artifacts
its predecessors wrote under the run directory and writes its own:

    prepare        dataset.json, semantic.bin, dataset_stats.json
    train-teacher  teacher.pt, teacher_embeddings.bin
    pretrain       stage1/tokenizer.pt, identifiers-stage1.jsonl
    joint          stage2/{tokenizer.pt,recommender.pt,identifiers.jsonl}, identifiers-stage2.jsonl
    eval           test metrics appended to metrics.jsonl, ranked.jsonl
    analyze        analysis/*.csv, analysis/analysis.md (and analysis/figures/*.png with --render)
    ablate         ablation.{csv,json,md}

Usage:
    unigrec <command> --config path [--force] [--seed N] [--verbose]

Every successful command records its config hash and the content hashes
of its inputs in {run}/manifest.json; re-running with nothing changed is a
no-op unless --force is given.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src.dataset import load_dataset, prepare_dataset, save_dataset, split_examples
from src.embeddings import load_embeddings, save_embeddings, synth_embeddings
from src.errors import GenRecError, MissingPrerequisiteError
from src.evaluation import (
    collision_rate,
    identifier_evolution,
    metrics_from_rankings,
    pca_components,
    rank_users,
    usage_entropy,
    write_analysis_csv,
    write_ranked_outputs,
)
from src.experiment import ExperimentConfig, load_experiment_config
from src.recommender import build_prefix_trie, load_recommender
from src.report_markdown import process_report
from src.report_utils import (
    append_jsonl,
    config_hash,
    create_run_summary,
    is_up_to_date,
    manifest_entry,
    record_manifest,
    load_report_from_file,
    save_report_to_file,
)
from src.statistics import dataset_statistics, is_non_increasing, summarize_seeds
from src.synthetic import embeddings_for_dataset, generate_interactions, write_interactions
from src.teacher import export_item_embeddings, save_teacher, train_teacher
from src.tokenizer import load_tokenizer, read_identifier_dump, write_identifier_dump
from src.training import ablation_config, compare_tau_schedules, joint_train, pretrain_tokenizer, run_ablation
from src.training import snapshot_identifiers, sweep_lambda_cu
from src.utils import backup_file, get_device
from src.visualizer import CHANGE_RATE_CSV, COLLISION_CSV, ENTROPY_CSV, PATTERN_CSV, PCA_CSV
from src.visualizer import create_all_visualizations

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

DATASET_FILE = "dataset.json"
SEMANTIC_FILE = "semantic.bin"
STATS_FILE = "dataset_stats.json"
INTERACTIONS_FILE = "interactions.csv"
TEACHER_FILE = "teacher.pt"
TEACHER_EMBEDDINGS_FILE = "teacher_embeddings.bin"
STAGE1_TOKENIZER = "stage1/tokenizer.pt"
STAGE1_IDENTIFIERS = "identifiers-stage1.jsonl"
STAGE2_TOKENIZER = "stage2/tokenizer.pt"
STAGE2_RECOMMENDER = "stage2/recommender.pt"
STAGE2_IDENTIFIERS = "identifiers-stage2.jsonl"
METRICS_FILE = "metrics.jsonl"
RANKED_FILE = "ranked.jsonl"
ANALYSIS_DIR = "analysis"
USAGE_ENTROPY_CSV = "usage_entropy.csv"
ANALYSIS_REPORT = "analysis.md"

PRODUCERS = {
    DATASET_FILE: "prepare",
    SEMANTIC_FILE: "prepare",
    TEACHER_EMBEDDINGS_FILE: "train-teacher",
    STAGE1_TOKENIZER: "pretrain",
    STAGE1_IDENTIFIERS: "pretrain",
    STAGE2_RECOMMENDER: "joint",
    STAGE2_TOKENIZER: "joint",
    STAGE2_IDENTIFIERS: "joint",
}

CommandResult = Tuple[List[Path], Dict[str, object]]


def require(run_dir: Path, artifacts: Sequence[str]) -> List[Path]:
    """
    Resolve prerequisite artifacts under the run directory.

    Raises:
        MissingPrerequisiteError: an artifact is absent; names the command producing it
    """
    paths = []
    for artifact in artifacts:
        path = run_dir / artifact
        if not path.exists():
            logger.error(f"Missing prerequisite {path}")
            raise MissingPrerequisiteError(str(path), PRODUCERS[artifact])
        paths.append(path)
    return paths


def _needs_teacher(training_configs) -> bool:
    return any(cfg.lambda_cd_t > 0 or cfg.lambda_cd_r > 0 for cfg in training_configs)


def prerequisites(command: str, experiment: ExperimentConfig, rungs: Sequence[str] = ()) -> List[str]:
    """Artifacts each command reads, in the order it reads them."""
    data = [DATASET_FILE, SEMANTIC_FILE]
    if command == "prepare":
        return []
    if command == "train-teacher":
        return [DATASET_FILE]
    if command == "pretrain":
        return data
    if command == "joint":
        needed = data + [STAGE1_TOKENIZER]
        if _needs_teacher(experiment.training_runs()):
            needed.append(TEACHER_EMBEDDINGS_FILE)
        return needed
    if command == "eval":
        return [DATASET_FILE, STAGE2_RECOMMENDER, STAGE2_IDENTIFIERS]
    if command == "analyze":
        return data + [STAGE1_TOKENIZER, STAGE1_IDENTIFIERS, STAGE2_TOKENIZER, STAGE2_IDENTIFIERS]
    if command == "ablate":
        needed = list(data)
        if _needs_teacher(ablation_config(rung, experiment.training) for rung in rungs):
            needed.append(TEACHER_EMBEDDINGS_FILE)
        return needed
    raise ValueError(f"Unknown command: {command}")


def _load_data(run_dir: Path):
    dataset = load_dataset(run_dir / DATASET_FILE)
    semantic = load_embeddings(run_dir / SEMANTIC_FILE, dataset.num_items)
    return dataset, semantic


def cmd_prepare(experiment: ExperimentConfig, args, device) -> CommandResult:
    run_dir = experiment.run_dir
    ds = experiment.dataset
    if ds.source == "synthetic":
        records = generate_interactions(
            n_users=ds.synth_users,
            n_items=ds.synth_items,
            n_clusters=ds.synth_clusters,
            min_len=ds.synth_min_len,
            max_len=ds.synth_max_len,
            stay_prob=ds.synth_stay_prob,
            seed=experiment.seed,
        )
        interactions = write_interactions(records, run_dir / INTERACTIONS_FILE)
        dataset = prepare_dataset(interactions, "csv", ds.kcore)
    else:
        dataset = prepare_dataset(ds.path, ds.format, ds.kcore)

    emb = experiment.embeddings
    if emb.source == "file":
        semantic = load_embeddings(emb.path, dataset.num_items)
    elif ds.source == "synthetic":
        semantic = embeddings_for_dataset(dataset, ds.synth_items, emb.dim, emb.clusters, emb.noise, experiment.seed)
    else:
        semantic = synth_embeddings(dataset.num_items, emb.dim, emb.clusters, emb.noise, experiment.seed)

    stats = dataset_statistics(dataset)
    outputs = [
        Path(save_dataset(dataset, run_dir / DATASET_FILE)),
        Path(save_embeddings(semantic, run_dir / SEMANTIC_FILE)),
    ]
    save_report_to_file(stats, run_dir / STATS_FILE)
    outputs.append(run_dir / STATS_FILE)
    return outputs, dict(stats)


def cmd_train_teacher(experiment: ExperimentConfig, args, device) -> CommandResult:
    run_dir = experiment.run_dir
    dataset = load_dataset(run_dir / DATASET_FILE)
    model = train_teacher(dataset, experiment.teacher, experiment.seed, device, show_progress=args.verbose)
    outputs = [
        Path(save_teacher(model, run_dir / TEACHER_FILE)),
        Path(save_embeddings(export_item_embeddings(model), run_dir / TEACHER_EMBEDDINGS_FILE)),
    ]
    best = max((entry[f"recall@{experiment.teacher.eval_k}"] for entry in model.history), default=0.0)
    return outputs, {"epochs": len(model.history), f"valid Recall@{experiment.teacher.eval_k}": best}


def cmd_pretrain(experiment: ExperimentConfig, args, device) -> CommandResult:
    run_dir = experiment.run_dir
    _, semantic = _load_data(run_dir)
    result = pretrain_tokenizer(
        semantic, experiment.tokenizer, experiment.training, experiment.seed, run_dir, device,
        show_progress=args.verbose,
    )
    dump = snapshot_identifiers(result.tokenizer, semantic, "stage1", run_dir)
    last = result.history[-1]
    return [Path(result.checkpoint), Path(dump)], {
        "epochs": last["epoch"],
        "loss": last["loss"],
        "collision_rate": last["collision_rate"],
        "entropy_mean": last["entropy_mean"],
    }


def cmd_joint(experiment: ExperimentConfig, args, device) -> CommandResult:
    run_dir = experiment.run_dir
    dataset, semantic = _load_data(run_dir)
    runs = experiment.training_runs()
    teacher = None
    if _needs_teacher(runs):
        teacher = load_embeddings(run_dir / TEACHER_EMBEDDINGS_FILE, dataset.num_items)

    best, best_value, best_index = None, -1.0, 0
    for index, training_config in enumerate(runs):
        target_dir = run_dir if len(runs) == 1 else run_dir / "grid" / f"{index:02d}"
        logger.info(f"Joint run {index + 1}/{len(runs)} in {target_dir}")
        result = joint_train(
            dataset, load_tokenizer(run_dir / STAGE1_TOKENIZER), semantic, teacher, experiment.recommender,
            training_config, experiment.seed, target_dir, device, show_progress=args.verbose,
        )
        value = result.best.recall[max(training_config.top_ks)] if result.best else 0.0
        if value > best_value:
            best, best_value, best_index = result, value, index

    if len(runs) > 1:
        logger.info(f"Best grid run is {best_index:02d} with valid Recall={best_value:.4f}")
        for source, dst in [(f"grid/{best_index:02d}/{STAGE2_TOKENIZER}", STAGE2_TOKENIZER),
                         (f"grid/{best_index:02d}/{STAGE2_RECOMMENDER}", STAGE2_RECOMMENDER),
                         (f"grid/{best_index:02d}/stage2/identifiers.jsonl", "stage2/identifiers.jsonl")]:
            (run_dir / dst).parent.mkdir(parents=True, exist_ok=True)
            (run_dir / dst).write_bytes((run_dir / source).read_bytes())

    dump = write_identifier_dump(best.trainer.identifiers, run_dir / STAGE2_IDENTIFIERS)
    outputs = [run_dir / STAGE2_TOKENIZER, run_dir / STAGE2_RECOMMENDER, Path(dump)]
    summary = {"runs": len(runs), "best_run": best_index, "collision_rate": collision_rate(best.trainer.identifiers)}
    if best.best is not None:
        summary.update(best.best.as_row())
    return outputs, summary


def cmd_eval(experiment: ExperimentConfig, args, device) -> CommandResult:
    run_dir = experiment.run_dir
    dataset = load_dataset(run_dir / DATASET_FILE)
    model, _ = load_recommender(run_dir / STAGE2_RECOMMENDER)
    model.to(device).eval()
    dump = read_identifier_dump(run_dir / STAGE2_IDENTIFIERS)
    identifiers = [dump[item] for item in range(dataset.num_items)]
    trie = build_prefix_trie(identifiers, model.layout)

    cfg = experiment.training
    ks = tuple(cfg.top_ks)
    if cfg.beam_size < max(ks):
        raise ValueError(f"beam_size ({cfg.beam_size}) must be >= max K ({max(ks)})")
    examples = split_examples(dataset, "test")
    rankings = rank_users(model, trie, identifiers, examples, cfg.beam_size, max(ks), max_len=model.config.max_history)
    record = metrics_from_rankings([items for _, items, _ in rankings], [t for _, _, t in examples], ks, "test")
    record.extra["collision_rate"] = collision_rate(identifiers)

    append_jsonl({"stage": "eval", **record.to_dict()}, run_dir / METRICS_FILE)
    ranked = write_ranked_outputs(rankings, run_dir / RANKED_FILE)
    return [run_dir / METRICS_FILE, Path(ranked)], record.to_dict()


def _pca_rows(tokenizer, stage: str) -> List[dict]:
    rows = []
    for level in range(tokenizer.num_levels):
        coordinates, _ = pca_components(tokenizer.codebook(level))
        for code, (x, y) in enumerate(coordinates):
            rows.append({"stage": stage, "level": level, "code": code, "x": float(x), "y": float(y)})
    return rows


def collision_summary(schedule_rows: Sequence[dict]) -> Dict[str, object]:
    """Seed-mean collision rate at the last epoch per schedule, and whether annealing beat fixed_high."""
    final_epoch = max(row["epoch"] for row in schedule_rows)
    final = [row for row in schedule_rows if row["epoch"] == final_epoch]
    summary: Dict[str, object] = {}
    for row in summarize_seeds(final, ["schedule"], ["collision_rate"]):
        summary[f"final_collision_{row['schedule']}"] = row["collision_rate_mean"]
    if "final_collision_anneal" in summary and "final_collision_fixed_high" in summary:
        summary["anneal_collision_le_fixed_high"] = (
            summary["final_collision_anneal"] <= summary["final_collision_fixed_high"]
        )
    return summary


def cmd_analyze(experiment: ExperimentConfig, args, device) -> CommandResult:
    run_dir = experiment.run_dir
    analysis_dir = run_dir / ANALYSIS_DIR
    _, semantic = _load_data(run_dir)
    sweep = experiment.analysis

    schedules = compare_tau_schedules(
        semantic, experiment.tokenizer, experiment.training, sweep.seeds, sweep.schedules, device
    )
    lambdas = sweep_lambda_cu(
        semantic, experiment.tokenizer, experiment.training, sweep.lambda_cu_grid, sweep.seeds, device
    )

    before = read_identifier_dump(run_dir / STAGE1_IDENTIFIERS)
    after = read_identifier_dump(run_dir / STAGE2_IDENTIFIERS)
    evolution = identifier_evolution(before, after)
    change_rows = [{"level": level, "change_rate": rate} for level, rate in enumerate(evolution.layer_change_rate)]
    pattern_rows = [
        {"pattern": "-".join(str(level) for level in pattern) or "none", "fraction": fraction}
        for pattern, fraction in evolution.pattern_distribution.items()
    ]

    stage1 = load_tokenizer(run_dir / STAGE1_TOKENIZER)
    stage2 = load_tokenizer(run_dir / STAGE2_TOKENIZER)
    kcfg = stage2.config
    entropies = {
        stage: list(usage_entropy(list(dump.values()), kcfg.codebook_size, kcfg.entropy_log_base))
        for stage, dump in (("stage1", before), ("stage2", after))
    }
    entropy_rows = [
        {"stage": stage, **{f"level_{i}": h for i, h in enumerate(entropy)}, "mean": sum(entropy) / len(entropy)}
        for stage, entropy in entropies.items()
    ]

    report = {
        "run_name": experiment.run_name,
        "analysis": {"layer_change_rate": evolution.layer_change_rate, "usage_entropy": entropies["stage2"]},
    }
    md_path = analysis_dir / ANALYSIS_REPORT
    md_path.parent.mkdir(parents=True, exist_ok=True)
    md_path.write_text(process_report(report), encoding="utf-8")

    outputs = [
        Path(write_analysis_csv(schedules, analysis_dir / COLLISION_CSV)),
        Path(write_analysis_csv(lambdas, analysis_dir / ENTROPY_CSV)),
        Path(write_analysis_csv(change_rows, analysis_dir / CHANGE_RATE_CSV)),
        Path(write_analysis_csv(pattern_rows, analysis_dir / PATTERN_CSV)),
        Path(write_analysis_csv(entropy_rows, analysis_dir / USAGE_ENTROPY_CSV)),
        Path(write_analysis_csv(_pca_rows(stage1, "stage1") + _pca_rows(stage2, "stage2"), analysis_dir / PCA_CSV)),
        md_path,
    ]
    if args.render:
        outputs += [Path(p) for p in create_all_visualizations(analysis_dir, analysis_dir / "figures")]

    summary = {f"change_rate_level_{i}": rate for i, rate in enumerate(evolution.layer_change_rate)}
    summary["changed_at_most_one_layer"] = evolution.changed_at_most_one_layer()
    summary.update(collision_summary(schedules))
    for row in summarize_seeds(lambdas, ["lambda_cu"], ["entropy_mean"]):
        summary[f"entropy_mean@lambda_cu={row['lambda_cu']:g}"] = row["entropy_mean_mean"]
    return outputs, summary


def cmd_ablate(experiment: ExperimentConfig, args, device) -> CommandResult:
    run_dir = experiment.run_dir
    dataset, semantic = _load_data(run_dir)
    rungs = args.rungs or experiment.ablation_rungs
    teacher = None
    if TEACHER_EMBEDDINGS_FILE in prerequisites("ablate", experiment, rungs):
        teacher = load_embeddings(run_dir / TEACHER_EMBEDDINGS_FILE, dataset.num_items)

    results: Dict[str, Dict[str, float]] = {}
    rows = []
    for rung in rungs:
        record = run_ablation(
            rung, dataset, semantic, teacher, experiment.tokenizer, experiment.recommender,
            experiment.training, experiment.seed, run_dir, device,
        )
        results[rung] = record.as_row()
        rows.append({"Variant": rung, **record.as_row(), "collision_rate": record.extra["collision_rate"]})

    csv_path = run_dir / "ablation.csv"
    pd.DataFrame(rows).to_csv(csv_path, index=False)
    json_path = run_dir / "ablation.json"
    save_report_to_file(results, json_path)
    report = {"run_name": experiment.run_name, "ablation": results}
    stats = load_report_from_file(run_dir / STATS_FILE)
    if stats:
        report["dataset"] = {experiment.run_name: stats}
    md_path = run_dir / "ablation.md"
    md_path.write_text(process_report(report), encoding="utf-8")
    summary: Dict[str, object] = {"rungs": ", ".join(rungs)}
    staged = [rung for rung in ("M0", "M1", "M2") if rung in results]
    if len(staged) > 1:
        metric = f"Recall@{max(experiment.training.top_ks)}"
        values = [results[rung][metric] for rung in staged]
        summary[f"{metric} non-decreasing over {'/'.join(staged)}"] = is_non_increasing(values[::-1])
    return [csv_path, json_path, md_path], summary


COMMANDS: Dict[str, Callable[..., CommandResult]] = {
    "prepare": cmd_prepare,
    "train-teacher": cmd_train_teacher,
    "pretrain": cmd_pretrain,
    "joint": cmd_joint,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "ablate": cmd_ablate,
}


def parse_arguments(args: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments.

    Args:
        args: List of command-line arguments. If None, sys.argv is used.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Path to the experiment JSON file")
    common.add_argument("--force", action="store_true", help="Re-run even if the manifest says the outputs are current")
    common.add_argument("--seed", type=int, default=None, help="Override the configured seed")
    common.add_argument("--verbose", action="store_true", help="Debug logging and progress bars")

    parser = argparse.ArgumentParser(prog="unigrec", description="Generative recommendation with soft item identifiers")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name, parents=[common])
        if name == "analyze":
            sub.add_argument("--render", action="store_true", help="Also write PNG figures from the CSVs")
        if name == "ablate":
            sub.add_argument("rungs", nargs="*", help="Ablation rungs to run (default: all configured)")
    return parser.parse_args(args)


def command_hash(experiment: ExperimentConfig, args: argparse.Namespace) -> str:
    extra = {"rungs": list(getattr(args, "rungs", None) or []), "render": bool(getattr(args, "render", False))}
    return config_hash({"config": experiment.to_dict(), **extra})


def run_command(args: argparse.Namespace) -> int:
    experiment = load_experiment_config(args.config, args.seed)
    run_dir = experiment.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    rungs = getattr(args, "rungs", None) or experiment.ablation_rungs
    inputs = require(run_dir, prerequisites(args.command, experiment, rungs))
    if experiment.dataset.source == "file" and args.command == "prepare":
        inputs.append(Path(experiment.dataset.path))
    if experiment.embeddings.source == "file" and args.command == "prepare":
        inputs.append(Path(experiment.embeddings.path))

    cfg_hash = command_hash(experiment, args)
    if not args.force and is_up_to_date(run_dir, args.command, cfg_hash, inputs):
        logger.info(f"`{args.command}` is up to date in {run_dir}; nothing to do (use --force to re-run)")
        print(f"{args.command}: up to date")
        return 0
    if args.force and (run_dir / METRICS_FILE).exists():
        backup_file(run_dir / METRICS_FILE, run_dir / "archives")

    device = get_device(experiment.device)
    logger.info(f"Running `{args.command}` for run '{experiment.run_name}' on {device}")
    outputs, summary = COMMANDS[args.command](experiment, args, device)
    record_manifest(run_dir, manifest_entry(args.command, cfg_hash, inputs, outputs))
    print(create_run_summary(args.command, summary))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return run_command(args)
    except GenRecError as e:
        logger.error(str(e))
        return 1
    except (FileNotFoundError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
