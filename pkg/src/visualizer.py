#!/usr/bin/env python3
"""
Analysis Visualization Module

This module renders the analysis CSV series as PNG figures:
- Line plots (collision rate over stage-1 steps per temperature schedule)
- Dual-axis plots (usage entropy and collision rate against lambda_cu)
- Bar charts (identifier change rate per level, change patterns)
- Scatter plots (2-D PCA projections of codebooks)

It reads the CSV files written by `unigrec analyze`; the library itself
never plots.
"""

import logging
import os

import matplotlib
matplotlib.use('Agg')  # Non-interactive backend
import matplotlib.pyplot as plt
import pandas as pd

logger = logging.getLogger(__name__)

COLLISION_CSV = "collision_vs_step.csv"
ENTROPY_CSV = "entropy_vs_lambda.csv"
CHANGE_RATE_CSV = "change_rate.csv"
PATTERN_CSV = "change_patterns.csv"
PCA_CSV = "codebook_pca.csv"


def create_collision_curve_chart(frame, output_path):
    """
    Collision rate against stage-1 step, one line per schedule (mean over seeds).

    Returns:
        str: Path to the saved visualization file or None if failed
    """
    try:
        if frame.empty:
            logger.warning("No collision data available for visualization")
            return None
        plt.figure(figsize=(8, 5))
        for schedule, group in frame.groupby("schedule"):
            curve = group.groupby("step")["collision_rate"].mean()
            plt.plot(curve.index, curve.values, label=schedule)
        plt.xlabel('Step')
        plt.ylabel('Collision rate')
        plt.legend()
        plt.tight_layout()
        plt.savefig(output_path)
        plt.close()
        logger.info(f"Created collision curve visualization: {output_path}")
        return output_path
    except (KeyError, ValueError, OSError) as e:
        logger.error(f"Error creating collision curve chart: {str(e)}")
        plt.close('all')
        return None


def create_entropy_lambda_chart(frame, output_path):
    try:
        if frame.empty:
            logger.warning("No lambda sweep data available for visualization")
            return None
        summary = frame.groupby("lambda_cu")[["entropy_mean", "collision_rate"]].mean().sort_index()
        labels = [f"{v:g}" for v in summary.index]
        fig, left = plt.subplots(figsize=(8, 5))
        left.plot(labels, summary["entropy_mean"], marker='o', color='tab:blue')
        left.set_xlabel('lambda_cu')
        left.set_ylabel('Mean usage entropy', color='tab:blue')
        right = left.twinx()
        right.plot(labels, summary["collision_rate"], marker='s', color='tab:red')
        right.set_ylabel('Collision rate', color='tab:red')
        fig.tight_layout()
        fig.savefig(output_path)
        plt.close(fig)
        logger.info(f"Created entropy vs lambda visualization: {output_path}")
        return output_path
    except (KeyError, ValueError, OSError) as e:
        logger.error(f"Error creating entropy vs lambda chart: {str(e)}")
        plt.close('all')
        return None


def create_change_rate_chart(frame, output_path):
    try:
        if frame.empty:
            logger.warning("No change rate data available for visualization")
            return None
        plt.figure(figsize=(6, 4))
        plt.bar([f"Level {int(level)}" for level in frame["level"]], frame["change_rate"], color='skyblue')
        plt.ylabel('Change rate')
        plt.tight_layout()
        plt.savefig(output_path)
        plt.close()
        logger.info(f"Created change rate visualization: {output_path}")
        return output_path
    except (KeyError, ValueError, OSError) as e:
        logger.error(f"Error creating change rate chart: {str(e)}")
        plt.close('all')
        return None


def create_pattern_chart(frame, output_path):
    try:
        if frame.empty:
            logger.warning("No change pattern data available for visualization")
            return None
        plt.figure(figsize=(8, 4))
        plt.bar(frame["pattern"].astype(str), frame["fraction"], color='lightgreen')
        plt.xticks(rotation=45, ha='right')
        plt.ylabel('Fraction of items')
        plt.tight_layout()
        plt.savefig(output_path)
        plt.close()
        logger.info(f"Created change pattern visualization: {output_path}")
        return output_path
    except (KeyError, ValueError, OSError) as e:
        logger.error(f"Error creating change pattern chart: {str(e)}")
        plt.close('all')
        return None


def create_pca_chart(frame, output_path):
    """Scatter of codewords per level, one marker per stage."""
    try:
        if frame.empty:
            logger.warning("No PCA data available for visualization")
            return None
        levels = sorted(frame["level"].unique())
        fig, axes = plt.subplots(1, len(levels), figsize=(4 * len(levels), 4), squeeze=False)
        for ax, level in zip(axes[0], levels):
            for stage, group in frame[frame["level"] == level].groupby("stage"):
                ax.scatter(group["x"], group["y"], s=6, label=stage, alpha=0.6)
            ax.set_title(f'Level {int(level)}')
            ax.legend()
        fig.tight_layout()
        fig.savefig(output_path)
        plt.close(fig)
        logger.info(f"Created codebook PCA visualization: {output_path}")
        return output_path
    except (KeyError, ValueError, OSError) as e:
        logger.error(f"Error creating PCA chart: {str(e)}")
        plt.close('all')
        return None


def create_all_visualizations(analysis_dir, output_dir):
    """
    Renders every analysis CSV present in `analysis_dir`.

    Returns:
        list: Paths to the generated visualization files
    """
    os.makedirs(output_dir, exist_ok=True)
    charts = [
        (COLLISION_CSV, create_collision_curve_chart, 'collision_vs_step.png'),
        (ENTROPY_CSV, create_entropy_lambda_chart, 'entropy_vs_lambda.png'),
        (CHANGE_RATE_CSV, create_change_rate_chart, 'change_rate.png'),
        (PATTERN_CSV, create_pattern_chart, 'change_patterns.png'),
        (PCA_CSV, create_pca_chart, 'codebook_pca.png'),
    ]
    visualization_files = []
    for csv_name, render, png_name in charts:
        csv_path = os.path.join(analysis_dir, csv_name)
        if not os.path.isfile(csv_path):
            logger.warning(f"Skipping {png_name}: {csv_path} not found")
            continue
        result = render(pd.read_csv(csv_path), os.path.join(output_dir, png_name))
        if result:
            visualization_files.append(result)
    logger.info(f"Created {len(visualization_files)} visualizations in {output_dir}")
    return visualization_files
