"""Figures written next to the CSV outputs of training runs and sweeps."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .rltrain import TrainingReport, smoothed  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def figsize(width: float = 6.0, ratio: float | None = None) -> tuple[float, float]:
    ratio = ratio or (math.sqrt(5) - 1.0) / 2.0
    return width, width * ratio


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_curves(report: TrainingReport, path: str | Path, window: int = 50) -> Path:
    """Dev BLEU per evaluation and, for RL runs, the smoothed sampled reward."""
    has_reward = len(report.step_rewards) > 0
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2 if has_reward else 1, figsize=figsize(8.0 if has_reward else 5.0, 0.4 if has_reward else None))
        axes = np.atleast_1d(axes)
        steps = [r.step for r in report.records]
        axes[0].plot(steps, [r.dev_bleu for r in report.records], marker="o", ms=3)
        axes[0].set_xlabel("update")
        axes[0].set_ylabel("dev BLEU")
        if has_reward:
            raw = np.asarray(report.step_rewards)
            axes[1].plot(np.arange(1, len(raw) + 1), raw, color="0.8", lw=0.6, label="per batch")
            axes[1].plot(np.arange(1, len(raw) + 1), smoothed(raw, window), lw=1.2, label=f"moving mean ({window})")
            axes[1].set_xlabel("RL update")
            axes[1].set_ylabel("mean sampled reward")
            axes[1].legend(frameon=False)
        return _save(fig, path)


def plot_alpha_sweep(alphas: Sequence[float], dev: Sequence[float], test: Sequence[float], path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(5.0))
        ax.plot(alphas, dev, marker="o", label="dev")
        if any(np.isfinite(test)):
            ax.plot(alphas, test, marker="s", label="test")
        ax.set_xlabel(r"MLE weight $\alpha$")
        ax.set_ylabel("BLEU")
        ax.legend(frameon=False)
        return _save(fig, path)
