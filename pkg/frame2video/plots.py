"""Figure files for evaluation runs; never opens interactive windows."""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from loguru import logger

from frame2video.errors import ParameterError
from frame2video.ingest import build_sample
from frame2video.models import AnomalyScoreSeries, Clip, EvalReport
from frame2video.network import FrameToVideo, predict

PANEL_STEPS = (1, 3, 5, 7, 10)


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.debug(f"Saved figure {path}")
    return path


def plot_roc(report: EvalReport, path: Union[str, Path]) -> Path:
    fpr = [p[0] for p in report.roc_points]
    tpr = [p[1] for p in report.roc_points]

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(fpr, tpr, color="darkorange", lw=2, label=f"AUC = {report.auc_all:.3f}")
    ax.plot([0, 1], [0, 1], color="navy", lw=1, linestyle="--")
    ax.set_xlim([0.0, 1.0])
    ax.set_ylim([0.0, 1.05])
    ax.set_xlabel("False Positive Rate")
    ax.set_ylabel("True Positive Rate")
    ax.set_title("Frame-level ROC")
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_timestep_aucs(report: EvalReport, path: Union[str, Path]) -> Path:
    columns = report.columns
    values = report.auc_per_timestep + [report.auc_all]

    fig, ax = plt.subplots(figsize=(8, 4))
    colors = ["steelblue"] * len(report.auc_per_timestep) + ["darkorange"]
    ax.bar(columns, values, color=colors)
    for x, v in enumerate(values):
        ax.text(x, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    ax.set_ylim([0.0, 1.05])
    ax.set_xlabel("Prediction timestep")
    ax.set_ylabel("AUC")
    ax.set_title("AUC per prediction timestep")
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)


def plot_timeline(
        series: AnomalyScoreSeries,
        labels: Optional[np.ndarray],
        path: Union[str, Path]
) -> Path:
    """Normalized score over frames with anomalous frames shaded"""
    fig, ax = plt.subplots(figsize=(10, 3))
    frames = series.frame_indices
    ax.plot(frames, series.normalized, color="crimson", lw=1.5, label="Anomaly score")
    if labels is not None:
        ax.fill_between(frames, 0, 1, where=np.asarray(labels) > 0, color="gray", alpha=0.3,
                        step="mid", label="Anomalous frames")
    ax.set_ylim([-0.02, 1.02])
    ax.set_xlabel("Frame")
    ax.set_ylabel("Normalized score")
    ax.set_title(series.clip_id)
    ax.legend(loc="upper left")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_timelines(
        series: Sequence[AnomalyScoreSeries],
        labels: Dict[str, np.ndarray],
        out_dir: Union[str, Path],
        fmt: str = "png"
) -> List[Path]:
    out_dir = Path(out_dir)
    return [plot_timeline(s, labels.get(s.clip_id), out_dir / f"{s.clip_id}.{fmt}") for s in series]


def plot_training_curve(log_path: Union[str, Path], path: Union[str, Path]) -> Path:
    log = pd.read_csv(log_path)
    per_epoch = log.groupby("epoch")[["l_rec", "l_tg", "kl", "total"]].mean()

    fig, ax = plt.subplots(figsize=(7, 4))
    for column in per_epoch.columns:
        ax.plot(per_epoch.index, per_epoch[column], lw=2, label=column)
    ax.set_yscale("log")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Loss")
    ax.set_title("Training Progress")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_prediction_panel(
        model: FrameToVideo,
        clip: Clip,
        t: int,
        path: Union[str, Path],
        steps: Sequence[int] = PANEL_STEPS,
        eps_motion: float = 1e-3
) -> Path:
    """
    Initial frame t, then one column per future step with rows
    prediction / expectation / per-pixel squared error.
    """
    horizon = model.config.horizon
    steps = [k for k in steps if 1 <= k <= horizon]
    if not 1 <= t <= clip.num_frames - horizon - 1:
        raise ParameterError(f"frame {t} has no full prediction window in clip {clip.clip_id}")

    sample = build_sample(clip, t, horizon, eps_motion)
    output = predict(model.eval(), sample.initial, sample.direction, sample.flow)
    predicted = output.frames.frames
    expected = sample.target.frames

    fig, axes = plt.subplots(3, len(steps) + 1, figsize=(2.2 * (len(steps) + 1), 6.6))
    axes[0, 0].imshow(sample.initial.pixels)
    axes[0, 0].set_title(f"frame {t}")
    for row in range(1, 3):
        axes[row, 0].axis("off")
    for row, name in enumerate(("prediction", "expected", "error")):
        axes[row, 1].set_ylabel(name)

    for col, k in enumerate(steps, start=1):
        error = ((predicted[k - 1] - expected[k - 1]) ** 2).mean(axis=-1)
        axes[0, col].imshow(predicted[k - 1])
        axes[0, col].set_title(f"t+{k}")
        axes[1, col].imshow(expected[k - 1])
        axes[2, col].imshow(error, cmap="inferno", vmin=0.0, vmax=1.0)

    for ax in axes.flat:
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)
