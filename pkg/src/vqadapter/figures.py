"""Matplotlib renderings written next to the delimited report files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import METRIC_NAMES, EvalReport


def render_eval_figures(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Per-split metric bars plus a prediction scatter when available."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    seeds = [s.seed for s in report.splits]
    x = np.arange(len(seeds))
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.2))
    for ax, metric in zip(axes, METRIC_NAMES):
        vals = [getattr(s, metric) for s in report.splits]
        ax.bar(x, vals, color="#4878cf")
        ax.axhline(np.mean(vals), color="#d65f5f", linewidth=1, label="mean")
        ax.set_title(metric.upper())
        ax.set_xticks(x)
        ax.set_xticklabels([str(s) for s in seeds])
        ax.set_xlabel("split seed")
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "metrics_per_split.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    pairs = [
        (s.labels, s.predictions, s.seed)
        for s in report.splits
        if s.labels is not None and s.predictions is not None
    ]
    if pairs:
        fig, ax = plt.subplots(figsize=(4.5, 4.2))
        for labels, preds, seed in pairs:
            ax.scatter(labels, preds, s=18, alpha=0.7, label=f"seed {seed}")
        ax.set_xlabel("label (MOS)")
        ax.set_ylabel("prediction")
        ax.set_title("test predictions vs labels")
        if len(pairs) <= 10:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / "predictions_scatter.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written


def render_training_curves(records: list[dict], out_path: str | Path) -> Path:
    """Loss and validation-SROCC curves from the JSONL training log."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [r["epoch"] for r in records]
    losses = [r.get("loss") for r in records]
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(
        [e for e, l in zip(epochs, losses) if l is not None],
        [l for l in losses if l is not None],
        marker="o",
        label="train loss",
    )
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if any("val_srocc" in r for r in records):
        ax2 = ax.twinx()
        ax2.plot(
            [r["epoch"] for r in records if "val_srocc" in r],
            [r["val_srocc"] for r in records if "val_srocc" in r],
            color="#d65f5f",
            marker="s",
            label="val SROCC",
        )
        ax2.set_ylabel("val SROCC")
    fig.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def render_score_histogram(scores: list[float], out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.hist(scores, bins=min(20, max(5, len(scores) // 2)), color="#4878cf")
    ax.set_xlabel("predicted quality")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path
