"""Static figures from a metrics stream."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

__all__ = ["load_metrics", "plot_curves", "emit_run_plots"]


def load_metrics(path: str | Path) -> list[dict]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def plot_curves(series: dict[str, tuple[list, list]], xlabel: str, ylabel: str,
                out_path: str | Path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def emit_run_plots(metrics_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Accuracy vs epoch, clean fraction vs step, and mean mixing ratio
    vs step for one run."""
    records = load_metrics(metrics_path)
    out = Path(out_dir)
    written: list[Path] = []

    evals = [r for r in records if r.get("eval")]
    if evals:
        series = {
            "teacher": ([r["epoch"] for r in evals], [r["top1"] for r in evals]),
            "student": ([r["epoch"] for r in evals], [r["student_top1"] for r in evals]),
        }
        written.append(plot_curves(series, "epoch", "top-1 (%)",
                                   out / "accuracy_vs_epoch.png", "evaluation accuracy"))

    steps = [r for r in records if not r.get("eval")]
    semi = [r for r in steps if r["stage"] == "stage3"]
    if semi:
        xs = [r["step"] for r in semi]
        written.append(plot_curves(
            {"clean fraction": (xs, [r["clean_fraction"] for r in semi]),
             "pre-mix clean fraction": (xs, [r["clean_fraction_pre"] for r in semi])},
            "step", "fraction", out / "clean_fraction_vs_step.png",
            "pseudo-label gate"))
        written.append(plot_curves(
            {"mean lambda": (xs, [r["mean_lambda"] for r in semi])},
            "step", "mean mixing ratio", out / "mean_lambda_vs_step.png",
            "mixing ratio"))
    return written
