"""Ablation harness: cross-product of config overrides times seeds.

For each seed the supervised stage runs once and every variant's semi
stage starts from that same checkpoint file, so all variants of a seed
begin from bitwise-identical weights. Individual run failures are
recorded in the table, not fatal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig, build_run_config, flatten_config
from .pipeline import RunFailure, run_pipeline
from .plots import load_metrics, plot_curves

__all__ = ["VariantResult", "aggregate", "format_table", "ablation_harness"]


@dataclass
class VariantResult:
    label: str
    overrides: dict[str, object]
    teacher_top1: list[float | None] = field(default_factory=list)
    student_top1: list[float | None] = field(default_factory=list)
    failed_seeds: list[int] = field(default_factory=list)


def _mean_spread(values: list[float | None]) -> tuple[float, float]:
    ok = [v for v in values if v is not None]
    if not ok:
        return math.nan, math.nan
    mean = sum(ok) / len(ok)
    spread = math.sqrt(sum((v - mean) ** 2 for v in ok) / len(ok))
    return mean, spread


def aggregate(result: VariantResult, chance_top1: float) -> dict:
    """Mean +- spread per variant; FAILED when a run crashed or ended at
    or below twice the chance accuracy."""
    t_mean, t_spread = _mean_spread(result.teacher_top1)
    s_mean, s_spread = _mean_spread(result.student_top1)
    degenerate = [v for v in result.teacher_top1 if v is not None and v <= 2.0 * chance_top1]
    failed = bool(result.failed_seeds) or bool(degenerate) or math.isnan(t_mean)
    return {
        "label": result.label,
        "teacher_top1_mean": t_mean,
        "teacher_top1_spread": t_spread,
        "student_top1_mean": s_mean,
        "student_top1_spread": s_spread,
        "runs": len(result.teacher_top1),
        "failed": failed,
    }


def format_table(rows: list[dict]) -> str:
    header = f"{'variant':<32} {'teacher top-1':>18} {'student top-1':>18}  status"
    lines = [header, "-" * len(header)]
    for row in rows:
        t = f"{row['teacher_top1_mean']:.2f} +- {row['teacher_top1_spread']:.2f}" \
            if not math.isnan(row["teacher_top1_mean"]) else "-"
        s = f"{row['student_top1_mean']:.2f} +- {row['student_top1_spread']:.2f}" \
            if not math.isnan(row["student_top1_mean"]) else "-"
        status = "FAILED" if row["failed"] else "ok"
        lines.append(f"{row['label']:<32} {t:>18} {s:>18}  {status}")
    return "\n".join(lines) + "\n"


def _final_eval(metrics_path: Path) -> dict | None:
    evals = [r for r in load_metrics(metrics_path) if r.get("eval")]
    return evals[-1] if evals else None


def _cross_product(axes: list[tuple[str, list]]) -> list[dict[str, object]]:
    combos: list[dict[str, object]] = [{}]
    for key, values in axes:
        combos = [{**combo, key: v} for combo in combos for v in values]
    return combos


def ablation_harness(
    base: RunConfig,
    axes: list[tuple[str, list]],
    seeds: list[int],
    out_dir: str | Path,
) -> list[dict]:
    """Run the cross-product, emit table.txt / results.json / plots, and
    return the aggregated rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_flat = flatten_config(base)
    combos = _cross_product(axes)
    chance = 100.0 / base.data.num_classes

    results: list[VariantResult] = []
    curves: dict[str, list[tuple[list, list]]] = {}
    for combo in combos:
        label = "+".join(str(v) for v in combo.values()) if combo else "base"
        result = VariantResult(label=label, overrides=dict(combo))
        curves[label] = []
        for seed in seeds:
            stage2_ckpt = _ensure_stage2(base_flat, seed, out)
            flat = dict(base_flat)
            flat.update(combo)
            flat.update({
                "run.seed": seed,
                "run.out_dir": str(out / f"seed{seed}" / label.replace("/", "_")),
                "run.name": f"{base.name}-{label}",
                "stage2.enabled": False,
                "run.init_checkpoint": stage2_ckpt if stage2_ckpt else base.init_checkpoint,
            })
            cfg = build_run_config(flat)
            try:
                run_pipeline(cfg)
            except RunFailure:
                result.teacher_top1.append(None)
                result.student_top1.append(None)
                result.failed_seeds.append(seed)
                continue
            final = _final_eval(Path(cfg.out_dir) / "metrics.jsonl")
            if final is None:
                result.teacher_top1.append(None)
                result.student_top1.append(None)
                result.failed_seeds.append(seed)
                continue
            result.teacher_top1.append(final["top1"])
            result.student_top1.append(final["student_top1"])
            evals = [r for r in load_metrics(Path(cfg.out_dir) / "metrics.jsonl")
                     if r.get("eval")]
            curves[label].append(([r["epoch"] for r in evals], [r["top1"] for r in evals]))
        results.append(result)

    rows = [aggregate(r, chance) for r in results]
    (out / "table.txt").write_text(format_table(rows), encoding="utf-8")
    (out / "results.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")

    series = {}
    for label, runs in curves.items():
        if not runs:
            continue
        # Mean accuracy per epoch across seeds that reached that epoch.
        by_epoch: dict[int, list[float]] = {}
        for xs, ys in runs:
            for x, y in zip(xs, ys):
                by_epoch.setdefault(x, []).append(y)
        epochs = sorted(by_epoch)
        series[label] = (epochs, [sum(by_epoch[e]) / len(by_epoch[e]) for e in epochs])
    if series:
        plot_curves(series, "epoch", "teacher top-1 (%)", out / "accuracy_vs_epoch.png",
                    "ablation accuracy")
    return rows


def _ensure_stage2(base_flat: dict, seed: int, out: Path) -> str | None:
    """Run the shared supervised stage for this seed once; return its
    checkpoint path, or None when the base config has no stage 2."""
    if not base_flat.get("stage2.enabled", True) or base_flat.get("stage2.epochs", 0) == 0:
        return None
    stage2_dir = out / f"seed{seed}" / "stage2"
    ckpt = stage2_dir / "checkpoints" / "stage2_final.pt"
    if ckpt.exists():
        return str(ckpt)
    flat = dict(base_flat)
    flat.update({
        "run.seed": seed,
        "run.out_dir": str(stage2_dir),
        "stage3.enabled": False,
    })
    run_pipeline(build_run_config(flat))
    return str(ckpt)
