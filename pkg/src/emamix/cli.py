"""Command-line interface.

Verbs: split (emit labeled/unlabeled manifests), train (run the
pipeline), eval (checkpoint to accuracies), ablate (variant harness),
plot (metrics to figures). Exit codes: 0 success, 2 configuration
error, 3 run failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, load_run_config
from .data import split_dataset, write_manifest
from .evaluate import evaluate
from .pipeline import RunFailure, build_datasets, run_pipeline
from .vit import TinyViT


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="dotted-key config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")


def _cmd_split(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args.overrides)
    train, _ = build_datasets(cfg)
    labels = train.labels()
    labeled, unlabeled = split_dataset(labels, cfg.data.labeled_fraction, cfg.seed,
                                       cfg.data.num_classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.data.source == "synthetic":
        path_of = lambda i: f"synthetic:{i}"
    else:
        from .data import read_manifest

        entries = read_manifest(cfg.data.train_manifest)
        path_of = lambda i: entries[i][0]
    write_manifest(out / "labeled.txt", [(path_of(i), int(labels[i])) for i in labeled])
    write_manifest(out / "unlabeled.txt", [(path_of(i), -1) for i in unlabeled])
    counts = {int(c): int((labels[labeled] == c).sum()) for c in np.unique(labels)}
    print(json.dumps({"labeled": len(labeled), "unlabeled": len(unlabeled),
                      "per_class": counts}))
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args.overrides)
    manifest = run_pipeline(cfg, resume=args.resume, stop_after_epochs=args.stop_after_epochs)
    print(json.dumps({"run_id": manifest.run_id, "out_dir": cfg.out_dir}))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args.overrides)
    payload = torch.load(args.checkpoint, map_location="cpu", weights_only=False)
    model = TinyViT(cfg.model)
    which = args.which
    if which == "auto":
        which = "teacher" if payload.get("teacher") is not None else "student"
    state = payload.get(which) if isinstance(payload, dict) and which in payload else payload
    if state is None:
        raise ConfigError(f"checkpoint has no {which!r} parameters")
    model.load_state_dict(state)
    _, eval_ds = build_datasets(cfg)
    top1, top5 = evaluate(model, eval_ds, cfg.model.image_size)
    print(json.dumps({"which": which, "top1": top1, "top5": top5}))
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    from .ablate import ablation_harness

    cfg = load_run_config(args.config, args.overrides)
    axes = []
    for spec in args.axis:
        if "=" not in spec:
            raise ConfigError(f"--axis {spec!r} must look like key=v1,v2")
        key, raw = spec.split("=", 1)
        axes.append((key.strip(), [v.strip() for v in raw.split(",") if v.strip()]))
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("--seeds must list at least one seed")
    rows = ablation_harness(cfg, axes, seeds, args.out)
    print((Path(args.out) / "table.txt").read_text(encoding="utf-8"), end="")
    return 3 if all(r["failed"] for r in rows) else 0


def _cmd_plot(args: argparse.Namespace) -> int:
    from .plots import emit_run_plots

    written = emit_run_plots(args.metrics, args.out)
    print(json.dumps({"plots": [str(p) for p in written]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emamix",
                                     description="semi-supervised training toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="emit labeled/unlabeled manifests")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory for manifests")
    p.set_defaults(fn=_cmd_split)

    p = sub.add_parser("train", help="run the training pipeline")
    _add_config_args(p)
    p.add_argument("--resume", action="store_true", help="continue from last checkpoint")
    p.add_argument("--stop-after-epochs", type=int, default=None,
                   help="stop cleanly after this many epochs (for resume testing)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=["auto", "teacher", "student"], default="auto")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the comparison harness")
    _add_config_args(p)
    p.add_argument("--axis", action="append", default=[], metavar="KEY=V1,V2",
                   help="axis of config overrides (repeatable)")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("plot", help="figures from a metrics stream")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
