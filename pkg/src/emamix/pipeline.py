"""Two-stage training pipeline with append-only JSONL metrics,
per-epoch checkpoints, and closed-form reproducibility.

Stage 2 fine-tunes on the labeled split alone; stage 3 continues from
that result with the semi-supervised step, a fresh optimizer, and a
teacher initialized as an exact copy of the stage-2 student. Every
random decision is derived from (seed, domain, epoch, step), so a run
can be replayed bit-for-bit or resumed from any epoch checkpoint.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import augment as aug
from .config import (
    ConfigError,
    RunConfig,
    StageConfig,
    config_hash,
    flatten_config,
    render_config,
)
from .data import (
    ArrayDataset,
    Dataset,
    LabeledBatch,
    UnlabeledBatch,
    epoch_index_batches,
    gather,
    split_dataset,
    steps_per_epoch,
    write_manifest,
)
from .evaluate import evaluate
from .losses import supervised_loss, soft_target_loss
from .mixup import MixConfig, mix_labeled
from .schedules import ScheduleState, build_optimizer, set_step_lr
from .seeding import derive_rng, derive_seed
from .synthetic import make_synthetic_dataset
from .teacher import (
    NonFiniteError,
    StudentState,
    TeacherState,
    load_checkpoint,
    make_teacher,
    save_checkpoint,
    semi_step,
)
from .vit import TinyViT, load_encoder_checkpoint, param_groups

__all__ = ["RunFailure", "RunManifest", "StopRequested", "run_pipeline", "build_datasets"]


class RunFailure(RuntimeError):
    """The run aborted; the last good checkpoint is on disk."""


class StopRequested(Exception):
    """Raised internally to stop cleanly after a requested epoch count."""


@dataclass
class RunManifest:
    run_id: str
    seed: int
    stages: list[str]
    config: dict
    dataset_manifests: dict[str, str]
    source_revision: str

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, indent=2) + "\n", encoding="utf-8")


def source_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).parent,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


class MetricsWriter:
    """Single-owner append-only JSONL stream."""

    def __init__(self, path: Path):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: dict) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")


def build_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    data = cfg.data
    if data.source == "synthetic":
        seed = derive_seed(cfg.seed, "data")
        train = make_synthetic_dataset(data.num_train, seed, "train",
                                       data.num_classes, data.image_size)
        eval_ds = make_synthetic_dataset(data.num_eval, seed, "eval",
                                         data.num_classes, data.image_size)
        return train, eval_ds
    from .data import ManifestDataset

    train = ManifestDataset.from_file(data.train_manifest, data.num_classes, data.image_size)
    eval_ds = ManifestDataset.from_file(data.eval_manifest, data.num_classes, data.image_size)
    return train, eval_ds


def _policies(cfg: RunConfig):
    a = cfg.augment
    ra = (a.rand_augment_ops, a.rand_augment_magnitude, a.rand_augment_std)
    weak = aug.weak_policy(a.weak_crop_scale, a.hflip_prob, a.color_jitter)
    strong = aug.strong_policy(a.strong_crop_scale, a.hflip_prob, ra, a.erase_prob)
    labeled = aug.labeled_policy(a.strong_crop_scale, a.hflip_prob, ra, a.erase_prob)
    return weak, strong, labeled


def _write_split_manifests(out: Path, cfg: RunConfig, dataset: Dataset,
                           labeled_idx: list[int], unlabeled_idx: list[int]) -> dict[str, str]:
    splits = out / "splits"
    splits.mkdir(parents=True, exist_ok=True)
    labels = dataset.labels()
    if cfg.data.source == "synthetic":
        path_of = lambda i: f"synthetic:{i}"
    else:
        entries = dict(enumerate(e[0] for e in dataset._entries))
        path_of = entries.__getitem__
    write_manifest(splits / "labeled.txt", [(path_of(i), int(labels[i])) for i in labeled_idx])
    write_manifest(splits / "unlabeled.txt", [(path_of(i), -1) for i in unlabeled_idx])
    return {"labeled": str(splits / "labeled.txt"), "unlabeled": str(splits / "unlabeled.txt")}


@dataclass
class _RunContext:
    cfg: RunConfig
    out: Path
    train: Dataset
    eval_ds: Dataset
    labeled_idx: list[int]
    unlabeled_idx: list[int]
    metrics: MetricsWriter
    cfg_hash: str
    stop_after_epochs: int | None = None
    epochs_done: int = 0

    def tick_epoch(self) -> None:
        self.epochs_done += 1
        if self.stop_after_epochs is not None and self.epochs_done >= self.stop_after_epochs:
            raise StopRequested()


def _eval_record(ctx: _RunContext, stage: str, epoch: int, step: int,
                 model: torch.nn.Module, teacher: TeacherState | None) -> dict:
    cfg = ctx.cfg
    student_top1, student_top5 = evaluate(model, ctx.eval_ds, cfg.model.image_size)
    if teacher is not None:
        top1, top5 = evaluate(teacher.model, ctx.eval_ds, cfg.model.image_size)
    else:
        top1, top5 = student_top1, student_top5
    record = {
        "stage": stage, "step": step, "epoch": epoch, "eval": True,
        "top1": top1, "top5": top5,
        "student_top1": student_top1, "student_top5": student_top5,
    }
    ctx.metrics.append(record)
    return record


def _labeled_minibatch(ctx: _RunContext, indices: np.ndarray, policy, seed: int) -> LabeledBatch:
    images = gather(ctx.train, indices)
    images = aug.apply(policy, images, seed)
    labels = torch.as_tensor(ctx.train.labels()[indices], dtype=torch.long)
    return LabeledBatch(images=images, labels=labels)


def _train_supervised_stage(ctx: _RunContext, model: TinyViT, scfg: StageConfig,
                            start_epoch: int, global_step_base: int,
                            optimizer_state: dict | None) -> int:
    """Runs stage-2 epochs [start_epoch, epochs); returns total steps."""
    cfg = ctx.cfg
    _, _, labeled_policy = _policies(cfg)
    n = len(ctx.labeled_idx)
    spe = (n + scfg.batch_size - 1) // scfg.batch_size
    total_steps = scfg.epochs * spe
    schedule = ScheduleState(scfg.base_lr, scfg.warmup_epochs * spe, total_steps,
                             scfg.min_lr, scfg.layer_decay, cfg.model.depth + 1)
    optimizer = build_optimizer(
        param_groups(model, scfg.layer_decay, scfg.weight_decay), scfg.base_lr)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)
    student = StudentState(model=model, optimizer=optimizer, step=start_epoch * spe)
    mix_cfg = MixConfig(mixup_alpha=scfg.mixup_alpha, cutmix_alpha=scfg.cutmix_alpha,
                        switch_prob=scfg.switch_prob, label_smoothing=scfg.label_smoothing)

    indices = np.asarray(ctx.labeled_idx, dtype=np.int64)
    for epoch in range(start_epoch, scfg.epochs):
        torch.manual_seed(derive_seed(scfg.seed, "torch", "stage2", epoch))
        perm = derive_rng(scfg.seed, "stage2_shuffle", epoch).permutation(indices)
        model.train()
        for s in range(spe):
            batch_idx = perm[s * scfg.batch_size : (s + 1) * scfg.batch_size]
            if batch_idx.size == 0:
                continue
            lr = set_step_lr(optimizer, schedule, student.step)
            batch = _labeled_minibatch(ctx, batch_idx, labeled_policy,
                                       derive_seed(scfg.seed, "aug_l", "stage2", epoch, s))
            rng = derive_rng(scfg.seed, "mix", "stage2", epoch, s)
            if scfg.mixup_alpha > 0 or scfg.cutmix_alpha > 0:
                mixed_x, mixed_y, mean_lam = mix_labeled(
                    batch.images, batch.labels, cfg.data.num_classes, mix_cfg, rng)
                loss = soft_target_loss(model(mixed_x), mixed_y,
                                        torch.ones(len(batch)), len(batch))
            else:
                mean_lam = 1.0
                loss = supervised_loss(model(batch.images), batch.labels, scfg.label_smoothing)
            if not torch.isfinite(loss):
                raise NonFiniteError(f"non-finite supervised loss at step {student.step}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            student.step += 1
            ctx.metrics.append({
                "stage": "stage2", "step": global_step_base + student.step, "epoch": epoch,
                "lr": lr, "loss_labeled": float(loss), "loss_unlabeled": 0.0,
                "loss": float(loss), "clean_fraction": 0.0, "mean_confidence": 0.0,
                "mean_lambda": mean_lam, "clean_fraction_pre": 0.0,
            })
        done = epoch + 1
        if done % scfg.eval_every == 0 or done == scfg.epochs:
            _eval_record(ctx, "stage2", epoch, global_step_base + student.step, model, None)
        save_checkpoint(ctx.out / "checkpoints" / "last.pt", student, None, "stage2", done,
                        ctx.cfg_hash)
        ctx.tick_epoch()
    return total_steps


def _train_semi_stage(ctx: _RunContext, model: TinyViT, teacher: TeacherState,
                      scfg: StageConfig, start_epoch: int, global_step_base: int,
                      optimizer_state: dict | None) -> None:
    cfg = ctx.cfg
    weak_policy, strong_policy, labeled_policy = _policies(cfg)
    spe = steps_per_epoch(len(ctx.unlabeled_idx), scfg.batch_size, scfg.unlabeled_ratio)
    total_steps = scfg.epochs * spe
    schedule = ScheduleState(scfg.base_lr, scfg.warmup_epochs * spe, total_steps,
                             scfg.min_lr, scfg.layer_decay, cfg.model.depth + 1)
    optimizer = build_optimizer(
        param_groups(model, scfg.layer_decay, scfg.weight_decay), scfg.base_lr)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)
    student = StudentState(model=model, optimizer=optimizer, step=start_epoch * spe)

    for epoch in range(start_epoch, scfg.epochs):
        torch.manual_seed(derive_seed(scfg.seed, "torch", "stage3", epoch))
        batches = epoch_index_batches(ctx.labeled_idx, ctx.unlabeled_idx,
                                      scfg.batch_size, scfg.unlabeled_ratio, scfg.seed, epoch)
        model.train()
        for s, (l_idx, u_idx) in enumerate(batches):
            lr = set_step_lr(optimizer, schedule, student.step)
            labeled = _labeled_minibatch(ctx, l_idx, labeled_policy,
                                         derive_seed(scfg.seed, "aug_l", "stage3", epoch, s))
            raw = UnlabeledBatch(images=gather(ctx.train, u_idx))
            views = aug.make_views(raw, derive_seed(scfg.seed, "views", epoch, s),
                                   weak_policy, strong_policy)
            rng = derive_rng(scfg.seed, "mix", "stage3", epoch, s)
            try:
                report, diag = semi_step(student, teacher if scfg.framework == "ema_teacher"
                                         else None, labeled, views, scfg, rng)
            except NonFiniteError as exc:
                raise NonFiniteError(f"{exc} (stage3 epoch {epoch} step {s})") from exc
            ctx.metrics.append({
                "stage": "stage3", "step": global_step_base + student.step, "epoch": epoch,
                "lr": lr, "loss_labeled": report.labeled, "loss_unlabeled": report.unlabeled,
                "loss": report.total, "clean_fraction": report.clean_fraction,
                "mean_confidence": report.mean_confidence, "mean_lambda": diag.mean_lambda,
                "clean_fraction_pre": diag.clean_fraction_pre,
            })
        done = epoch + 1
        eval_teacher = teacher if scfg.framework == "ema_teacher" else None
        if done % scfg.eval_every == 0 or done == scfg.epochs:
            _eval_record(ctx, "stage3", epoch, global_step_base + student.step,
                         model, eval_teacher)
        save_checkpoint(ctx.out / "checkpoints" / "last.pt", student, teacher, "stage3", done,
                        ctx.cfg_hash)
        if done % scfg.checkpoint_every == 0:
            save_checkpoint(ctx.out / "checkpoints" / f"stage3_epoch{done}.pt", student,
                            teacher, "stage3", done, ctx.cfg_hash)
        ctx.tick_epoch()

    save_checkpoint(ctx.out / "checkpoints" / "stage3_final.pt", student, teacher,
                    "stage3", scfg.epochs, ctx.cfg_hash)


def _init_model(cfg: RunConfig) -> TinyViT:
    torch.manual_seed(derive_seed(cfg.seed, "init"))
    model = TinyViT(cfg.model)
    if cfg.init_checkpoint != "scratch":
        payload = load_checkpoint(cfg.init_checkpoint)
        state = payload["student"] if "student" in payload else payload
        load_encoder_checkpoint(model, state)
    return model


def run_pipeline(cfg: RunConfig, resume: bool = False,
                 stop_after_epochs: int | None = None) -> RunManifest:
    """Execute the configured stages; returns the run manifest.

    With resume=True the run continues from checkpoints/last.pt in the
    output directory and appends to the existing metrics stream.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    metrics_path = out / "metrics.jsonl"
    ckpt_dir = out / "checkpoints"
    if resume:
        if not (ckpt_dir / "last.pt").exists():
            raise ConfigError(f"cannot resume: {ckpt_dir / 'last.pt'} does not exist")
    elif metrics_path.exists():
        raise ConfigError(f"refusing to overwrite existing run at {out}; use resume")
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    cfg_hash = config_hash(cfg)
    (out / "config.snapshot").write_text(render_config(cfg), encoding="utf-8")

    train, eval_ds = build_datasets(cfg)
    labeled_idx, unlabeled_idx = split_dataset(
        train.labels(), cfg.data.labeled_fraction, cfg.seed, cfg.data.num_classes)
    manifests = _write_split_manifests(out, cfg, train, labeled_idx, unlabeled_idx)

    stages = [s for s, c in (("stage2", cfg.stage2), ("stage3", cfg.stage3))
              if c.enabled and c.epochs > 0]
    manifest = RunManifest(
        run_id=f"{cfg.name}-seed{cfg.seed}-{cfg_hash}",
        seed=cfg.seed,
        stages=stages,
        config={k: str(v) for k, v in sorted(flatten_config(cfg).items())},
        dataset_manifests=manifests,
        source_revision=source_revision(),
    )
    manifest.write(out / "manifest.json")

    ctx = _RunContext(cfg=cfg, out=out, train=train, eval_ds=eval_ds,
                      labeled_idx=labeled_idx, unlabeled_idx=unlabeled_idx,
                      metrics=MetricsWriter(metrics_path), cfg_hash=cfg_hash,
                      stop_after_epochs=stop_after_epochs)

    resume_state = None
    if resume:
        resume_state = load_checkpoint(ckpt_dir / "last.pt")
        if resume_state["config_hash"] != cfg_hash:
            raise ConfigError(
                "cannot resume: checkpoint was produced by a different configuration")

    model = _init_model(cfg)

    stage2_steps = 0
    run2 = cfg.stage2.enabled and cfg.stage2.epochs > 0
    run3 = cfg.stage3.enabled and cfg.stage3.epochs > 0
    if run2:
        n = len(labeled_idx)
        spe2 = (n + cfg.stage2.batch_size - 1) // cfg.stage2.batch_size
        stage2_steps = cfg.stage2.epochs * spe2

    try:
        start2, start3 = 0, 0
        opt_state2 = opt_state3 = None
        teacher: TeacherState | None = None
        resumed_into_stage3 = False
        if resume_state is not None:
            model.load_state_dict(resume_state["student"])
            if resume_state["stage"] == "stage2":
                start2 = resume_state["epoch"]
                if start2 < cfg.stage2.epochs:
                    opt_state2 = resume_state["optimizer"]
            else:
                resumed_into_stage3 = True
                start3 = resume_state["epoch"]
                if resume_state["teacher"] is not None:
                    teacher = make_teacher(model, cfg.stage3.ema_momentum)
                    teacher.model.load_state_dict(resume_state["teacher"])
                if start3 < cfg.stage3.epochs:
                    opt_state3 = resume_state["optimizer"]

        if run2 and not resumed_into_stage3:
            if start2 < cfg.stage2.epochs:
                _train_supervised_stage(ctx, model, cfg.stage2, start2, 0, opt_state2)
            final2 = ckpt_dir / "stage2_final.pt"
            if not final2.exists():
                # Serialized for stage-3 init sharing; optimizer state unused.
                holder = StudentState(model, build_optimizer(
                    param_groups(model, cfg.stage2.layer_decay, cfg.stage2.weight_decay),
                    cfg.stage2.base_lr), stage2_steps)
                save_checkpoint(final2, holder, None, "stage2", cfg.stage2.epochs, cfg_hash)

        if run3:
            if teacher is None:
                teacher = make_teacher(model, cfg.stage3.ema_momentum)
            _train_semi_stage(ctx, model, teacher, cfg.stage3, start3, stage2_steps,
                              opt_state3)
        if not run2 and not run3:
            _eval_record(ctx, "eval_only", 0, 0, model, None)
    except StopRequested:
        pass
    except NonFiniteError as exc:
        (out / "FAILED").write_text(str(exc) + "\n", encoding="utf-8")
        raise RunFailure(str(exc)) from exc

    return manifest
