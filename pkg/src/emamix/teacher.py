"""Student/teacher state, the exponential-moving-average update, pseudo
labels, and the single semi-supervised training step.

Two frameworks share the step: with a separate EMA teacher the pseudo
labels come from the averaged parameters and the teacher trails the
student; in fixmatch mode the student labels its own weak views (still
without gradients) and no averaging happens. Pseudo labels are produced
in inference mode so stochastic regularizers never corrupt confidences,
and no gradient flows through that path.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import LabeledBatch, ViewPair
from .losses import LossReport, smooth_one_hot, soft_target_loss, supervised_loss
from .mixup import (
    MixConfig,
    PseudoBatch,
    mix_labeled,
    prob_pseudo_mixup,
    pseudo_mixup,
    pseudo_mixup_plus,
)

__all__ = [
    "NonFiniteError",
    "StudentState",
    "TeacherState",
    "make_teacher",
    "ema_update",
    "generate_pseudo_labels",
    "StepDiagnostics",
    "semi_forward",
    "semi_step",
    "save_checkpoint",
    "load_checkpoint",
]


class NonFiniteError(RuntimeError):
    """A loss, logit, or parameter went NaN/Inf; the run must stop."""


@dataclass
class StudentState:
    model: nn.Module
    optimizer: torch.optim.Optimizer
    step: int = 0


@dataclass
class TeacherState:
    model: nn.Module
    momentum: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must be in [0, 1], got {self.momentum}")
        for p in self.model.parameters():
            p.requires_grad_(False)


def make_teacher(student_model: nn.Module, momentum: float) -> TeacherState:
    """Teacher initialized as an exact copy of the student."""
    return TeacherState(model=copy.deepcopy(student_model), momentum=momentum)


def ema_update(teacher: TeacherState, student_model: nn.Module) -> TeacherState:
    """In-place update of every teacher tensor toward the student.

    Elementwise new = m * old + (1 - m) * student; m = 1 freezes the
    teacher and m = 0 copies the student. Buffers are copied directly.
    """
    m = teacher.momentum
    student_params = dict(student_model.named_parameters())
    teacher_params = dict(teacher.model.named_parameters())
    if set(student_params) != set(teacher_params):
        missing = set(student_params) ^ set(teacher_params)
        raise ValueError(f"teacher/student parameter names disagree: {sorted(missing)}")
    with torch.no_grad():
        for name, p_t in teacher_params.items():
            p_s = student_params[name]
            if p_t.shape != p_s.shape:
                raise ValueError(
                    f"tensor {name!r}: teacher shape {tuple(p_t.shape)} vs "
                    f"student shape {tuple(p_s.shape)}"
                )
            if m == 0.0:
                p_t.copy_(p_s)
            elif m != 1.0:
                p_t.mul_(m).add_(p_s, alpha=1.0 - m)
        for (name, b_t), b_s in zip(teacher.model.named_buffers(), student_model.buffers()):
            b_t.copy_(b_s)
    return teacher


def generate_pseudo_labels(
    model: nn.Module, weak: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Class probabilities, argmax labels, and max-prob confidences.

    Runs in inference mode with no gradient recording; argmax ties break
    to the lowest class index.
    """
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logits = model(weak)
    finally:
        model.train(was_training)
    if not torch.isfinite(logits).all():
        raise NonFiniteError("teacher produced non-finite logits")
    probs = F.softmax(logits, dim=1)
    confidence, hard = probs.max(dim=1)
    return probs, hard, confidence


@dataclass(frozen=True)
class StepDiagnostics:
    mean_lambda: float
    clean_fraction_pre: float
    include_fraction: float


def _unlabeled_loss(
    student_model: nn.Module,
    pseudo: PseudoBatch,
    cfg,
    mix_cfg: MixConfig,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, StepDiagnostics]:
    n_u = len(pseudo)
    pre_clean = float(pseudo.clean_mask.float().mean())
    variant = cfg.unlabeled_mixup

    if variant == "none":
        targets = smooth_one_hot(pseudo.hard_label, pseudo.num_classes,
                                 mix_cfg.label_smoothing, dtype=pseudo.probs.dtype)
        logits = student_model(pseudo.images_strong)
        loss = soft_target_loss(logits, targets, pseudo.clean_mask, n_u)
        return loss, StepDiagnostics(1.0, pre_clean, pre_clean)

    if variant == "pseudo":
        mixed = pseudo_mixup(pseudo, mix_cfg, cfg.tau, rng)
    elif variant == "pseudo_plus":
        mixed = pseudo_mixup_plus(pseudo, mix_cfg, cfg.tau, rng)
    elif variant == "prob_pseudo":
        mixed = prob_pseudo_mixup(pseudo, mix_cfg, cfg.tau, rng)
    else:
        raise ValueError(f"unknown unlabeled_mixup variant {variant!r}")

    if len(mixed) == 0:
        zero = torch.zeros((), dtype=pseudo.images_strong.dtype)
        return zero, StepDiagnostics(1.0, pre_clean, 0.0)
    logits = student_model(mixed.images)
    loss = soft_target_loss(logits, mixed.soft_labels, mixed.include_mask, n_u)
    diag = StepDiagnostics(
        mean_lambda=float(mixed.lam.float().mean()),
        clean_fraction_pre=pre_clean,
        include_fraction=float(mixed.include_mask.sum()) / n_u,
    )
    return loss, diag


def semi_forward(
    student_model: nn.Module,
    teacher: TeacherState | None,
    labeled: LabeledBatch,
    views: ViewPair,
    cfg,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, LossReport, StepDiagnostics]:
    """Total loss for one step, differentiable w.r.t. the student only.

    The pseudo-label source is the EMA teacher, or the student itself in
    fixmatch mode. Returns (loss tensor, report, diagnostics).
    """
    if cfg.framework == "ema_teacher":
        if teacher is None:
            raise ValueError("ema_teacher framework needs a TeacherState")
        pseudo_model = teacher.model
    elif cfg.framework == "fixmatch":
        pseudo_model = student_model
    else:
        raise ValueError(f"unknown framework {cfg.framework!r}")

    probs, _, confidence = generate_pseudo_labels(pseudo_model, views.weak)
    pseudo = PseudoBatch.from_teacher(views.strong, probs, cfg.tau)

    mix_cfg = MixConfig(
        mixup_alpha=cfg.mixup_alpha,
        cutmix_alpha=cfg.cutmix_alpha,
        switch_prob=cfg.switch_prob,
        label_smoothing=cfg.label_smoothing if cfg.smooth_pseudo_labels else 0.0,
        unlabeled_mode=cfg.unlabeled_mode,
    )

    # Labeled path first so the rng draw order is fixed.
    num_classes = probs.shape[1]
    if cfg.mixup_alpha > 0 or cfg.cutmix_alpha > 0:
        labeled_cfg = MixConfig(
            mixup_alpha=cfg.mixup_alpha,
            cutmix_alpha=cfg.cutmix_alpha,
            switch_prob=cfg.switch_prob,
            label_smoothing=cfg.label_smoothing,
        )
        mixed_x, mixed_y, _ = mix_labeled(labeled.images, labeled.labels, num_classes,
                                          labeled_cfg, rng)
        loss_l = soft_target_loss(student_model(mixed_x), mixed_y,
                                  torch.ones(len(labeled)), len(labeled))
    else:
        loss_l = supervised_loss(student_model(labeled.images), labeled.labels,
                                 cfg.label_smoothing)

    loss_u, diag = _unlabeled_loss(student_model, pseudo, cfg, mix_cfg, rng)
    loss = loss_l + cfg.mu * loss_u
    report = LossReport(
        labeled=float(loss_l),
        unlabeled=float(loss_u),
        total=float(loss),
        clean_fraction=diag.include_fraction,
        mean_confidence=float(confidence.float().mean()),
    )
    return loss, report, diag


def semi_step(
    student: StudentState,
    teacher: TeacherState | None,
    labeled: LabeledBatch,
    views: ViewPair,
    cfg,
    rng: np.random.Generator,
) -> tuple[LossReport, StepDiagnostics]:
    """One optimizer step of semi-supervised training.

    Optimizes the student on the combined loss, then moves the EMA
    teacher (ema_teacher framework only). Raises on any non-finite loss
    or parameter, naming the step.
    """
    loss, report, diag = semi_forward(student.model, teacher, labeled, views, cfg, rng)
    if not torch.isfinite(loss):
        raise NonFiniteError(f"non-finite loss at step {student.step}: {report}")
    student.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    student.optimizer.step()
    student.step += 1
    for name, p in student.model.named_parameters():
        if not torch.isfinite(p).all():
            raise NonFiniteError(f"parameter {name!r} non-finite after step {student.step}")
    if cfg.framework == "ema_teacher":
        ema_update(teacher, student.model)
    return report, diag


def save_checkpoint(
    path: str | Path,
    student: StudentState,
    teacher: TeacherState | None,
    stage: str,
    epoch: int,
    config_hash: str,
    metrics: dict | None = None,
) -> None:
    """Checkpoint plus a human-readable key=value sidecar (.meta)."""
    path = Path(path)
    payload = {
        "student": student.model.state_dict(),
        "teacher": teacher.model.state_dict() if teacher is not None else None,
        "ema_momentum": teacher.momentum if teacher is not None else None,
        "optimizer": student.optimizer.state_dict(),
        "step": student.step,
        "stage": stage,
        "epoch": epoch,
        "config_hash": config_hash,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)

    lines = {"stage": stage, "epoch": epoch, "step": student.step, "config_hash": config_hash}
    lines.update(metrics or {})
    meta = "".join(f"{k}={v}\n" for k, v in lines.items())
    Path(str(path) + ".meta").write_text(meta, encoding="utf-8")


def load_checkpoint(path: str | Path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)
