"""Learning-rate machinery: linear warmup into cosine decay, plus
geometric per-depth multipliers for layer-wise learning-rate decay."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

__all__ = ["ScheduleState", "lr_at", "layer_multiplier", "build_optimizer", "set_step_lr"]


@dataclass(frozen=True)
class ScheduleState:
    base_lr: float
    warmup_steps: int
    total_steps: int
    min_lr: float = 0.0
    layer_decay: float = 1.0
    num_layers: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.warmup_steps < max(self.total_steps, 1):
            raise ValueError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}/{self.total_steps}"
            )


def lr_at(state: ScheduleState, step: int) -> float:
    """Learning rate at an optimizer step.

    Warmup rises linearly from 0 and lands exactly on base_lr at
    step == warmup_steps; the cosine phase then decays to min_lr at
    total_steps. Steps beyond total_steps clamp to min_lr.
    """
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step < state.warmup_steps:
        return state.base_lr * step / state.warmup_steps
    if step >= state.total_steps:
        return state.min_lr
    span = state.total_steps - state.warmup_steps
    progress = (step - state.warmup_steps) / span
    return state.min_lr + (state.base_lr - state.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def layer_multiplier(layer_index: int, num_layers: int, decay: float) -> float:
    """decay ** (num_layers - layer_index); the head (index num_layers)
    gets 1 and the patch embedding (index 0) gets decay ** num_layers."""
    if not 0 <= layer_index <= num_layers:
        raise ValueError(f"layer_index {layer_index} outside [0, {num_layers}]")
    return decay ** (num_layers - layer_index)


def build_optimizer(
    param_groups: list[dict],
    base_lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
) -> torch.optim.AdamW:
    """AdamW over pre-built parameter groups.

    Groups carry their own weight_decay (0 for bias/norm parameters) and
    an lr_scale multiplier; set_step_lr applies the schedule on top.
    """
    return torch.optim.AdamW(param_groups, lr=base_lr, betas=betas)


def set_step_lr(optimizer: torch.optim.Optimizer, state: ScheduleState, step: int) -> float:
    """Write the scheduled lr into every group, honoring lr_scale."""
    lr = lr_at(state, step)
    for group in optimizer.param_groups:
        group["lr"] = lr * group.get("lr_scale", 1.0)
    return lr
