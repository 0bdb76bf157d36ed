"""Cross-entropy losses for labeled and pseudo-labeled batches.

The unlabeled loss is a gated mean: every sample of the batch appears in
the denominator, but only samples whose (possibly mixup-updated)
confidence clears the threshold contribute to the numerator.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

__all__ = ["LossReport", "smooth_one_hot", "supervised_loss", "soft_target_loss"]


@dataclass(frozen=True)
class LossReport:
    """Per-step loss components and pseudo-label diagnostics.

    total is stored exactly as computed from labeled + mu * unlabeled.
    """

    labeled: float
    unlabeled: float
    total: float
    clean_fraction: float
    mean_confidence: float


def smooth_one_hot(
    labels: torch.Tensor,
    num_classes: int,
    smoothing: float = 0.0,
    dtype: torch.dtype | None = None,
) -> torch.Tensor:
    """Targets (1 - eps) * onehot + eps / C as float rows summing to 1."""
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("label out of range for num_classes")
    onehot = F.one_hot(labels.long(), num_classes).to(dtype or torch.get_default_dtype())
    return onehot * (1.0 - smoothing) + smoothing / num_classes


def supervised_loss(logits: torch.Tensor, labels: torch.Tensor, smoothing: float = 0.0) -> torch.Tensor:
    """Mean cross-entropy against label-smoothed one-hot targets."""
    targets = smooth_one_hot(labels, logits.shape[1], smoothing, dtype=logits.dtype)
    log_probs = F.log_softmax(logits, dim=1)
    return -(targets * log_probs).sum(dim=1).mean()


def soft_target_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    weights: torch.Tensor,
    denom: int,
) -> torch.Tensor:
    """Weighted cross-entropy (1/denom) * sum_i w_i * CE(logits_i, targets_i).

    denom is the full batch size of the source stream, not the number of
    rows passing the gate; a filtered batch therefore contributes less.
    """
    if denom < 1:
        raise ValueError(f"denom must be >= 1, got {denom}")
    if logits.shape[0] != targets.shape[0]:
        raise ValueError("logits and targets disagree on batch size")
    if logits.shape[0] == 0:
        return logits.new_zeros(())
    log_probs = F.log_softmax(logits, dim=1)
    per_sample = -(targets.to(logits.dtype) * log_probs).sum(dim=1)
    w = weights.to(logits.dtype)
    return (w * per_sample).sum() / denom
